"""Exception types shared across the pipeline stages."""


class DermError(Exception):
    """Base class for every error raised by this package."""


class ImageError(DermError):
    pass


class SegmentationError(DermError):
    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class FeatureError(DermError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class LearnError(DermError):
    pass


class ManifestError(DermError):
    pass


class ConfigError(DermError):
    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line

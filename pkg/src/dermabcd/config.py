"""Application configuration: one YAML file plus ``--set key=value`` overrides.

Values are validated when loaded; errors carry the line of the offending key.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .features import COLOR_CLASSES, DEFAULT_COLOR_TABLE, ColorRange, FeatureConfig, Interval
from .learn import SmoteConfig
from .segmentation import SegmentationParams
from .svm import KernelSpec

CONFIG_ENV = "DERMABCD_CONFIG"


@dataclass(frozen=True)
class PreprocessConfig:
    kernel_size: int = 5
    sigma: float = 1.0
    # captured photos only; dataset images keep their native size
    capture_long_edge: int = 1024

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.capture_long_edge < 8:
            raise ValueError("capture_long_edge must be >= 8")


@dataclass(frozen=True)
class SvmConfig:
    kernel: str = "rbf"
    c: float = 1.0
    c_grid: tuple = (0.1, 1.0, 10.0)
    kernels: tuple = ("linear", "rbf", "polynomial")
    gamma: float | None = None
    degree: int = 3
    coef0: float = 0.0
    tol: float = 1e-3
    max_passes: int = 200_000

    def __post_init__(self):
        object.__setattr__(self, "c_grid", tuple(float(x) for x in self.c_grid))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        self.kernel_spec(self.kernel)
        for k in self.kernels:
            self.kernel_spec(k)
        if not self.c > 0 or not self.c_grid or any(not x > 0 for x in self.c_grid):
            raise ValueError("C values must be positive")
        if not self.tol > 0 or self.max_passes < 1:
            raise ValueError("tol must be positive and max_passes >= 1")

    def kernel_spec(self, kind=None):
        return KernelSpec(kind or self.kernel, self.gamma, self.degree, self.coef0)


@dataclass(frozen=True)
class SmoteSettings:
    enabled: bool = True
    k_neighbors: int = 5
    target_ratio: float = 1.0

    def __post_init__(self):
        SmoteConfig(self.k_neighbors, self.target_ratio)

    def for_seed(self, seed):
        return SmoteConfig(self.k_neighbors, self.target_ratio, seed)


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple = tuple(range(20))
    split_ratio: float = 0.7
    ablation: bool = True
    jobs: int = 1
    bench_repetitions: int = 5

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.jobs < 1 or self.bench_repetitions < 1:
            raise ValueError("jobs and bench_repetitions must be >= 1")


@dataclass(frozen=True)
class AppConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    smote: SmoteSettings = field(default_factory=SmoteSettings)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output_dir: str = "out"

    def to_dict(self):
        """Plain-data echo, stable across runs (used in reports)."""
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "features":
                d[f.name] = {
                    "gamma_mm_per_px": v.gamma_mm_per_px,
                    "min_fraction": v.min_fraction,
                    "color_table": {n: _range_to_dict(v.color_table[n]) for n in COLOR_CLASSES},
                }
            elif dataclasses.is_dataclass(v):
                d[f.name] = {k: _plain(x) for k, x in dataclasses.asdict(v).items()}
            else:
                d[f.name] = v
        return d


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    return x


def _range_to_dict(r: ColorRange):
    return {"h": [str(i) for i in r.hue], "s": str(r.sat), "v": str(r.val)}


_SECTIONS = {
    "preprocess": PreprocessConfig,
    "segmentation": SegmentationParams,
    "svm": SvmConfig,
    "smote": SmoteSettings,
    "experiment": ExperimentConfig,
}


# ---------------------------------------------------------------------------
# YAML with line numbers


def _node_to_data(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            lines[sub] = k.start_mark.line + 1
            out[key] = _node_to_data(v, sub, lines)
            lines[sub] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_node_to_data(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _parse_yaml(text, source):
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None, source) from exc
    lines = {}
    if node is None:
        return {}, lines
    data = _node_to_data(node, "", lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    return data, lines


def _coerce(value, default, where):
    """Check a scalar against the type of its default value."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and where.endswith("gamma")):
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError(f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"expected a list, got {value!r}")
        if default and not isinstance(default[0], str):
            for v in value:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ValueError(f"expected numbers, got {v!r}")
        return tuple(value)
    return value


def _build_section(cls, raw, prefix, lines, source):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {prefix!r} must be a mapping", lines.get(prefix), source)
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{prefix}.{key}"
        if key not in known:
            raise ConfigError(f"unknown key {path!r}", lines.get(path), source)
        try:
            kwargs[key] = _coerce(value, getattr(defaults, key), path)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}", lines.get(path), source) from None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        # blame the first key that fails on its own
        for key, value in kwargs.items():
            try:
                cls(**{key: value})
            except (ValueError, TypeError):
                path = f"{prefix}.{key}"
                raise ConfigError(f"{path}: {exc}", lines.get(path), source) from None
        raise ConfigError(f"{prefix}: {exc}", lines.get(prefix), source) from None


def _build_features(raw, lines, source):
    if not isinstance(raw, dict):
        raise ConfigError("section 'features' must be a mapping", lines.get("features"), source)
    kwargs = {}
    table = dict(DEFAULT_COLOR_TABLE)
    for key, value in raw.items():
        path = f"features.{key}"
        if key == "color_table":
            if not isinstance(value, dict):
                raise ConfigError("features.color_table must be a mapping", lines.get(path), source)
            for name, spec in value.items():
                sub = f"{path}.{name}"
                if name not in COLOR_CLASSES:
                    raise ConfigError(f"unknown colour class {name!r}", lines.get(sub), source)
                if not isinstance(spec, dict) or set(spec) - {"h", "s", "v"}:
                    raise ConfigError(f"{sub} needs keys h, s, v", lines.get(sub), source)
                try:
                    hue = spec.get("h", ["[0, 360)"])
                    if isinstance(hue, str):
                        hue = [hue]
                    table[name] = ColorRange(
                        tuple(Interval.parse(h) for h in hue),
                        Interval.parse(spec.get("s", "[0, 1]")),
                        Interval.parse(spec.get("v", "[0, 1]")),
                    )
                except ValueError as exc:
                    raise ConfigError(f"{sub}: {exc}", lines.get(sub), source) from None
        elif key in ("min_fraction", "gamma_mm_per_px"):
            try:
                kwargs[key] = _coerce(value, 0.0, path)
                FeatureConfig(**{key: kwargs[key]})
            except ValueError as exc:
                raise ConfigError(f"{path}: {exc}", lines.get(path), source) from None
        else:
            raise ConfigError(f"unknown key {path!r}", lines.get(path), source)
    return FeatureConfig(color_table=table, **kwargs)


def config_from_data(data, lines=None, source=None) -> AppConfig:
    lines = lines or {}
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key, lines, source)
        elif key == "features":
            kwargs[key] = _build_features(value, lines, source)
        elif key == "output_dir":
            if not isinstance(value, str):
                raise ConfigError("output_dir must be a string", lines.get(key), source)
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown section {key!r}", lines.get(key), source)
    return AppConfig(**kwargs)


def apply_overrides(data, overrides):
    """Merge ``key.sub=value`` strings into raw config data (values parsed as YAML)."""
    data = _deep_copy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}", source="--set")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value in {item!r}: {exc}", source="--set") from None
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key!r} does not name a setting", source="--set")
        node[parts[-1]] = value
    return data


def _deep_copy(d):
    if isinstance(d, dict):
        return {k: _deep_copy(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_deep_copy(v) for v in d]
    return d


def load_config(path=None, overrides=()) -> AppConfig:
    """Load ``path`` (or $DERMABCD_CONFIG, or built-in defaults) plus overrides."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    data, lines, source = {}, {}, None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        source = str(p)
        data, lines = _parse_yaml(p.read_text(), source)
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_data(data, lines, source)


def default_config_text() -> str:
    """Default configuration as commented YAML."""
    c = AppConfig()
    s, f, v, m, e, p = c.segmentation, c.features, c.svm, c.smote, c.experiment, c.preprocess

    def lst(xs):
        return "[" + ", ".join(repr(x) if isinstance(x, str) else f"{x:g}" for x in xs) + "]"

    table = []
    for name in COLOR_CLASSES:
        r = f.color_table[name]
        hue = ", ".join(f'"{i}"' for i in r.hue)
        table.append(f'    {name}: {{h: [{hue}], s: "{r.sat}", v: "{r.val}"}}')
    table = "\n".join(table)
    return f"""\
# dermabcd configuration. Values marked "published" come from the source
# method description; the rest are engineering choices.

preprocess:
  kernel_size: {p.kernel_size}        # published: 5x5 Gaussian
  sigma: {p.sigma:g}              # published
  capture_long_edge: {p.capture_long_edge}  # camera captures resized to this long edge (bilinear)

segmentation:
  lambda1: {s.lambda1}            # published
  lambda2: {s.lambda2}            # published
  channels: {lst(s.channels)}
  channel_weights: {lst(s.channel_weights)}   # choice: equal-weight mean of the Y'UV planes
  n_a: {s.n_a}               # choice: data passes per evolution
  n_s: {s.n_s}                # choice: smoothing passes per evolution
  max_evolutions: {s.max_evolutions}    # published iteration cap
  init_fraction: {s.init_fraction:g}    # published: initial ellipse at 65% of width and height
  smooth_kernel: [{s.smooth_kernel[0]}, {s.smooth_kernel[1]:g}]  # choice: reuse the preprocessing Gaussian
  min_contrast: {s.min_contrast:g}     # choice: |c1 - c2| below this is a failed segmentation
  fill_holes: {str(s.fill_holes).lower()}     # choice

features:
  gamma_mm_per_px: {f.gamma_mm_per_px:g}   # uncalibrated placeholder; calibrate from a scale bar (mm / px)
  min_fraction: {f.min_fraction:g}        # choice: colour region must cover 1% of the lesion
  color_table:         # choice: hue in degrees, s and v in [0, 1]
{table}

svm:
  kernel: {v.kernel}          # kernel for `train`
  c: {v.c:g}                # choice: C is not published
  c_grid: {lst(v.c_grid)}   # swept by `eval`, best mean balanced accuracy wins
  kernels: {lst(v.kernels)}
  gamma: null          # null = 1 / n_features
  degree: {v.degree}            # published: third-degree polynomial
  coef0: {v.coef0:g}
  tol: {v.tol:g}
  max_passes: {v.max_passes}

smote:
  enabled: {str(m.enabled).lower()}
  k_neighbors: {m.k_neighbors}       # standard SMOTE neighbourhood
  target_ratio: {m.target_ratio:g}    # 1 = oversample melanoma to parity

experiment:
  seeds: {lst(e.seeds)}
  split_ratio: {e.split_ratio:g}     # published: 70:30 split
  ablation: {str(e.ablation).lower()}
  jobs: {e.jobs}
  bench_repetitions: {e.bench_repetitions}

output_dir: {c.output_dir}
"""

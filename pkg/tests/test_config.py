import pytest
import yaml

from dermabcd.config import (CONFIG_ENV, AppConfig, apply_overrides, config_from_data,
                             default_config_text, load_config)
from dermabcd.errors import ConfigError
from dermabcd.features import COLOR_CLASSES


def write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return p


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    cfg = load_config()
    assert cfg == AppConfig()
    assert cfg.segmentation.lambda1 == 2 and cfg.segmentation.lambda2 == 1
    assert cfg.segmentation.max_evolutions == 400
    assert cfg.segmentation.init_fraction == 0.65
    assert cfg.preprocess.kernel_size == 5 and cfg.preprocess.sigma == 1.0
    assert cfg.svm.degree == 3 and cfg.experiment.split_ratio == 0.7


def test_default_text_round_trips(tmp_path):
    text = default_config_text()
    cfg = load_config(write(tmp_path, text))
    assert cfg == AppConfig()
    assert cfg.to_dict() == AppConfig().to_dict()
    assert "published" in text and "choice" in text


def test_file_values_and_overrides(tmp_path):
    p = write(tmp_path, "svm:\n  c: 10\n  kernel: linear\nsmote:\n  enabled: false\n")
    cfg = load_config(p, ["svm.c=0.5", "experiment.seeds=[3, 4]"])
    assert cfg.svm.c == 0.5 and cfg.svm.kernel == "linear"
    assert not cfg.smote.enabled
    assert cfg.experiment.seeds == (3, 4)


def test_env_var_names_default_file(tmp_path, monkeypatch):
    monkeypatch.setenv(CONFIG_ENV, str(write(tmp_path, "features:\n  gamma_mm_per_px: 0.02\n")))
    assert load_config().features.gamma_mm_per_px == 0.02


def test_color_table_override(tmp_path):
    p = write(tmp_path, 'features:\n  color_table:\n    black: {v: "[0, 0.2)"}\n')
    table = load_config(p).features.color_table
    assert table["black"].val.contains(0.19)
    assert set(table) == set(COLOR_CLASSES)


@pytest.mark.parametrize("text, line, needle", [
    ("svm:\n  c: -1\n", 2, "svm.c"),
    ("svm:\n  kernel: rbf\n  c: fast\n", 3, "expected a number"),
    ("segmentation:\n\n  lambda1: 2\n  bogus: 1\n", 4, "bogus"),
    ("colour:\n  a: 1\n", 1, "unknown section"),
    ("experiment:\n  split_ratio: 1.5\n", 2, "split_ratio"),
    ("features:\n  color_table:\n    purple: {h: \"[0, 10]\"}\n", 3, "purple"),
    ("features:\n  color_table:\n    red: {h: \"0-10\"}\n", 3, "red"),
    ("svm: [1, 2\n", None, "invalid YAML"),
    ("smote:\n  enabled: maybe\n", 2, "true/false"),
])
def test_errors_name_the_line(tmp_path, text, line, needle):
    p = write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_config(p)
    msg = str(info.value)
    assert needle in msg
    if line is not None:
        assert f"{p}:{line}:" in msg


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["svm.c"])
    with pytest.raises(ConfigError):
        load_config(None, ["svm.c=[1"])


def test_overrides_do_not_mutate_input():
    raw = {"svm": {"c": 1.0}}
    out = apply_overrides(raw, ["svm.c=3"])
    assert raw == {"svm": {"c": 1.0}} and out["svm"]["c"] == 3


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/cfg.yaml")


def test_to_dict_is_plain_yaml():
    d = AppConfig().to_dict()
    assert config_from_data(yaml.safe_load(yaml.safe_dump(d))) == AppConfig()

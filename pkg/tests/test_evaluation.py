import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dermabcd.config import AppConfig
from dermabcd.errors import ManifestError
from dermabcd.evaluation import (ConfusionCounts, bench, dice, extract_all, load_manifest,
                                 mann_whitney_auc, metrics, roc_auc, run_experiment,
                                 segmentation_quality, split, table1_csv_rows, table1_text,
                                 train_model)
from dermabcd.pipeline import cached_features


def ph2_labels():
    return np.r_[np.ones(40, int), -np.ones(160, int)]


def write_csv(tmp_path, text, images=("a.png", "b.png")):
    for name in images:
        (tmp_path / name).write_bytes(b"")
    p = tmp_path / "m.csv"
    p.write_text(text)
    return p


def test_manifest_loads_and_resolves(tmp_path):
    (tmp_path / "masks").mkdir()
    (tmp_path / "masks" / "a_lesion.png").write_bytes(b"")
    p = write_csv(tmp_path, "image,label,mask,colors\n"
                            "a.png,melanoma,masks/a_lesion.png,black;blue_gray\n"
                            "b.png,atypical nevus,,\n")
    m = load_manifest(p)
    assert len(m) == 2 and list(m.labels()) == [1, -1]
    assert m.entries[0].gt_mask_path == tmp_path / "masks" / "a_lesion.png"
    assert m.entries[0].gt_colors == ("black", "blue_gray")
    assert m.entries[1].diagnosis == "atypical_nevus" and m.entries[1].gt_mask_path is None


def test_manifest_optional_columns(tmp_path):
    m = load_manifest(write_csv(tmp_path, "image,label\na.png,benign\nb.png,common_nevus\n"))
    assert m.counts() == {"melanoma": 0, "benign": 2}


@pytest.mark.parametrize("text, needle", [
    ("", "empty"),
    ("image,label\n", "no rows"),
    ("file,kind\na.png,benign\n", "header"),
    ("image,label\na.png,benign\nb.png,ugly\n", ":3: unknown label 'ugly'"),
    ("image,label\nmissing.png,benign\n", ":2: image not found"),
    ("image,label,mask\na.png,benign,nomask.png\n", ":2: mask not found"),
])
def test_manifest_errors(tmp_path, text, needle):
    with pytest.raises(ManifestError, match=needle.replace("(", r"\(")):
        load_manifest(write_csv(tmp_path, text))


def test_manifest_unreadable(tmp_path):
    with pytest.raises(ManifestError, match="cannot read"):
        load_manifest(tmp_path / "absent.csv")


def test_split_ph2_counts():
    y = ph2_labels()
    tr, te = split(y, 0.7, seed=0)
    assert (len(tr), len(te)) == (140, 60)
    assert (y[tr] == 1).sum() == 28 and (y[te] == 1).sum() == 12


def test_split_is_deterministic():
    y = ph2_labels()
    a, b = split(y, 0.7, 5), split(y, 0.7, 5)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], split(y, 0.7, 6)[0])


def test_split_keeps_each_class_on_both_sides():
    y = ph2_labels()
    tr, te = split(y, 0.999, 1)
    assert set(y[te]) == {1, -1} and set(y[tr]) == {1, -1}
    tr, te = split(y, 0.001, 1)
    assert set(y[tr]) == {1, -1}


def test_split_errors():
    with pytest.raises(ValueError):
        split(np.array([1, -1, -1]), 0.7)
    with pytest.raises(ValueError):
        split(ph2_labels(), 1.0)


@given(st.integers(2, 30), st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_is_stratified_partition(n_pos, n_neg, ratio, seed):
    y = np.r_[np.ones(n_pos, int), -np.ones(n_neg, int)]
    tr, te = split(y, ratio, seed)
    assert np.array_equal(np.sort(np.r_[tr, te]), np.arange(len(y)))
    assert not set(tr) & set(te)
    for cls, n in ((1, n_pos), (-1, n_neg)):
        k = (y[tr] == cls).sum()
        assert 1 <= k <= n - 1 and abs(k - ratio * n) <= 1


def test_metrics_example():
    m = metrics(ConfusionCounts(tp=8, fp=2, tn=18, fn=2))
    assert m["sensitivity"] == pytest.approx(0.80)
    assert m["specificity"] == pytest.approx(0.90)
    assert m["accuracy"] == pytest.approx(26 / 30)
    assert m["precision"] == pytest.approx(0.80)


def test_metrics_perfect_and_undefined():
    assert set(metrics(ConfusionCounts(5, 0, 7, 0)).values()) == {1.0}
    m = metrics(ConfusionCounts(0, 1, 4, 0))
    assert m["sensitivity"] is None and m["precision"] == 0.0


def test_confusion_from_predictions():
    c = ConfusionCounts.from_predictions([1, 1, -1, -1, -1], [1, -1, 1, -1, -1])
    assert (c.tp, c.fn, c.fp, c.tn, c.total) == (1, 1, 1, 2, 5)


def test_roc_perfect_and_inverted():
    y = np.array([1, 1, -1, -1, -1])
    s = np.array([3.0, 2.0, 1.0, 0.5, -1.0])
    r = roc_auc(s, y)
    assert r.auc == 1.0 and r.points[0] == (0.0, 0.0) and r.points[-1] == (1.0, 1.0)
    assert roc_auc(-s, y).auc == 0.0
    assert roc_auc(y.astype(float), y).auc == 1.0
    assert roc_auc(-y.astype(float), y).auc == 0.0


def test_roc_ties_are_one_step():
    r = roc_auc([1.0, 1.0, 1.0, 1.0], [1, -1, 1, -1])
    assert r.points == ((0.0, 0.0), (1.0, 1.0)) and r.auc == 0.5


def test_roc_null_is_near_half():
    rng = np.random.default_rng(42)
    y = np.where(rng.random(1000) < 0.5, 1, -1)
    assert 0.45 <= roc_auc(rng.normal(size=1000), y).auc <= 0.55


def test_roc_single_class():
    with pytest.raises(ValueError):
        roc_auc([1.0, 2.0], [1, 1])


@given(st.integers(0, 10_000), st.booleans())
def test_auc_equals_mann_whitney(seed, coarse):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 80))
    y = np.where(rng.random(n) < 0.3, 1, -1)
    y[:2] = (1, -1)
    s = rng.normal(size=n) + 0.8 * (y == 1)
    if coarse:
        s = np.round(s, 0)
    r = roc_auc(s, y)
    assert r.auc == pytest.approx(oracles.mann_whitney(s, y == 1), abs=1e-9)
    assert r.auc == pytest.approx(mann_whitney_auc(s, y), abs=1e-9)
    fpr, tpr = np.array(r.points).T
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_dice_examples():
    a = np.zeros((10, 10), bool)
    a[0:4, 0:4] = True
    b = np.zeros_like(a)
    b[0:4, 2:6] = True
    assert dice(a, a) == 1.0
    assert dice(a, ~a) == 0.0
    assert dice(a, b) == 0.5
    assert dice(np.zeros_like(a), np.zeros_like(a)) == 1.0
    with pytest.raises(ValueError):
        dice(a, np.zeros((3, 3), bool))


def small_cfg(**exp):
    base = AppConfig()
    return dataclasses.replace(
        base,
        svm=dataclasses.replace(base.svm, c_grid=(1.0,)),
        experiment=dataclasses.replace(base.experiment, seeds=(0, 1), **exp),
    )


def test_feature_cache_is_bit_identical(small_dataset, tmp_path):
    m = load_manifest(small_dataset)
    path = m.entries[0].image_path
    cfg = AppConfig()
    fresh = cached_features(path, cfg, tmp_path)[0].to_array()
    cached = cached_features(path, cfg, tmp_path)[0].to_array()
    direct = cached_features(path, cfg, None)[0].to_array()
    assert fresh.tobytes() == cached.tobytes() == direct.tobytes()
    assert len(list(tmp_path.glob("*.json"))) == 1


@pytest.fixture(scope="module")
def report(small_dataset, tmp_path_factory):
    m = load_manifest(small_dataset)
    cfg = small_cfg()
    feats = extract_all(m, cfg, tmp_path_factory.mktemp("cache"), jobs=2)
    return run_experiment(m, cfg, features=feats), feats, m, cfg


def test_report_shape(report):
    rep, _, m, _ = report
    assert rep["schema_version"] == 1
    assert set(rep["table1"]) == {"linear", "rbf", "polynomial"}
    assert set(rep["ablation"]) == {"asymmetry", "border", "color", "diameter", "overall"}
    assert rep["dataset"]["n_images"] == len(m) == 48
    assert rep["dataset"]["n_used"] + rep["dataset"]["n_failed"] == 48
    row = rep["table1"]["rbf"]["with_smote"]
    assert [r["seed"] for r in row["per_seed"]] == [0, 1]
    assert row["aggregate"]["accuracy"]["n"] == 2
    assert "jobs" not in rep["config"]["experiment"] and "output_dir" not in rep["config"]
    json.dumps(rep, allow_nan=False)


def test_smote_changes_training_set_only(report):
    rep, _, _, _ = report
    for kernel in rep["table1"].values():
        on, off = kernel["with_smote"]["per_seed"], kernel["without_smote"]["per_seed"]
        for a, b in zip(on, off):
            assert a["seed"] == b["seed"] and a["n_train"] == b["n_train"]
            assert a["n_melanoma"] == b["n_melanoma"]
            assert b["n_train_after"] == b["n_train"]
            assert a["n_melanoma_after"] == a["n_train_after"] - a["n_benign"] == a["n_benign"]


def test_test_sets_identical_with_and_without_smote(report):
    rep, feats, m, cfg = report
    y = np.array([e.label for e, (v, *_) in zip(m.entries, feats) if v is not None])
    x = np.vstack([v.to_array() for v, *_ in feats if v is not None])
    for seed in cfg.experiment.seeds:
        tr, te = split(y, cfg.experiment.split_ratio, seed)
        on, _ = train_model(x[tr], y[tr], cfg, "rbf", 1.0, True, seed)
        off, _ = train_model(x[tr], y[tr], cfg, "rbf", 1.0, False, seed)
        # same scaler, so the evaluated test matrix is the same bytes
        assert on.prepare(x[te]).tobytes() == off.prepare(x[te]).tobytes()
        stored = rep["table1"]["rbf"]["with_smote"]["per_seed"][seed]
        pred = np.where(on.decision(on.prepare(x[te])) >= 0, 1, -1)
        assert metrics(ConfusionCounts.from_predictions(y[te], pred))["sensitivity"] == stored["sensitivity"]


def test_run_experiment_is_deterministic(report):
    rep, feats, m, cfg = report
    again = run_experiment(m, cfg, features=feats)
    assert json.dumps(again, sort_keys=True) == json.dumps(rep, sort_keys=True)


def test_failures_are_excluded_and_listed(report):
    _, feats, m, cfg = report
    broken = list(feats)
    broken[0] = (None, "segment", "no contrast", 3)
    rep = run_experiment(m, dataclasses.replace(cfg, experiment=dataclasses.replace(
        cfg.experiment, ablation=False)), features=broken)
    assert rep["failures"] == [{"image": m.entries[0].name, "stage": "segment", "error": "no contrast"}]
    assert rep["dataset"]["n_used"] == 47 and rep["ablation"] is None


def test_table_renderings(report):
    rep = report[0]
    text = table1_text(rep)
    assert all(k in text.lower() for k in ("linear", "rbf", "poly"))
    rows = table1_csv_rows(rep)
    assert len(rows) == 6
    assert {(r["kernel"], r["smote"]) for r in rows} == {
        (k, s) for k in ("linear", "rbf", "polynomial") for s in (True, False)}
    rbf = next(r for r in rows if r["kernel"] == "rbf" and r["smote"])
    assert rbf["accuracy_mean"] == rep["table1"]["rbf"]["with_smote"]["aggregate"]["accuracy"]["mean"]


def test_segmentation_quality_on_synthetic(small_dataset):
    m = load_manifest(small_dataset)
    q = segmentation_quality(m.subset(range(6)), AppConfig())
    assert q["n"] == 6 and q["median"] >= 0.85 and q["failure_rate"] == 0.0


def test_bench_reports_groups(small_dataset):
    m = load_manifest(small_dataset)
    idx = [i for i, e in enumerate(m.entries) if e.label == 1][:1] + \
          [i for i, e in enumerate(m.entries) if e.label == -1][:1]
    t = bench(m.subset(idx), AppConfig(), repetitions=3).to_dict()
    for g in ("benign", "melanoma"):
        assert t[g]["n_runs"] == 3 and t[g]["n_images"] == 1
        stage_sum = sum(t[g][s]["mean"] for s in ("preprocess", "segment", "features", "classify"))
        assert t[g]["total"]["mean"] == pytest.approx(stage_sum)
        assert t[g]["total"]["std"] > 0
    assert t["repetitions"] == 3 and t["failures"] == []

import json

import numpy as np
import pytest

from scenehmm.classify import OvrClassifier, predict_proba
from scenehmm.descriptors import read_sequences
from scenehmm.ensemble import fuse, objective, one_hot, read_scores_csv, weights_from_json
from scenehmm.errors import AlignmentError, ArtifactError, ConfigError
from scenehmm.hmm import ReferenceBank, read_vectors
from scenehmm.imaging import make_split
from scenehmm.pipeline import (
    Bundle,
    EvaluationReport,
    PipelineConfig,
    cmd_eval,
    cmd_extract,
    cmd_fuse,
    cmd_predict,
    cmd_sweep,
    cmd_train,
    confusion_matrix,
    load_config,
    run_all,
)
from scenehmm.reduce import PcaModel
from scenehmm.synthetic import grating_dataset


@pytest.fixture(scope="module")
def toy():
    return grating_dataset(n_classes=2, per_class=6, size=64, seed=3)


@pytest.fixture(scope="module")
def toy_split(toy):
    return make_split(toy, 3, seed=0)


@pytest.fixture(scope="module")
def full_run(toy, toy_split, tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    cfg = PipelineConfig(bundle=str(root))
    cfg.ensemble.iters = 300
    report = run_all(cfg, toy, root, toy_split)
    return cfg, root, report


# -- configuration ------------------------------------------------------------


def test_default_config_values():
    cfg = PipelineConfig()
    grids = {d: cfg.descriptors[d].g for d in cfg.enabled()}
    assert grids == {"sift": 7, "gist": 3, "centrist": 5, "gabor": 3}
    assert cfg.descriptors["sift"].pca_dim == 20 and cfg.descriptors["centrist"].pca_dim == 10
    assert cfg.descriptors["gabor"].scales == 5 and cfg.descriptors["gist"].scales == 4


def test_config_json_round_trip(tmp_path):
    cfg = PipelineConfig().only("gist", 5)
    (tmp_path / "c.json").write_text(cfg.to_json())
    back = load_config(tmp_path / "c.json")
    assert back.to_json() == cfg.to_json()


def test_partial_config_takes_defaults():
    cfg = PipelineConfig.from_dict({"descriptors": {"sift": {"g": 5, "svm": {"c": 3.0}}}})
    assert cfg.descriptors["sift"].g == 5 and cfg.descriptors["sift"].pca_dim == 20
    assert cfg.descriptors["sift"].svm.c == 3.0
    assert cfg.descriptors["gabor"].g == 3


@pytest.mark.parametrize("bad", [
    {"descriptors": {"sift": {"g": 4}}},
    {"descriptors": {"centrist": {"pca_dim": 300}}},
    {"descriptors": {name: {"enabled": False} for name in ("sift", "gist", "centrist", "gabor")}},
    {"descriptors": {"surf": {}}},
    {"ensemble": {"iters": 0}},
    {"descriptors": {"sift": {"svm": {"tol": 2.0}}}},
    {"unknown_key": 1},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(bad)


def test_malformed_config_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


# -- full default run ---------------------------------------------------------


def test_extract_feature_lengths(full_run):
    _, root, _ = full_run
    expected = {"sift": 2 * 49, "gist": 2 * 9, "centrist": 2 * 25, "gabor": 2 * 9}
    for name, length in expected.items():
        desc, ids, X = read_vectors(root / f"features_{name}.jsonl")
        assert desc == name and X.shape == (12, length)
        # every per-position slice is a distribution
        g2 = length // 2
        for t in range(g2):
            assert np.allclose(X[:, t] + X[:, g2 + t], 1.0, atol=1e-9)


def test_train_outputs(full_run, toy_split):
    _, root, _ = full_run
    for name in ("sift", "gist", "centrist", "gabor"):
        ids, P = read_scores_csv(root / f"scores_{name}.csv")
        assert sorted(ids) == sorted(toy_split.train)
        assert np.allclose(P.sum(1), 1, atol=1e-6)
        clf = OvrClassifier.from_json((root / f"svm_{name}.json").read_text())
        assert clf.m == 2 and clf.descriptor_id == name


def test_fuse_weights_and_sandwich(full_run):
    _, root, _ = full_run
    data = json.loads((root / "weights.json").read_text())
    w = np.array(data["w"])
    assert data["classifiers"] == ["sift", "gist", "centrist", "gabor"]
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-9
    for val in data["baselines"].values():
        assert data["objective"] <= val + 1e-6


def test_eval_report_structure(full_run, toy_split):
    _, root, report = full_run
    cm = np.array(report.confusion)
    assert cm.sum(1).tolist() == [3, 3]
    assert report.accuracy == pytest.approx(np.trace(cm) / cm.sum())
    assert report.n_test == len(toy_split.test)
    header = (root / "report.txt").read_text().splitlines()[0].split()
    assert header == ["Class", "SIFT", "Gist", "Centrist", "Gabor", "Combine"]
    assert EvaluationReport.from_json((root / "report.json").read_text()) == report


def test_eval_accuracy_uses_fuse_path(full_run):
    # golden check: recompute the ensemble from the persisted test scores
    _, root, report = full_run
    names, w = weights_from_json((root / "weights.json").read_text())
    scores = [read_scores_csv(root / f"test_scores_{n}.csv") for n in names]
    ids = scores[0][0]
    _, labels = fuse(np.stack([s[1] for s in scores]), w)
    truth = {it["id"]: it["label"] for it in json.loads((root / "dataset.json").read_text())["items"]}
    y = np.array([truth[i] for i in ids])
    assert (labels == y).mean() == report.accuracy
    for k, n in enumerate(names):
        assert (scores[k][1].argmax(1) == y).mean() == report.single_accuracy[n]


def test_artifacts_round_trip(full_run):
    _, root, _ = full_run
    b = Bundle(root)
    for name in ("sift", "centrist"):
        text = (root / f"pca_{name}.json").read_text()
        assert PcaModel.from_json(text).to_json() == text
    assert not (root / "pca_gist.json").exists()
    bank = b.load_bank("gist")
    assert ReferenceBank.from_json(bank.to_json()).to_json() == bank.to_json()
    grids = read_sequences(root / "grids_sift.jsonl")
    assert len(grids) == 12 and grids[0][1].features.shape == (49, 128)


def test_manifest_hashes(full_run):
    import hashlib
    _, root, _ = full_run
    manifest = json.loads((root / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((root / name).read_bytes()).hexdigest() == digest


def test_predict_matches_test_scores(full_run, toy):
    _, root, _ = full_run
    test_ids, P = read_scores_csv(root / "test_scores_gist.csv")
    item = next(it for it in toy.items if it.id == test_ids[0])
    pred = cmd_predict(root, item.image)
    assert np.allclose(pred.per_descriptor["gist"], P[0], atol=1e-12)
    assert abs(sum(pred.probabilities) - 1) < 1e-9
    assert pred.class_name == toy.class_names[pred.label]


# -- smaller configurations ---------------------------------------------------


def test_single_descriptor_pipeline(toy, toy_split, tmp_path):
    cfg = PipelineConfig().only("centrist")
    cmd_extract(cfg, toy, toy_split, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("features_*")) == ["features_centrist.jsonl"]
    cmd_train(cfg, tmp_path)
    out = cmd_fuse(cfg, tmp_path)
    assert out["w"] == [1.0]
    assert json.loads((tmp_path / "weights.json").read_text())["w"] == [1.0]
    report = cmd_eval(cfg, tmp_path)
    assert report.accuracy == report.single_accuracy["centrist"]


def test_rerun_is_byte_identical(toy, toy_split, tmp_path):
    cfg = PipelineConfig().only("gist")
    cfg.ensemble.iters = 50
    run_all(cfg, toy, tmp_path / "a", toy_split)
    run_all(cfg, toy, tmp_path / "b", toy_split)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_stale_descriptor_files_removed(toy, toy_split, tmp_path):
    cmd_extract(PipelineConfig().only("centrist"), toy, toy_split, tmp_path)
    cmd_extract(PipelineConfig().only("gist"), toy, toy_split, tmp_path)
    assert not list(tmp_path.glob("*centrist*"))


def test_eval_rejects_mismatched_weights(toy, toy_split, tmp_path):
    cfg = PipelineConfig().only("centrist")
    run_all(cfg, toy, tmp_path, toy_split)
    other = PipelineConfig().only("gist")
    with pytest.raises(ArtifactError):
        cmd_eval(other, tmp_path)


def test_train_without_features(tmp_path):
    with pytest.raises(ArtifactError):
        cmd_train(PipelineConfig().only("gist"), tmp_path)


def test_extract_split_mismatch(toy, tmp_path):
    other = make_split(grating_dataset(n_classes=2, per_class=4, seed=9), 2, seed=0)
    shifted = type(other)(other.seed, other.train_per_class,
                          [i.replace("img", "x") for i in other.train], other.test)
    with pytest.raises(AlignmentError):
        cmd_extract(PipelineConfig().only("centrist"), toy, shifted, tmp_path)
    assert not list(tmp_path.glob("*.json*"))


def test_sweep_rows(toy, toy_split, tmp_path):
    cfg = PipelineConfig()
    for name in ("sift", "gabor"):
        cfg.descriptors[name].enabled = False
    cfg.ensemble.iters = 20
    rows, best = cmd_sweep(cfg, toy, toy_split, [3, 5], tmp_path / "sweep.csv")
    assert [(r[0], r[1]) for r in rows] == [("gist", 3), ("gist", 5), ("centrist", 3),
                                           ("centrist", 5)]
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "descriptor,g,accuracy" and len(lines) == 5
    for name in ("gist", "centrist"):
        accs = {g: a for n, g, a in rows if n == name}
        assert accs[best[name]] == max(accs.values())
    with pytest.raises(ConfigError):
        cmd_sweep(cfg, toy, toy_split, [4], tmp_path / "x.csv")


def test_confusion_matrix_perfect():
    cm = confusion_matrix([0, 1, 1, 2], [0, 1, 1, 2], 3)
    assert np.array_equal(cm, np.diag([1, 2, 1]))


def test_perfect_classifier_report(tmp_path):
    # separable toy gratings: a single well-tuned descriptor gets every test image
    ds = grating_dataset(n_classes=2, per_class=6, size=64, seed=1, noise=5.0)
    split = make_split(ds, 3, seed=0)
    report = run_all(PipelineConfig().only("gist"), ds, tmp_path, split)
    assert report.accuracy == 1.0
    assert np.array_equal(np.array(report.confusion), np.diag([3, 3]))
    assert report.mean_class_accuracy == 1.0


def test_predict_proba_consistent_with_objective(full_run):
    # the fused objective recorded in weights.json is reproducible from the CSVs
    _, root, _ = full_run
    data = json.loads((root / "weights.json").read_text())
    scores = [read_scores_csv(root / f"scores_{n}.csv") for n in data["classifiers"]]
    truth = {it["id"]: it["label"] for it in json.loads((root / "dataset.json").read_text())["items"]}
    D = one_hot([truth[i] for i in scores[0][0]], 2)
    S = np.stack([s[1] for s in scores])
    assert objective(data["w"], S, D) == pytest.approx(data["objective"], abs=1e-12)
    clf = Bundle(root).load_svm("gist")
    _, X = Bundle(root).load_features("gist")
    assert predict_proba(clf, X).shape == (12, 2)

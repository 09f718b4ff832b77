"""End-to-end orchestration: extract, train, fuse, eval, predict and sweep.

Every stage reads and writes a *bundle* directory so stages can be rerun
independently::

    bundle/
      config.json  dataset.json  split.json  manifest.json
      grids_<desc>.jsonl   pca_<desc>.json   bank_<desc>.json
      features_<desc>.jsonl   svm_<desc>.json   scores_<desc>.csv
      test_scores_<desc>.csv   weights.json   report.json   report.txt
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .classify import KernelParams, OvrClassifier, ovr_train, predict_proba
from .descriptors import (
    DESCRIPTORS,
    GridSequence,
    build_gabor_bank,
    descriptor_dim,
    encode,
    write_sequences,
)
from .ensemble import (
    fuse,
    one_hot,
    read_scores_csv,
    solve_weights,
    stack_scores,
    weights_from_json,
    weights_to_json,
    write_scores_csv,
)
from .errors import AlignmentError, ArtifactError, ConfigError, CoverageError
from .hmm import ReferenceBank, build_bank, hmm_features, read_vectors, write_vectors
from .imaging import GrayImage, LabeledImageSet, SplitSpec, make_split, read_image
from .reduce import PcaModel, pca_apply, pca_fit

log = logging.getLogger(__name__)

VALID_GRIDS = (3, 5, 7)
DISPLAY_NAMES = {"sift": "SIFT", "gist": "Gist", "centrist": "Centrist", "gabor": "Gabor"}

# grids 3/7/5/3, PCA 20/10 for SIFT/Centrist, Gist 4x8 and Gabor 5x8 filters
_DEFAULTS = {
    "sift": {"g": 7, "pca_dim": 20},
    "gist": {"g": 3, "pca_dim": None, "scales": 4},
    "centrist": {"g": 5, "pca_dim": 10},
    "gabor": {"g": 3, "pca_dim": None, "scales": 5},
}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class DescriptorConfig:
    enabled: bool = True
    g: int = 3
    pca_dim: int | None = None
    scales: int | None = None
    orientations: int = 8
    base_wavelength: float = 4.0
    svm: KernelParams = field(default_factory=KernelParams)

    def dim(self, name: str) -> int:
        return descriptor_dim(name, self.scales, self.orientations)


@dataclass
class EnsembleConfig:
    iters: int = 5000
    squared: bool = False


@dataclass
class SplitConfig:
    train_per_class: int = 100
    seed: int = 0


@dataclass
class PipelineConfig:
    """Pipeline settings; defaults are the standard four-descriptor setup."""

    descriptors: dict = field(default_factory=lambda: {
        name: DescriptorConfig(**kw) for name, kw in _DEFAULTS.items()
    })
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    data: str | None = None
    bundle: str = "bundle"

    @property
    def seed(self) -> int:
        return self.split.seed

    def enabled(self) -> list:
        return [d for d in DESCRIPTORS if d in self.descriptors and self.descriptors[d].enabled]

    def validate(self) -> "PipelineConfig":
        unknown = set(self.descriptors) - set(DESCRIPTORS)
        if unknown:
            raise ConfigError(f"unknown descriptors {sorted(unknown)}")
        if not self.enabled():
            raise ConfigError("at least one descriptor must be enabled")
        for name, dc in self.descriptors.items():
            if dc.g not in VALID_GRIDS:
                raise ConfigError(f"{name}: g must be one of {VALID_GRIDS}, got {dc.g}")
            if dc.pca_dim is not None and not 1 <= dc.pca_dim <= dc.dim(name):
                raise ConfigError(f"{name}: pca_dim {dc.pca_dim} exceeds descriptor dim {dc.dim(name)}")
            if name in ("gist", "gabor"):
                if not dc.scales or dc.scales < 1 or dc.orientations < 1:
                    raise ConfigError(f"{name}: scales and orientations must be >= 1")
                if dc.base_wavelength < 2:
                    raise ConfigError(f"{name}: base_wavelength must be >= 2")
        if self.ensemble.iters < 1:
            raise ConfigError("ensemble.iters must be >= 1")
        if self.split.train_per_class < 1:
            raise ConfigError("split.train_per_class must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        """Build from a (possibly partial) dict; missing keys take defaults."""
        d = dict(d)
        base = cls()
        try:
            descs = copy.deepcopy(base.descriptors)
            for name, sub in (d.pop("descriptors", None) or {}).items():
                sub = dict(sub)
                svm = KernelParams(**sub.pop("svm", {}))
                start = asdict(descs[name]) if name in descs else {}
                start.pop("svm", None)
                start.update(sub)
                descs[name] = DescriptorConfig(**start, svm=svm)
            cfg = cls(
                descriptors=descs,
                ensemble=EnsembleConfig(**(d.pop("ensemble", None) or {})),
                split=SplitConfig(**(d.pop("split", None) or {})),
                **d,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def only(self, name: str, g: int | None = None) -> "PipelineConfig":
        """Copy with a single descriptor enabled (optionally at grid ``g``)."""
        cfg = copy.deepcopy(self)
        for d, dc in cfg.descriptors.items():
            dc.enabled = d == name
        if g is not None:
            cfg.descriptors[name].g = g
        return cfg.validate()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return PipelineConfig.from_json(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Bundle I/O
# ---------------------------------------------------------------------------


class Bundle:
    """Thin wrapper around the bundle directory."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise ArtifactError(f"missing bundle artifact {p}")
        return p

    def read_text(self, name: str) -> str:
        return self.require(name).read_text(encoding="utf-8")

    def write_text(self, name: str, text: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def write_manifest(self) -> None:
        files = {}
        for p in sorted(self.root.iterdir()):
            if p.is_file() and p.name != "manifest.json":
                files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        self.write_text("manifest.json", json.dumps(
            {"package": "scenehmm", "version": __version__, "files": files}, indent=1))

    def load_dataset_index(self) -> tuple:
        d = json.loads(self.read_text("dataset.json"))
        return d["class_names"], {it["id"]: it["label"] for it in d["items"]}

    def load_split(self) -> SplitSpec:
        return SplitSpec.from_json(self.read_text("split.json"))

    def load_config(self) -> PipelineConfig:
        return PipelineConfig.from_json(self.read_text("config.json"))

    def load_pca(self, name: str) -> PcaModel | None:
        p = self.path(f"pca_{name}.json")
        return PcaModel.from_json(p.read_text()) if p.is_file() else None

    def load_bank(self, name: str) -> ReferenceBank:
        return ReferenceBank.from_json(self.read_text(f"bank_{name}.json"))

    def load_svm(self, name: str) -> OvrClassifier:
        return OvrClassifier.from_json(self.read_text(f"svm_{name}.json"))

    def load_features(self, name: str) -> tuple:
        _, ids, X = read_vectors(self.require(f"features_{name}.jsonl"))
        return ids, X


class _Transaction:
    """Remove files written by a failed stage."""

    def __init__(self, bundle: Bundle):
        self.bundle = bundle
        self.written = []

    def write_text(self, name, text):
        self.written.append(self.bundle.path(name))
        return self.bundle.write_text(name, text)

    def path(self, name):
        self.bundle.root.mkdir(parents=True, exist_ok=True)
        p = self.bundle.path(name)
        self.written.append(p)
        return p

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.written:
                p.unlink(missing_ok=True)
        else:
            self.bundle.write_manifest()
        return False


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def _bank_for(name: str, dc: DescriptorConfig):
    if name in ("gist", "gabor"):
        return build_gabor_bank(dc.scales, dc.orientations, float(dc.base_wavelength))
    return None


def _encode_one(args):
    pixels, name, g, scales, orientations, base = args
    bank = build_gabor_bank(scales, orientations, base) if scales else None
    return encode(GrayImage(pixels), name, g, bank).features


def encode_all(images, name: str, dc: DescriptorConfig, jobs: int = 1) -> list:
    """Encode images with one descriptor, preserving input order."""
    if jobs <= 1:
        bank = _bank_for(name, dc)
        return [encode(im, name, dc.g, bank) for im in images]
    scales = dc.scales if name in ("gist", "gabor") else None
    tasks = [(im.pixels, name, dc.g, scales, dc.orientations, float(dc.base_wavelength))
             for im in images]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        feats = list(pool.map(_encode_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [GridSequence(name, dc.g, f) for f in feats]


def cmd_extract(config: PipelineConfig, dataset: LabeledImageSet, split: SplitSpec,
                bundle, jobs: int = 1) -> dict:
    """Encode, reduce and turn every image into HMM feature vectors.

    Training images get leave-one-out features (their own grids are excluded
    from the reference bank); test images use the full bank. Returns
    ``{descriptor: (ids, (N, m*n) array)}``.
    """
    config.validate()
    bundle = Bundle(bundle)
    assignment = split.assignment
    missing = [it.id for it in dataset.items if it.id not in assignment]
    if missing:
        raise AlignmentError(f"{len(missing)} dataset images are not in the split")
    ids = [it.id for it in dataset.items]
    labels = {it.id: it.label for it in dataset.items}
    train_ids = [i for i in ids if assignment[i] == "train"]
    out = {}
    with _Transaction(bundle) as tx:
        tx.write_text("config.json", config.to_json())
        tx.write_text("split.json", split.to_json())
        tx.write_text("dataset.json", json.dumps({
            "class_names": list(dataset.class_names),
            "items": [{"id": i, "label": labels[i]} for i in ids],
        }, indent=1))
        for stale in bundle.root.glob("*_*.*"):
            if any(stale.name.startswith(p) for p in ("grids_", "pca_", "bank_", "features_",
                                                      "svm_", "scores_", "test_scores_")):
                stale.unlink()
        for name in config.enabled():
            dc = config.descriptors[name]
            log.info("extract %s (g=%d) for %d images", name, dc.g, len(ids))
            seqs = encode_all([it.image for it in dataset.items], name, dc, jobs)
            write_sequences(tx.path(f"grids_{name}.jsonl"), zip(ids, seqs))
            feats = {i: s.features for i, s in zip(ids, seqs)}
            if dc.pca_dim is not None:
                pca = pca_fit(np.concatenate([feats[i] for i in train_ids]), dc.pca_dim)
                tx.write_text(f"pca_{name}.json", pca.to_json())
                feats = {i: pca_apply(pca, f) for i, f in feats.items()}
            bank = build_bank([(feats[i], labels[i]) for i in train_ids], dataset.m,
                              ids=train_ids)
            tx.write_text(f"bank_{name}.json", bank.to_json())
            vecs = [hmm_features(feats[i], bank, exclude_id=i if assignment[i] == "train" else None)
                    for i in ids]
            write_vectors(tx.path(f"features_{name}.jsonl"), name, zip(ids, vecs))
            out[name] = (ids, np.array(vecs))
    return out


# ---------------------------------------------------------------------------
# Training and fusion
# ---------------------------------------------------------------------------


def cmd_train(config: PipelineConfig, bundle) -> dict:
    """Fit one OvR classifier per enabled descriptor on the training split.

    Writes ``svm_<desc>.json`` and the training-set probability scores
    ``scores_<desc>.csv``. Returns ``{descriptor: OvrClassifier}``.
    """
    bundle = Bundle(bundle)
    class_names, labels = bundle.load_dataset_index()
    train = set(bundle.load_split().train)
    models = {}
    with _Transaction(bundle) as tx:
        for name in config.enabled():
            ids, X = bundle.load_features(name)
            tr = [k for k, i in enumerate(ids) if i in train]
            y = np.array([labels[ids[k]] for k in tr])
            absent = sorted(set(range(len(class_names))) - set(y.tolist()))
            if absent:
                raise CoverageError(f"{name}: no training images for classes {absent}")
            log.info("train %s on %d images, D=%d", name, len(tr), X.shape[1])
            clf = ovr_train(X[tr], y, config.descriptors[name].svm, name, seed=config.seed)
            if not clf.converged:
                log.warning("%s: SMO hit the pass limit on some machine", name)
            tx.write_text(f"svm_{name}.json", clf.to_json())
            write_scores_csv(tx.path(f"scores_{name}.csv"), [ids[k] for k in tr],
                             predict_proba(clf, X[tr]))
            models[name] = clf
    return models


def cmd_fuse(config: PipelineConfig, bundle) -> dict:
    """Solve for the simplex weights on the training scores.

    Returns the JSON payload written to ``weights.json``.
    """
    bundle = Bundle(bundle)
    class_names, labels = bundle.load_dataset_index()
    named = {name: read_scores_csv(bundle.require(f"scores_{name}.csv"))
             for name in config.enabled()}
    names, ids, S = stack_scores(named)
    D = one_hot([labels[i] for i in ids], len(class_names))
    sol = solve_weights(S, D, config.ensemble.iters, config.seed, config.ensemble.squared)
    for key, val in sol.baselines.items():
        log.info("fuse baseline %s: J=%.6f", key, val)
    log.info("fuse optimum: J=%.6f w=%s", sol.objective, np.round(sol.w, 4).tolist())
    payload = {"classifiers": names, "w": [float(x) for x in sol.w],
               "objective": sol.objective, "baselines": sol.baselines,
               "squared": config.ensemble.squared}
    with _Transaction(bundle) as tx:
        tx.write_text("weights.json", weights_to_json(
            names, sol.w, objective=sol.objective, baselines=sol.baselines,
            squared=config.ensemble.squared))
    return payload


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def confusion_matrix(y_true, y_pred, m: int) -> np.ndarray:
    cm = np.zeros((m, m), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _per_class(cm: np.ndarray) -> list:
    tot = cm.sum(axis=1)
    return [float(cm[j, j] / tot[j]) if tot[j] else float("nan") for j in range(len(cm))]


@dataclass
class EvaluationReport:
    class_names: list
    descriptors: list
    accuracy: float
    mean_class_accuracy: float
    per_class_accuracy: list
    confusion: list
    single_accuracy: dict
    single_per_class: dict
    weights: dict
    n_test: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls(**json.loads(text))

    def to_text(self) -> str:
        """Per-class accuracy table (percent) with one column per classifier."""
        cols = [DISPLAY_NAMES[d] for d in self.descriptors] + ["Combine"]
        width = max(16, max(len(c) for c in self.class_names) + 2)
        lines = ["Class".ljust(width) + "".join(c.rjust(10) for c in cols)]
        for j, cname in enumerate(self.class_names):
            vals = [self.single_per_class[d][j] for d in self.descriptors]
            vals.append(self.per_class_accuracy[j])
            lines.append(cname.ljust(width) + "".join(f"{100 * v:10.2f}" for v in vals))
        avg = [float(np.nanmean(self.single_per_class[d])) for d in self.descriptors]
        avg.append(self.mean_class_accuracy)
        lines.append("Average accuracy".ljust(width) + "".join(f"{100 * v:10.2f}" for v in avg))
        lines.append("")
        lines.append("Overall accuracy".ljust(width) + "".join(
            f"{100 * self.single_accuracy[d]:10.2f}" for d in self.descriptors)
            + f"{100 * self.accuracy:10.2f}")
        lines.append("")
        lines.append("Weights: " + ", ".join(
            f"{DISPLAY_NAMES[d]}={self.weights[d]:.4f}" for d in self.descriptors))
        lines.append("")
        lines.append("Confusion matrix (rows = true class):")
        for j, row in enumerate(self.confusion):
            lines.append(self.class_names[j].ljust(width) + "".join(f"{v:6d}" for v in row))
        return "\n".join(lines) + "\n"


def cmd_eval(config: PipelineConfig, bundle) -> EvaluationReport:
    """Score the test split with every classifier and with the fused ensemble."""
    bundle = Bundle(bundle)
    class_names, labels = bundle.load_dataset_index()
    m = len(class_names)
    test = set(bundle.load_split().test)
    names, w = weights_from_json(bundle.read_text("weights.json"))
    if names != config.enabled():
        raise ArtifactError(f"weights cover {names}, config enables {config.enabled()}")
    probs, ids_ref = [], None
    with _Transaction(bundle) as tx:
        for name in names:
            ids, X = bundle.load_features(name)
            te = [k for k, i in enumerate(ids) if i in test]
            te_ids = [ids[k] for k in te]
            if ids_ref is not None and te_ids != ids_ref:
                raise AlignmentError(f"test ids of {name} differ from {names[0]}")
            ids_ref = te_ids
            P = predict_proba(bundle.load_svm(name), X[te])
            write_scores_csv(tx.path(f"test_scores_{name}.csv"), te_ids, P)
            probs.append(P)
        y = np.array([labels[i] for i in ids_ref])
        S = np.stack(probs)
        _, fused_pred = fuse(S, w)
        singles = {n: S[k].argmax(axis=1) for k, n in enumerate(names)}
        cm = confusion_matrix(y, fused_pred, m)
        per_class = _per_class(cm)
        report = EvaluationReport(
            class_names=list(class_names),
            descriptors=names,
            accuracy=float(np.trace(cm) / cm.sum()),
            mean_class_accuracy=float(np.nanmean(per_class)),
            per_class_accuracy=per_class,
            confusion=cm.tolist(),
            single_accuracy={n: float((p == y).mean()) for n, p in singles.items()},
            single_per_class={n: _per_class(confusion_matrix(y, p, m)) for n, p in singles.items()},
            weights={n: float(x) for n, x in zip(names, w)},
            n_test=int(len(y)),
        )
        tx.write_text("report.json", report.to_json())
        tx.write_text("report.txt", report.to_text())
    return report


def run_all(config: PipelineConfig, dataset: LabeledImageSet, bundle,
            split: SplitSpec | None = None, jobs: int = 1) -> EvaluationReport:
    if split is None:
        split = make_split(dataset, config.split.train_per_class, config.split.seed)
    cmd_extract(config, dataset, split, bundle, jobs)
    cmd_train(config, bundle)
    cmd_fuse(config, bundle)
    return cmd_eval(config, bundle)


# ---------------------------------------------------------------------------
# Prediction and grid sweep
# ---------------------------------------------------------------------------


@dataclass
class Prediction:
    label: int
    class_name: str
    probabilities: list
    per_descriptor: dict


def cmd_predict(bundle, image) -> Prediction:
    """Classify one image (path or :class:`GrayImage`) with a trained bundle."""
    bundle = Bundle(bundle)
    config = bundle.load_config()
    class_names, _ = bundle.load_dataset_index()
    if not isinstance(image, GrayImage):
        image = read_image(image)
    names, w = weights_from_json(bundle.read_text("weights.json"))
    per = {}
    for name in names:
        dc = config.descriptors[name]
        feats = encode(image, name, dc.g, _bank_for(name, dc)).features
        pca = bundle.load_pca(name)
        if pca is not None:
            feats = pca_apply(pca, feats)
        v = hmm_features(feats, bundle.load_bank(name))
        per[name] = predict_proba(bundle.load_svm(name), v)
    fused, label = fuse(np.stack([per[n] for n in names]), w)
    return Prediction(int(label), class_names[int(label)], fused.tolist(),
                      {n: p.tolist() for n, p in per.items()})


def cmd_sweep(config: PipelineConfig, dataset: LabeledImageSet, split: SplitSpec,
              grids, out_path, jobs: int = 1) -> tuple:
    """Single-descriptor test accuracy for every enabled descriptor and grid.

    Writes ``descriptor,g,accuracy`` rows and returns ``(rows, best_g)``
    where ``best_g[descriptor]`` is the first grid with maximal accuracy.
    """
    grids = list(grids)
    if not grids:
        raise ConfigError("grid list is empty")
    for g in grids:
        if g not in VALID_GRIDS:
            raise ConfigError(f"grid {g} not in {VALID_GRIDS}")
    rows = []
    for name in config.enabled():
        for g in grids:
            sub = config.only(name, g)
            with tempfile.TemporaryDirectory() as tmp:
                report = run_all(sub, dataset, tmp, split, jobs)
            rows.append((name, g, report.single_accuracy[name]))
            log.info("sweep %s g=%d accuracy=%.4f", name, g, rows[-1][2])
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["descriptor", "g", "accuracy"])
        for name, g, acc in rows:
            wr.writerow([name, g, repr(acc)])
    best = {}
    for name, g, acc in rows:
        if name not in best or acc > best[name][1]:
            best[name] = (g, acc)
    return rows, {k: v[0] for k, v in best.items()}

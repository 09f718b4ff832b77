"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data/artifact error,
4 success but some SMO solver stopped at its pass limit.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import (
    AlignmentError,
    ArtifactError,
    ConfigError,
    DatasetError,
    DimensionError,
    FormatError,
    ParameterError,
)
from .imaging import SplitSpec, load_dataset, make_split

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg.split.seed = args.seed
    if args.bundle:
        cfg.bundle = args.bundle
    if getattr(args, "data", None):
        cfg.data = args.data
    if getattr(args, "train_per_class", None):
        cfg.split.train_per_class = args.train_per_class
    if getattr(args, "only", None):
        for name, dc in cfg.descriptors.items():
            dc.enabled = name in args.only
    return cfg.validate()


def _dataset_and_split(cfg, args):
    if not cfg.data:
        raise ConfigError("no dataset: pass --data or set 'data' in the config")
    dataset = load_dataset(cfg.data)
    if getattr(args, "split", None):
        with open(args.split, encoding="utf-8") as fh:
            split = SplitSpec.from_json(fh.read())
    else:
        split = make_split(dataset, cfg.split.train_per_class, cfg.split.seed)
    return dataset, split


def _converged(models) -> bool:
    return all(m.converged for m in models.values())


def cmd_extract(args):
    cfg = _config(args)
    dataset, split = _dataset_and_split(cfg, args)
    feats = pipeline.cmd_extract(cfg, dataset, split, cfg.bundle, args.jobs)
    for name, (ids, X) in feats.items():
        print(f"{name}: {len(ids)} vectors of length {X.shape[1]}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    models = pipeline.cmd_train(cfg, cfg.bundle)
    print(f"trained {len(models)} classifier(s): {', '.join(models)}")
    return EXIT_OK if _converged(models) else EXIT_CONVERGENCE


def cmd_fuse(args):
    cfg = _config(args)
    out = pipeline.cmd_fuse(cfg, cfg.bundle)
    print(json.dumps({"classifiers": out["classifiers"], "w": out["w"],
                      "objective": out["objective"], "baselines": out["baselines"]}, indent=1))
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    report = pipeline.cmd_eval(cfg, cfg.bundle)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    dataset, split = _dataset_and_split(cfg, args)
    pipeline.cmd_extract(cfg, dataset, split, cfg.bundle, args.jobs)
    models = pipeline.cmd_train(cfg, cfg.bundle)
    pipeline.cmd_fuse(cfg, cfg.bundle)
    print(pipeline.cmd_eval(cfg, cfg.bundle).to_text(), end="")
    return EXIT_OK if _converged(models) else EXIT_CONVERGENCE


def cmd_predict(args):
    bundle = args.bundle or (pipeline.load_config(args.config).bundle if args.config else "bundle")
    pred = pipeline.cmd_predict(bundle, args.image)
    print(json.dumps({"label": pred.label, "class": pred.class_name,
                      "probabilities": pred.probabilities,
                      "per_descriptor": pred.per_descriptor}, indent=1))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    dataset, split = _dataset_and_split(cfg, args)
    rows, best = pipeline.cmd_sweep(cfg, dataset, split, args.grids, args.out, args.jobs)
    for name, g, acc in rows:
        print(f"{name:9s} g={g}  accuracy={acc:.4f}")
    for name, g in best.items():
        print(f"best grid for {name}: {g}x{g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline configuration")
    common.add_argument("--bundle", help="model bundle directory")
    common.add_argument("--seed", type=int, help="split/training seed (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for extraction")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset root: <root>/<class>/<image>.{pgm,png}")
    data.add_argument("--split", help="split JSON to reuse instead of drawing one")
    data.add_argument("--train-per-class", type=int, dest="train_per_class")
    data.add_argument("--only", nargs="+", choices=pipeline.DESCRIPTORS,
                      help="enable only these descriptors")

    parser = argparse.ArgumentParser(prog="scenehmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, parents, help_ in [
        ("extract", cmd_extract, [common, data], "encode images and build HMM features"),
        ("train", cmd_train, [common], "train one OvR SVM per descriptor"),
        ("fuse", cmd_fuse, [common], "solve the ensemble weights"),
        ("eval", cmd_eval, [common], "evaluate on the test split"),
        ("run", cmd_run, [common, data], "extract, train, fuse and eval in one go"),
        ("sweep", cmd_sweep, [common, data], "accuracy versus grid size per descriptor"),
    ]:
        p = sub.add_parser(name, parents=parents, help=help_)
        p.set_defaults(func=fn)
        if name == "sweep":
            p.add_argument("--grids", type=int, nargs="+", default=[3, 5, 7])
            p.add_argument("--out", default="sweep.csv")
    p = sub.add_parser("predict", parents=[common], help="classify one image")
    p.add_argument("image")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FormatError, DimensionError, AlignmentError, ArtifactError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

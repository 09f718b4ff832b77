"""
End-to-end pipeline on synthetic scenes
=======================================

Four classes of oriented gratings stand in for scene categories. The
pipeline writes every intermediate artifact into a bundle directory:
grid sequences, PCA models, reference banks, HMM features, classifiers,
scores, ensemble weights and the evaluation report.

The same stages are available from the command line::

    scenehmm run --data DATA --bundle BUNDLE --train-per-class 40
    scenehmm predict --bundle BUNDLE image.pgm

Pass ``--full`` to run all four descriptors at full size (about two
minutes on one core).
"""

import sys
import tempfile
from pathlib import Path

from scenehmm import PipelineConfig, make_split, run_all
from scenehmm.pipeline import cmd_predict
from scenehmm.synthetic import grating_dataset

full = "--full" in sys.argv
dataset = grating_dataset(n_classes=4, per_class=80 if full else 20, size=64, seed=0)
split = make_split(dataset, 40 if full else 10, seed=0)

config = PipelineConfig()
if not full:
    config.descriptors["gabor"].enabled = False
    config.ensemble.iters = 500

with tempfile.TemporaryDirectory() as tmp:
    report = run_all(config, dataset, tmp, split)
    print(report.to_text())
    print("bundle:", sorted(p.name for p in Path(tmp).iterdir()))

    probe = next(it for it in dataset.items if it.id in split.test)
    pred = cmd_predict(tmp, probe.image)
    print(f"{probe.id}: predicted {pred.class_name}")

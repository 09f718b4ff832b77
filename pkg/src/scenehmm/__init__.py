"""Scene classification from HMM posteriors over zigzag-ordered image grids.

Each image is cut into a grid of cells, every cell is described by a local
descriptor, and a distance-based HMM turns the zigzag cell sequence into
per-cell class posteriors. One RBF SVM per descriptor scores these vectors
and a simplex-weighted combination of the SVM probabilities makes the final
decision.
"""

__version__ = "0.1.0"

from .classify import KernelParams, OvrClassifier, ovr_train, predict_proba
from .descriptors import GridSequence, build_gabor_bank, encode, zigzag
from .ensemble import fuse, objective, simplex_project, solve_weights
from .hmm import ReferenceBank, build_bank, emission, feature_vector, forward, transition
from .imaging import GrayImage, LabeledImageSet, SplitSpec, load_dataset, make_split
from .pipeline import EvaluationReport, PipelineConfig, run_all
from .reduce import PcaModel, kmeans_fit, pca_apply, pca_fit

__all__ = [
    "EvaluationReport",
    "GrayImage",
    "GridSequence",
    "KernelParams",
    "LabeledImageSet",
    "OvrClassifier",
    "PcaModel",
    "PipelineConfig",
    "ReferenceBank",
    "SplitSpec",
    "build_bank",
    "build_gabor_bank",
    "emission",
    "encode",
    "feature_vector",
    "forward",
    "fuse",
    "kmeans_fit",
    "load_dataset",
    "make_split",
    "objective",
    "ovr_train",
    "pca_apply",
    "pca_fit",
    "predict_proba",
    "run_all",
    "simplex_project",
    "solve_weights",
    "transition",
    "zigzag",
]

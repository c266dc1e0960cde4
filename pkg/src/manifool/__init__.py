"""Geometric-transformation robustness toolkit: the ManiFool attack,
geodesic scores on image appearance manifolds, and invariance metrics."""
from .attack import AttackParams, FoolResult, manifool_binary, manifool_multiclass
from .classifier import (
    Architecture,
    ClassifierModel,
    LabeledDataset,
    init_model,
    load_weights,
    predict,
    save_weights,
    train_sgd,
)
from .errors import ManifoolError
from .geodesic import GeodesicParams, geodesic_distance, normalized_score, sample_random_transform
from .image import Image, warp
from .metrics import invariance_score, misclassification_curve, r_hat
from .transforms import TangentVector, Transform, TransformGroup, exp_map, log_map

__version__ = "0.1.0"

__all__ = [
    "AttackParams",
    "FoolResult",
    "manifool_binary",
    "manifool_multiclass",
    "Architecture",
    "ClassifierModel",
    "LabeledDataset",
    "init_model",
    "load_weights",
    "predict",
    "save_weights",
    "train_sgd",
    "ManifoolError",
    "GeodesicParams",
    "geodesic_distance",
    "normalized_score",
    "sample_random_transform",
    "Image",
    "warp",
    "invariance_score",
    "misclassification_curve",
    "r_hat",
    "TangentVector",
    "Transform",
    "TransformGroup",
    "exp_map",
    "log_map",
]

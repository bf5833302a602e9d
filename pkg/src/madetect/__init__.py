"""Microaneurysm detection in colour fundus images.

Stages: illumination normalization, multi-scale gradient weighting,
candidate extraction by iterative thresholding, 29 intensity/shape/
convergence-filter features and a RUSBoost classifier, plus FROC
evaluation and a synthetic scene generator for testing.
"""
__version__ = "0.1.0"
# bumped whenever the config or model layout changes incompatibly
CONFIG_SCHEMA_VERSION = 1

from .candidates import CandidateRegion, ExtractionConfig, extract_candidates  # noqa: E402
from .classifier import BoostConfig, TrainedEnsemble, feature_importance, rusboost_train  # noqa: E402
from .features import FEATURE_NAMES, extract_features, normalize_features  # noqa: E402
from .image import ImageError, fov_mask, green_channel, load_image  # noqa: E402
from .lcf import SupportConfig, lcf_at_points  # noqa: E402
from .preprocess import PreprocessConfig, normalize  # noqa: E402
from .weighting import GradientConfig, aggregate  # noqa: E402

__all__ = [
    "CONFIG_SCHEMA_VERSION", "BoostConfig", "CandidateRegion", "ExtractionConfig", "FEATURE_NAMES",
    "GradientConfig", "ImageError", "PreprocessConfig", "SupportConfig", "TrainedEnsemble",
    "aggregate", "extract_candidates", "extract_features", "feature_importance", "fov_mask",
    "green_channel", "lcf_at_points", "load_image", "normalize", "normalize_features", "rusboost_train",
]

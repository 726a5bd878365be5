"""textuq: uncertainty-aware 3-class text classification on pooled word
embeddings, with a sparse variational GP and a deep-ensemble baseline,
isotonic calibration, and an OOD-style evaluation harness built around
dual-labeller disagreement."""

from .calibration import calibrate_probs, isotonic_apply, pava_fit, reliability_bins
from .ensemble import EnsembleConfig, EnsembleModel, ensemble_predict, fit_ensemble
from .errors import TextuqError
from .metrics import accuracy, build_report, groupwise_confidence, mmpcl, nlpp
from .svgp import SvgpModel, TrainConfig, fit, init_model, predict_proba

__all__ = [
    "EnsembleConfig",
    "EnsembleModel",
    "SvgpModel",
    "TextuqError",
    "TrainConfig",
    "accuracy",
    "build_report",
    "calibrate_probs",
    "ensemble_predict",
    "fit",
    "fit_ensemble",
    "groupwise_confidence",
    "init_model",
    "isotonic_apply",
    "mmpcl",
    "nlpp",
    "pava_fit",
    "predict_proba",
    "reliability_bins",
]

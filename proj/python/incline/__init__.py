"""Python surface of the cross-lingual alignment laboratory."""

from ._core import (
    InclineError,
    Model,
    ModelConfig,
    eval_accuracy,
    extract_reps,
    fit_alignment,
    fit_linear_map,
    gen_bilingual,
    train,
)

__all__ = [
    "InclineError",
    "Model",
    "ModelConfig",
    "eval_accuracy",
    "extract_reps",
    "fit_alignment",
    "fit_linear_map",
    "gen_bilingual",
    "train",
]

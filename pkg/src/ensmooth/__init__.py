"""Ensemble smoothers with flow/transport forward models and field priors."""

from .cases import (
    BuiltCase,
    CaseTruth,
    build_case,
    build_case1,
    build_case2,
    make_field_mapper,
    make_forward,
)
from .config import ExperimentConfig, SeedBundle, desk_config
from .core import (
    Ensemble,
    Grid2D,
    InvalidInputError,
    NumericError,
    ObservationSet,
    ObsLabel,
    RngStream,
    ScalarField,
    ensemble_stats,
    perturb_observations,
    rmse,
    rmsre,
)
from .smoother import (
    AssimilationResult,
    MdaSchedule,
    ParamConstraints,
    es_dl_update,
    es_kalman_update,
    evaluate_ensemble,
    generate_training_pairs,
    kalman_context,
    mda_schedule,
    run_assimilation,
)

__all__ = [
    "AssimilationResult",
    "BuiltCase",
    "CaseTruth",
    "Ensemble",
    "ExperimentConfig",
    "Grid2D",
    "InvalidInputError",
    "MdaSchedule",
    "NumericError",
    "ObsLabel",
    "ObservationSet",
    "ParamConstraints",
    "RngStream",
    "ScalarField",
    "SeedBundle",
    "build_case",
    "build_case1",
    "build_case2",
    "desk_config",
    "ensemble_stats",
    "es_dl_update",
    "es_kalman_update",
    "evaluate_ensemble",
    "generate_training_pairs",
    "kalman_context",
    "make_field_mapper",
    "make_forward",
    "mda_schedule",
    "perturb_observations",
    "rmse",
    "rmsre",
    "run_assimilation",
]

__version__ = "0.1.0"

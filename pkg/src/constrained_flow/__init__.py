"""Constraint-guided flow matching in numpy."""

from .constraints import Annulus, Conjunction, HalfSpace, InsideBall, OutsideBall, parse_constraint
from .distributions import CaseStudy, GaussianMixture, builtin_case_study, make_rng
from .metrics import avg_violation, evaluate_samples, mmd, violation_rate
from .network import VectorFieldParams, init_params, load_checkpoint, save_checkpoint, velocity
from .sampling import SampleConfig, sample
from .training import TrainConfig, train

__all__ = [
    "Annulus",
    "CaseStudy",
    "Conjunction",
    "GaussianMixture",
    "HalfSpace",
    "InsideBall",
    "OutsideBall",
    "SampleConfig",
    "TrainConfig",
    "VectorFieldParams",
    "avg_violation",
    "builtin_case_study",
    "evaluate_samples",
    "init_params",
    "load_checkpoint",
    "make_rng",
    "mmd",
    "parse_constraint",
    "sample",
    "save_checkpoint",
    "train",
    "velocity",
    "violation_rate",
]

"""Probabilistic groupwise registration with a multivariate mixture model.

Subjects (an appearance image plus a labelmap) are warped into a common space
and scored by how well their smoothed labels agree, weighted by appearance
maps that focus on anatomical boundaries. The same model gives pairwise and
groupwise registration and a posterior for multi-atlas label fusion.
"""
from .appearance import AppearanceVariant, WeightMap, compute_weight_map
from .geometry import DisplacementField, Grid, LabelVolume, ProbLabelVolume, ScalarVolume
from .mas import mas_pipeline
from .metrics import MetricReport, dice, evaluate, hausdorff
from .mvmm import MvmmConfig, Subject, SubjectGroup, fuse_labels, majority_vote, nll, posterior
from .optim import OptimConfig, RegistrationDiverged, RegistrationResult, register, register_pair
from .phantom import PhantomSpec, make_phantom, make_registration_case

__version__ = "0.1.0"

__all__ = [
    "AppearanceVariant", "WeightMap", "compute_weight_map",
    "DisplacementField", "Grid", "LabelVolume", "ProbLabelVolume", "ScalarVolume",
    "mas_pipeline", "MetricReport", "dice", "evaluate", "hausdorff",
    "MvmmConfig", "Subject", "SubjectGroup", "fuse_labels", "majority_vote", "nll", "posterior",
    "OptimConfig", "RegistrationDiverged", "RegistrationResult", "register", "register_pair",
    "PhantomSpec", "make_phantom", "make_registration_case",
]

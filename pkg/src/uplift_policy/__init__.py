"""Uplift-based customer targeting: estimate, optimize, evaluate."""
from . import dataset, ope, policy, synth, uplift
from .dataset import ExperimentDataset, Schema, TreatmentSet, load_experiment, split, validate
from .policy import ConstraintSpec, Policy
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec", "ExperimentDataset", "Policy", "Schema", "SynthConfig",
    "TreatmentSet", "dataset", "generate", "load_experiment", "ope", "policy",
    "split", "synth", "uplift", "validate",
]

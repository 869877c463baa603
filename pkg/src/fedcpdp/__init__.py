"""Deterministic federated-learning simulator for privacy-preserving
cross-project defect prediction, with correlation-weighted ensemble
distillation and a metric/significance evaluation stack."""

from . import data, distillation, evaluation, experiment, federation, model, reporting

__all__ = [
    "data",
    "distillation",
    "evaluation",
    "experiment",
    "federation",
    "model",
    "reporting",
]

__version__ = "0.1.0"

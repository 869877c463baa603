"""Correlation-weighted ensemble distillation.

Clients summarize how similar their data is to the public distillation
dataset (mean cosine similarity per distillation sample); the server
normalizes those factors into per-sample ensemble weights, builds a
teacher from the local models' soft predictions, and pulls the
aggregated global model toward the teacher by gradient steps on the
mean KL divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ProjectDataset
from .errors import DimensionMismatch
from .model import PROB_EPS, ModelParams


@dataclass(frozen=True)
class CorrelationMatrix:
    """Per-(client, distillation sample) similarity scores.

    Row order matches client_ids; every entry lies in [-1, 1].
    """

    entries: np.ndarray
    client_ids: tuple[int, ...]

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != len(self.client_ids):
            raise ValueError("entries must be one row per client")
        if np.any(np.abs(e) > 1.0 + 1e-9):
            raise ValueError("correlation entries must lie in [-1, 1]")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def sample_count(self) -> int:
        return self.entries.shape[1]


def compute_correlation_factors(local: ProjectDataset, distill: ProjectDataset) -> np.ndarray:
    """Mean cosine similarity between each distillation sample and the
    whole local dataset. Zero-vector pairs contribute similarity 0."""
    if local.dimensionality != distill.dimensionality:
        raise DimensionMismatch(
            f"local d={local.dimensionality} vs distillation d={distill.dimensionality}"
        )
    def unit_rows(X):
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)

    sims = unit_rows(distill.features) @ unit_rows(local.features).T
    return sims.mean(axis=1)


def normalize_weights(factors: CorrelationMatrix, sample: int, participants=None) -> np.ndarray:
    """Per-sample ensemble weights over participants, summing to 1.

    Negative correlations are floored to 0 before normalizing so the
    teacher stays a convex combination; if everything floors to 0 the
    weights fall back to uniform.
    """
    column = factors.entries[:, sample]
    if participants is not None:
        index = {cid: k for k, cid in enumerate(factors.client_ids)}
        column = column[[index[cid] for cid in participants]]
    return _normalize_columns(column.reshape(-1, 1))[:, 0]


def _normalize_columns(columns: np.ndarray) -> np.ndarray:
    """Vectorized weight normalization; columns are per-sample factors."""
    floored = np.maximum(columns, 0.0)
    totals = floored.sum(axis=0)
    uniform = np.full_like(columns, 1.0 / columns.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = floored / totals
    return np.where(totals > 0, weights, uniform)


def ensemble_teacher(local_models, weights, x) -> "SoftPrediction":
    """Convex combination of the local models' soft predictions."""
    from .model import SoftPrediction, predict_proba

    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] != len(local_models):
        raise DimensionMismatch("one weight per local model required")
    p = float(sum(w * predict_proba(m, x).p_defective for w, m in zip(weights, local_models)))
    return SoftPrediction(p_clean=1.0 - p, p_defective=p)


def teacher_predictions(
    local_models: list[ModelParams],
    factors: CorrelationMatrix,
    subset: np.ndarray,
    distill_data: ProjectDataset,
) -> np.ndarray:
    """p(defective) of the ensemble teacher for every subset sample.

    Local models are frozen during distillation, so these are computed
    once per round and reused across distillation epochs.
    """
    X = distill_data.features[subset]
    local_probs = np.stack([expit(X @ m.weights + m.bias) for m in local_models])
    alphas = _normalize_columns(factors.entries[:, subset])
    return (alphas * local_probs).sum(axis=0)


def mean_kl(teacher_p1: np.ndarray, student_p1: np.ndarray) -> float:
    """Mean two-class KL(teacher || student) over paired predictions."""
    t = np.stack([1.0 - teacher_p1, teacher_p1])
    s = np.clip(np.stack([1.0 - student_p1, student_p1]), PROB_EPS, 1.0 - PROB_EPS)
    terms = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0) / s), 0.0)
    return float(terms.sum(axis=0).mean())


def distill(
    global_params: ModelParams,
    local_models: list[ModelParams],
    factors: CorrelationMatrix,
    subset,
    steps: int,
    lr: float,
    distill_data: ProjectDataset,
) -> ModelParams:
    """N full-subset gradient epochs on mean KL(teacher || student)."""
    subset = np.asarray(subset, dtype=int)
    if subset.size == 0:
        raise ValueError("distillation subset must be non-empty")
    if steps < 1:
        raise ValueError("at least one distillation step required")
    teacher = teacher_predictions(local_models, factors, subset, distill_data)
    X = distill_data.features[subset]
    w = global_params.weights.copy()
    b = global_params.bias
    for _ in range(steps):
        residual = expit(X @ w + b) - teacher
        w = w - lr * (X.T @ residual / subset.size)
        b = b - lr * residual.mean()
    return ModelParams(weights=w, bias=b)

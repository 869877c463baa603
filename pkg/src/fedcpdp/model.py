"""Binary logistic regression shared by every federation role.

Pure functions over immutable parameter records: probability prediction,
cross-entropy training (optionally with a proximal pull toward an anchor
model), and the KL-divergence machinery used by ensemble distillation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .data import ProjectDataset
from .errors import DimensionMismatch

PROB_EPS = 1e-12  # clamp before logs so saturated sigmoids never yield -inf
DEFAULT_BATCH_SIZE = 32


class SoftPrediction(NamedTuple):
    p_clean: float
    p_defective: float

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_clean, self.p_defective])


@dataclass(frozen=True)
class ModelParams:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be a flat vector")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dimensionality(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "ModelParams":
        return cls(weights=np.zeros(d), bias=0.0)

    def to_vector(self) -> np.ndarray:
        """Flat record: d weights then the bias."""
        return np.concatenate([self.weights, [self.bias]])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        return cls(weights=vec[:-1], bias=float(vec[-1]))


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float
    epochs: int
    prox_mu: float = 0.0
    anchor: ModelParams | None = None
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epoch count must be non-negative")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")
        if self.prox_mu > 0 and self.anchor is None:
            raise ValueError("prox_mu > 0 requires an anchor model")


def _check_dim(params: ModelParams, d: int):
    if params.dimensionality != d:
        raise DimensionMismatch(f"model has d={params.dimensionality}, input has d={d}")


def decision_scores(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """p(defective) for a batch: sigma(X w + b)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    _check_dim(params, features.shape[1])
    return expit(features @ params.weights + params.bias)


def predict_proba(params: ModelParams, x) -> SoftPrediction:
    p = float(decision_scores(params, np.asarray(x, dtype=float).reshape(1, -1))[0])
    return SoftPrediction(p_clean=1.0 - p, p_defective=p)


def ce_loss(params: ModelParams, data: ProjectDataset) -> float:
    """Mean binary cross-entropy over the dataset."""
    p = decision_scores(params, data.features)
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    y = data.labels
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def ce_grad(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradient of the mean cross-entropy: ((p - y) X / n, mean(p - y))."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    residual = decision_scores(params, features) - labels
    grad_w = features.T @ residual / features.shape[0]
    return grad_w, float(np.mean(residual))


def local_train(
    params: ModelParams,
    data: ProjectDataset,
    spec: TrainSpec,
    rng: np.random.Generator,
) -> ModelParams:
    """Mini-batch gradient descent on CE (+ optional proximal term).

    Batches are a seeded shuffle each epoch with the final partial batch
    kept; the result is a deterministic function of (params, data, spec,
    rng state). The input params are never mutated.
    """
    _check_dim(params, data.dimensionality)
    w = params.weights.copy()
    b = params.bias
    anchor = spec.anchor
    if anchor is not None:
        _check_dim(anchor, data.dimensionality)
    X, y = data.features, data.labels
    n = data.n_instances
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            Xb = X[idx]
            residual = expit(Xb @ w + b) - y[idx]
            grad_w = Xb.T @ residual / idx.shape[0]
            grad_b = residual.mean()
            if spec.prox_mu > 0:
                grad_w = grad_w + spec.prox_mu * (w - anchor.weights)
                grad_b = grad_b + spec.prox_mu * (b - anchor.bias)
            w = w - spec.learning_rate * grad_w
            b = b - spec.learning_rate * grad_b
    return ModelParams(weights=w, bias=b)


def kl_div(p: SoftPrediction, q: SoftPrediction) -> float:
    """KL(p || q) over the two classes; zero-probability p terms vanish."""
    total = 0.0
    for pc, qc in zip(p.probabilities, q.probabilities):
        if pc > 0:
            total += pc * np.log(pc / np.clip(qc, PROB_EPS, 1.0 - PROB_EPS))
    return float(total)


def kd_grad(student: ModelParams, x, teacher: SoftPrediction) -> tuple[np.ndarray, float]:
    """Gradient of KL(teacher || student prediction) w.r.t. the student.

    For a logistic output the chain rule collapses to
    (sigma(z) - teacher.p_defective) scaled into weight/bias components.
    """
    x = np.asarray(x, dtype=float)
    _check_dim(student, x.shape[0])
    s = float(expit(x @ student.weights + student.bias))
    g = s - teacher.p_defective
    return g * x, g

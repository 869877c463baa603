"""Server/client round loop: client sampling, local updates, size-weighted
aggregation, and per-mode post-processing (plain averaging, extra
server-side training on the public data, or ensemble distillation).

Raw client instances are only touched inside client_update; the server
sees exactly (model params, correlation vector, dataset size) per client.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import distillation
from .data import ProjectDataset
from .errors import DimensionMismatch, EmptyInput
from .model import ModelParams, TrainSpec, local_train

MODE_FLR = "FLR"
MODE_OPENFLR = "OpenFLR"
MODE_FEDDP = "FedDP"
MODES = (MODE_FLR, MODE_OPENFLR, MODE_FEDDP)


def derive_rng(master_seed: int, *stream) -> np.random.Generator:
    """Deterministic per-(round, client) RNG stream from the master seed.

    Fixed mixing keeps unrelated streams stable when e.g. the
    participation ratio changes.
    """
    return np.random.default_rng(np.random.SeedSequence([master_seed, *[s & 0xFFFFFFFF for s in stream]]))


@dataclass
class ClientState:
    id: int
    data: ProjectDataset
    params: ModelParams
    correlation_factors: Optional[np.ndarray] = None
    # Snapshot so the server never re-reads the dataset for Eq.-2 weights.
    num_instances: int = field(init=False)

    def __post_init__(self):
        self.num_instances = self.data.n_instances


@dataclass
class RoundConfig:
    mode: str
    participation_ratio: float = 1.0
    local_epochs: int = 10
    distill_steps: int = 10
    sample_size: int = 700
    learning_rate: float = 0.001
    prox_mu: float = 0.0
    server_learning_rate: Optional[float] = None
    distill_learning_rate: Optional[float] = None
    batch_size: int = 32
    use_correlation: bool = True  # ablation switch: False -> uniform teacher weights

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.participation_ratio <= 1.0:
            raise ValueError("participation ratio must lie in (0, 1]")
        # distill_steps == 0 is allowed and reduces FedDP to FLR exactly.
        if self.mode == MODE_FEDDP and (self.distill_steps < 0 or self.sample_size < 1):
            raise ValueError("FedDP requires a non-negative step count and at least one sample")

    @property
    def effective_server_lr(self) -> float:
        return self.learning_rate if self.server_learning_rate is None else self.server_learning_rate

    @property
    def effective_distill_lr(self) -> float:
        return self.learning_rate if self.distill_learning_rate is None else self.distill_learning_rate


@dataclass
class RoundRecord:
    round: int
    mode: str
    participants: tuple[int, ...]
    checksum: float
    kl_before: Optional[float] = None
    kl_after: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    auc: Optional[float] = None


@dataclass
class ServerState:
    global_params: ModelParams
    clients: list[ClientState]
    distillation_data: ProjectDataset
    seed: int
    round: int = 0

    def __post_init__(self):
        d = self.global_params.dimensionality
        for c in self.clients:
            if c.data.dimensionality != d:
                raise DimensionMismatch(f"client {c.id} has d={c.data.dimensionality}, global d={d}")


def select_clients(K: int, R: float, rng: np.random.Generator) -> list[int]:
    """max(round(R*K), 1) distinct ids, uniform without replacement,
    returned ascending for stable iteration."""
    if K < 1:
        raise ValueError("need at least one client")
    if not 0.0 < R <= 1.0:
        raise ValueError("participation ratio must lie in (0, 1]")
    m = max(int(math.floor(R * K + 0.5)), 1)
    return sorted(rng.choice(K, size=m, replace=False).tolist())


def aggregate(models: list[ModelParams], sizes: list[int]) -> ModelParams:
    """Dataset-size-weighted parameter average."""
    if not models or not sizes:
        raise EmptyInput("nothing to aggregate")
    if len(models) != len(sizes):
        raise EmptyInput("one size per model required")
    if any(s <= 0 for s in sizes):
        raise ValueError("sizes must be positive")
    d = models[0].dimensionality
    for m in models:
        if m.dimensionality != d:
            raise DimensionMismatch("aggregated models must share dimensionality")
    weights = np.asarray(sizes, dtype=float)
    weights /= weights.sum()
    stacked = np.stack([m.to_vector() for m in models])
    return ModelParams.from_vector(weights @ stacked)


def client_update(
    client: ClientState,
    global_params: ModelParams,
    cfg: RoundConfig,
    distill_data: ProjectDataset,
    rng: np.random.Generator,
) -> tuple[ModelParams, np.ndarray]:
    """One client's round: train from the received global model, return
    (updated params, correlation vector).

    The correlation vector depends only on data, so it is computed on
    the first call and cached on the client.
    """
    spec = TrainSpec(
        learning_rate=cfg.learning_rate,
        epochs=cfg.local_epochs,
        prox_mu=cfg.prox_mu,
        anchor=global_params if cfg.prox_mu > 0 else None,
        batch_size=cfg.batch_size,
    )
    params = local_train(global_params, client.data, spec, rng)
    if client.correlation_factors is None:
        factors = distillation.compute_correlation_factors(client.data, distill_data)
        factors.setflags(write=False)
        client.correlation_factors = factors
    return params, client.correlation_factors


def run_round(state: ServerState, cfg: RoundConfig) -> tuple[ServerState, RoundRecord]:
    """Execute one communication round and return the advanced state.

    Clients run independently on derived seeds; aggregation iterates in
    ascending client id so the result is independent of execution order.
    """
    round_no = state.round + 1
    server_rng = derive_rng(state.seed, round_no)
    participants = select_clients(len(state.clients), cfg.participation_ratio, server_rng)
    by_id = {c.id: c for c in state.clients}

    local_models, factor_rows, sizes = [], [], []
    for cid in participants:
        client = by_id[cid]
        client_rng = derive_rng(state.seed, round_no, cid + 1)
        params, factors = client_update(client, state.global_params, cfg, state.distillation_data, client_rng)
        client.params = params
        local_models.append(params)
        factor_rows.append(factors)
        sizes.append(client.num_instances)

    new_global = aggregate(local_models, sizes)
    kl_before = kl_after = None

    if cfg.mode == MODE_OPENFLR and cfg.effective_server_lr > 0:
        spec = TrainSpec(learning_rate=cfg.effective_server_lr, epochs=cfg.local_epochs,
                         batch_size=cfg.batch_size)
        new_global = local_train(new_global, state.distillation_data, spec, server_rng)
    elif cfg.mode == MODE_FEDDP and cfg.distill_steps > 0:
        factors = distillation.CorrelationMatrix(
            entries=np.stack(factor_rows) if cfg.use_correlation
            else np.ones((len(participants), state.distillation_data.n_instances)),
            client_ids=tuple(participants),
        )
        n_pool = state.distillation_data.n_instances
        p = min(cfg.sample_size, n_pool)
        subset = np.sort(server_rng.choice(n_pool, size=p, replace=False))
        teacher = distillation.teacher_predictions(local_models, factors, subset, state.distillation_data)
        from scipy.special import expit  # local import keeps module surface tidy
        X = state.distillation_data.features[subset]
        kl_before = distillation.mean_kl(teacher, expit(X @ new_global.weights + new_global.bias))
        new_global = distillation.distill(
            new_global, local_models, factors, subset,
            cfg.distill_steps, cfg.effective_distill_lr, state.distillation_data,
        )
        kl_after = distillation.mean_kl(teacher, expit(X @ new_global.weights + new_global.bias))

    state = replace(state, global_params=new_global, round=round_no)
    record = RoundRecord(
        round=round_no,
        mode=cfg.mode,
        participants=tuple(participants),
        checksum=float(np.sum(new_global.to_vector())),
        kl_before=kl_before,
        kl_after=kl_after,
    )
    return state, record

"""Scenario construction, the repeat/average experiment loop, baseline
dispatch, and method comparison tables.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from . import evaluation
from .data import (
    CsvSchema,
    NormStats,
    ProjectDataset,
    compute_norm_stats,
    load_manifest,
    load_project_csv,
    normalize,
    oversample,
)
from .errors import AllZeroDifferences, RepeatMismatch, TestEqualsDistillation, UnknownProject
from .federation import (
    MODE_FEDDP,
    MODE_FLR,
    ClientState,
    RoundConfig,
    RoundRecord,
    ServerState,
    run_round,
)
from .model import ModelParams, TrainSpec, decision_scores, local_train

MODE_CENTRALIZED = "Centralized"
EXPERIMENT_MODES = (MODE_CENTRALIZED, "FLR", "OpenFLR", "FedDP")
ALGORITHMS = ("FedAvg", "FedProx")


@dataclass
class ExperimentConfig:
    manifest: str
    distill_project: str
    test_project: str
    mode: str = MODE_FEDDP
    algorithm: str = "FedAvg"
    local_epochs: int = 10          # E
    rounds: int = 50                # T
    distill_steps: int = 10         # N
    sample_size: int = 700          # p
    participation_ratio: float = 1.0  # R
    learning_rate: float = 0.001
    server_learning_rate: Optional[float] = None
    distill_learning_rate: Optional[float] = None
    prox_mu: float = 0.01
    batch_size: int = 32
    repeats: int = 5
    window: int = 10
    seed: int = 42
    label_column: str = "bug"
    feature_columns: Optional[list[str]] = None
    use_correlation: bool = True

    def __post_init__(self):
        if self.mode not in EXPERIMENT_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.repeats < 1 or self.window < 1 or self.rounds < 1:
            raise ValueError("repeats, window, and rounds must be positive")

    @property
    def effective_prox_mu(self) -> float:
        return self.prox_mu if self.algorithm == "FedProx" else 0.0

    @property
    def schema(self) -> CsvSchema:
        cols = tuple(self.feature_columns) if self.feature_columns else None
        return CsvSchema(label_column=self.label_column, feature_columns=cols)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) if path.suffix in (".yml", ".yaml") else json.load(fh)
        cfg = cls(**raw)
        manifest = Path(cfg.manifest)
        if not manifest.is_absolute():
            cfg.manifest = str(path.parent / manifest)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    clients: list[ProjectDataset]
    distillation: ProjectDataset
    test: ProjectDataset
    norm_stats: NormStats


@dataclass
class ExperimentReport:
    config: dict
    test_project: str
    repeats: list[dict]                 # one MetricsReport-shaped dict per repeat
    mean: dict
    std: dict
    round_series: list[list[dict]]      # [repeat][round] -> per-round test metrics
    round_log: list[list[dict]] = field(default_factory=list)

    def metric_values(self, metric: str) -> list[float]:
        return [r[metric] for r in self.repeats]


def load_datasets(config: ExperimentConfig) -> list[ProjectDataset]:
    """Load every manifest entry in manifest order."""
    return [
        load_project_csv(path, config.schema, project=project, version=version)
        for path, project, version in load_manifest(config.manifest)
    ]


def _union(project: str, parts: Sequence[ProjectDataset]) -> ProjectDataset:
    return ProjectDataset(
        project,
        "",
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
    )


def build_scenario(
    config: ExperimentConfig,
    datasets: Sequence[ProjectDataset],
    rng: np.random.Generator,
) -> Scenario:
    """Partition the manifest datasets into clients / distillation / test.

    Every version of the test project and of the distillation project is
    kept out of the client pool. The test set is the latest (last listed)
    version of the test project. Clients are oversampled; distillation
    and test data are left as-is. All three partitions share the
    normalization stats computed on the public distillation data.
    """
    if config.test_project == config.distill_project:
        raise TestEqualsDistillation(config.test_project)
    projects = {d.project for d in datasets}
    for name in (config.test_project, config.distill_project):
        if name not in projects:
            raise UnknownProject(name)

    distill = _union(config.distill_project, [d for d in datasets if d.project == config.distill_project])
    test = [d for d in datasets if d.project == config.test_project][-1]
    client_data = [
        d for d in datasets
        if d.project not in (config.test_project, config.distill_project)
    ]

    stats = compute_norm_stats(distill)
    clients = [normalize(oversample(d, rng), stats) for d in client_data]
    return Scenario(
        clients=clients,
        distillation=normalize(distill, stats),
        test=normalize(test, stats),
        norm_stats=stats,
    )


def _evaluate(params: ModelParams, test: ProjectDataset) -> dict:
    scores = decision_scores(params, test.features)
    precision, recall, f1 = evaluation.metrics(evaluation.confusion(scores, test.labels))
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "auc": evaluation.auc(scores, test.labels),
    }


def _round_config(config: ExperimentConfig) -> RoundConfig:
    return RoundConfig(
        mode=config.mode,
        participation_ratio=config.participation_ratio,
        local_epochs=config.local_epochs,
        distill_steps=config.distill_steps,
        sample_size=config.sample_size,
        learning_rate=config.learning_rate,
        prox_mu=config.effective_prox_mu,
        server_learning_rate=config.server_learning_rate,
        distill_learning_rate=config.distill_learning_rate,
        batch_size=config.batch_size,
        use_correlation=config.use_correlation,
    )


def _repeat_seeds(master_seed: int, repeats: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(repeats)]


def _run_federated(config: ExperimentConfig, scenario: Scenario, seed: int):
    cfg = _round_config(config)
    state = ServerState(
        global_params=ModelParams.zeros(scenario.test.dimensionality),
        clients=[
            ClientState(id=i, data=d, params=ModelParams.zeros(d.dimensionality))
            for i, d in enumerate(scenario.clients)
        ],
        distillation_data=scenario.distillation,
        seed=seed,
    )
    series, log = [], []
    for _ in range(config.rounds):
        state, record = run_round(state, cfg)
        result = _evaluate(state.global_params, scenario.test)
        record.precision, record.recall = result["precision"], result["recall"]
        record.f1, record.auc = result["f1"], result["auc"]
        series.append(result)
        log.append(_record_dict(record))
    return series, log


def _run_centralized(config: ExperimentConfig, scenario: Scenario, seed: int):
    """Pooled training on oversampled client data plus the public data.

    The epoch budget matches one federated client (E epochs per round
    for T rounds); the model is evaluated every E epochs to yield a
    round-shaped series.
    """
    pooled = _union(
        "pooled",
        scenario.clients + [scenario.distillation],
    )
    spec = TrainSpec(
        learning_rate=config.learning_rate,
        epochs=config.local_epochs,
        batch_size=config.batch_size,
    )
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    params = ModelParams.zeros(pooled.dimensionality)
    series = []
    for _ in range(config.rounds):
        params = local_train(params, pooled, spec, rng)
        series.append(_evaluate(params, scenario.test))
    return series, []


def _record_dict(record: RoundRecord) -> dict:
    return {
        "round": record.round,
        "mode": record.mode,
        "participants": list(record.participants),
        "checksum": record.checksum,
        "kl_before": record.kl_before,
        "kl_after": record.kl_after,
    }


def run_experiment(config: ExperimentConfig, datasets: Sequence[ProjectDataset] | None = None) -> ExperimentReport:
    """Run `repeats` seeded experiments and aggregate the last-window
    average of each into the report."""
    if datasets is None:
        datasets = load_datasets(config)
    repeats, round_series, round_log = [], [], []
    for repeat, seed in enumerate(_repeat_seeds(config.seed, config.repeats)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, repeat]))
        scenario = build_scenario(config, datasets, rng)
        runner = _run_centralized if config.mode == MODE_CENTRALIZED else _run_federated
        series, log = runner(config, scenario, seed)
        window = series[-config.window:]
        repeats.append({k: float(np.mean([r[k] for r in window])) for k in window[0]})
        round_series.append(series)
        round_log.append(log)
    metric_names = list(repeats[0])
    return ExperimentReport(
        config=config.to_dict(),
        test_project=config.test_project,
        repeats=repeats,
        mean={m: float(np.mean([r[m] for r in repeats])) for m in metric_names},
        std={m: float(np.std([r[m] for r in repeats])) for m in metric_names},
        round_series=round_series,
        round_log=round_log,
    )


@dataclass
class ComparisonRow:
    project: str
    mean_ours: float
    mean_baseline: float
    p_value: float
    verdict: str


@dataclass
class ComparisonTable:
    baseline: str
    metric: str
    rows: list[ComparisonRow]

    @property
    def wtl(self) -> tuple[int, int, int]:
        verdicts = [r.verdict for r in self.rows]
        return verdicts.count("Win"), verdicts.count("Tie"), verdicts.count("Loss")

    @property
    def avg_ours(self) -> float:
        return float(np.mean([r.mean_ours for r in self.rows]))

    @property
    def avg_baseline(self) -> float:
        return float(np.mean([r.mean_baseline for r in self.rows]))


def compare_methods(
    reports: Mapping[str, Sequence[ExperimentReport]],
    ours: str,
    metric: str = "f1",
) -> list[ComparisonTable]:
    """Paired Wilcoxon comparison of `ours` vs every other method.

    Each method maps to one report per test project; pairing is over the
    per-repeat results of matching projects.
    """
    our_reports = {r.test_project: r for r in reports[ours]}
    tables = []
    for method, method_reports in reports.items():
        if method == ours:
            continue
        rows = []
        for report in method_reports:
            base = our_reports.get(report.test_project)
            if base is None:
                raise RepeatMismatch(f"no {ours} report for project {report.test_project}")
            a = base.metric_values(metric)
            b = report.metric_values(metric)
            if len(a) != len(b):
                raise RepeatMismatch(f"repeat counts differ for project {report.test_project}")
            try:
                p = evaluation.wilcoxon_signed_rank(a, b)
            except AllZeroDifferences:
                p = 1.0  # self-comparison or identical repeat values
            verdict = evaluation.win_tie_loss(p, float(np.mean(a)), float(np.mean(b)))
            rows.append(ComparisonRow(
                project=report.test_project,
                mean_ours=float(np.mean(a)),
                mean_baseline=float(np.mean(b)),
                p_value=p,
                verdict=verdict.verdict,
            ))
        tables.append(ComparisonTable(baseline=method, metric=metric, rows=rows))
    return tables

"""Project defect datasets: CSV ingestion, oversampling, scaling, and
the distribution categorization used to describe client heterogeneity.

All datasets are immutable after construction (the backing numpy arrays
are marked read-only), so they can be shared freely between the server
and client state machines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyFile,
    MissingColumn,
    NonNumericCell,
    SingleClassDataset,
    ZeroVector,
)

# Thresholds from the two-letter heterogeneity grid: scale is measured
# against the ideal per-client instance count, balance against the
# defect rate (1:5 and 1:2 minority-to-majority ratios).
SCALE_LOW = 0.5
SCALE_HIGH = 1.5
BALANCE_LOW = 0.1667
BALANCE_HIGH = 0.3333

# Standard CK metric header used by the Promise CSV exports.
PROMISE_FEATURES = (
    "wmc", "dit", "noc", "cbo", "rfc", "lcom", "ca", "ce", "npm", "lcom3",
    "loc", "dam", "moa", "mfa", "cam", "ic", "cbm", "amc", "max_cc", "avg_cc",
)


class Instance(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for one CSV flavor.

    feature_columns=None means "every column except the label column",
    which suits the Softlab exports where the metric set varies.
    """

    label_column: str
    feature_columns: tuple[str, ...] | None = None


PROMISE_SCHEMA = CsvSchema(label_column="bug", feature_columns=PROMISE_FEATURES)
SOFTLAB_SCHEMA = CsvSchema(label_column="defects", feature_columns=None)


class ProjectDataset:
    """One project version's instances: an (n, d) feature matrix plus
    binary labels. Construction validates finiteness and label domain."""

    def __init__(self, project: str, version: str, features, labels):
        feats = np.array(features, dtype=float)
        labs = np.array(labels, dtype=int)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("dataset must contain at least one instance")
        if feats.shape[0] != labs.shape[0]:
            raise ValueError("features and labels disagree on instance count")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if not np.all((labs == 0) | (labs == 1)):
            raise ValueError("labels must be 0 or 1")
        feats.setflags(write=False)
        labs.setflags(write=False)
        self.project = project
        self.version = version
        self.features = feats
        self.labels = labs
        self.n_instances = int(labs.shape[0])
        self.dimensionality = int(feats.shape[1])

    @property
    def defect_rate(self) -> float:
        return float(np.mean(self.labels))

    @property
    def instances(self) -> list[Instance]:
        return [Instance(self.features[i], int(self.labels[i])) for i in range(self.n_instances)]

    def replace(self, features, labels) -> "ProjectDataset":
        return ProjectDataset(self.project, self.version, features, labels)

    def __repr__(self):
        tag = f"{self.project} {self.version}".strip()
        return f"ProjectDataset({tag!r}, n={self.n_instances}, d={self.dimensionality})"


@dataclass(frozen=True)
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.minimum > self.maximum):
            raise ValueError("per-feature minimum exceeds maximum")


@dataclass(frozen=True)
class DistributionCategory:
    scale_level: str
    balance_level: str

    @property
    def code(self) -> str:
        return self.scale_level + self.balance_level


def load_project_csv(path, schema: CsvSchema, project: str = "", version: str = "") -> ProjectDataset:
    """Parse one UTF-8 CSV with a header row into a ProjectDataset.

    Raw label values are bug counts; any positive count becomes label 1.
    Row order is preserved.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path}: no header row")
        header = reader.fieldnames
        if schema.label_column not in header:
            raise MissingColumn(f"{path}: label column {schema.label_column!r} not in header")
        if schema.feature_columns is not None:
            missing = [c for c in schema.feature_columns if c not in header]
            if missing:
                raise MissingColumn(f"{path}: feature columns {missing} not in header")
            feature_cols = list(schema.feature_columns)
        else:
            feature_cols = [c for c in header if c != schema.label_column]
        if not feature_cols:
            raise MissingColumn(f"{path}: schema names no feature columns")

        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            vals = []
            for col in feature_cols + [schema.label_column]:
                try:
                    vals.append(float(row[col]))
                except (TypeError, ValueError):
                    raise NonNumericCell(path, line_no, col, row[col]) from None
            rows.append(vals[:-1])
            labels.append(1 if vals[-1] > 0 else 0)

    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    return ProjectDataset(project, version, np.array(rows), np.array(labels))


def load_manifest(path) -> list[tuple[Path, str, str]]:
    """Read a dataset manifest: CSV lines of (path, project, version).

    Paths are resolved relative to the manifest's directory. Line order
    defines version recency (last listed version of a project is its
    latest).
    """
    path = Path(path)
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if [c.strip().lower() for c in row[:2]] == ["path", "project"]:
                continue  # optional header
            file_path = Path(row[0].strip())
            if not file_path.is_absolute():
                file_path = path.parent / file_path
            version = row[2].strip() if len(row) > 2 else ""
            entries.append((file_path, row[1].strip(), version))
    if not entries:
        raise EmptyFile(f"{path}: empty manifest")
    return entries


def oversample(data: ProjectDataset, rng: np.random.Generator) -> ProjectDataset:
    """Random-oversample the minority class until class counts match.

    Original instances keep their order; sampled duplicates are appended.
    """
    n_pos = int(np.sum(data.labels == 1))
    n_neg = data.n_instances - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassDataset(f"{data.project}: cannot oversample a single-class dataset")
    if n_pos == n_neg:
        return data
    minority = 1 if n_pos < n_neg else 0
    deficit = abs(n_neg - n_pos)
    pool = np.flatnonzero(data.labels == minority)
    picks = rng.choice(pool, size=deficit, replace=True)
    feats = np.concatenate([data.features, data.features[picks]])
    labs = np.concatenate([data.labels, data.labels[picks]])
    return data.replace(feats, labs)


def compute_norm_stats(data: ProjectDataset) -> NormStats:
    return NormStats(minimum=data.features.min(axis=0), maximum=data.features.max(axis=0))


def normalize(data: ProjectDataset, stats: NormStats) -> ProjectDataset:
    """Min-max scale every feature to [0, 1] using shared stats.

    Constant features map to 0; out-of-range values are clamped so that
    every client ends up on the same bounded scale.
    """
    if data.dimensionality != stats.minimum.shape[0]:
        raise DimensionMismatch(
            f"dataset has d={data.dimensionality}, stats have d={stats.minimum.shape[0]}"
        )
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = (data.features - stats.minimum) / safe
    scaled = np.where(span > 0, scaled, 0.0)
    return data.replace(np.clip(scaled, 0.0, 1.0), data.labels)


def categorize(instances: int, ideal: float, defect_rate: float) -> DistributionCategory:
    """Two-letter heterogeneity code: scale level x balance level.

    Boundary values land on the lower side's upper level (ratio exactly
    0.5 -> M, rate exactly the low threshold -> M).
    """
    if ideal <= 0:
        raise ValueError("ideal instance count must be positive")
    if not 0.0 <= defect_rate <= 1.0:
        raise ValueError("defect rate must lie in [0, 1]")
    ratio = instances / ideal
    if ratio < SCALE_LOW:
        scale = "L"
    elif ratio <= SCALE_HIGH:
        scale = "M"
    else:
        scale = "H"
    if defect_rate < BALANCE_LOW:
        balance = "L"
    elif defect_rate <= BALANCE_HIGH:
        balance = "M"
    else:
        balance = "H"
    return DistributionCategory(scale_level=scale, balance_level=balance)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))

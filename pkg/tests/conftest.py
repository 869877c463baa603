import csv
import os
from pathlib import Path

import numpy as np
import pytest

from fedcpdp.data import ProjectDataset

# Real Promise/Softlab CSVs are user-supplied; desk-scale reproduction
# tests skip when this directory (or FEDCPDP_DATA) is absent.
DATA_DIR = Path(os.environ.get("FEDCPDP_DATA", Path(__file__).resolve().parent.parent / "data"))

FEATURE_NAMES = [f"m{i}" for i in range(6)]


def make_dataset(rng, name, version, n, defect_rate=0.3, d=6, shift=0.0):
    """Synthetic project with a weak linear defect signal."""
    X = rng.random((n, d)) + shift
    logits = X @ np.linspace(-1.5, 1.5, d) + rng.normal(scale=0.5, size=n)
    cut = np.quantile(logits, 1 - defect_rate)
    y = (logits > cut).astype(int)
    if y.sum() == 0:
        y[0] = 1
    if y.sum() == n:
        y[0] = 0
    return ProjectDataset(name, version, X, y)


def write_project_csv(path, dataset, label_column="bug"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_NAMES[: dataset.dimensionality] + [label_column])
        for x, y in zip(dataset.features, dataset.labels):
            # raw label is a bug count; exercise the >0 binarization
            writer.writerow([*(repr(float(v)) for v in x), int(y) * 2])


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """Four projects (one multi-version) in manifest order, small enough
    for full pipeline tests."""
    root = tmp_path_factory.mktemp("toy_data")
    rng = np.random.default_rng(1234)
    specs = [
        ("alpha", "1.0", 50, 0.30, 0.0),
        ("alpha", "1.1", 60, 0.25, 0.1),
        ("beta", "1.0", 45, 0.40, -0.1),
        ("gamma", "1.0", 55, 0.20, 0.2),
        ("open", "1.0", 80, 0.30, 0.0),
    ]
    rows = []
    for project, version, n, rate, shift in specs:
        ds = make_dataset(rng, project, version, n, rate, shift=shift)
        fname = f"{project}_{version}.csv"
        write_project_csv(root / fname, ds)
        rows.append([fname, project, version])
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "project", "version"])
        writer.writerows(rows)
    return manifest


@pytest.fixture
def toy_config(toy_manifest):
    from fedcpdp.experiment import ExperimentConfig

    return ExperimentConfig(
        manifest=str(toy_manifest),
        distill_project="open",
        test_project="alpha",
        mode="FedDP",
        algorithm="FedAvg",
        local_epochs=2,
        rounds=4,
        distill_steps=3,
        sample_size=20,
        repeats=2,
        window=2,
        seed=99,
    )


def promise_manifest() -> Path:
    return DATA_DIR / "promise" / "manifest.csv"


def softlab_manifest() -> Path:
    return DATA_DIR / "softlab" / "manifest.csv"


requires_real_data = pytest.mark.skipif(
    not (promise_manifest().is_file() and softlab_manifest().is_file()),
    reason="Promise/Softlab CSVs not supplied (see README: place manifests under data/ or set FEDCPDP_DATA)",
)

import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

torch.set_default_dtype(torch.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_X(rng):
    return rng.normal(size=(10, 2))


@pytest.fixture
def labelled_csv(tmp_path):
    """Small two-class CSV without a split column."""
    from gpssl.data import Dataset, gen_balanced_circles, write_csv

    ds = gen_balanced_circles(80, 0, noise_std=0.1, seed=3)
    path = tmp_path / "circles.csv"
    write_csv(Dataset(ds.features, ds.labels), path)
    return path


@pytest.fixture
def tiny_config(labelled_csv):
    from gpssl.config import ExperimentConfig

    return ExperimentConfig.from_dict({
        "name": "tiny",
        "dataset": {"kind": "csv", "path": str(labelled_csv), "label_column": "label"},
        "methods": ["original", "kpca", "gpssl"],
        "representation_dim": 2,
        "gpssl": {"k_grid": [5], "lr_grid": [0.05], "iterations": 10, "mc_samples": 2},
        "kpca": {"k_grid": [5, 10]},
        "vicreg": {"c_grid": [25.0], "lr_grid": [1e-3], "noise_grid": [0.1], "iterations": 20},
        "num_embedding_samples": 3,
        "weight_samples": 20,
    })


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::test_criterion_" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            props = dict(getattr(rep, "user_properties", []))
            rows.append((props.get("criterion", rep.nodeid), outcome, props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(rows, key=lambda r: str(r[0])):
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {name}: {status}  {detail}")

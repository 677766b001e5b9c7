from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
import torch
from hypothesis import HealthCheck, settings

from flowsentry.flowdata import ClassSpec, Dataset, SyntheticSpec, generate_synthetic

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

torch.set_num_threads(1)

# Small encoder used wherever a trained model is needed but quality is not.
TINY = dict(n_layers=1, d_model=16, n_heads=2, d_ff=32, dropout=0.0)


def blob_dataset(n_per_class=60, seed=0, labels=("Benign", "Bot", "DDoS"), n_features=6, sep=0.8, std=0.05):
    """Classes that differ on one dedicated feature each."""
    classes = []
    for i, label in enumerate(labels):
        means = [0.1] * n_features
        means[i % n_features] = 0.1 + sep
        classes.append(ClassSpec(label, tuple(means), (std,) * n_features))
    return generate_synthetic(SyntheticSpec(tuple(classes), n_per_class, seed))


@pytest.fixture
def blobs():
    return blob_dataset()


@pytest.fixture
def tiny_frame():
    return Dataset(pd.DataFrame({"a": [0.0, 1.0, 2.0], "b": [5.0, 6.0, 7.0]}), ["x", "y", "x"])


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

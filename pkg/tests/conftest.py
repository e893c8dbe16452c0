import sys

import numpy as np
import pytest

from sparseagent.data import make_blobs
from sparseagent.nn import MLP, ModelSpec
from sparseagent.tensor import RngStream


@pytest.fixture
def tiny():
    """N=8 two-class problem and a 3-4-2 MLP (26 parameters)."""
    train, _ = make_blobs(8, 2, 3, separation=1.0, seed=3)
    model = MLP(ModelSpec.mlp([3, 4, 2]))
    params = model.init_params(RngStream(11))
    return train, model, params


@pytest.fixture
def blobs():
    train, test = make_blobs(128, 3, 5, separation=2.0, seed=7, n_test=64)
    model = MLP(ModelSpec.mlp([5, 16, 3]))
    params = model.init_params(RngStream(5))
    return train, test, model, params


def fd_gradient(loss_fn, params, names=None, h=1e-5):
    """Central differences of ``loss_fn(params)`` for every coordinate."""
    grads = {}
    for k, v in params.items():
        if names is not None and k not in names:
            continue
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            plus = {kk: vv.copy() for kk, vv in params.items()}
            minus = {kk: vv.copy() for kk, vv in params.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * h)
        grads[k] = g
    return grads


def small_config(**overrides):
    """A few-second experiment: 96 blobs, 8-16-3 MLP, batch 16."""
    from sparseagent.config import ExperimentConfig

    base = ExperimentConfig().replace(**{
        "epochs": 3,
        "batch_size": 16,
        "dataset.n_train": 96,
        "dataset.n_test": 64,
        "dataset.n_classes": 3,
        "dataset.dim": 8,
        "model.hidden": [16],
        "optimizer.lr": 0.1,
        "optimizer.probe_size": 32,
    })
    return base.replace(**overrides) if overrides else base


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    report = getattr(module, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(report):
        name, passed, detail = report[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d} {name}: {detail}")

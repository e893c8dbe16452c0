"""Gradient variance / correlation measurements on trained checkpoints.

Both measures look at how gradients change when the active weights are
jittered with small Gaussian noise, and only count active (unmasked)
coordinates: pruned entries have zero gradient under masked training and
would otherwise dominate the statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .nn import MLP, ParamSet, flatten
from .sparsity import Mask, apply_mask, sparsity
from .tensor import RngStream

DEFAULT_STD = 0.015
DEFAULT_REPLICATES = 3


def pearson(a, b) -> float:
    """Pearson correlation; raises on a zero-variance input."""
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    saa = float(np.dot(a, a))
    sbb = float(np.dot(b, b))
    if saa == 0.0 or sbb == 0.0:
        raise ValueError("correlation undefined for a constant vector")
    # sqrt of the product (not product of sqrts) keeps corr(a, a) == 1.0 exactly
    r = float(np.dot(a, b)) / np.sqrt(saa * sbb)
    return min(max(r, -1.0), 1.0)


def _active(mask: Mask) -> np.ndarray:
    return flatten(mask) > 0


def perturb(params: ParamSet, mask: Mask, std: float, rng: RngStream) -> ParamSet:
    """Add ``N(0, std^2)`` noise to every active parameter."""
    return {k: v + rng.gaussian(v.shape, std=std) * mask[k] for k, v in params.items()}


def gradient_correlation_under_perturbation(
    model: MLP, params: ParamSet, mask: Mask, dataset: Dataset, std: float = DEFAULT_STD, rng: RngStream | None = None
) -> float:
    """Correlation between full-data gradients before and after jittering the weights."""
    if std < 0:
        raise ValueError("std must be non-negative")
    rng = rng or RngStream(0)
    params = apply_mask(params, mask)
    active = _active(mask)
    g0 = flatten(apply_mask(model.full_gradient(params, dataset), mask))[active]
    noisy = perturb(params, mask, std, rng)
    g1 = flatten(apply_mask(model.full_gradient(noisy, dataset), mask))[active]
    return pearson(g0, g1)


def batch_gradients(model: MLP, params: ParamSet, mask: Mask, dataset: Dataset, batch_size: int) -> np.ndarray:
    """Flattened masked gradients of consecutive disjoint batches, ``[B, P]``.

    A trailing partial batch is dropped so every row averages ``batch_size``
    examples.
    """
    if not 0 < batch_size <= len(dataset):
        raise ValueError(f"batch_size must be in [1, {len(dataset)}]")
    n_batches = len(dataset) // batch_size
    rows = []
    for i in range(n_batches):
        batch = dataset.batch(np.arange(i * batch_size, (i + 1) * batch_size))
        rows.append(flatten(apply_mask(model.loss_and_grad(params, batch)[1], mask)))
    return np.stack(rows)


def gradient_variance_under_perturbation(
    model: MLP,
    params: ParamSet,
    mask: Mask,
    dataset: Dataset,
    batch_size: int,
    std: float = DEFAULT_STD,
    rng: RngStream | None = None,
) -> float:
    """Mean over active coordinates of the across-batch gradient variance,
    measured at jittered weights."""
    if std < 0:
        raise ValueError("std must be non-negative")
    rng = rng or RngStream(0)
    noisy = perturb(apply_mask(params, mask), mask, std, rng)
    grads = batch_gradients(model, noisy, mask, dataset, batch_size)[:, _active(mask)]
    return float(np.mean(np.var(grads, axis=0)))


def anchor_correlation(model: MLP, params: ParamSet, anchor: ParamSet, mask: Mask, probe_set: Dataset) -> float:
    """Correlation of probe-set gradients at ``params`` and at ``anchor``."""
    active = _active(mask)
    g_now = flatten(apply_mask(model.full_gradient(params, probe_set), mask))[active]
    g_then = flatten(apply_mask(model.full_gradient(anchor, probe_set), mask))[active]
    return pearson(g_now, g_then)


def sign_agreement(a, b, ties: str = "drop") -> float:
    """Fraction of steps where the first differences of ``a`` and ``b`` share a sign.

    With ``ties="drop"`` (sign-test convention) steps where either series is
    flat carry no direction and are left out; ``ties="disagree"`` counts them
    as mismatches instead.
    """
    da = np.sign(np.diff(np.asarray(a, dtype=np.float64)))
    db = np.sign(np.diff(np.asarray(b, dtype=np.float64)))
    if len(da) == 0:
        raise ValueError("need at least two points")
    if ties == "disagree":
        return float(np.mean((da == db) & (da != 0)))
    if ties != "drop":
        raise ValueError(f"unknown ties mode {ties!r}")
    moving = (da != 0) & (db != 0)
    if not moving.any():
        raise ValueError("neither series moves at the same step")
    return float(np.mean(da[moving] == db[moving]))


def c_trace(metrics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(epochs, c_hat, true_correlation)`` for the epochs that carry both."""
    rows = [(m.epoch, m.c_hat, m.true_corr) for m in metrics if m.c_hat is not None and m.true_corr is not None]
    if not rows:
        return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
    epochs, c, corr = zip(*rows)
    return np.array(epochs), np.array(c), np.array(corr)


# ---------------------------------------------------------------------------


@dataclass
class DiagnosticReport:
    measure: str
    std: float
    seed: int
    rows: list = field(default_factory=list)  # (sparsity, replicate, statistic)

    def aggregate(self) -> dict[float, float]:
        """Mean statistic per sparsity level."""
        levels: dict[float, list[float]] = {}
        for s, _, value in self.rows:
            levels.setdefault(s, []).append(value)
        return {s: float(np.mean(v)) for s, v in sorted(levels.items())}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sparsity", "replicate", "statistic", "std", "seed"])
            for s, r, value in self.rows:
                writer.writerow([repr(s), r, repr(value), repr(self.std), self.seed])


def sweep(
    model: MLP,
    checkpoints,
    dataset: Dataset,
    measure: str = "correlation",
    std: float = DEFAULT_STD,
    replicates: int = DEFAULT_REPLICATES,
    batch_size: int = 128,
    seed: int = 0,
) -> DiagnosticReport:
    """Run ``measure`` on each ``(params, mask)`` checkpoint, ``replicates`` times.

    Replicate ``r`` of checkpoint ``i`` draws its noise from substream
    ``1000 * i + r`` of ``seed``.
    """
    if measure not in ("correlation", "variance"):
        raise ValueError(f"unknown measure {measure!r}")
    report = DiagnosticReport(measure, std, seed)
    for i, (params, mask) in enumerate(checkpoints):
        level = round(sparsity(mask), 6)
        for r in range(replicates):
            rng = RngStream(seed, stream=1000 * i + r)
            if measure == "correlation":
                value = gradient_correlation_under_perturbation(model, params, mask, dataset, std, rng)
            else:
                value = gradient_variance_under_perturbation(model, params, mask, dataset, batch_size, std, rng)
            report.rows.append((level, r, value))
    return report

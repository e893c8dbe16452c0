"""Binary weight masks and the SET / RigL prune-and-grow rules.

A mask has the same keys as the ``ParamSet`` it covers and holds 0.0/1.0
float arrays. Only weight matrices are ever sparsified; bias masks are all
ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .nn import ParamSet, is_weight
from .tensor import RngStream, topk_indices

Mask = Dict[str, np.ndarray]

DISTRIBUTIONS = ("uniform", "erdos-renyi-kernel")
RULES = ("static", "SET", "RigL")
DECAYS = ("constant", "cosine")


@dataclass(frozen=True)
class SparsitySchedule:
    target_sparsity: float = 0.0
    distribution: str = "uniform"
    rule: str = "SET"
    update_interval: int = 1
    drop_fraction: float = 0.3
    decay: str = "cosine"

    def __post_init__(self):
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ValueError(f"target_sparsity must be in [0, 1), got {self.target_sparsity}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if self.decay not in DECAYS:
            raise ValueError(f"decay must be one of {DECAYS}")
        if not 0.0 < self.drop_fraction < 1.0:
            raise ValueError(f"drop_fraction must be in (0, 1), got {self.drop_fraction}")
        if self.update_interval < 1:
            raise ValueError("update_interval must be at least one epoch")

    @property
    def dynamic(self) -> bool:
        return self.rule != "static" and self.target_sparsity > 0.0

    def drop_fraction_at(self, epoch: int, total_epochs: int) -> float:
        """Cosine decay ``p0/2 * (1 + cos(pi * t / T))`` or the constant ``p0``."""
        if self.decay == "constant" or total_epochs <= 0:
            return self.drop_fraction
        t = min(epoch, total_epochs)
        return 0.5 * self.drop_fraction * (1.0 + math.cos(math.pi * t / total_epochs))

    def update_due(self, epoch: int) -> bool:
        return self.dynamic and epoch > 0 and epoch % self.update_interval == 0


def layer_densities(shapes: dict[str, tuple[int, ...]], sparsity: float, distribution: str) -> dict[str, float]:
    """Per-weight-tensor density so that the overall density is ``1 - sparsity``.

    The Erdos-Renyi-kernel rule makes density proportional to
    ``(fan_in + fan_out) / (fan_in * fan_out)``; any layer that would exceed
    density 1 is made dense and the remaining budget is re-spread over the
    others.
    """
    weights = {k: s for k, s in shapes.items() if is_weight(k)}
    density = 1.0 - sparsity
    if distribution == "uniform" or sparsity == 0.0:
        return {k: density for k in weights}
    if distribution != "erdos-renyi-kernel":
        raise ValueError(f"unknown distribution {distribution!r}")

    sizes = {k: int(np.prod(s)) for k, s in weights.items()}
    raw = {k: sum(s) / np.prod(s) for k, s in weights.items()}
    budget = density * sum(sizes.values())
    dense: set[str] = set()
    while True:
        free = [k for k in weights if k not in dense]
        remaining = budget - sum(sizes[k] for k in dense)
        eps = remaining / sum(raw[k] * sizes[k] for k in free)
        over = [k for k in free if eps * raw[k] > 1.0]
        if not over:
            break
        dense.update(over)
    return {k: 1.0 if k in dense else eps * raw[k] for k in weights}


def init_mask(params: ParamSet, schedule: SparsitySchedule, rng: RngStream) -> Mask:
    """Random mask with per-tensor densities from :func:`layer_densities`."""
    if not 0.0 <= schedule.target_sparsity < 1.0:
        raise ValueError("sparsity must be in [0, 1)")
    shapes = {k: v.shape for k, v in params.items()}
    densities = layer_densities(shapes, schedule.target_sparsity, schedule.distribution)
    mask = {}
    for name, value in params.items():
        if not is_weight(name):
            mask[name] = np.ones_like(value)
            continue
        nnz = int(round(densities[name] * value.size))
        flat = np.zeros(value.size)
        flat[rng.choice(value.size, nnz)] = 1.0
        mask[name] = flat.reshape(value.shape)
    return mask


def dense_mask(params: ParamSet) -> Mask:
    return {k: np.ones_like(v) for k, v in params.items()}


def apply_mask(params: ParamSet, mask: Mask) -> ParamSet:
    out = {}
    for name, value in params.items():
        if mask[name].shape != value.shape:
            raise ValueError(f"mask shape {mask[name].shape} != param shape {value.shape} for {name}")
        out[name] = value * mask[name]
    return out


def nnz(mask: Mask) -> dict[str, int]:
    return {k: int(v.sum()) for k, v in mask.items() if is_weight(k)}


def sparsity(mask: Mask) -> float:
    total = sum(v.size for k, v in mask.items() if is_weight(k))
    return 1.0 - sum(nnz(mask).values()) / total


def _prune(weights: np.ndarray, active: np.ndarray, n_drop: int) -> np.ndarray:
    """Indices of the ``n_drop`` active entries with smallest magnitude."""
    # score active entries by -|w| so topk picks the smallest; inactive never win
    score = np.where(active, -np.abs(weights), -np.inf)
    return topk_indices(score, n_drop)


def _prune_and_grow(params, mask, drop_fraction, grow_scores, rng):
    if not 0.0 < drop_fraction < 1.0:
        raise ValueError(f"drop_fraction must be in (0, 1), got {drop_fraction}")
    new_mask, grown = {}, {}
    for name, m in mask.items():
        if not is_weight(name):
            new_mask[name] = m.copy()
            grown[name] = np.zeros_like(m)
            continue
        flat = m.ravel().copy()
        active = flat > 0
        n_drop = int(math.floor(drop_fraction * active.sum()))
        g = np.zeros_like(flat)
        if n_drop > 0:
            flat[_prune(params[name].ravel(), active, n_drop)] = 0.0
            candidates = np.flatnonzero(flat == 0)
            if grow_scores is None:
                picked = candidates[rng.choice(len(candidates), n_drop)]
            else:
                score = np.where(flat == 0, np.abs(grow_scores[name].ravel()), -np.inf)
                picked = topk_indices(score, n_drop)
            flat[picked] = 1.0
            g[picked] = 1.0
        new_mask[name] = flat.reshape(m.shape)
        grown[name] = g.reshape(m.shape)
    return new_mask, grown


def set_update(params: ParamSet, mask: Mask, drop_fraction: float, rng: RngStream) -> Mask:
    """SET: drop the smallest-magnitude active weights, regrow as many at random."""
    return _prune_and_grow(params, mask, drop_fraction, None, rng)[0]


def rigl_update(params: ParamSet, mask: Mask, dense_grad: ParamSet, drop_fraction: float, rng: RngStream | None = None) -> Mask:
    """RigL: drop like SET, regrow where the unmasked gradient is largest.

    Growth is deterministic; ``rng`` is accepted for signature parity with
    :func:`set_update` and left untouched.
    """
    return _prune_and_grow(params, mask, drop_fraction, dense_grad, rng)[0]


def update_mask(rule: str, params, mask, drop_fraction, rng, dense_grad=None) -> tuple[Mask, Mask]:
    """Run one prune-grow step; returns ``(new_mask, grown)``.

    ``grown`` flags every position switched on by this update (a position
    pruned and immediately regrown counts as grown), so callers can zero the
    corresponding weights.
    """
    if rule == "SET":
        return _prune_and_grow(params, mask, drop_fraction, None, rng)
    if rule == "RigL":
        if dense_grad is None:
            raise ValueError("RigL needs the dense gradient")
        return _prune_and_grow(params, mask, drop_fraction, dense_grad, rng)
    raise ValueError(f"no prune-grow rule {rule!r}")


def reset_grown(params: ParamSet, mask: Mask, grown: Mask) -> ParamSet:
    """Apply ``mask`` and zero newly grown weights."""
    return {k: v * mask[k] * (1.0 - grown[k]) for k, v in params.items()}

"""Gradient estimators and masked update rules.

Estimators turn minibatch gradients into a search direction:

* plain minibatch gradient (SGD, Adam),
* SVRG: ``g_new - g_old + g_full`` around an anchor,
* AGENT: ``g_new - w * g_old + w * g_full`` with ``w = gamma * c`` and ``c``
  re-estimated at every snapshot from how probe losses co-vary between the
  current point and the previous anchor,
* MVR: recursive momentum ``d_t = g(x_t) + (1 - a)(d_{t-1} - g(x_{t-1}))``,
  optionally with the AGENT correction on the fresh term.

Update rules (momentum SGD, Adam) then move the parameters and re-apply the
mask so pruned coordinates stay exactly zero.

An ``objective`` is any callable ``(params, batch) -> (loss, grad)``. Passing
one lets adversarial objectives reuse the same estimators with the perturbed
inputs frozen between the current point and the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import Batch, Dataset
from .nn import MLP, ParamSet, all_finite, copy, zeros_like
from .sparsity import Mask, apply_mask

Objective = Callable[[ParamSet, Batch], "tuple[float, ParamSet]"]

VARIANCE_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    """A gradient or loss stopped being finite."""

    def __init__(self, message: str, epoch: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.iteration = iteration


def _masked(x: ParamSet, mask: Mask | None) -> ParamSet:
    return x if mask is None else apply_mask(x, mask)


# ---------------------------------------------------------------------------
# Adaptive weight


def estimate_c_hat(probe_losses_new, probe_losses_anchor) -> Optional[float]:
    """Sample ``Cov(new, anchor) / Var(anchor)``, clamped to ``[0, 1]``.

    Returns ``None`` when the anchor losses are (numerically) constant; the
    caller then keeps its previous weight.
    """
    new = np.asarray(probe_losses_new, dtype=np.float64)
    old = np.asarray(probe_losses_anchor, dtype=np.float64)
    if new.shape != old.shape or new.ndim != 1:
        raise ValueError("probe loss vectors must be 1-D and equally long")
    if len(new) < 2:
        raise ValueError("need at least two probe losses")
    dn = new - new.mean()
    do = old - old.mean()
    var = float(np.dot(do, do)) / (len(old) - 1)
    if var < VARIANCE_FLOOR:
        return None
    cov = float(np.dot(dn, do)) / (len(old) - 1)
    return min(max(cov / var, 0.0), 1.0)


def combine(g_new: ParamSet, g_old: ParamSet, g_full: ParamSet, weight: float) -> ParamSet:
    """``g_new - weight * g_old + weight * g_full``, tensor by tensor."""
    return {k: g_new[k] - weight * g_old[k] + weight * g_full[k] for k in g_new}


# ---------------------------------------------------------------------------
# SVRG


@dataclass
class SvrgState:
    anchor: ParamSet
    anchor_mask: Mask
    anchor_full_grad: ParamSet


def svrg_snapshot(model: MLP, params: ParamSet, mask: Mask, dataset: Dataset) -> SvrgState:
    full = _masked(model.full_gradient(params, dataset), mask)
    return SvrgState(copy(params), {k: v.copy() for k, v in mask.items()}, full)


def svrg_gradient(state: SvrgState, model: MLP, params: ParamSet, batch: Batch, objective: Objective | None = None) -> ParamSet:
    return corrected_loss_and_grad(state, model, params, batch, 1.0, objective)[1]


# ---------------------------------------------------------------------------
# AGENT


@dataclass
class AgentState:
    anchor: ParamSet
    anchor_mask: Mask
    anchor_full_grad: ParamSet
    gamma: float = 0.1
    alpha: float = 0.5
    epoch_length: int = 0
    c_smoothed: float = 0.0
    c_hat: Optional[float] = None
    fixed_c: Optional[float] = None
    probe_losses_anchor: Optional[np.ndarray] = None
    snapshots: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.fixed_c is not None and not 0.0 <= self.fixed_c <= 1.0:
            raise ValueError(f"fixed_c must be in [0, 1], got {self.fixed_c}")

    @property
    def weight(self) -> float:
        """Effective weight ``gamma * c`` on the old-gradient terms."""
        c = self.fixed_c if self.fixed_c is not None else self.c_smoothed
        return self.gamma * c

    @classmethod
    def initial(cls, params: ParamSet, mask: Mask, **hyper) -> "AgentState":
        """State before the first snapshot: anchor at ``params``, ``c = 0``."""
        return cls(copy(params), {k: v.copy() for k, v in mask.items()}, zeros_like(params), **hyper)


def smooth_c(previous: float, c_hat: Optional[float], alpha: float) -> float:
    if c_hat is None:
        return previous
    return (1.0 - alpha) * previous + alpha * c_hat


def agent_snapshot(
    state: AgentState,
    model: MLP,
    params: ParamSet,
    mask: Mask,
    dataset: Dataset,
    probe_set: Dataset,
    step_index: int | None = None,
) -> AgentState:
    """Move the anchor to ``params`` and refresh the full gradient and weight.

    On the first snapshot (``step_index == 0`` or no cached probe losses) the
    weight stays at zero. Afterwards the probe losses at ``params`` are
    compared with those cached at the previous anchor.
    """
    if len(probe_set) == 0:
        raise ValueError("empty probe set")
    probe_batch = probe_set.as_batch()
    probe_losses = model.per_example_losses(params, probe_batch)
    first = state.probe_losses_anchor is None or step_index == 0
    if first:
        c_hat, c = None, 0.0
    else:
        c_hat = estimate_c_hat(probe_losses, state.probe_losses_anchor)
        c = smooth_c(state.c_smoothed, c_hat, state.alpha)
    full = _masked(model.full_gradient(params, dataset), mask)
    return replace(
        state,
        anchor=copy(params),
        anchor_mask={k: v.copy() for k, v in mask.items()},
        anchor_full_grad=full,
        c_smoothed=c,
        c_hat=c_hat,
        probe_losses_anchor=probe_losses,
        snapshots=state.snapshots + 1,
    )


def corrected_loss_and_grad(state, model: MLP, params: ParamSet, batch: Batch, weight: float, objective: Objective | None):
    objective = objective or model.loss_and_grad
    loss, g_new = objective(params, batch)
    _, g_old = objective(state.anchor, batch)
    g_old = apply_mask(g_old, state.anchor_mask)
    return loss, combine(g_new, g_old, state.anchor_full_grad, weight)


def corrected_gradient(state: AgentState, model: MLP, params: ParamSet, batch: Batch, objective: Objective | None = None) -> ParamSet:
    """AGENT direction; ``g_old`` is evaluated on the same examples at the anchor."""
    return corrected_loss_and_grad(state, model, params, batch, state.weight, objective)[1]


# ---------------------------------------------------------------------------
# MVR


@dataclass
class MvrState:
    a: float = 0.1
    direction: Optional[ParamSet] = None
    prev_params: Optional[ParamSet] = None

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise ValueError(f"mixing a must be in (0, 1], got {self.a}")


def mvr_gradient(
    state: MvrState,
    model: MLP,
    params: ParamSet,
    batch: Batch,
    objective: Objective | None = None,
    agent: AgentState | None = None,
) -> tuple[float, ParamSet, MvrState]:
    """One MVR recursion step; returns ``(loss, d_t, new_state)``.

    With ``agent`` the fresh gradient ``g(x_t)`` is replaced by the AGENT
    direction; the memory term ``g(x_{t-1})`` stays a plain batch gradient.
    """
    objective = objective or model.loss_and_grad
    if agent is not None:
        loss, fresh = corrected_loss_and_grad(agent, model, params, batch, agent.weight, objective)
    else:
        loss, fresh = objective(params, batch)
    if state.direction is None:
        d = fresh
    else:
        _, g_prev = objective(state.prev_params, batch)
        keep = 1.0 - state.a
        d = {k: fresh[k] + keep * (state.direction[k] - g_prev[k]) for k in fresh}
    return loss, d, replace(state, direction=d, prev_params=copy(params))


# ---------------------------------------------------------------------------
# Update rules


@dataclass
class SgdState:
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: Optional[ParamSet] = None


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: Optional[ParamSet] = None
    v: Optional[ParamSet] = None
    t: int = 0


def step(state, params: ParamSet, mask: Mask, gradient: ParamSet, lr: float, epoch: int | None = None, iteration: int | None = None):
    """Apply one update; returns ``(params, state)``.

    Weight decay is decoupled (``theta -= lr * wd * theta``). The gradient,
    every moment buffer and the result are masked.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not all_finite(gradient):
        raise NonFiniteError(f"non-finite gradient at epoch {epoch}, iteration {iteration}", epoch, iteration)
    g = apply_mask(gradient, mask)
    if isinstance(state, SgdState):
        return _sgd_step(state, params, mask, g, lr)
    if isinstance(state, AdamState):
        return _adam_step(state, params, mask, g, lr)
    raise TypeError(f"unknown optimizer state {type(state).__name__}")


def _sgd_step(state: SgdState, params, mask, g, lr):
    velocity = state.velocity or zeros_like(params)
    new_v, new_p = {}, {}
    for k in params:
        v = (state.momentum * velocity[k] + g[k]) * mask[k]
        new_v[k] = v
        new_p[k] = (params[k] - lr * state.weight_decay * params[k] - lr * v) * mask[k]
    return new_p, replace(state, velocity=new_v)


def _adam_step(state: AdamState, params, mask, g, lr):
    m = state.m or zeros_like(params)
    v = state.v or zeros_like(params)
    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_m, new_v, new_p = {}, {}, {}
    for k in params:
        new_m[k] = (state.beta1 * m[k] + (1.0 - state.beta1) * g[k]) * mask[k]
        new_v[k] = (state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k]) * mask[k]
        update = (new_m[k] / bc1) / (np.sqrt(new_v[k] / bc2) + state.eps)
        new_p[k] = (params[k] - lr * state.weight_decay * params[k] - lr * update) * mask[k]
    return new_p, replace(state, m=new_m, v=new_v, t=t)


def mask_buffers(state, mask: Mask):
    """Zero buffer entries at pruned coordinates (after a mask update)."""
    if isinstance(state, SgdState) and state.velocity is not None:
        return replace(state, velocity=apply_mask(state.velocity, mask))
    if isinstance(state, AdamState) and state.m is not None:
        return replace(state, m=apply_mask(state.m, mask), v=apply_mask(state.v, mask))
    if isinstance(state, MvrState) and state.direction is not None:
        return replace(state, direction=apply_mask(state.direction, mask))
    return state

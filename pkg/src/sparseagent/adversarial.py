"""L-infinity PGD and the AT / TRADES training objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Batch, Dataset
from .nn import MLP, ParamSet, cross_entropy, kl_divergence, log_softmax, softmax
from .sparsity import Mask, apply_mask
from .tensor import RngStream

TRADES_JITTER = 0.001


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float | None = None
    iterations: int = 10
    random_start: bool = True
    restarts: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / 4)
        if self.iterations > 0 and self.epsilon > 0 and not self.step_size > 0:
            raise ValueError("step_size must be positive when iterating")

    @classmethod
    def fgsm(cls, epsilon: float) -> "AttackConfig":
        return cls(epsilon=epsilon, step_size=epsilon, iterations=1, random_start=False)


def _project(x, x0, eps):
    return np.clip(np.clip(x, x0 - eps, x0 + eps), 0.0, 1.0)


def _kl_input_grad(model: MLP, params: ParamSet, x, clean_logits):
    """Per-example ``KL(p_clean || p(x))`` and its gradient w.r.t. ``x``."""
    logits, cache = model.forward(params, x)
    losses = kl_divergence(clean_logits, logits)
    dlogits = softmax(logits) - softmax(clean_logits)
    _, dx = model.backward(params, cache, dlogits, wrt_input=True)
    return losses, dx


def pgd_attack(
    model: MLP,
    params: ParamSet,
    mask: Mask | None,
    batch: Batch,
    cfg: AttackConfig,
    rng: RngStream,
    loss: str = "ce",
) -> np.ndarray:
    """Sign-gradient ascent inside the ``epsilon`` ball, clamped to ``[0, 1]``.

    ``loss="ce"`` attacks the cross-entropy of the true label; ``loss="kl"``
    attacks ``KL(p(x) || p(x'))`` as TRADES does. Across restarts each example
    keeps its highest-loss iterate.
    """
    if mask is not None:
        params = apply_mask(params, mask)
    x0 = batch.inputs
    eps = cfg.epsilon
    if loss == "ce":
        def evaluate(x):
            return model.input_grad(params, batch.with_inputs(x))
    elif loss == "kl":
        clean_logits = model.logits(params, x0)

        def evaluate(x):
            return _kl_input_grad(model, params, x, clean_logits)
    else:
        raise ValueError(f"unknown attack loss {loss!r}")

    best = x0.copy()
    best_loss = np.full(len(batch), -np.inf)
    for _ in range(cfg.restarts):
        if cfg.random_start:
            x = _project(x0 + rng.uniform(x0.shape, -eps, eps), x0, eps)
        elif loss == "kl" and cfg.iterations > 0:
            # the KL objective is flat at x0, so nudge off it
            x = _project(x0 + rng.gaussian(x0.shape, std=TRADES_JITTER), x0, eps)
        else:
            x = x0.copy()
        for _ in range(cfg.iterations):
            _, grad = evaluate(x)
            x = _project(x + cfg.step_size * np.sign(grad), x0, eps)
        final_loss, _ = evaluate(x)
        better = final_loss > best_loss
        best[better] = x[better]
        best_loss = np.where(better, final_loss, best_loss)
    return best


def at_objective(model: MLP, x_adv: np.ndarray):
    """Cross-entropy on frozen adversarial inputs, as ``(params, batch) -> (loss, grad)``."""
    def objective(params, batch):
        return model.loss_and_grad(params, batch.with_inputs(x_adv))
    return objective


def at_loss_and_grad(model: MLP, params: ParamSet, mask: Mask | None, batch: Batch, cfg: AttackConfig, rng: RngStream):
    """Adversarial-training loss: cross-entropy at a fresh PGD point."""
    params = apply_mask(params, mask) if mask is not None else params
    x_adv = pgd_attack(model, params, None, batch, cfg, rng)
    return at_objective(model, x_adv)(params, batch)


def trades_objective(model: MLP, x_adv: np.ndarray, beta: float):
    """``CE(f(x), y) + beta * mean KL(f(x) || f(x_adv))`` with ``x_adv`` frozen.

    Both forward passes depend on the parameters, so the gradient collects
    contributions from each.
    """
    def objective(params, batch):
        n = len(batch)
        clean_logits, clean_cache = model.forward(params, batch.inputs)
        adv_logits, adv_cache = model.forward(params, x_adv)
        ce = cross_entropy(clean_logits, batch.labels)
        kl = kl_divergence(clean_logits, adv_logits)
        loss = float(np.mean(ce) + beta * np.mean(kl))

        p = softmax(clean_logits)
        d_clean = p.copy()
        d_clean[np.arange(n), batch.labels] -= 1.0
        # d KL(p || q) / d clean_logits = p * (r - <p, r>), r = log p - log q
        r = log_softmax(clean_logits) - log_softmax(adv_logits)
        d_clean += beta * p * (r - np.sum(p * r, axis=1, keepdims=True))
        d_adv = beta * (softmax(adv_logits) - p)
        g_clean = model.backward(params, clean_cache, d_clean / n)
        g_adv = model.backward(params, adv_cache, d_adv / n)
        return loss, {k: g_clean[k] + g_adv[k] for k in g_clean}
    return objective


def trades_loss_and_grad(
    model: MLP, params: ParamSet, mask: Mask | None, batch: Batch, cfg: AttackConfig, beta: float, rng: RngStream
):
    if beta < 0:
        raise ValueError("beta must be non-negative")
    params = apply_mask(params, mask) if mask is not None else params
    x_adv = pgd_attack(model, params, None, batch, cfg, rng, loss="kl")
    return trades_objective(model, x_adv, beta)(params, batch)


def robust_accuracy(
    model: MLP, params: ParamSet, dataset: Dataset, cfg: AttackConfig, rng: RngStream, chunk: int = 512
) -> float:
    """Accuracy at the per-example loss-maximising point of ``{clean, PGD}``."""
    correct = 0
    for batch in dataset.batches(chunk):
        x_adv = pgd_attack(model, params, None, batch, cfg, rng)
        clean_logits = model.logits(params, batch.inputs)
        adv_logits = model.logits(params, x_adv)
        use_adv = cross_entropy(adv_logits, batch.labels) > cross_entropy(clean_logits, batch.labels)
        logits = np.where(use_adv[:, None], adv_logits, clean_logits)
        correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
    return correct / len(dataset)

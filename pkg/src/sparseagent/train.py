"""Epoch-structured training loop.

Each epoch runs, in order:

1. mask update (SET / RigL), when one is due;
2. optimizer snapshot (SVRG / AGENT): anchor, full gradient, adaptive weight;
3. one pass of shuffled minibatches with corrected gradients and masked steps;
4. evaluation and one :class:`MetricsRecord`.

Updating the mask strictly before the snapshot keeps the stored full
gradient consistent with the mask it is combined under. Randomness is split
into named substreams so, for example, the AGENT probe set never shifts the
minibatch order, and an AGENT run with zero weight replays SGD exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import optim
from .adversarial import at_objective, pgd_attack, robust_accuracy, trades_objective
from .config import ExperimentConfig
from .data import Dataset, load_csv, load_digits, make_blobs, split
from .diagnostics import anchor_correlation
from .nn import MLP, ModelSpec, ParamSet, global_norm
from .sparsity import Mask, apply_mask, dense_mask, init_mask, reset_grown, sparsity, update_mask
from .tensor import RngStream

log = logging.getLogger(__name__)

STREAMS = {"init": 1, "mask": 2, "data": 3, "probe": 4, "attack": 5, "eval": 6}

METRIC_COLUMNS = (
    "epoch",
    "lr",
    "train_loss",
    "full_train_loss",
    "test_acc",
    "robust_acc",
    "c_hat",
    "c_smoothed",
    "c_weight",
    "grad_norm",
    "true_corr",
    "sparsity",
    "status",
)


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    full_train_loss: float
    test_acc: float
    robust_acc: Optional[float] = None
    c_hat: Optional[float] = None
    c_smoothed: Optional[float] = None
    c_weight: Optional[float] = None
    grad_norm: float = 0.0
    true_corr: Optional[float] = None
    sparsity: float = 0.0
    status: str = "ok"
    seconds: float = field(default=0.0, compare=False)

    def to_row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in METRIC_COLUMNS]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRecord":
        return cls(**d)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv(records) -> str:
    """Metrics as CSV text with the fixed :data:`METRIC_COLUMNS` header.

    Wall-clock time is left out so identical runs give identical files.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in records:
        writer.writerow(r.to_row())
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, value in raw.items():
                if key == "status":
                    row[key] = value
                elif key == "epoch":
                    row[key] = int(value)
                else:
                    row[key] = float(value) if value != "" else None
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind == "blobs":
        train, test = make_blobs(
            d.n_train, d.n_classes, d.dim, d.separation, seed=d.seed, n_test=d.n_test, label_noise=d.label_noise
        )
        return train, test if test is not None else train
    if d.kind == "digits":
        return load_digits()
    train = load_csv(d.train)
    if d.test:
        test = load_csv(d.test, n_classes=train.n_classes)
        return train, test
    return split(train, d.test_fraction, d.seed)


def build_model(cfg: ExperimentConfig, train: Dataset) -> MLP:
    sizes = [train.dim, *cfg.model.hidden, train.n_classes]
    return MLP(ModelSpec.mlp(sizes, cfg.model.activation))


@dataclass
class TrainState:
    """Everything needed to continue a run from an epoch boundary."""

    epoch: int
    global_step: int
    params: ParamSet
    mask: Mask
    update: object  # optim.SgdState | optim.AdamState
    snapshot: object = None  # optim.SvrgState | optim.AgentState | None
    mvr: Optional[optim.MvrState] = None
    rngs: dict = field(default_factory=dict)
    probe_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    snapshot_ids: Optional[np.ndarray] = None
    metrics: list = field(default_factory=list)
    fault: Optional[str] = None


@dataclass
class RunResult:
    params: ParamSet
    mask: Mask
    metrics: list
    state: TrainState
    seconds: float = 0.0

    @property
    def fault(self):
        return self.state.fault


def initial_state(cfg: ExperimentConfig, model: MLP, train: Dataset) -> TrainState:
    seed = cfg.seed
    rngs = {name: RngStream(seed, stream) for name, stream in STREAMS.items()}
    params = model.init_params(rngs["init"])
    schedule = cfg.sparsity.schedule()
    mask = init_mask(params, schedule, rngs["mask"]) if schedule.target_sparsity > 0 else dense_mask(params)
    params = apply_mask(params, mask)

    o = cfg.optimizer
    if o.name == "adam":
        update = optim.AdamState(o.beta1, o.beta2, o.eps, o.weight_decay)
    elif o.name in ("mvr", "agent+mvr"):
        # the MVR recursion already carries momentum
        update = optim.SgdState(0.0, o.weight_decay)
    else:
        update = optim.SgdState(o.momentum, o.weight_decay)

    probe_ids = np.zeros(0, dtype=np.int64)
    snapshot = None
    if o.name in ("agent", "agent+mvr"):
        probe_ids = rngs["probe"].choice(len(train), min(o.probe_size, len(train)))
        snapshot = optim.AgentState.initial(
            params, mask, gamma=o.gamma, alpha=o.alpha, fixed_c=o.fixed_c, epoch_length=o.epoch_length or 0
        )
    elif o.name == "svrg":
        snapshot = optim.SvrgState(params, mask, {k: np.zeros_like(v) for k, v in params.items()})
    snapshot_ids = None
    if o.full_grad_subsample is not None and o.full_grad_subsample < len(train):
        snapshot_ids = rngs["probe"].choice(len(train), o.full_grad_subsample)
    mvr = optim.MvrState(o.mvr_a) if o.name in ("mvr", "agent+mvr") else None
    return TrainState(0, 0, params, mask, update, snapshot, mvr, rngs, probe_ids, snapshot_ids)


def _objective(cfg: ExperimentConfig, model: MLP, params, batch, rng):
    name = cfg.objective.name
    if name == "standard":
        return model.loss_and_grad
    attack = cfg.objective.attack.build()
    if name == "at":
        return at_objective(model, pgd_attack(model, params, None, batch, attack, rng))
    x_adv = pgd_attack(model, params, None, batch, attack, rng, loss="kl")
    return trades_objective(model, x_adv, cfg.objective.beta)


def _take_snapshot(cfg, model, state: TrainState, train: Dataset, probe: Dataset | None, trace: dict):
    snap_data = train if state.snapshot_ids is None else train.subset(state.snapshot_ids)
    if isinstance(state.snapshot, optim.AgentState):
        previous = state.snapshot
        state.snapshot = optim.agent_snapshot(previous, model, state.params, state.mask, snap_data, probe)
        if state.snapshot.c_hat is not None or previous.probe_losses_anchor is not None:
            trace["c_hat"] = state.snapshot.c_hat
            if cfg.diagnostics.trace_c:
                trace["true_corr"] = anchor_correlation(model, state.params, previous.anchor, state.mask, probe)
    elif isinstance(state.snapshot, optim.SvrgState):
        state.snapshot = optim.svrg_snapshot(model, state.params, state.mask, snap_data)


def _direction(cfg, model, state: TrainState, batch, objective):
    name = cfg.optimizer.name
    if name in ("sgd", "adam"):
        return objective(state.params, batch)
    if name == "svrg":
        return optim.corrected_loss_and_grad(state.snapshot, model, state.params, batch, 1.0, objective)
    if name == "agent":
        return optim.corrected_loss_and_grad(state.snapshot, model, state.params, batch, state.snapshot.weight, objective)
    agent = state.snapshot if name == "agent+mvr" else None
    loss, d, state.mvr = optim.mvr_gradient(state.mvr, model, state.params, batch, objective, agent=agent)
    return loss, d


def run_experiment(
    cfg: ExperimentConfig,
    resume: TrainState | None = None,
    stop_after: int | None = None,
    on_epoch_end: Callable[[TrainState], None] | None = None,
) -> RunResult:
    """Train according to ``cfg``; optionally continue from ``resume``.

    ``stop_after`` ends the run after that many epochs in total (as if
    interrupted); ``on_epoch_end`` sees the state after every epoch, which is
    where the CLI writes its checkpoint.
    """
    train, test = build_datasets(cfg)
    model = build_model(cfg, train)
    state = resume if resume is not None else initial_state(cfg, model, train)
    schedule = cfg.sparsity.schedule()
    probe = train.subset(state.probe_ids) if len(state.probe_ids) else None
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    epoch_length = cfg.optimizer.epoch_length or steps_per_epoch
    last_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    eval_attack = cfg.objective.eval_attack.build()
    started = time.perf_counter()

    while state.epoch < last_epoch and state.fault is None:
        epoch = state.epoch
        t0 = time.perf_counter()
        lr = cfg.lr_schedule.lr_at(cfg.optimizer.lr, epoch)
        mask_changed = False
        if schedule.update_due(epoch):
            rng = state.rngs["mask"]
            dense_grad = None
            if schedule.rule == "RigL":
                ids = rng.choice(len(train), min(cfg.batch_size, len(train)))
                dense_grad = model.loss_and_grad(state.params, train.batch(ids))[1]
            drop = schedule.drop_fraction_at(epoch, cfg.epochs)
            state.mask, grown = update_mask(schedule.rule, state.params, state.mask, drop, rng, dense_grad)
            state.params = reset_grown(state.params, state.mask, grown)
            state.update = optim.mask_buffers(state.update, state.mask)
            if state.mvr is not None:
                state.mvr = optim.mask_buffers(state.mvr, state.mask)
            mask_changed = True

        trace: dict = {}
        losses, norms = [], []
        try:
            for it, batch in enumerate(train.batches(cfg.batch_size, state.rngs["data"])):
                if state.snapshot is not None and (state.global_step % epoch_length == 0 or mask_changed):
                    _take_snapshot(cfg, model, state, train, probe, trace)
                    mask_changed = False
                objective = _objective(cfg, model, state.params, batch, state.rngs["attack"])
                loss, direction = _direction(cfg, model, state, batch, objective)
                if not math.isfinite(loss):
                    raise optim.NonFiniteError(f"non-finite loss at epoch {epoch}, iteration {it}", epoch, it)
                state.params, state.update = optim.step(
                    state.update, state.params, state.mask, direction, lr, epoch=epoch, iteration=it
                )
                losses.append(loss)
                norms.append(global_norm(apply_mask(direction, state.mask)))
                state.global_step += 1
        except optim.NonFiniteError as exc:
            state.fault = str(exc)
            log.warning("run diverged: %s", exc)
            state.metrics.append(
                MetricsRecord(epoch, lr, math.nan, math.nan, math.nan, status="diverged", sparsity=sparsity(state.mask))
            )
            break

        robust = None
        if cfg.objective.name != "standard" and (
            (epoch + 1) % cfg.objective.eval_every == 0 or epoch + 1 == cfg.epochs
        ):
            robust = robust_accuracy(model, state.params, test, eval_attack, state.rngs["eval"])
        agent = state.snapshot if isinstance(state.snapshot, optim.AgentState) else None
        record = MetricsRecord(
            epoch=epoch,
            lr=lr,
            train_loss=float(np.mean(losses)),
            full_train_loss=model.loss(state.params, train),
            test_acc=model.accuracy(state.params, test),
            robust_acc=robust,
            c_hat=trace.get("c_hat"),
            c_smoothed=agent.c_smoothed if agent else None,
            c_weight=agent.weight if agent else None,
            grad_norm=float(np.mean(norms)),
            true_corr=trace.get("true_corr"),
            sparsity=sparsity(state.mask),
            seconds=time.perf_counter() - t0,
        )
        state.metrics.append(record)
        state.epoch += 1
        log.info("epoch %d loss %.4f acc %.4f", epoch, record.full_train_loss, record.test_acc)
        if on_epoch_end is not None:
            on_epoch_end(state)

    return RunResult(state.params, state.mask, state.metrics, state, time.perf_counter() - started)

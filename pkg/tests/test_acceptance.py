"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python tests/test_acceptance.py``.

Criteria 7, 8 and 11 are desk-scale experiments on synthetic blobs. Their
settings are fixed in :func:`desk_config`; seeds 0-9 are the evaluation seeds.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import fd_gradient  # noqa: E402,F401
from sparseagent import optim  # noqa: E402
from sparseagent.adversarial import AttackConfig, at_objective, pgd_attack, robust_accuracy, trades_objective  # noqa: E402
from sparseagent.cli import main as cli_main  # noqa: E402
from sparseagent.config import ExperimentConfig, dump  # noqa: E402
from sparseagent.diagnostics import c_trace, sign_agreement, sweep  # noqa: E402
from sparseagent.nn import flatten, unflatten  # noqa: E402
from sparseagent.optim import estimate_c_hat  # noqa: E402
from sparseagent.report import epochs_to_threshold  # noqa: E402
from sparseagent.sparsity import SparsitySchedule, init_mask, nnz, rigl_update, set_update  # noqa: E402
from sparseagent.tensor import RngStream  # noqa: E402
from sparseagent.train import METRIC_COLUMNS, build_datasets, build_model, run_experiment  # noqa: E402

REPORT = {}


def verdict(number, name, ok, detail, started, limit):
    elapsed = time.perf_counter() - started
    within = elapsed < limit
    passed = bool(ok) and within
    REPORT[number] = (name, passed, f"{detail}; {elapsed:.1f}s (limit {limit:.0f}s)")
    assert ok, detail
    assert within, f"took {elapsed:.1f}s, limit {limit}s"


def desk_config(**overrides):
    """90%-sparse-capable MLP on noisy 4-class blobs, SGD-momentum lr 0.1, batch 32."""
    base = ExperimentConfig().replace(**{
        "epochs": 60,
        "batch_size": 32,
        "dataset.n_train": 512,
        "dataset.n_test": 512,
        "dataset.dim": 16,
        "dataset.n_classes": 4,
        "dataset.separation": 1.0,
        "dataset.label_noise": 0.1,
        "model.hidden": [64],
        "optimizer.name": "sgd",
        "optimizer.lr": 0.1,
        "sparsity.rule": "SET",
    })
    return base.replace(**overrides)


# -- 1 -----------------------------------------------------------------------


def test_criterion_01_unbiasedness():
    t0 = time.perf_counter()
    train, model, params, anchor = oracles.tiny_problem(0)
    n_params = model.spec.n_params()
    full = flatten(model.full_gradient(params, train))
    errors = {}
    for w in (0.0, 0.1, 0.5, 1.0):
        grads = oracles.enumerate_corrected(model, params, anchor, train, w)
        assert grads.shape == (28, n_params)
        errors[w] = float(np.max(np.abs(grads.mean(axis=0) - full)))
    worst = max(errors.values())
    verdict(1, "unbiasedness oracle", n_params <= 50 and worst < 1e-10,
            f"{n_params} params, max |mean - full| = {worst:.1e} over gamma*c in {list(errors)}", t0, 5)


# -- 2 -----------------------------------------------------------------------


def test_criterion_02_variance_quadratic():
    t0 = time.perf_counter()
    train, model, params, anchor = oracles.tiny_problem(0)
    g_new = oracles.enumerate_plain(model, params, train)
    g_old = oracles.enumerate_plain(model, anchor, train)
    var_new, var_old = g_new.var(0), g_old.var(0)
    cov = ((g_new - g_new.mean(0)) * (g_old - g_old.mean(0))).mean(0)
    worst = 0.0
    for c in (0.0, 0.25, 0.5, 0.75, 1.0):
        got = oracles.enumerate_corrected(model, params, anchor, train, c).var(axis=0)
        worst = max(worst, float(np.max(np.abs(got - (var_new + c * c * var_old - 2 * c * cov)))))
    # per-coordinate optimum c* = Cov / Var(g_old); coordinates with Var(g_old) = 0 get c* = 0
    c_star = np.divide(cov, var_old, out=np.zeros_like(cov), where=var_old > 0)
    g_full_old = g_old.mean(0)
    g_star = g_new - c_star * g_old + c_star * g_full_old
    excess = float(np.max(g_star.var(0) - var_new))
    verdict(2, "variance-quadratic oracle", worst < 1e-10 and excess <= 1e-18,
            f"max quadratic mismatch {worst:.1e}; max Var(g(c*)) - Var(g_new) = {excess:.1e}", t0, 10)


# -- 3 -----------------------------------------------------------------------


def _series(result, columns=("epoch", "lr", "train_loss", "full_train_loss", "test_acc", "grad_norm", "sparsity")):
    return [tuple(getattr(m, c) for c in columns) for m in result.metrics]


def test_criterion_03_degeneracy():
    t0 = time.perf_counter()
    base = desk_config(**{"epochs": 3, "seed": 3, "sparsity.target": 0.9})
    sgd = run_experiment(base.replace(**{"optimizer.name": "sgd"}))
    agent0 = run_experiment(base.replace(**{"optimizer.name": "agent", "optimizer.fixed_c": 0.0}))
    svrg = run_experiment(base.replace(**{"optimizer.name": "svrg"}))
    agent1 = run_experiment(base.replace(**{"optimizer.name": "agent", "optimizer.gamma": 1.0, "optimizer.fixed_c": 1.0}))

    def same(a, b):
        return _series(a) == _series(b) and all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    ok_sgd, ok_svrg = same(sgd, agent0), same(svrg, agent1)
    verdict(3, "degeneracy equivalences", ok_sgd and ok_svrg and len(sgd.metrics) == 3,
            f"AGENT(c=0)==SGD: {ok_sgd}; AGENT(gamma*c=1)==SVRG: {ok_svrg} (bit-exact, 3 epochs)", t0, 30)


# -- 4 -----------------------------------------------------------------------


def test_criterion_04_c_hat_units():
    t0 = time.perf_counter()
    a = estimate_c_hat([1, 2, 3], [2, 4, 6])
    b = estimate_c_hat([0.5, -1.5, 2.25, 4.0], [0.5, -1.5, 2.25, 4.0])
    c = estimate_c_hat([1, 2, 3], [7, 7, 7])
    verdict(4, "c-hat unit values", a == 0.5 and b == 1.0 and c is None,
            f"[1,2,3]/[2,4,6] -> {a!r}; identical -> {b!r}; constant anchor -> {c!r} (sentinel)", t0, 1)


# -- 5 -----------------------------------------------------------------------


def test_criterion_05_gradient_correctness():
    t0 = time.perf_counter()
    train, test = build_datasets(desk_config(**{"dataset.n_train": 64, "dataset.n_test": 0}))
    model = build_model(desk_config(**{"model.hidden": [12]}), train)
    params = model.init_params(RngStream(5))
    batch = train.batch(np.arange(16))
    cfg = AttackConfig(0.1, 0.025, 10)
    objectives = {
        "clean": model.loss_and_grad,
        "AT (frozen PGD)": at_objective(model, pgd_attack(model, params, None, batch, cfg, RngStream(1))),
        "TRADES (frozen PGD)": trades_objective(
            model, pgd_attack(model, params, None, batch, cfg, RngStream(1), loss="kl"), 6.0),
    }
    flat = flatten(params)
    coords = RngStream(7).choice(len(flat), 20)
    worst = {}
    for name, objective in objectives.items():
        analytic = flatten(objective(params, batch)[1])
        errs = []
        for i in coords:
            h = 1e-6
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            fd = (objective(unflatten(up, params), batch)[0] - objective(unflatten(down, params), batch)[0]) / (2 * h)
            errs.append(abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-8))
        worst[name] = max(errs)
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    verdict(5, "gradient correctness", max(worst.values()) < 1e-4, detail + " (20 coordinates)", t0, 10)


# -- 6 -----------------------------------------------------------------------


def test_criterion_06_sparsity_conservation(monkeypatch):
    t0 = time.perf_counter()
    gen = np.random.default_rng(6)
    kept = 0
    for case in range(1000):
        rng = RngStream(6, case)
        shapes = [(int(gen.integers(2, 20)), int(gen.integers(2, 20))) for _ in range(2)]
        params = {"W0": rng.gaussian(shapes[0]), "b0": rng.gaussian(shapes[0][1]),
                  "W1": rng.gaussian(shapes[1]), "b1": rng.gaussian(shapes[1][1])}
        mask = init_mask(params, SparsitySchedule(float(gen.uniform(0, 0.95))), rng)
        p = float(gen.uniform(0.01, 0.99))
        if case % 2:
            new = set_update(params, mask, p, rng)
        else:
            new = rigl_update(params, mask, {k: rng.gaussian(v.shape) for k, v in params.items()}, p)
        kept += nnz(new) == nnz(mask)

    real_step = optim.step
    steps = {"n": 0, "leaks": 0}

    def checked_step(state, params, mask, gradient, lr, epoch=None, iteration=None):
        out, new_state = real_step(state, params, mask, gradient, lr, epoch, iteration)
        steps["n"] += 1
        steps["leaks"] += sum(int(np.count_nonzero(out[k][mask[k] == 0])) for k in out)
        return out, new_state

    monkeypatch.setattr(optim, "step", checked_step)
    sparsities = []
    for name, rule in (("agent", "SET"), ("sgd", "RigL")):
        r = run_experiment(desk_config(**{"epochs": 10, "sparsity.target": 0.9, "sparsity.rule": rule,
                                          "optimizer.name": name}))
        sparsities += [m.sparsity for m in r.metrics]
    ok = kept == 1000 and steps["leaks"] == 0 and steps["n"] == 2 * 10 * 16
    verdict(6, "sparsity conservation", ok,
            f"nnz preserved in {kept}/1000 updates; {steps['leaks']} nonzero pruned entries over "
            f"{steps['n']} steps at sparsity {min(sparsities):.4f}-{max(sparsities):.4f}", t0, 120)


# -- 7 -----------------------------------------------------------------------


def test_criterion_07_sparsity_trend():
    t0 = time.perf_counter()
    checkpoints = []
    for s in (0.0, 0.5, 0.9):
        r = run_experiment(desk_config(**{"sparsity.target": s}))
        checkpoints.append((r.params, r.mask))
    cfg = desk_config()
    train, _ = build_datasets(cfg)
    model = build_model(cfg, train)
    var = list(sweep(model, checkpoints, train, "variance", 0.015, 3, 32, seed=0).aggregate().values())
    corr = list(sweep(model, checkpoints, train, "correlation", 0.015, 3, 32, seed=0).aggregate().values())
    var_up = var[0] < var[1] < var[2]
    corr_down = corr[0] > corr[1] > corr[2]
    detail = (f"variance {', '.join(f'{v:.3g}' for v in var)} increasing={var_up}; "
              f"correlation {', '.join(f'{c:.3f}' for c in corr)} decreasing={corr_down}")
    verdict(7, "sparsity trend (variance up, correlation down)", var_up and corr_down, detail, t0, 600)


# -- 8 -----------------------------------------------------------------------

LOSS_THRESHOLD = 0.8  # training loss falls from ln 4 = 1.39 to about 0.4 in these runs


def test_criterion_08_acceleration():
    t0 = time.perf_counter()
    faster = steadier = 0
    rows = []
    for seed in range(10):
        runs = {}
        for name in ("sgd", "agent"):
            cfg = desk_config(**{"seed": seed, "dataset.seed": seed, "epochs": 50, "sparsity.target": 0.9,
                                 "optimizer.name": name, "optimizer.gamma": 0.1, "optimizer.alpha": 0.5})
            runs[name] = run_experiment(cfg).metrics
        ett = {k: epochs_to_threshold([m.full_train_loss for m in v], LOSS_THRESHOLD, higher_is_better=False)
               for k, v in runs.items()}
        std = {k: float(np.std([m.test_acc for m in v][-20:])) for k, v in runs.items()}
        never = 10**9
        faster += (ett["agent"] or never) <= (ett["sgd"] or never)
        steadier += std["agent"] <= std["sgd"]
        rows.append(f"{ett['agent']}/{ett['sgd']}")
    verdict(8, "acceleration and stability vs SGD+momentum", faster >= 7 and steadier >= 7,
            f"epochs-to-loss-{LOSS_THRESHOLD} AGENT<=SGD in {faster}/10 (agent/sgd: {' '.join(rows)}); "
            f"last-20-epoch acc std AGENT<=SGD in {steadier}/10", t0, 1800)


# -- 9 -----------------------------------------------------------------------


def test_criterion_09_adversarial_bias():
    t0 = time.perf_counter()
    bias_1, _ = oracles.adversarial_bias(1.0)
    bias_01, _ = oracles.adversarial_bias(0.1)
    verdict(9, "adversarial bias shrinks with gamma", bias_1 > 1e-8 and bias_01 < bias_1,
            f"||mean g - full adv grad|| = {bias_1:.3e} at gamma=1, {bias_01:.3e} at gamma=0.1", t0, 120)


# -- 10 ----------------------------------------------------------------------


def test_criterion_10_pgd_contract():
    t0 = time.perf_counter()
    cfg = desk_config(**{"epochs": 15, "sparsity.target": 0.5})
    result = run_experiment(cfg)
    train, test = build_datasets(cfg)
    model = build_model(cfg, train)
    gen = np.random.default_rng(10)
    worst_ball, worst_box = 0.0, 0.0
    for case in range(100):
        batch = train.batch(gen.choice(len(train), 16, replace=False))
        attack = AttackConfig(float(gen.uniform(0, 0.3)), float(gen.uniform(1e-3, 0.2)), int(gen.integers(0, 8)),
                              bool(gen.integers(2)), int(gen.integers(1, 4)))
        x = pgd_attack(model, result.params, result.mask, batch, attack, RngStream(10, case),
                       loss="kl" if case % 3 == 0 else "ce")
        worst_ball = max(worst_ball, float(np.max(np.abs(x - batch.inputs))) - attack.epsilon)
        worst_box = max(worst_box, float(max(-x.min(), x.max() - 1.0)))
    x0 = pgd_attack(model, result.params, result.mask, test.as_batch(), AttackConfig(0.0, 0.01, 50), RngStream(1))
    exact = np.array_equal(x0, test.inputs)
    clean = model.accuracy(result.params, test)
    robust = robust_accuracy(model, result.params, test, AttackConfig(8 / 255, None, 50, True, 10), RngStream(10, 99))
    ok = worst_ball <= 1e-12 and worst_box <= 1e-12 and exact and robust <= clean
    verdict(10, "PGD contract", ok,
            f"ball excess {worst_ball:.1e}, box excess {worst_box:.1e}, eps=0 exact: {exact}; "
            f"clean/robust accuracy (%): {100 * clean:.2f}/{100 * robust:.2f} (PGD-50, 10 restarts, eps 8/255)",
            t0, 300)


# -- 11 ----------------------------------------------------------------------


def test_criterion_11_c_trace():
    t0 = time.perf_counter()
    cfg = desk_config(**{"epochs": 30, "sparsity.target": 0.9, "optimizer.name": "agent", "diagnostics.trace_c": True})
    result = run_experiment(cfg)
    epochs, c_hat, corr = c_trace(result.metrics)
    rate = sign_agreement(c_hat, corr)
    strict = sign_agreement(c_hat, corr, ties="disagree")
    verdict(11, "c-hat co-moves with true correlation", len(c_hat) == 29 and rate > 0.5,
            f"sign agreement of first differences {rate:.3f} over steps where both move "
            f"({strict:.3f} counting flat steps as disagreement); {len(c_hat)} traced epochs", t0, 600)


# -- 12 ----------------------------------------------------------------------


def test_criterion_12_determinism_and_resume(tmp_path):
    t0 = time.perf_counter()
    configs = {
        "agent_rigl": desk_config(**{"epochs": 6, "sparsity.target": 0.9, "sparsity.rule": "RigL",
                                     "optimizer.name": "agent"}),
        "trades_mvr": desk_config(**{"epochs": 4, "dataset.n_train": 128, "dataset.n_test": 64,
                                     "sparsity.target": 0.5, "optimizer.name": "agent+mvr", "objective.name": "trades",
                                     "objective.attack.iterations": 3, "objective.eval_attack.iterations": 5,
                                     "objective.eval_attack.restarts": 2}),
    }
    checks = []
    for name, cfg in configs.items():
        path = tmp_path / f"{name}.yaml"
        dump(cfg, path)
        out = {k: tmp_path / f"{name}_{k}" for k in ("a", "b", "r")}
        for k in ("a", "b"):
            assert cli_main(["train", "--config", str(path), "--out", str(out[k])]) == 0
        half = cfg.epochs // 2
        assert cli_main(["train", "--config", str(path), "--out", str(out["r"]), "--stop-after", str(half)]) == 0
        assert cli_main(["train", "--config", str(path), "--out", str(out["r"]), "--resume"]) == 0
        metrics = {k: (v / "metrics.csv").read_bytes() for k, v in out.items()}
        ckpt = {k: (v / "checkpoint.bin").read_bytes() for k, v in out.items()}
        header = metrics["a"].decode().splitlines()[0]
        checks.append((name, metrics["a"] == metrics["b"] and ckpt["a"] == ckpt["b"],
                       metrics["a"] == metrics["r"] and ckpt["a"] == ckpt["r"],
                       header == ",".join(METRIC_COLUMNS)))
    ok = all(all(c[1:]) for c in checks)
    detail = "; ".join(f"{n}: repeat identical {d}, resume identical {r}" for n, d, r, _ in checks)
    verdict(12, "determinism and resume", ok, detail, t0, 300)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

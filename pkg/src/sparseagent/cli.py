"""Command line entry point: ``train``, ``diagnose``, ``attack-eval``, ``compare``."""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import checkpoint, config, diagnostics, report
from .adversarial import AttackConfig, robust_accuracy
from .tensor import RngStream
from .train import build_datasets, build_model, initial_state, run_experiment

log = logging.getLogger("sparseagent")


def _real(text: str) -> float:
    """Accept plain numbers and fractions such as ``8/255``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def cmd_train(args) -> int:
    cfg = config.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.bin"
    state = None
    if args.resume and ckpt_path.exists():
        saved_cfg, state = checkpoint.load(ckpt_path)
        if saved_cfg.digest() != cfg.digest():
            print(f"error: {ckpt_path} was written by a different config", file=sys.stderr)
            return 2
        log.info("resuming at epoch %d", state.epoch)
    config.dump(cfg, out / "config.yaml")
    if state is None:
        # epochs=0 still leaves a checkpoint of the initialisation
        train, _ = build_datasets(cfg)
        state = initial_state(cfg, build_model(cfg, train), train)
        checkpoint.save(ckpt_path, cfg, state)

    result = run_experiment(
        cfg, resume=state, stop_after=args.stop_after, on_epoch_end=lambda s: checkpoint.save(ckpt_path, cfg, s)
    )
    checkpoint.save(ckpt_path, cfg, result.state)
    train, _ = build_datasets(cfg)
    report.write_run(out, cfg, result, train)
    if result.fault:
        print(f"run aborted: {result.fault}", file=sys.stderr)
        return 3
    if result.metrics:
        last = result.metrics[-1]
        print(f"epoch {last.epoch}: loss {last.full_train_loss:.4f}  test acc {last.test_acc:.4f}")
    return 0


def cmd_diagnose(args) -> int:
    checkpoints = []
    model = dataset = None
    for path in args.checkpoint:
        cfg, state = checkpoint.load(path)
        train, _ = build_datasets(cfg)
        if dataset is not None and train.fingerprint() != dataset.fingerprint():
            print(f"error: {path} was trained on a different dataset", file=sys.stderr)
            return 2
        model, dataset = build_model(cfg, train), train
        checkpoints.append((state.params, state.mask))
    rep = diagnostics.sweep(
        model, checkpoints, dataset, args.measure, args.std, args.replicates, args.batch_size, args.seed
    )
    if args.out:
        rep.write_csv(args.out)
    for level, value in rep.aggregate().items():
        print(f"sparsity {level:.4f}  mean {args.measure} {value:.6g}")
    return 0


def cmd_attack_eval(args) -> int:
    cfg, state = checkpoint.load(args.checkpoint)
    train, test = build_datasets(cfg)
    model = build_model(cfg, train)
    attack = AttackConfig(args.eps, args.step_size, args.iters, not args.no_random_start, args.restarts)
    clean = model.accuracy(state.params, test)
    robust = robust_accuracy(model, state.params, test, attack, RngStream(args.seed, 0xA77AC))
    print(f"clean/robust accuracy (%): {100 * clean:.2f}/{100 * robust:.2f}")
    return 0


def cmd_compare(args) -> int:
    try:
        comp = report.compare(args.runs, thresholds=args.thresholds or report.DEFAULT_THRESHOLDS)
    except report.CompareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(comp.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        budgets, thresholds = comp.to_csv()
        (out / "accuracy_by_epoch.csv").write_text(budgets)
        (out / "epochs_to_threshold.csv").write_text(thresholds)
        (out / "comparison.txt").write_text(comp.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseagent", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.bin")
    p.add_argument("--stop-after", type=int, help="stop once this many epochs are done")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diagnose", help="gradient variance / correlation under weight noise")
    p.add_argument("--checkpoint", action="append", required=True, help="repeat for a sparsity sweep")
    p.add_argument("--measure", choices=("correlation", "variance"), default="correlation")
    p.add_argument("--std", type=float, default=diagnostics.DEFAULT_STD)
    p.add_argument("--replicates", type=int, default=diagnostics.DEFAULT_REPLICATES)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("attack-eval", help="clean and PGD robust accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eps", type=_real, default=8 / 255)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--step-size", type=_real, default=None)
    p.add_argument("--no-random-start", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack_eval)

    p = sub.add_parser("compare", help="accuracy tables across run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--thresholds", type=float, nargs="*")
    p.add_argument("--out", help="directory for CSV / text tables")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (config.ConfigError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

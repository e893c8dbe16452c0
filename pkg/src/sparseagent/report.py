"""Run directories and cross-run comparison tables.

A run directory holds ``metrics.csv``, ``summary.json`` and ``checkpoint.bin``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .data import Dataset
from .train import RunResult, metrics_csv, read_metrics_csv

DEFAULT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


class CompareError(ValueError):
    pass


def code_hash(version: str = __version__) -> str:
    """Git-style blob hash of the version string."""
    data = version.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def summary(cfg: ExperimentConfig, result: RunResult, train: Dataset) -> dict:
    last = result.metrics[-1] if result.metrics else None
    return {
        "config_hash": cfg.digest(),
        "code_version": {"version": __version__, "hash": code_hash()},
        "dataset_fingerprint": train.fingerprint(),
        "optimizer": cfg.optimizer.name,
        "seed": cfg.seed,
        "epochs_completed": len([m for m in result.metrics if m.status == "ok"]),
        "final": {
            "test_acc": last.test_acc if last else None,
            "robust_acc": last.robust_acc if last else None,
            "full_train_loss": last.full_train_loss if last else None,
        },
        "fault": result.fault,
        "seconds": result.seconds,
        "epoch_seconds": [m.seconds for m in result.metrics],
    }


def write_run(out_dir, cfg: ExperimentConfig, result: RunResult, train: Dataset):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(result.metrics))
    (out / "summary.json").write_text(json.dumps(summary(cfg, result, train), indent=2, sort_keys=True) + "\n")


def epochs_to_threshold(values, threshold: float, higher_is_better: bool = True):
    """1-based number of epochs until ``values`` first reaches ``threshold``, or ``None``."""
    for i, v in enumerate(values):
        if v is None:
            continue
        if (v >= threshold) if higher_is_better else (v <= threshold):
            return i + 1
    return None


@dataclass
class Comparison:
    names: list
    budget_rows: list  # [budget, acc_run0, acc_run1, ..., delta_run1, ...]
    threshold_rows: list  # [threshold, epochs_run0, epochs_run1, ...]

    def budget_header(self):
        return ["epochs", *self.names, *[f"delta_{n}" for n in self.names[1:]]]

    def threshold_header(self):
        return ["threshold", *self.names]

    def to_csv(self) -> tuple[str, str]:
        out = []
        for header, rows in ((self.budget_header(), self.budget_rows), (self.threshold_header(), self.threshold_rows)):
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([["" if v is None else v for v in row] for row in rows])
            out.append(buf.getvalue())
        return out[0], out[1]

    def to_text(self) -> str:
        blocks = []
        for title, header, rows in (
            ("test accuracy by epoch budget", self.budget_header(), self.budget_rows),
            ("epochs to reach test accuracy", self.threshold_header(), self.threshold_rows),
        ):
            cells = [header] + [[_cell(v) for v in row] for row in rows]
            widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
            lines = [title, "  ".join(h.rjust(w) for h, w in zip(header, widths))]
            lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells[1:]]
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:+.4f}" if v < 0 else f"{v:.4f}"
    return str(v)


def load_run(run_dir) -> tuple[dict, list[dict]]:
    run_dir = Path(run_dir)
    try:
        meta = json.loads((run_dir / "summary.json").read_text())
        rows = read_metrics_csv(run_dir / "metrics.csv")
    except FileNotFoundError as exc:
        raise CompareError(f"{run_dir} is not a run directory: {exc.filename} missing") from None
    return meta, rows


def compare(run_dirs, thresholds=DEFAULT_THRESHOLDS, budgets=None) -> Comparison:
    """Accuracy at each epoch budget and epochs-to-accuracy, across runs.

    Deltas are relative to the first run. Runs trained on different data are
    refused.
    """
    if not run_dirs:
        raise CompareError("nothing to compare")
    runs = [load_run(d) for d in run_dirs]
    fingerprints = {meta["dataset_fingerprint"] for meta, _ in runs}
    if len(fingerprints) > 1:
        raise CompareError(
            "runs were trained on different datasets (fingerprints "
            + ", ".join(sorted(fingerprints))
            + "); accuracies are not comparable"
        )
    names = [Path(d).name or str(d) for d in run_dirs]
    accs = [[r["test_acc"] for r in rows if r["status"] == "ok"] for _, rows in runs]
    if budgets is None:
        budgets = range(1, min(len(a) for a in accs) + 1)
    budget_rows = []
    for b in budgets:
        vals = [a[b - 1] if b <= len(a) else None for a in accs]
        deltas = [None if v is None or vals[0] is None else v - vals[0] for v in vals[1:]]
        budget_rows.append([b, *vals, *deltas])
    threshold_rows = [[t, *[epochs_to_threshold(a, t) for a in accs]] for t in thresholds]
    return Comparison(names, budget_rows, threshold_rows)

import json

import pytest

from conftest import small_config
from sparseagent import checkpoint, report
from sparseagent.cli import main
from sparseagent.config import dump


def train_run(tmp_path, name, **overrides):
    cfg = small_config(**overrides)
    dump(cfg, tmp_path / f"{name}.yaml")
    assert main(["train", "--config", str(tmp_path / f"{name}.yaml"), "--out", str(tmp_path / name)]) == 0
    return tmp_path / name


def test_train_outputs(tmp_path, capsys):
    run = train_run(tmp_path, "a", **{"optimizer.name": "agent"})
    assert {p.name for p in run.iterdir()} >= {"metrics.csv", "summary.json", "checkpoint.bin", "config.yaml"}
    meta = json.loads((run / "summary.json").read_text())
    assert meta["epochs_completed"] == 3 and meta["code_version"]["hash"] == report.code_hash()
    assert len((run / "metrics.csv").read_text().splitlines()) == 4
    assert "test acc" in capsys.readouterr().out


def test_cli_resume_matches(tmp_path):
    cfg_path = tmp_path / "c.yaml"
    dump(small_config(epochs=4), cfg_path)
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "full")]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r"), "--stop-after", "2"]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r"), "--resume"]) == 0
    assert (tmp_path / "r" / "metrics.csv").read_bytes() == (tmp_path / "full" / "metrics.csv").read_bytes()


def test_resume_with_other_config_refused(tmp_path, capsys):
    train_run(tmp_path, "a")
    dump(small_config(seed=5), tmp_path / "b.yaml")
    assert main(["train", "--config", str(tmp_path / "b.yaml"), "--out", str(tmp_path / "a"), "--resume"]) == 2
    assert "different config" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("optimizer:\n  name: nope\n")
    assert main(["train", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "x")]) == 2
    assert "optimizer.name" in capsys.readouterr().err


def test_diagnose_and_attack_eval(tmp_path, capsys):
    runs = [train_run(tmp_path, f"s{i}", **{"sparsity.target": s}) for i, s in enumerate((0.0, 0.5))]
    out_csv = tmp_path / "diag.csv"
    args = ["diagnose", "--measure", "variance", "--batch-size", "16", "--out", str(out_csv)]
    for r in runs:
        args += ["--checkpoint", str(r / "checkpoint.bin")]
    assert main(args) == 0
    assert len(out_csv.read_text().splitlines()) == 1 + 2 * 3
    assert main(["attack-eval", "--checkpoint", str(runs[0] / "checkpoint.bin"), "--eps", "8/255",
                 "--iters", "5", "--restarts", "2"]) == 0
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("clean/robust")][0]
    clean, robust = map(float, line.split(":")[1].split("/"))
    assert robust <= clean


def test_compare_self_and_dominating(tmp_path, capsys):
    a = train_run(tmp_path, "a")
    assert main(["compare", str(a), str(a), "--out", str(tmp_path / "cmp")]) == 0
    comp = report.compare([a, a])
    assert all(row[-1] == 0.0 for row in comp.budget_rows)
    assert (tmp_path / "cmp" / "epochs_to_threshold.csv").exists()

    # synthesize a strictly better copy of the run
    better = tmp_path / "better"
    better.mkdir()
    (better / "summary.json").write_text((a / "summary.json").read_text())
    lines = (a / "metrics.csv").read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("test_acc")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        cells[col] = repr(float(cells[col]) * 0.5 + 0.5 + 1e-3)
        rows.append(",".join(cells))
    (better / "metrics.csv").write_text("\n".join([lines[0], *rows]) + "\n")
    comp = report.compare([a, better])
    assert all(row[-1] > 0 for row in comp.budget_rows)


def test_compare_refuses_other_datasets(tmp_path, capsys):
    a = train_run(tmp_path, "a")
    b = train_run(tmp_path, "b", **{"dataset.seed": 9})
    assert main(["compare", str(a), str(b)]) == 2
    assert "different datasets" in capsys.readouterr().err


def test_epochs_to_threshold():
    assert report.epochs_to_threshold([0.2, 0.5, 0.7], 0.5) == 2
    assert report.epochs_to_threshold([0.2, 0.3], 0.5) is None
    assert report.epochs_to_threshold([3.0, 1.0, 0.5], 1.0, higher_is_better=False) == 2


def test_module_entry_point():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "sparseagent", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "attack-eval" in out.stdout

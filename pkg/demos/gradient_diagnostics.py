"""How noisy are minibatch gradients at different sparsity levels?

Trains one small model per sparsity level, then measures at the final
weights (active coordinates only):

* the variance of minibatch gradients across an epoch of batches,
* the correlation between the full gradient before and after a small
  Gaussian nudge to the active weights.

    python demos/gradient_diagnostics.py
"""

from sparseagent import ExperimentConfig, run_experiment
from sparseagent.diagnostics import sweep
from sparseagent.train import build_datasets, build_model

levels = (0.0, 0.5, 0.9)
cfg = ExperimentConfig().replace(**{
    "epochs": 20,
    "batch_size": 32,
    "dataset.n_train": 512,
    "dataset.n_test": 256,
    "dataset.dim": 16,
    "dataset.n_classes": 4,
    "dataset.separation": 1.0,
    "model.hidden": [64],
    "optimizer.name": "sgd",
})

checkpoints = []
for s in levels:
    res = run_experiment(cfg.replace(**{"sparsity.target": s}))
    checkpoints.append((res.params, res.mask))
    print(f"trained sparsity {s:.1f}: test acc {res.metrics[-1].test_acc:.4f}")

train, _ = build_datasets(cfg)
model = build_model(cfg, train)
for measure in ("variance", "correlation"):
    report = sweep(model, checkpoints, train, measure, replicates=3, batch_size=32)
    print(f"\n{measure}")
    for level, value in report.aggregate().items():
        print(f"  sparsity {level:.2f}: {value:.5g}")

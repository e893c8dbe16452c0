"""Adversarial training (PGD-AT) versus TRADES on a sparse model.

Inputs live in [0, 1]; the attack budget is L-inf 0.05, both during
training and for the final PGD-20 evaluation with 3 restarts.

    python demos/adversarial_training.py
"""

from sparseagent import AttackConfig, ExperimentConfig, RngStream, robust_accuracy, run_experiment
from sparseagent.train import build_datasets, build_model

cfg = ExperimentConfig().replace(**{
    "epochs": 10,
    "batch_size": 32,
    "dataset.n_train": 256,
    "dataset.n_test": 128,
    "dataset.dim": 16,
    "dataset.n_classes": 3,
    "dataset.separation": 0.8,
    "objective.attack.epsilon": 0.05,
    "model.hidden": [32],
    "sparsity.target": 0.8,
    "optimizer.name": "agent",
    "objective.eval_every": 100,  # only at the end
})
attack = AttackConfig(epsilon=0.05, iterations=20, restarts=3)

for objective in ("standard", "at", "trades"):
    run = cfg.replace(**{"objective.name": objective})
    res = run_experiment(run)
    _, test = build_datasets(run)
    model = build_model(run, test)
    clean = model.accuracy(res.params, test)
    robust = robust_accuracy(model, res.params, test, attack, RngStream(0, 5))
    print(f"{objective:>8}: clean {clean:.3f}  robust {robust:.3f}")

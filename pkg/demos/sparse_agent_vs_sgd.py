"""Train a 90%-sparse MLP with plain SGD and with AGENT, then compare curves.

Both runs share the seed, so they start from the same weights and mask and
see minibatches in the same order; only the gradient estimator differs.

    python demos/sparse_agent_vs_sgd.py [epochs]
"""

import sys

from sparseagent import ExperimentConfig, run_experiment

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30

base = ExperimentConfig().replace(**{
    "epochs": epochs,
    "batch_size": 32,
    "dataset.n_train": 512,
    "dataset.n_test": 512,
    "dataset.dim": 16,
    "dataset.n_classes": 4,
    "dataset.separation": 1.0,
    "dataset.label_noise": 0.1,
    "model.hidden": [64],
    "sparsity.target": 0.9,
    "sparsity.rule": "SET",
})

curves = {}
for name in ("sgd", "agent"):
    result = run_experiment(base.replace(**{"optimizer.name": name}))
    curves[name] = result.metrics
    last = result.metrics[-1]
    print(f"{name:>6}: train loss {last.full_train_loss:.4f}  test acc {last.test_acc:.4f}")

print("\nepoch   sgd acc  agent acc   agent c-hat")
for a, b in zip(curves["sgd"], curves["agent"]):
    c = "-" if b.c_hat is None else f"{b.c_hat:.3f}"
    print(f"{a.epoch:5d}   {a.test_acc:7.4f}  {b.test_acc:9.4f}   {c:>7}")

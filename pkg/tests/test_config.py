import json

import pytest

from sparseagent.config import ConfigError, ExperimentConfig, ScheduleConfig, dump, from_dict, load


def test_defaults_validate():
    cfg = from_dict({})
    assert cfg.batch_size == 128 and cfg.optimizer.gamma == 0.1 and cfg.optimizer.alpha == 0.5
    assert cfg.lr_schedule.milestones == (50, 100)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        from_dict({"optimizer": {"nmae": "sgd"}})
    assert info.value.field == "optimizer.nmae"


@pytest.mark.parametrize(
    "raw,field",
    [
        ({"optimizer": {"name": "lbfgs"}}, "optimizer.name"),
        ({"optimizer": {"gamma": 0.0}}, "optimizer.gamma"),
        ({"optimizer": {"lr": "fast"}}, "optimizer.lr"),
        ({"sparsity": {"target": 1.0}}, "sparsity.target"),
        ({"epochs": -1}, "epochs"),
        ({"objective": {"attack": {"restarts": 0}}}, "objective.attack"),
        ({"dataset": {"kind": "csv"}}, "dataset.train"),
        ({"lr_schedule": {"milestones": [100, 50]}}, "lr_schedule.milestones"),
    ],
)
def test_invalid_fields_named(raw, field):
    with pytest.raises(ConfigError) as info:
        from_dict(raw)
    assert info.value.field == field


def test_lr_schedule_right_continuous():
    s = ScheduleConfig()
    assert [s.lr_at(0.1, e) for e in (0, 49)] == [0.1, 0.1]
    assert s.lr_at(0.1, 50) == pytest.approx(0.01)
    assert s.lr_at(0.1, 100) == pytest.approx(0.001)
    assert ScheduleConfig((2,), (0.5,)).lr_at(1.0, 3) == 0.5


def test_yaml_and_json_round_trip(tmp_path):
    cfg = ExperimentConfig().replace(**{"optimizer.name": "svrg", "model.hidden": [8, 4], "seed": 12})
    for name in ("c.yaml", "c.json"):
        dump(cfg, tmp_path / name)
        assert load(tmp_path / name) == cfg
    assert json.loads((tmp_path / "c.json").read_text())["seed"] == 12


def test_yaml_sections(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 3\noptimizer:\n  name: adam\n  lr: 0.001\nsparsity:\n  target: 0.9\n")
    cfg = load(tmp_path / "c.yaml")
    assert (cfg.seed, cfg.optimizer.name, cfg.sparsity.target) == (3, "adam", 0.9)


def test_digest_tracks_content():
    a = ExperimentConfig()
    assert a.digest() == ExperimentConfig().digest()
    assert a.digest() != a.replace(seed=1).digest()

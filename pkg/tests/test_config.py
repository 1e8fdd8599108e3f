import json

import pytest

from tmd.config import ConfigError, ExperimentConfig, PRESET_ENVS, PRESET_REGIONS, PRESET_TASKS, EnvironmentConfig
from tmd.oracle import d_sd_star


def test_defaults_roundtrip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg


@pytest.mark.parametrize(
    "doc, needle",
    [
        ({"trian": {}}, "top-level"),
        ({"train": {"stpes": 10}}, "stpes"),
        ({"tmd": {"zeta": -1}}, "zeta"),
        ({"model": {"compnents": 4}}, "compnents"),
        ({"train": {"method": "sac"}}, "method"),
        ({"eval": {"extraction": "random"}}, "extraction"),
        ({"ablate": {"variants": ["no-everything"]}}, "no-everything"),
        ({"dataset": []}, "object"),
    ],
)
def test_bad_documents_are_rejected(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_dict(doc)


def test_config_error_is_a_value_error():
    assert issubclass(ConfigError, ValueError)


def test_load_resolves_paths_against_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    path = tmp_path / "sub" / "c.json"
    path.write_text(json.dumps({"dataset": {"path": "d.jsonl"}, "train": {"out_dir": "/abs/run"}}))
    cfg = ExperimentConfig.load(path)
    assert cfg.dataset_path == tmp_path / "sub" / "d.jsonl"
    assert str(cfg.out_dir) == "/abs/run"


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(bad)


def test_every_preset_builds_and_its_tasks_resolve():
    for name in PRESET_ENVS:
        gw = EnvironmentConfig(preset=name).build()
        assert gw.n_states > 0
    open7 = ExperimentConfig.from_dict({"environment": {"preset": "open7"}})
    gw = open7.environment.build()
    assert gw.n_states == 49
    for tasks in ("quadrant-cross", "quadrant-local"):
        open7.eval.tasks = tasks
        assert len(open7.eval.task_list(gw)) == len(PRESET_TASKS[tasks])


def test_teleport_layout():
    gw = EnvironmentConfig(preset="teleport7").build()
    # column x = 3: five walls, a teleport square (not a state) and the free gap at the top
    assert gw.n_states == 49 - 5 - 1
    assert (3, 0) in gw.index and (3, 3) not in gw.index
    left, right = gw.state((2, 3)), gw.state((4, 3))
    p = gw.mdp.transition[left, 3]  # move right into the teleport square
    assert p[right] == pytest.approx(0.4) and p[gw.state((0, 0))] == pytest.approx(0.6)
    assert d_sd_star(gw.mdp).values[left, right] < float("inf")


def test_explicit_layout():
    env = EnvironmentConfig(width=3, height=2, walls=[[1, 0]], teleport_cells=[{"cell": [1, 1], "to": [[[0, 0], 1.0]]}])
    gw = env.build()
    assert gw.n_states == 4
    with pytest.raises(ConfigError):
        EnvironmentConfig(preset="open7", width=3).build()
    with pytest.raises(ConfigError):
        EnvironmentConfig().build()
    with pytest.raises(ConfigError):
        EnvironmentConfig(width=3, height=1, walls=[[1, 0]]).build()  # disconnected


def test_region_presets_cover_the_grid():
    gw = EnvironmentConfig(preset="open7").build()
    cfg = ExperimentConfig.from_dict({"dataset": {"regions": "quadrants7", "behavior": "region-confined-walk"}})
    spec = cfg.dataset.dataset_spec(gw)
    covered = set().union(*map(set, spec.regions))
    assert covered == set(range(49))
    assert len(PRESET_REGIONS["bands7"]) == 2
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dataset": {"regions": "nowhere"}}).dataset.dataset_spec(gw)


def test_task_cells_must_be_free():
    cfg = ExperimentConfig.from_dict({"environment": {"preset": "teleport7"}, "eval": {"tasks": [[[3, 1], [0, 0]]]}})
    with pytest.raises(ConfigError, match="free"):
        cfg.eval.task_list(cfg.environment.build())

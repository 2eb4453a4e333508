import json

import pytest

from poseadv.config import DEFAULTS, RunConfig, load_config
from poseadv.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.to_dict() == DEFAULTS
    assert cfg["eval"]["tau_iou"] == 0.5 and cfg["eval"]["tau_conf"] == 0.5
    assert cfg.pso.n_particles == 50 and cfg.pso.iterations == 30
    assert cfg.adam.iterations == 300 and cfg.adam.batch_size == 100
    assert cfg.generator.kind == "smooth"


def test_partial_file_merges(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "pso": {"iterations": 2}}))
    cfg = load_config(p)
    assert cfg.seed == 4 and cfg.pso.iterations == 2 and cfg.pso.n_particles == 50
    assert cfg.base_dir == tmp_path
    assert json.loads(cfg.to_json())["pso"]["iterations"] == 2
    assert cfg.with_overrides(seed=9).seed == 9


def test_relative_paths_resolve_against_file(tmp_path):
    (tmp_path / "g.json").write_text("{}")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"paths": {"gmm": "g.json"}}))
    assert load_config(p).path("g.json") == tmp_path / "g.json"


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"pso": {"swarm": 3}},
    {"pso": 3},
    {"eval": {"tau_iou": 0.0}},
    {"eval": {"tau_conf": 1.5}},
    {"latent_bounds": [2, 1]},
    {"detectors": []},
    {"detectors": [{"kind": "yolo"}]},
    {"detectors": [{"kind": "toy", "colour": 1}]},
    {"paths": {"gmm": "missing.json"}},
    {"paths": {"poses": ["missing.json"]}},
    {"generator": {"kind": "diffusion"}},
    {"adam": {"lr": -1}},
])
def test_invalid(tmp_path, data):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    with pytest.raises(ConfigError):
        load_config(p)


def test_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")

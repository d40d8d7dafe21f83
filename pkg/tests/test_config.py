import json

import numpy as np
import pytest

from twoscale.config import ScenarioConfig, field_function, macro_source, micro_source
from twoscale.exceptions import ConfigError


def test_defaults_validate():
    ScenarioConfig().validate()


def test_json_roundtrip(tmp_path):
    cfg = ScenarioConfig(dt=0.05, theta0={"kind": "bump", "center": [0.3, 0.4], "radius": 0.2})
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    back = ScenarioConfig.load(p)
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_paper_scale_preset(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dt": 0.05}))
    cfg = ScenarioConfig.load(p, paper_scale=True)
    assert (cfg.T_end, cfg.H_M, cfg.H_m, cfg.H_cell, cfg.dt) == (10.0, 0.05, 0.06, 5e-4, 0.05)


@pytest.mark.parametrize("data,path", [
    ({"dt": -1}, "dt"),
    ({"r": 0.5}, "r"),
    ({"H_m": 0.3}, "H_m"),
    ({"N": 1}, "N"),
    ({"scheme": "cubic"}, "scheme"),
    ({"kappa": [[1, 0]]}, "kappa"),
    ({"bogus": 1}, "bogus"),
    ({"source": {"kind": "laser"}}, "source.kind"),
    ({"source": {"kind": "constant"}}, "source.value"),
    ({"theta0": {"kind": "bump", "radius": -1}}, "theta0"),
    ({"h_min": 0.1, "h_max": 0.0}, "h_max"),
])
def test_validation_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_dict(data)
    assert path in [p for p, _ in exc.value.errors]


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        ScenarioConfig.load(bad)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict([1, 2])


def test_field_functions():
    pts = np.array([[0.5, 0.5], [0.0, 0.0]])
    assert field_function(2.0)(pts).tolist() == [2.0, 2.0]
    bump = field_function({"kind": "bump", "amplitude": 3.0})
    assert bump(pts).tolist() == [3.0, 0.0]


def test_sources():
    assert macro_source({"kind": "zero"}) is None
    assert micro_source({"kind": "zero"}) is None
    F = macro_source({"kind": "constant", "value": 2.0})
    assert F(np.zeros((3, 2)), 0.0).tolist() == [2.0] * 3
    f = micro_source({"kind": "constant", "value": -1.0})
    assert f(np.zeros((2, 3, 2)), 1.0).shape == (2, 3)

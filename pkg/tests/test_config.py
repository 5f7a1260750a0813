import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from reflgame.config import ConfigError, ExperimentConfig, load_config, parse_config

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.json"))


def _base(**over):
    raw = {"spec": {"name": "heat"}}
    raw.update(over)
    return raw


def test_minimal_config_uses_defaults():
    cfg = parse_config(_base())
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.time.steps == 100 and cfg.lattice.kind == "trinomial" and cfg.nash.envelope_tol == 0.1
    assert cfg.time_grid().steps == 100
    assert cfg.build_spec().name == "heat"


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.source == str(path)
    # to_dict drops only the source and parses back to the same config
    again = parse_config(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_missing_spec():
    with pytest.raises(ConfigError, match="missing required section 'spec'"):
        parse_config({"time": {"steps": 10}})


@pytest.mark.parametrize("raw, match", [
    ({"foo": 1}, "unknown top-level"),
    ({"time": {"stepz": 10}}, r"section 'time': unknown field\(s\) \['stepz'\]"),
    ({"time": {"steps": 10.5}}, "'time.steps': expected an integer"),
    ({"time": {"steps": True}}, "'time.steps': expected an integer"),
    ({"time": {"T": "one"}}, "'time.T': expected a number"),
    ({"time": {"steps": 0}}, "'time.steps': must be positive"),
    ({"space": {"dx": -0.1}}, "'space.dx': must be positive"),
    ({"game": {"lsmc": 1}}, "'game.lsmc': expected true/false"),
    ({"game": {"mode": "upper"}}, "'game.mode'"),
    ({"game": {"j": 3}}, "'game.j'"),
    ({"lattice": {"kind": "quadrinomial"}}, "'lattice.kind'"),
    ({"lattice": {"dx": "fine"}}, "'lattice.dx': expected a number"),
    ({"space": {"x_min": 1.0, "x_max": 0.0}}, "x_min < x_max"),
    ({"nash": {"ladder": [0.1, -0.1]}}, "'nash.ladder'"),
    ({"nash": {"ladder": 0.1}}, "'nash.ladder': expected a list"),
    ({"solver": {"penalties": [-1]}}, "'solver.penalties'"),
    ({"time": []}, "section 'time' must be an object"),
    ({"x0": "zero"}, "'x0': expected a number"),
])
def test_field_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(_base(**raw))


def test_unknown_catalog_entry():
    with pytest.raises(ConfigError, match="unknown catalog entry 'nope'"):
        parse_config({"spec": {"name": "nope"}})


def test_bad_spec_params_are_config_errors():
    with pytest.raises(ConfigError, match="spec.params"):
        parse_config({"spec": {"name": "heat", "params": {"no_such_param": 1}}})
    with pytest.raises(ConfigError, match="spec.params"):
        parse_config({"spec": {"name": "decoupled-quadratic-costs", "params": {"obstacle": 0.5}}})


def test_json_syntax_error_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "spec": {"name": "heat"},\n  "time": {"steps": 10,}\n}\n')
    with pytest.raises(ConfigError, match=r"line 3, column"):
        load_config(p)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_integers_accepted_for_floats():
    cfg = parse_config(_base(time={"T": 2}, x0=1))
    assert isinstance(cfg.time.T, float) and cfg.time.T == 2.0 and cfg.x0 == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10_000), st.floats(0.01, 10.0), st.integers(0, 2 ** 31))
def test_round_trip_through_json(steps, T, seed):
    raw = _base(time={"steps": steps, "T": T}, seed=seed)
    cfg = parse_config(json.loads(json.dumps(raw)))
    assert cfg.time.steps == steps and cfg.time.T == T and cfg.seed == seed
    assert parse_config(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()

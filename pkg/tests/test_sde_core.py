import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reflgame.catalog import build_spec
from reflgame.sde_core import (ControlPath, ControlSet, GameSpec, ObstacleViolation, SimulationError,
                               SpecError, TimeGrid, brownian_increments, load_bundle, moment_report,
                               save_bundle, shift_spec, simulate_feedback, simulate_forward, validate_spec)


def _constant(mu=0.3, sigma=0.7):
    return build_spec("constant-drift", mu=mu, sigma=sigma)


# -- grids and controls ------------------------------------------------------
def test_time_grid_basics():
    g = TimeGrid.uniform(0.0, 2.0, 8)
    assert g.steps == 8 and g.t0 == 0.0 and g.T == 2.0
    assert np.allclose(g.dt, 0.25) and g.mesh == pytest.approx(0.25)
    assert g.subgrid(2, 5).steps == 3
    assert g.coarsen(4).steps == 2
    with pytest.raises(ValueError):
        g.coarsen(3)


@pytest.mark.parametrize("points", [[0.0], [0.0, 0.0, 1.0], [1.0, 0.5]])
def test_time_grid_rejects_bad_points(points):
    with pytest.raises(ValueError):
        TimeGrid(points)


def test_contraction_check():
    g = TimeGrid.uniform(0.0, 1.0, 10)
    g.check_contraction(5.0)
    with pytest.raises(SpecError, match="refine"):
        g.check_contraction(10.0)


def test_control_set_validation():
    cs = ControlSet.from_values("U", [-1.0, 0.0, 1.0])
    assert len(cs) == 3 and cs.dim == 1
    assert cs.take(2, 4).shape == (4, 1)
    with pytest.raises(ValueError):
        ControlSet.from_values("U", [])
    with pytest.raises(ValueError, match="duplicate"):
        ControlSet.from_values("U", [1.0, 1.0])


def test_control_path_checks():
    cs = ControlSet.from_values("U", [0.0, 1.0])
    ControlPath.constant(1, 5).check(cs, 5)
    with pytest.raises(ValueError, match="intervals"):
        ControlPath.constant(1, 4).check(cs, 5)
    with pytest.raises(ValueError, match="leaves"):
        ControlPath.constant(2, 5).check(cs, 5)
    per_path = ControlPath(np.zeros((3, 5), dtype=int))
    assert per_path.at(2, 3).shape == (3,)
    with pytest.raises(ValueError, match="path count"):
        per_path.check(cs, 5, paths=4)


def test_spec_wrappers_normalize_shapes(decoupled):
    x = np.linspace(-1, 1, 7)
    assert decoupled.drift(0.0, x, 2, 0).shape == (7, 1)
    assert np.allclose(decoupled.drift(0.0, x, 2, 0), 0.0)  # u = 1, v = -1
    assert decoupled.vol(0.0, x, 0, 0).shape == (7, 1, 1)
    assert decoupled.driver(1, 0.0, x, 0.0, 0.0, 0, 1).shape == (7,)
    assert decoupled.terminal(1, 0.5).shape == (1,)
    assert len(decoupled.control_pairs) == 9


def test_spec_needs_two_players():
    f = lambda *a: 0.0
    with pytest.raises(ValueError):
        GameSpec(1, 1, f, f, (f,), (f, f), (f, f), ControlSet.from_values("U", [0]),
                 ControlSet.from_values("V", [0]))


def test_shift_spec_moves_only_requested_data(decoupled):
    s = shift_spec(decoupled, phi=0.5, f=-0.25, players=(1,))
    x = np.array([0.1, 0.4])
    assert np.allclose(s.terminal(1, x), decoupled.terminal(1, x) + 0.5)
    assert np.allclose(s.terminal(2, x), decoupled.terminal(2, x))
    assert np.allclose(s.driver(1, 0.0, x, 0.0, 0.0, 1, 1), decoupled.driver(1, 0.0, x, 0.0, 0.0, 1, 1) - 0.25)
    assert np.allclose(s.obstacle(1, 0.0, x), decoupled.obstacle(1, 0.0, x))
    assert s.fingerprint() != decoupled.fingerprint()


# -- Brownian increments and simulation ----------------------------------
def test_increments_are_keyed_by_seed_and_path():
    g = TimeGrid.uniform(0.0, 1.0, 20)
    small = brownian_increments(g, 1, 10, seed=3)
    big = brownian_increments(g, 1, 700, seed=3)
    assert np.array_equal(small, big[:10])
    assert not np.array_equal(small, brownian_increments(g, 1, 10, seed=4))


def test_increment_moments():
    g = TimeGrid.uniform(0.0, 1.0, 50)
    dB = brownian_increments(g, 2, 4000, seed=0)
    z = dB / np.sqrt(g.dt)[None, :, None]
    assert abs(z.mean()) < 5 / math.sqrt(z.size)
    assert abs(z.var() - 1.0) < 5 * math.sqrt(2 / z.size)


def test_constant_coefficients_exact_marginals():
    spec = _constant(mu=0.3, sigma=0.7)
    g = TimeGrid.uniform(0.0, 1.0, 10)
    zero = ControlPath.constant(0, 10)
    b = simulate_forward(spec, g, 0.5, zero, zero, 20000, seed=1)
    xT = b.states[:, -1, 0]
    assert abs(xT.mean() - 0.8) < 5 * 0.7 / math.sqrt(20000)
    assert abs(xT.var() - 0.49) < 5 * 0.49 * math.sqrt(2 / 20000)
    # Euler is exact here: X_T = x0 + mu T + sigma B_T, path by path
    assert np.allclose(xT, 0.5 + 0.3 + 0.7 * b.increments[:, :, 0].sum(axis=1))


def test_simulation_is_deterministic(decoupled):
    g = TimeGrid.uniform(0.0, 1.0, 20)
    u, v = ControlPath.constant(2, 20), ControlPath.constant(0, 20)
    a = simulate_forward(decoupled, g, 0.0, u, v, 300, seed=5)
    b = simulate_forward(decoupled, g, 0.0, u, v, 300, seed=5)
    assert np.array_equal(a.states, b.states)
    assert np.all(a.u_idx == 2) and np.all(a.v_idx == 0)


def test_feedback_policy_is_recorded(decoupled):
    g = TimeGrid.uniform(0.0, 1.0, 10)
    policy = lambda i, t, X: (np.where(X[:, 0] > 0, 0, 2), np.full(X.shape[0], 1))
    b = simulate_feedback(decoupled, g, 0.0, policy, 200, seed=2)
    x = b.states[:, :-1, 0]
    assert np.array_equal(b.u_idx, np.where(x > 0, 0, 2))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_raises_simulation_error():
    f = lambda t, x, y, z, u, v: np.zeros(x.shape[0])
    phi = lambda x: np.zeros(x.shape[0])
    h = lambda t, x: np.full(x.shape[0], -1.0)
    spec = GameSpec(1, 1, lambda t, x, u, v: 1e200 * x ** 2, lambda t, x, u, v: np.ones((x.shape[0], 1, 1)),
                    (f, f), (phi, phi), (h, h), ControlSet.from_values("U", [0]), ControlSet.from_values("V", [0]))
    g = TimeGrid.uniform(0.0, 1.0, 10)
    zero = ControlPath.constant(0, 10)
    with pytest.raises(SimulationError) as err:
        simulate_forward(spec, g, 1.0, zero, zero, 5, seed=0)
    assert err.value.step >= 0


def test_moment_report_and_paired_gap():
    spec = _constant()
    g = TimeGrid.uniform(0.0, 1.0, 20)
    zero = ControlPath.constant(0, 20)
    a = simulate_forward(spec, g, 0.0, zero, zero, 2000, seed=1)
    b = simulate_forward(spec, g, 0.1, zero, zero, 2000, seed=1)
    rep = moment_report(a, 2, paired=b)
    assert rep.moments[0] == 0.0
    assert rep.mean_of_sup >= rep.sup_of_mean
    # same noise, initial states 0.1 apart, additive dynamics: the gap stays 0.1
    assert rep.max_gap == pytest.approx(0.1)
    with pytest.raises(ValueError):
        moment_report(a, 3)


def test_bundle_round_trip(tmp_path, decoupled):
    g = TimeGrid.uniform(0.0, 1.0, 6)
    b = simulate_forward(decoupled, g, 0.2, ControlPath.constant(1, 6), ControlPath.constant(2, 6), 9, seed=4)
    files = save_bundle(b, tmp_path / "paths")
    assert all(f.exists() for f in files)
    c = load_bundle(tmp_path / "paths")
    assert np.array_equal(b.states, c.states) and np.array_equal(b.increments, c.increments)
    assert np.array_equal(b.u_idx, c.u_idx) and np.array_equal(b.v_idx, c.v_idx)
    assert c.seed == 4 and np.array_equal(c.grid.points, g.points)


# -- validation ------------------------------------------------------------
@pytest.mark.parametrize("name", ["constant-drift", "additive-control", "multiplicative-coupled",
                                  "decoupled-quadratic-costs", "american-put",
                                  "zero-sum-absolute-terminal", "heat", "polynomial"])
def test_catalog_specs_validate(name):
    rep = validate_spec(build_spec(name))
    assert rep.passed, rep.failures


def test_terminal_below_obstacle_is_rejected():
    spec = build_spec("polynomial", Phi1=[0.0], h1=[0.5])
    with pytest.raises(ObstacleViolation):
        validate_spec(spec)


def test_understated_lipschitz_is_reported():
    spec = build_spec("polynomial", Phi1=[0.0, 3.0], lipschitz=1.0)
    rep = validate_spec(spec)
    assert not rep.passed
    assert any("Phi1" in f for f in rep.failures)


def test_understated_bound_is_reported():
    spec = build_spec("additive-control")
    object.__setattr__(spec, "bounds", {**spec.bounds, "b": 1.0})
    rep = validate_spec(spec)
    assert any("sup-bound of b" in f for f in rep.failures)


def test_y_lipschitz_is_checked():
    spec = build_spec("american-put")
    assert spec.contraction_constant == pytest.approx(0.05)
    object.__setattr__(spec, "y_lipschitz", 0.01)
    assert not validate_spec(spec).passed


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(0.1, 2.0), st.integers(1, 40), st.integers(0, 2 ** 31))
def test_constant_drift_mean_property(mu, sigma, steps, seed):
    spec = _constant(mu, sigma)
    g = TimeGrid.uniform(0.0, 1.0, steps)
    zero = ControlPath.constant(0, steps)
    b = simulate_forward(spec, g, 0.0, zero, zero, 64, seed=seed)
    drift = b.states[:, -1, 0] - sigma * b.increments[:, :, 0].sum(axis=1)
    assert np.allclose(drift, mu, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12))
def test_time_grid_from_increments(steps):
    pts = np.concatenate([[0.0], np.cumsum(steps)])
    g = TimeGrid(pts)
    assert g.steps == len(steps)
    assert g.mesh == pytest.approx(max(steps))
    assert np.allclose(np.diff(g.points), steps)

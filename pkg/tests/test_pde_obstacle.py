import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from reflgame import instances, oracles, pde_obstacle
from reflgame.catalog import build_spec
from reflgame.pde_obstacle import (CFLError, OrderingPreconditionError, SpaceGrid, ValueGrid, cfl_limit,
                                   hamiltonian, isaacs_scan, minimax, residual_check, sample_points,
                                   scheme_comparison_test, solve_obstacle_isaacs)
from reflgame.sde_core import TimeGrid, shift_spec


def _brute(values, mode, maximizer):
    """Reference sup-inf / inf-sup by explicit loops."""
    tab = values if maximizer == "u" else values.transpose(1, 0, 2)
    ku, kv, m = tab.shape
    out = np.empty(m)
    for r in range(m):
        if mode == "minus":
            out[r] = max(min(tab[a, c, r] for c in range(kv)) for a in range(ku))
        else:
            out[r] = min(max(tab[a, c, r] for a in range(ku)) for c in range(kv))
    return out


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-10, 10)),
       st.sampled_from(["minus", "plus"]), st.sampled_from(["u", "v"]))
def test_minimax_matches_brute_force(values, mode, maximizer):
    val, ia, ic = minimax(values, mode, maximizer)
    assert np.allclose(val, _brute(values, mode, maximizer))
    # the returned pair attains the value
    assert np.allclose(values[ia, ic, np.arange(values.shape[2])], val)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-10, 10)), st.sampled_from(["u", "v"]))
def test_minimax_inequality(values, maximizer):
    lo = minimax(values, "minus", maximizer)[0]
    hi = minimax(values, "plus", maximizer)[0]
    assert np.all(hi >= lo)


def test_minimax_ties_pick_lowest_index():
    val, ia, ic = minimax(np.zeros((3, 3, 2)), "minus", "u")
    assert np.all(ia == 0) and np.all(ic == 0)


def test_additive_hamiltonian_example():
    spec = build_spec("additive-control")  # b = u + v, f = 0
    h = hamiltonian(spec, 1, 0.0, [0.0], 0.0, [2.0], [[3.0]])
    assert h.minus == pytest.approx(1.5) and h.plus == pytest.approx(1.5) and h.gap == 0.0


@pytest.mark.parametrize("p", [1.0, -0.5, 2.5])
def test_uv_hamiltonian_gap_is_twice_abs_p(p):
    spec = build_spec("multiplicative-coupled")
    h = hamiltonian(spec, 1, 0.0, [0.3], 0.0, [p], [[0.0]])
    assert h.minus == pytest.approx(-abs(p)) and h.plus == pytest.approx(abs(p))
    assert h.gap == pytest.approx(2 * abs(p))


def test_isaacs_scan_on_catalog():
    dec = build_spec("decoupled-quadratic-costs")
    rep = isaacs_scan(dec, sample_points(dec, 2000, seed=1))
    assert rep.satisfied and rep.max_gap <= 1e-9 and set(rep.by_player) == {1, 2}
    uv = build_spec("multiplicative-coupled")
    bad = isaacs_scan(uv, sample_points(uv, 2000, seed=1))
    assert not bad.satisfied and bad.min_gap >= 0
    assert bad.worst_point["gap"] == pytest.approx(2 * abs(bad.worst_point["p"][0]))


def test_sample_points_shapes():
    pts = sample_points(build_spec("heat"), 50, seed=0, T=2.0, time_levels=5)
    assert pts["x"].shape == (50, 1) and pts["A"].shape == (50, 1, 1)
    assert set(np.unique(pts["t"])) <= set(np.linspace(0, 2, 5))
    assert np.allclose(pts["A"], pts["A"].transpose(0, 2, 1))


# -- scheme ---------------------------------------------------------------------
def test_space_grid():
    sg = SpaceGrid.with_spacing(-1.0, 1.0, 0.25)
    assert sg.num == 9 and sg.dx == pytest.approx(0.25)
    assert sg.nodes[0] == -1.0 and sg.nodes[-1] == 1.0


def test_cfl_violation_raises():
    spec = build_spec("heat")
    sg = SpaceGrid.with_spacing(-3, 3, 0.05)
    with pytest.raises(CFLError):
        solve_obstacle_isaacs(spec, 1, "minus", TimeGrid.uniform(0, 1, 10), sg)


def test_cfl_limit_formula():
    assert cfl_limit(1.0, 0.0, 0.1) == pytest.approx(0.01)
    assert cfl_limit(1.0, 2.0, 0.1) == pytest.approx(0.01 / 1.2)


def test_heat_solution_matches_closed_form():
    sigma = 1.0
    spec = build_spec("heat", sigma=sigma)
    sg = SpaceGrid.with_spacing(-6.0, 6.0, 0.02)
    tg = TimeGrid.uniform(0.0, 1.0, 2500)
    vg = solve_obstacle_isaacs(spec, 1, "minus", tg, sg)
    ok = vg.trusted(0)
    exact = np.array([oracles.heat_cosine(0.0, x, 1.0, sigma) for x in vg.xs])
    err = np.abs(vg.values[0] - exact)
    # the zero-curvature boundary leaks a little into the edge of the trusted band
    assert err[ok].max() < 0.01
    assert err[np.abs(vg.xs) <= 3.0].max() < 5e-4
    assert residual_check(vg, spec, trusted_only=True) < 1e-10


def test_american_put_pde_near_tree():
    spec = build_spec("american-put")
    lk = math.log(100.0)
    sg = SpaceGrid.with_spacing(lk - 2.0, lk + 2.0, 0.01)
    tg = TimeGrid.uniform(0.0, 1.0, 2500)
    vg = solve_obstacle_isaacs(spec, 1, "minus", tg, sg)
    assert abs(float(vg.value_at(0, lk)) - 6.089) < 0.05
    assert all(np.all(vg.values[i] >= spec.obstacle(1, t, vg.xs) - 1e-12) for i, t in enumerate(vg.times))


def test_boundary_rows_are_monotone():
    # expanding the value on the right boundary must not create mass outside [min, max]
    spec = build_spec("additive-control", payoff="linear")
    sg = SpaceGrid.with_spacing(-1.0, 1.0, 0.1)
    tg = TimeGrid.uniform(0.0, 0.5, 200)
    vg = solve_obstacle_isaacs(spec, 1, "minus", tg, sg)
    assert vg.values.max() <= 1.0 + 1e-12 and vg.values.min() >= -1.0 - 1e-12


def test_value_grid_csv_round_trip(tmp_path):
    spec = build_spec("zero-sum-absolute-terminal")
    sg = SpaceGrid.with_spacing(-2.0, 2.0, 0.1)
    tg = TimeGrid.uniform(0.0, 0.5, 100)
    vg = solve_obstacle_isaacs(spec, 2, "plus", tg, sg)
    files = vg.to_csv(tmp_path / "w.csv")
    assert all(f.exists() for f in files)
    back = ValueGrid.from_csv(tmp_path / "w.csv")
    assert np.array_equal(back.values, vg.values) and back.j == 2 and back.mode == "plus"
    assert back.provenance == "pde" and back.spec_hash == spec.fingerprint()


def test_zero_sum_values_are_antisymmetric():
    spec = build_spec("zero-sum-absolute-terminal")
    sg = SpaceGrid.with_spacing(-3.0, 3.0, 0.1)
    tg = TimeGrid.uniform(0.0, 0.5, 100)
    w1 = solve_obstacle_isaacs(spec, 1, "minus", tg, sg)
    u2 = solve_obstacle_isaacs(spec, 2, "plus", tg, sg)
    # with Phi_2 = -Phi_1, sup_v inf_u of -J_1 is minus inf_v sup_u of J_1
    w1_upper = solve_obstacle_isaacs(spec, 1, "plus", tg, sg)
    assert np.allclose(u2.values, -w1.values, atol=1e-12) or np.allclose(u2.values, -w1_upper.values, atol=1e-12)


# -- comparison -----------------------------------------------------------------
@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["minus", "plus"]))
def test_scheme_comparison_property(seed, mode):
    rng = np.random.default_rng(seed)
    base = instances.random_polynomial_spec(rng)
    a, b = instances.ordered_pair(base, rng, equal_obstacle=False)
    sg = SpaceGrid.with_spacing(-2.0, 2.0, 0.2)
    smax, bmax = pde_obstacle.coefficient_sup(base, TimeGrid.uniform(0, 1, 4), sg)
    tg = TimeGrid.uniform(0.0, 1.0, int(math.ceil(1.0 / cfl_limit(smax, bmax, sg.dx))))
    rep = scheme_comparison_test(a, b, 1, mode, tg, sg)
    assert rep.violations == 0 and rep.max_excess <= 1e-12


def test_scheme_comparison_rejects_unordered_data():
    spec = build_spec("zero-sum-absolute-terminal")
    sg = SpaceGrid.with_spacing(-2.0, 2.0, 0.2)
    tg = TimeGrid.uniform(0.0, 1.0, 50)
    higher = shift_spec(spec, phi=0.1)
    with pytest.raises(OrderingPreconditionError, match="Phi"):
        scheme_comparison_test(higher, spec, 1, "minus", tg, sg)
    with pytest.raises(OrderingPreconditionError, match="dynamics"):
        scheme_comparison_test(spec, build_spec("zero-sum-absolute-terminal", U=[-2.0, 2.0]), 1, "minus", tg, sg)


def test_scheme_comparison_can_skip_check_and_report_violations():
    spec = build_spec("zero-sum-absolute-terminal")
    sg = SpaceGrid.with_spacing(-2.0, 2.0, 0.2)
    tg = TimeGrid.uniform(0.0, 1.0, 50)
    rep = scheme_comparison_test(shift_spec(spec, phi=0.1), spec, 1, "minus", tg, sg, check=False)
    assert rep.violations == rep.nodes and rep.max_excess == pytest.approx(0.1)

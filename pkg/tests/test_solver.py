import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pftrl.functions import BoxDomain, DimensionError
from pftrl.solver import (
    CompositeObjective,
    SolverError,
    golden_section,
    grid_minimize,
    minimize_convex,
    solve,
)

BOX = BoxDomain.interval(-10, 10)


def linear(slope):
    return ([0.0], [slope], 0.0)


def test_first_round_minimiser():
    rep = solve(CompositeObjective.build(1.0, linear(-2.0)), BOX)
    assert rep.minimizer[0] == pytest.approx(1.0, abs=1e-9)


def test_four_rounds_minimiser():
    rep = solve(CompositeObjective.build(2.0, linear(-8.0)), BOX)
    assert rep.minimizer[0] == pytest.approx(2.0, abs=1e-9)


def test_regulariser_only():
    rep = solve(CompositeObjective.build(1.0, linear(0.0)), BOX)
    assert rep.minimizer[0] == pytest.approx(0.0, abs=1e-9)


def test_boundary_minimiser():
    rep = solve(CompositeObjective.build(1.0, linear(-100.0)), BOX)
    assert rep.minimizer[0] == 10.0


def test_kink_minimiser():
    obj = CompositeObjective.build(1.0, linear(-2.0), 25.0, ([[0.0]], [[1.0]], [0.0]))
    rep = solve(obj, BOX)
    assert rep.minimizer[0] == pytest.approx(0.0, abs=1e-9)
    assert rep.certified_gap <= 1e-9


def test_report_value_matches_reevaluation():
    obj = CompositeObjective.build(3.0, ([0.5], [1.0], 2.0), 4.0, ([[0.1], [0.0]], [[1.0], [-2.0]], [0.3, -1.0]))
    rep = solve(obj, BOX)
    assert rep.value == pytest.approx(obj.value(rep.minimizer), abs=1e-12)


def test_tolerance_floor():
    with pytest.raises(ValueError):
        solve(CompositeObjective.build(1.0, linear(0.0)), BOX, tol=1e-13)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        solve(CompositeObjective.build(1.0, ([0.0, 0.0], [0.0, 0.0], 0.0)), BOX)


def test_solver_error_carries_best_point():
    err = SolverError("boom", np.array([1.0]))
    assert err.best[0] == 1.0


def test_two_dimensional_solve():
    box = BoxDomain((-3.0, -3.0), (3.0, 3.0))
    obj = CompositeObjective.build(1.0, ([0.0, 0.0], [-2.0, -4.0], 0.0), 5.0, ([[0.0, 0.0]], [[1.0, 1.0]], [-1.0]))
    rep = solve(obj, box)
    x_grid, v_grid = grid_minimize(obj.values, box, 601)
    assert rep.value <= v_grid + 1e-9
    assert np.linalg.norm(rep.minimizer - x_grid) <= 2 * box.grid_spacing(601) * np.sqrt(2)


# --- grid oracle -----------------------------------------------------------

def test_grid_square():
    x, v = grid_minimize(lambda p: p[:, 0] ** 2, BOX, 2001)
    assert x[0] == 0.0 and v == 0.0


def test_grid_linear():
    x, _ = grid_minimize(lambda p: -2 * p[:, 0], BOX, 2001)
    assert x[0] == 10.0


def test_grid_kinked():
    x, v = grid_minimize(lambda p: -2 * p[:, 0] + 25 * np.maximum(0, p[:, 0]), BOX, 2001)
    assert x[0] == 0.0 and v == 0.0


def test_grid_tie_break_is_lexicographic():
    x, _ = grid_minimize(lambda p: np.zeros(len(p)), BoxDomain((-1.0, -1.0), (1.0, 1.0)), 101)
    np.testing.assert_array_equal(x, [-1.0, -1.0])


def test_grid_limits():
    with pytest.raises(DimensionError):
        grid_minimize(lambda p: p[:, 0], BoxDomain((0, 0, 0), (1, 1, 1)), 101)
    with pytest.raises(ValueError):
        grid_minimize(lambda p: p[:, 0], BOX, 100)


# --- oracle agreement -------------------------------------------------------

def random_objective(rng, tau):
    k = rng.integers(0, 6)
    return CompositeObjective.build(
        np.sqrt(tau),
        ([rng.uniform(0, 0.5)], [rng.uniform(-20, 20)], rng.normal()),
        rng.uniform(0, 30),
        (rng.uniform(0, 0.3, (k, 1)) * rng.integers(0, 2, (k, 1)), rng.normal(size=(k, 1)), rng.normal(size=k)),
    )


@pytest.mark.parametrize("seed", range(50))
def test_oracle_agreement(seed):
    rng = np.random.default_rng(seed)
    tau = int(rng.integers(1, 400))
    obj = random_objective(rng, tau)
    tol = 1e-9
    rep = solve(obj, BOX, tol=tol)
    x_grid, _ = grid_minimize(obj.values, BOX, 2001)
    sigma = obj.modulus
    bound = 2 * BOX.grid_spacing(2001) + np.sqrt(2 * tol * max(1.0, abs(rep.value)) / sigma)
    assert abs(rep.minimizer[0] - x_grid[0]) <= bound
    assert rep.value == pytest.approx(obj.value(rep.minimizer), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_golden_section_agrees(seed):
    rng = np.random.default_rng(100 + seed)
    obj = random_objective(rng, int(rng.integers(1, 100)))
    rep = solve(obj, BOX)
    a, b, _ = golden_section(lambda v: obj.value([v]), -10.0, 10.0, 1e-10)
    assert rep.minimizer[0] == pytest.approx(0.5 * (a + b), abs=1e-6)
    assert rep.value <= obj.value([0.5 * (a + b)]) + 1e-9


def test_warm_start_matches_cold():
    rng = np.random.default_rng(5)
    obj = random_objective(rng, 50)
    cold = solve(obj, BOX)
    warm = solve(obj, BOX, x0=cold.minimizer + 0.3, radius=1e-3)
    assert warm.minimizer[0] == pytest.approx(cold.minimizer[0], abs=1e-7)


def test_minimize_convex_without_curvature():
    obj = CompositeObjective.build(0.0, linear(-1.0), 3.0, ([[0.0], [0.0]], [[1.0], [1.0]], [-2.0, -3.0]))
    x, v = minimize_convex(obj, BOX)
    assert x[0] == pytest.approx(2.0, abs=1e-9)
    assert v == pytest.approx(-2.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_minimize_convex_piecewise_linear_2d(seed):
    # no curvature anywhere: the linear-programming route
    rng = np.random.default_rng(seed)
    box = BoxDomain((-10.0, -10.0), (10.0, 10.0))
    k = 6
    obj = CompositeObjective.build(
        0.0, ([0.0, 0.0], rng.normal(size=2), 0.0), 2.0,
        (np.zeros((k, 2)), rng.normal(size=(k, 2)) * 3, rng.normal(size=k)),
    )
    x, v = minimize_convex(obj, box)
    assert box.contains(x)
    assert v == pytest.approx(obj.value(x), abs=1e-9)
    _, v_grid = grid_minimize(obj.values, box, 401)
    assert v <= v_grid + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_never_beaten_on_grid(seed):
    rng = np.random.default_rng(seed)
    obj = random_objective(rng, int(rng.integers(1, 1000)))
    rep = solve(obj, BOX)
    assert BOX.contains(rep.minimizer)
    _, v_grid = grid_minimize(obj.values, BOX, 401)
    assert rep.value <= v_grid + 1e-9 * max(1.0, abs(v_grid))

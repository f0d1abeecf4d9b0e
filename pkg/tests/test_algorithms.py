import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pftrl.algorithms import (
    AlgorithmConfig,
    InfeasibleStart,
    exact_penalty_static_solve,
    ftl_penalty_only,
    run,
    run_penalized_ftrl,
    run_primal_dual,
    run_primal_dual_averaged,
)
from pftrl.functions import Affine, BoxDomain, Constant, QuadraticDiag
from pftrl.generators import FamilyStream, paper_example_spec
from pftrl.model import FixedStream, ProblemInstance
from pftrl.penalty import PenaltyState, eval_prefix_penalty
from pftrl.solver import grid_minimize

BOX = BoxDomain.interval(-10, 10)
LOSS = Affine([-2.0], 0.0)
A1, A2 = Constant(-0.01), Affine([1.0], 0.0)


def paper_instance(c, seed, gamma=25.0):
    return ProblemInstance(BOX, LOSS, FamilyStream((paper_example_spec(c),), seed), gamma=gamma)


# --- configuration ---------------------------------------------------------

@pytest.mark.parametrize(
    "kwargs", [{"kind": "nope"}, {"horizon": 0}, {"gamma": -1.0}, {"step_scale": 0.0}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AlgorithmConfig(**kwargs)


# --- penalised FTRL --------------------------------------------------------

def test_unpenalised_iterates_follow_sqrt():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(A1))
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=150, gamma=0.0))
    assert tr.actions[0, 0] == 0.0
    want = np.minimum(np.sqrt(np.arange(1, 150)), 10.0)
    np.testing.assert_allclose(tr.actions[1:, 0], want, atol=1e-7)


def test_zero_loss_stays_at_regulariser_minimum():
    inst = ProblemInstance(BOX, Constant(0.0), FixedStream.invariant(A1))
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=20, gamma=5.0))
    np.testing.assert_allclose(tr.actions, 0.0, atol=1e-9)


def test_first_action_is_box_center():
    box = BoxDomain.interval(2, 6)
    inst = ProblemInstance(box, LOSS, FixedStream.invariant(Affine([1.0], -5.0)))
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=3, gamma=1.0))
    assert tr.actions[0, 0] == 4.0


def test_penalty_recorded_against_revealed_round():
    # x_1 = 0 is charged h_1(0) for g_1 = x - (-1) = x + 1
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(Affine([1.0], 1.0)))
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=2, gamma=1.0))
    assert tr.penalties[0] == pytest.approx(1.0)


def test_ftrl_matches_grid_oracle_on_sampled_rounds():
    inst = paper_instance(1.0, 3)
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=400, gamma=25.0))
    state = inst.constraints.penalty_state(400, 1)
    pts = BOX.grid(20001)
    for tau in (1, 7, 30, 99, 200, 399):
        prefix = state.prefix(tau)
        d, l, c = prefix.averages()
        hinge = np.maximum(pts @ l[:, 0].T + c[:, 0], 0.0).sum(axis=1)
        vals = np.sqrt(tau) * pts[:, 0] ** 2 - 2 * tau * pts[:, 0] + 25.0 * hinge
        x_grid = pts[np.argmin(vals), 0]
        assert abs(tr.actions[tau, 0] - x_grid) <= 2 * BOX.grid_spacing(20001)


def test_ftrl_is_deterministic():
    inst = paper_instance(0.75, 4)
    a = run_penalized_ftrl(inst, AlgorithmConfig(horizon=300, gamma=25.0))
    b = run_penalized_ftrl(inst, AlgorithmConfig(horizon=300, gamma=25.0))
    assert np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.penalties, b.penalties)


def test_ftrl_trace_invariants():
    inst = paper_instance(0.5, 2)
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=500, gamma=25.0))
    tr.check_invariants(BOX)
    assert tr.duals is None
    assert np.all(np.diff(tr.violation_h) >= 0)


def test_certificate_gamma_keeps_time_invariant_feasibility():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(A2))
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=300, gamma=200.0))
    state = PenaltyState.from_rounds([[A2]] * 300, 1)
    for tau in range(1, 300):
        assert eval_prefix_penalty(state.prefix(tau), tr.actions[tau]) <= 1e-6


def test_adaptive_gamma_grows_then_freezes():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(A2))
    cfg = AlgorithmConfig(horizon=400, gamma=0.5, adaptive=True, freeze_after=50)
    tr = run_penalized_ftrl(inst, cfg)
    assert tr.metadata["gamma_doublings"] >= 1
    assert tr.metadata["gamma"] > 0.5
    assert tr.metadata["gamma_frozen_at"] is not None


def test_two_dimensional_ftrl_runs():
    box = BoxDomain((-2.0, -2.0), (2.0, 2.0))
    inst = ProblemInstance(box, Affine([-1.0, -1.0]), FixedStream.invariant(Affine([1.0, 1.0], -1.0)))
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=40, gamma=10.0))
    tr.check_invariants(box)
    assert tr.actions[-1].sum() <= 1.0 + 1e-6


# --- primal-dual ------------------------------------------------------------

def test_primal_dual_first_step():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(A1))
    tr = run_primal_dual(inst, AlgorithmConfig(kind="primal_dual", horizon=2))
    assert tr.actions[0, 0] == 0.0 and tr.duals[0, 0] == 0.0
    assert tr.actions[1, 0] == 10.0
    assert tr.duals[1, 0] == 0.0


def test_dual_stays_zero_when_constraint_negative():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(A1))
    tr = run_primal_dual(inst, AlgorithmConfig(kind="primal_dual", horizon=50))
    assert np.all(tr.duals == 0.0)


def test_duals_nonnegative_on_paper_example():
    tr = run_primal_dual(paper_instance(0.75, 1), AlgorithmConfig(kind="primal_dual", horizon=2000))
    assert np.all(tr.duals >= 0)
    tr.check_invariants(BOX)


def test_averaged_matches_plain_for_time_invariant():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(Affine([1.0], -2.0)))
    a = run_primal_dual(inst, AlgorithmConfig(kind="primal_dual", horizon=200))
    b = run_primal_dual_averaged(inst, AlgorithmConfig(kind="primal_dual_averaged", horizon=200))
    np.testing.assert_allclose(a.actions, b.actions, atol=1e-12)
    np.testing.assert_allclose(a.duals, b.duals, atol=1e-12)
    assert b.metadata["experimental"] is True


def test_averaged_without_binding_constraints_is_ogd():
    inst = ProblemInstance(BOX, QuadraticDiag([1.0], [-2.0]), FixedStream.invariant(A1))
    tr = run_primal_dual_averaged(inst, AlgorithmConfig(kind="primal_dual_averaged", horizon=30))
    x = 0.0
    for t in range(1, 30):
        x = float(np.clip(x - 5 / np.sqrt(t) * (2 * x - 2), -10, 10))
        assert tr.actions[t, 0] == pytest.approx(x, abs=1e-12)


# --- static exact penalty ---------------------------------------------------

def test_static_boundary_optimum():
    x, gamma = exact_penalty_static_solve(LOSS, [A2], BOX, [-1.0])
    assert abs(x[0]) <= 1e-6
    assert gamma >= 1.0


def test_static_interior_optimum():
    x, _ = exact_penalty_static_solve(QuadraticDiag([1.0], [0.0]), [Affine([1.0], -5.0)], BOX, [0.0])
    assert x[0] == pytest.approx(0.0, abs=1e-9)


def test_static_two_constraints():
    x, _ = exact_penalty_static_solve(Affine([-1.0]), [Affine([1.0], -2.0), Affine([1.0], -3.0)], BOX, [0.0])
    assert x[0] == pytest.approx(2.0, abs=1e-6)
    x_grid, _ = grid_minimize(lambda p: np.where(p[:, 0] <= 2.0, -p[:, 0], np.inf), BOX, 2001)
    assert x[0] == pytest.approx(x_grid[0], abs=BOX.grid_spacing(2001))


def test_static_rejects_infeasible_start():
    with pytest.raises(InfeasibleStart):
        exact_penalty_static_solve(LOSS, [A2], BOX, [0.0])


# --- follow the leader on the penalty ------------------------------------------

def test_ftl_time_invariant_stays_feasible():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(Affine([1.0], -1.0)))
    tr = ftl_penalty_only(inst, 30)
    assert np.all(tr.penalties == 0.0)
    assert np.all(tr.actions[:, 0] <= 1.0 + 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_be_the_leader_alternating(seed):
    rng = np.random.default_rng(seed)
    slopes = rng.choice([-1.0, 1.0], size=40) * rng.uniform(0.5, 2, size=40)
    rounds = [(Affine([s], rng.uniform(-3, 1)),) for s in slopes]
    inst = ProblemInstance(BOX, LOSS, FixedStream(tuple(rounds)))
    tr = ftl_penalty_only(inst, 40)
    lhs = tr.penalties.sum()
    state = PenaltyState.from_rounds([list(r) for r in rounds], 1)
    pts = BOX.grid(401)
    d, l, c = state.averages()
    rhs = np.maximum(pts @ l[:, :, 0].T + c[:, 0], 0.0).sum(axis=1)
    assert lhs <= rhs.min() + 1e-6


def test_run_dispatch():
    inst = ProblemInstance(BOX, LOSS, FixedStream.invariant(A1))
    for kind in ("penalized_ftrl", "primal_dual", "primal_dual_averaged", "ftl_penalty_only"):
        assert run(inst, AlgorithmConfig(kind=kind, horizon=5)).algorithm == kind

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pftrl.algorithms import AlgorithmConfig, run_penalized_ftrl, run_primal_dual
from pftrl.functions import Affine, BoxDomain, Constant
from pftrl.generators import FamilyStream, paper_example_spec
from pftrl.metrics import (
    CSV_HEADER,
    MEMBERSHIP_TOL,
    EmptyBenchmarkError,
    compute_benchmarks,
    csv_name,
    emit_csv,
    read_csv,
    regret,
    trace_benchmarks,
    violation,
)
from pftrl.model import FixedStream, ProblemInstance, RunTrace

BOX = BoxDomain.interval(-10, 10)
LOSS = Affine([-2.0], 0.0)
A1, A2 = Constant(-0.01), Affine([1.0], 0.0)


def toy_trace(actions, constraint=A2, loss=LOSS):
    t = len(actions)
    x = np.asarray(actions, dtype=float).reshape(t, 1)
    g = np.array([[constraint.slope[0] * v + constraint.intercept] if isinstance(constraint, Affine)
                  else [constraint.value] for v in x[:, 0]])
    f = np.array([loss.slope[0] * v + loss.intercept for v in x[:, 0]])
    # the averaged penalty for a fixed constraint is the constraint itself
    return RunTrace(
        algorithm="toy",
        actions=x,
        loss_values=f,
        penalties=np.maximum(g[:, 0], 0.0),
        constraint_values=g,
        loss_funcs=(loss,) * t,
        constraint_funcs=((constraint,),) * t,
    )


# --- regret -------------------------------------------------------------------

def test_regret_zero_when_playing_benchmark():
    np.testing.assert_array_equal(regret(toy_trace([3.0] * 5), [3.0]), 0.0)


def test_regret_against_better_point():
    assert regret(toy_trace([0.0] * 10), [1.0])[-1] == pytest.approx(20.0)


def test_negative_regret_allowed():
    r = regret(toy_trace([10.0] * 7), [0.0])
    np.testing.assert_allclose(r, -20.0 * np.arange(1, 8))


# --- violation ----------------------------------------------------------------

def test_no_violation_inside():
    v_h, v_sum = violation(toy_trace([-1.0] * 6))
    assert np.all(v_h == 0) and np.all(v_sum == 0)


def test_violation_at_one():
    v_h, v_sum = violation(toy_trace([1.0] * 8))
    np.testing.assert_allclose(v_h, np.arange(1, 9))
    np.testing.assert_allclose(v_sum, np.arange(1, 9))


def test_constant_constraint_sum_clipped():
    _, v_sum = violation(toy_trace([0.0] * 5, constraint=A1))
    assert np.all(v_sum == 0)


def test_violations_match_direct_sums():
    inst = ProblemInstance(BOX, LOSS, FamilyStream((paper_example_spec(0.75),), 3), gamma=25)
    tr = run_primal_dual(inst, AlgorithmConfig(kind="primal_dual", horizon=500))
    v_h, v_sum = violation(tr)
    assert np.all(v_h >= 0) and np.all(np.diff(v_h) >= 0) and np.all(v_sum >= 0)
    direct = [max(0.0, tr.constraint_values[:k, 0].sum()) for k in range(1, 501)]
    np.testing.assert_allclose(v_sum, direct, atol=1e-9)


# --- benchmark sets -------------------------------------------------------------

def test_time_invariant_sets_coincide():
    b = compute_benchmarks(BOX, [LOSS] * 20, [[A2]] * 20, 2001)
    assert np.array_equal(b.x_min, b.x_hat_max) and np.array_equal(b.x_hat_max, b.x_max)
    assert b.upper_edge(b.x_min) == pytest.approx(0.0, abs=1e-12)
    assert b.best[0] == pytest.approx(0.0, abs=1e-12)


def test_shrinking_constraint_gap():
    t = 400
    rounds = [[Affine([1.0], -1.0 / np.sqrt(i))] for i in range(1, t + 1)]
    b = compute_benchmarks(BOX, [LOSS] * t, rounds, 2001)
    h = BOX.grid_spacing(2001)
    assert 1 / np.sqrt(t) - h < b.upper_edge(b.x_min) <= 1 / np.sqrt(t) + MEMBERSHIP_TOL
    # every prefix average of 1/sqrt(i) is at least the full one, so X_hat_max
    # is [-10, mean_{i<=t} 1/sqrt(i)]: wider than X_min, far from all of D
    edge = np.mean(1 / np.sqrt(np.arange(1, t + 1)))
    assert edge - h < b.upper_edge(b.x_hat_max) <= edge + MEMBERSHIP_TOL
    assert b.upper_edge(b.x_hat_max) > b.upper_edge(b.x_min)
    assert b.contained()


def test_paper_example_hat_edge_closed_form():
    t = 1000
    stream = FamilyStream((paper_example_spec(1.0),), 7)
    rounds = [stream.at(i) for i in range(1, t + 1)]
    b = compute_benchmarks(BOX, [LOSS] * t, rounds, 2001)
    n2 = np.cumsum(stream.indices(t)[:, 0])
    n1 = np.arange(1, t + 1) - n2
    active = n2 > 0
    closed = np.min(0.01 * n1[active] / n2[active])
    assert closed - BOX.grid_spacing(2001) < b.upper_edge(b.x_hat_max) <= closed + MEMBERSHIP_TOL
    assert b.contained()


def test_empty_prefix_set_reports_prefix():
    rounds = [[A1], [Constant(1.0)], [A1]]
    with pytest.raises(EmptyBenchmarkError, match="prefix 2"):
        compute_benchmarks(BOX, [LOSS] * 3, rounds, 201)


def test_benchmarks_validate_inputs():
    with pytest.raises(ValueError):
        compute_benchmarks(BOX, [LOSS], [[A2], [A2]], 201)
    with pytest.raises(ValueError):
        compute_benchmarks(BoxDomain((0, 0, 0), (1, 1, 1)), [Constant(0.0)], [[Constant(-1.0)]], 11)


def test_two_dimensional_benchmarks():
    box = BoxDomain((-1.0, -1.0), (1.0, 1.0))
    rounds = [[Affine([1.0, 0.0], -0.5)], [Affine([0.0, 1.0], -0.5)]]
    b = compute_benchmarks(box, [Affine([-1.0, -1.0])] * 2, rounds, 101)
    assert b.contained()
    # first prefix: x1 <= 0.5; second: x1 + x2 <= 1; the loss is flat along x1 + x2 = 1
    x1, x2 = b.best
    assert x1 <= 0.5 + 1e-9 and x1 + x2 <= 1 + 1e-9
    assert b.best_value == pytest.approx(-2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 60))
def test_containment_property(seed, t):
    rng = np.random.default_rng(seed)
    rounds = [[Affine([rng.normal()], rng.uniform(-3, 0.5))] for _ in range(t)]
    rounds[0] = [Affine([1.0], -1.0)]
    try:
        b = compute_benchmarks(BOX, [LOSS] * t, rounds, 401)
    except EmptyBenchmarkError:
        return
    assert b.contained()


def test_trace_benchmarks_uses_stored_functions():
    inst = ProblemInstance(BOX, LOSS, FamilyStream((paper_example_spec(1.0),), 5), gamma=25)
    tr = run_penalized_ftrl(inst, AlgorithmConfig(horizon=200, gamma=25.0))
    b = trace_benchmarks(tr, BOX, 2001)
    assert b.horizon == 200 and b.contained()
    assert b.as_dict()["sizes"]["X_hat_max"] == int(b.x_hat_max.sum())


# --- CSV ------------------------------------------------------------------------

def test_csv_three_rounds(tmp_path):
    tr = toy_trace([0.0, 1.0, -1.0]).with_regret(np.zeros(3))
    path = emit_csv(tr, tmp_path / "toy.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1].split(",")[3] == ""


def test_csv_round_trip(tmp_path):
    inst = ProblemInstance(BOX, LOSS, FamilyStream((paper_example_spec(0.75),), 1), gamma=25)
    tr = run_primal_dual(inst, AlgorithmConfig(kind="primal_dual", horizon=300))
    b = trace_benchmarks(tr, BOX, 2001)
    path = emit_csv(tr, tmp_path / "pd.csv", b)
    back = read_csv(path)
    v_h, v_sum = violation(tr)
    np.testing.assert_array_equal(back["t"], np.arange(1, 301))
    np.testing.assert_array_equal(back["x"], tr.actions)
    np.testing.assert_array_equal(back["f"], tr.loss_values)
    np.testing.assert_array_equal(back["lambda"], tr.duals)
    np.testing.assert_array_equal(back["h_inst"], tr.penalties)
    np.testing.assert_array_equal(back["V_h"], v_h)
    np.testing.assert_array_equal(back["V_sum"], v_sum)
    np.testing.assert_array_equal(back["R"], regret(tr, b.best))


def test_csv_is_byte_deterministic(tmp_path):
    tr = toy_trace([0.1, 0.2, 0.3]).with_regret(np.array([0.0, 1.0, 2.0]))
    a = emit_csv(tr, tmp_path / "a.csv").read_bytes()
    b = emit_csv(tr, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_csv_needs_regret(tmp_path):
    with pytest.raises(ValueError):
        emit_csv(toy_trace([0.0]), tmp_path / "x.csv")


def test_csv_io_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        emit_csv(toy_trace([0.0]).with_regret(np.zeros(1)), blocker / "sub" / "x.csv")


def test_csv_vector_cells(tmp_path):
    box = BoxDomain((-1.0, -1.0), (1.0, 1.0))
    inst = ProblemInstance(box, Affine([-1.0, 0.5]), FixedStream.invariant(Affine([1.0, 1.0], -0.5), A1))
    tr = run_primal_dual(inst, AlgorithmConfig(kind="primal_dual", horizon=10))
    path = emit_csv(tr.with_regret(np.zeros(10)), tmp_path / "v.csv")
    back = read_csv(path)
    assert back["x"].shape == (10, 2) and back["lambda"].shape == (10, 2)


def test_csv_name():
    assert csv_name("paper-example", "primal_dual", 0.75, 3) == "paper-example_primal_dual_c0.75_seed3.csv"

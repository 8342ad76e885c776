import itertools
import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from wallplan.allocate import (
    AllocationScheme,
    AssignmentMatrix,
    market_allocation,
    rate,
    resolve_complex,
    resolve_simple,
    solve_gap,
    total_rating,
)
from wallplan.errors import (
    BadDelta,
    BadWeights,
    EmptyAgentSet,
    InfeasibleDimensions,
    InfeasibleTask,
    NotComplexlyRedundant,
    TooFewAgents,
)
from wallplan.mission import INFEASIBLE, Assessment, unit_assessments
from wallplan.schedule import mission_context
from wallplan.taems import NodeKind, Qaf, TaemsNode

W = (0.5, 0.35, 0.15)


def brute_force_gap(matrix):
    """Best objective over every injective subtask -> agent map."""
    m, n = len(matrix.agents), len(matrix.subtasks)
    best = -math.inf
    for rows in itertools.permutations(range(m), n):
        best = max(best, sum(matrix.ratings[i][j] for j, i in enumerate(rows)))
    return best


# ---------------------------------------------------------------- rate


def test_rate_best_everywhere_is_one():
    r = rate({"a": Assessment(3, 1, 1), "b": Assessment(1, 5, 4)}, W)
    assert r["a"] == pytest.approx(1.0)
    assert r["b"] == pytest.approx(0.0)


def test_rate_hand_example():
    r = rate({"a1": Assessment(2, 10, 3), "a2": Assessment(4, 10, 1)}, W)
    assert r["a1"] == pytest.approx(0.35)
    assert r["a2"] == pytest.approx(1.0)


def test_rate_identical_agents():
    s = Assessment(1, 2, 3)
    r = rate({"a": s, "b": s, "c": s}, W)
    assert len(set(r.values())) == 1


def test_rate_excludes_infeasible():
    r = rate({"a": Assessment(1, 10, 10), "b": Assessment(2, 20, 20), "x": INFEASIBLE}, (0, 0.5, 0.5))
    assert set(r) == {"a", "b"}
    assert r["a"] == pytest.approx(1.0)


def test_rate_errors():
    with pytest.raises(EmptyAgentSet):
        rate({}, W)
    with pytest.raises(EmptyAgentSet):
        rate({"x": INFEASIBLE}, W)
    with pytest.raises(BadWeights):
        rate({"a": Assessment(1, 1, 1)}, (0.5, 0.5, 0.5))
    with pytest.raises(BadWeights):
        rate({"a": Assessment(1, 1, 1)}, (1.2, -0.2, 0.0))


assessments = st.builds(
    Assessment,
    st.floats(0, 10, allow_nan=False),
    st.floats(0.1, 1000, allow_nan=False),
    st.floats(0, 1000, allow_nan=False),
)
weights = st.tuples(st.floats(0, 1), st.floats(0, 1)).filter(lambda t: t[0] + t[1] <= 1).map(
    lambda t: (t[0], t[1], max(0.0, 1 - t[0] - t[1]))
)


@given(st.dictionaries(st.sampled_from("abcdef"), assessments, min_size=1), weights)
def test_rate_in_unit_interval(inputs, w):
    r = rate(inputs, w)
    assert all(-1e-12 <= v <= 1 + 1e-12 for v in r.values())


# integer costs keep the shift from absorbing differences in floating point
grid = st.builds(Assessment, st.just(1.0), st.just(1.0), st.integers(0, 1000).map(float))


@given(st.dictionaries(st.sampled_from("abcd"), grid, min_size=2), st.integers(1, 10), st.integers(0, 50))
def test_rate_argmax_affine_cost_invariant(inputs, a, b):
    w = (0.0, 0.0, 1.0)
    scaled = {k: Assessment(s.quality, s.duration, a * s.cost + b) for k, s in inputs.items()}
    r1, r2 = rate(inputs, w), rate(scaled, w)
    top1 = {k for k, v in r1.items() if v == max(r1.values())}
    top2 = {k for k, v in r2.items() if v == max(r2.values())}
    assume(len(top1) == 1)
    assert top1 == top2


# ---------------------------------------------------------------- total rating


def test_total_rating_substitution():
    s = AllocationScheme((("t", "a"),))
    out = total_rating({"a": 0.5, "b": 0.0, "c": 1.0}, s, "t", 0.7)
    assert out["a"] == pytest.approx(0.7 * 0.5 + 0.3)


def test_total_rating_boundary_tie():
    s = AllocationScheme((("t", "a2"),))
    out = total_rating({"a1": 1.0, "a2": 0.0}, s, "t", 0.5)
    assert out["a1"] == out["a2"] == 0.5
    assert resolve_simple("t", ["a2", "a1"], {"a1": Assessment(2, 1, 1), "a2": Assessment(1, 1, 1)}, s, (1, 0, 0), 0.5) == "a1"


def test_total_rating_all_equal():
    s = AllocationScheme((("t", "b"),))
    out = total_rating({"a": 0.4, "b": 0.4, "c": 0.4}, s, "t", 0.9)
    assert out == pytest.approx({"a": 0.9, "b": 1.0, "c": 0.9})


def test_total_rating_delta_checked():
    with pytest.raises(BadDelta):
        total_rating({"a": 1.0}, AllocationScheme(), "t", 0.4)
    with pytest.raises(BadDelta):
        total_rating({"a": 1.0}, AllocationScheme(), "t", 1.0)


@given(st.dictionaries(st.sampled_from("abcde"), st.floats(0, 1), min_size=1), st.floats(0.5, 0.999))
def test_equal_ratings_make_market_choice_unique(r, delta):
    flat = {k: 0.3 for k in r}
    pick = sorted(flat)[-1]
    out = total_rating(flat, AllocationScheme((("t", pick),)), "t", delta)
    assert max(out, key=out.get) == pick
    assert sum(1 for v in out.values() if v == out[pick]) == 1


@given(st.floats(0.3, 0.4999), st.floats(0, 1), st.floats(0, 1))
def test_low_delta_market_dominates_when_r1_not_larger(delta, r_pref, r_other):
    # the market agent's normalized rating is at least every rival's
    assume(r_pref >= r_other)
    ratings = {"pref": r_pref, "other": r_other, "lo": min(r_other, r_pref) - 1}
    out = total_rating(ratings, AllocationScheme((("t", "pref"),)), "t", delta, check=False)
    assert out["pref"] > out["other"] and out["pref"] > out["lo"]


# ---------------------------------------------------------------- resolve_simple


def test_resolve_single_candidate():
    assert resolve_simple("t", ["a"], {"a": Assessment(1, 1, 1)}, AllocationScheme(), W, 0.7) == "a"


def test_resolve_market_preference_breaks_symmetry():
    s = Assessment(1, 1, 1)
    scheme = AllocationScheme((("t", "a2"),))
    assert resolve_simple("t", ["a1", "a2"], {"a1": s, "a2": s}, scheme, W, 0.7) == "a2"


@given(st.floats(0.5, 0.99), st.floats(0, 1), st.floats(0, 1))
def test_resolve_threshold(delta, r_a1, r_a2):
    """a1 beats the market agent a2 iff delta*(r1(a1) - r1(a2)) > 1 - delta."""
    ratings = {"a1": r_a1, "a2": r_a2, "lo": 0.0, "hi": 1.0}
    out = total_rating(ratings, AllocationScheme((("t", "a2"),)), "t", delta)
    margin = delta * (r_a1 - r_a2) - (1 - delta)
    assume(abs(margin) > 1e-9)
    assert (out["a1"] > out["a2"]) == (margin > 0)


def test_resolve_without_candidates():
    with pytest.raises(EmptyAgentSet):
        resolve_simple("t", [], {}, AllocationScheme(), W, 0.7)


# ---------------------------------------------------------------- market


def _durations(table):
    return {k: Assessment(0, d, 0) if d is not None else INFEASIBLE for k, d in table.items()}


def test_market_alternates_between_identical_uavs():
    tasks = ["t1", "t2", "t3", "t4"]
    a = _durations({(ag, t): 10 for ag in ("uav1", "uav2") for t in tasks})
    scheme = market_allocation(tasks, ["uav1", "uav2"], a)
    assert scheme.pairs == (("t1", "uav1"), ("t2", "uav2"), ("t3", "uav1"), ("t4", "uav2"))


def test_market_single():
    assert market_allocation(["t"], ["a"], _durations({("a", "t"): 1})).pairs == (("t", "a"),)


def _best_makespan(tasks, agents, dur):
    best = math.inf
    for combo in itertools.product(agents, repeat=len(tasks)):
        loads = {a: 0.0 for a in agents}
        for t, a in zip(tasks, combo):
            loads[a] += dur[(a, t)]
        best = min(best, max(loads.values()))
    return best


def _scheme_makespan(scheme, dur):
    loads = {}
    for t, a in scheme.pairs:
        loads[a] = loads.get(a, 0.0) + dur[(a, t)]
    return max(loads.values())


def test_market_fast_agent_takes_both_when_serial_is_quicker():
    dur = {("A", "t1"): 1.0, ("A", "t2"): 1.0, ("B", "t1"): 10.0, ("B", "t2"): 10.0}
    scheme = market_allocation(["t1", "t2"], ["A", "B"], _durations(dur))
    assert scheme.as_dict() == {"t1": "A", "t2": "A"}
    assert _scheme_makespan(scheme, dur) == _best_makespan(["t1", "t2"], ["A", "B"], dur)


@given(st.floats(0.5, 20), st.floats(1.0, 20))
def test_market_two_equal_tasks_matches_enumeration(d, k):
    dur = {("A", t): d for t in ("t1", "t2")} | {("B", t): k * d for t in ("t1", "t2")}
    scheme = market_allocation(["t1", "t2"], ["A", "B"], _durations(dur))
    assert _scheme_makespan(scheme, dur) == pytest.approx(_best_makespan(["t1", "t2"], ["A", "B"], dur))
    both_on_a = set(scheme.as_dict().values()) == {"A"}
    assert both_on_a == (2 * d <= k * d)


def test_market_respects_precedence_and_lags():
    dur = _durations({(a, t): 10 for a in ("a", "b") for t in ("t1", "t2")})
    scheme = market_allocation(["t1", "t2"], ["a", "b"], dur, {"t2": ["t1"]})
    # t2 must wait for t1 anyway, so staying on the same agent is as quick
    assert scheme.pairs == (("t1", "a"), ("t2", "a"))
    early = market_allocation(["t1", "t2"], ["a", "b"], dur, {"t2": ["t1"]}, lags={("a", "t1"): 3})
    assert early.as_dict()["t2"] == "b"


def test_market_joint_group_distinct_agents():
    dur = _durations({(a, t): 5 for a in ("u1", "u2", "u3") for t in ("o#1", "o#2")})
    scheme = market_allocation(["o#1", "o#2"], ["u1", "u2", "u3"], dur, joint_groups=[("o#1", "o#2")])
    assert len(set(scheme.as_dict().values())) == 2


def test_market_infeasible():
    with pytest.raises(InfeasibleTask):
        market_allocation(["t"], ["a"], {("a", "t"): INFEASIBLE})


@given(st.dictionaries(st.tuples(st.sampled_from("ab"), st.sampled_from(["t1", "t2", "t3"])), st.floats(0.1, 50), min_size=6))
def test_market_deterministic(table):
    a = _durations(table)
    tasks, agents = ["t1", "t2", "t3"], ["a", "b"]
    assert market_allocation(tasks, agents, a) == market_allocation(tasks, list(reversed(agents)), a)


def test_scheme_rejects_duplicate_task():
    with pytest.raises(ValueError):
        AllocationScheme((("t", "a"), ("t", "b")))


# ---------------------------------------------------------------- GAP


def test_gap_two_by_two():
    m = AssignmentMatrix(((0.9, 0.1), (0.2, 0.8)), ("a1", "a2"), ("t1", "t2"))
    out = solve_gap(m)
    assert out == {"t1": "a1", "t2": "a2"}
    assert m.objective(out) == pytest.approx(1.7)


def test_gap_one_by_one():
    assert solve_gap(AssignmentMatrix(((0.4,),), ("a",), ("t",))) == {"t": "a"}


def test_gap_dominated_agent_left_out():
    m = AssignmentMatrix(((0.9, 0.2), (0.3, 0.8), (0.1, 0.1)), ("a1", "a2", "a3"), ("t1", "t2"))
    assert set(solve_gap(m).values()) == {"a1", "a2"}


def test_gap_dimensions():
    with pytest.raises(InfeasibleDimensions):
        solve_gap(AssignmentMatrix(((1.0, 1.0),), ("a",), ("t1", "t2")))
    with pytest.raises(ValueError):
        AssignmentMatrix(((math.inf,),), ("a",), ("t",))


@st.composite
def matrices(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(n, 6))
    vals = st.floats(0, 1, allow_nan=False) | st.sampled_from([0.0, 0.5, 1.0])
    rows = tuple(tuple(draw(vals) for _ in range(n)) for _ in range(m))
    return AssignmentMatrix(rows, tuple(f"a{i}" for i in range(m)), tuple(f"t{j}" for j in range(n)))


@settings(max_examples=300, deadline=None)
@given(matrices())
def test_gap_matches_enumeration(m):
    out = solve_gap(m)
    assert sorted(out) == sorted(m.subtasks)
    assert len(set(out.values())) == len(out)
    assert m.objective(out) == brute_force_gap(m)


# ---------------------------------------------------------------- complex redundancy


def test_resolve_complex_on_orange(orange_spec):
    tree, table = mission_context(orange_spec)
    units = unit_assessments(tree, table, ["uav1", "uav2", "ugv1"])
    out = resolve_complex(tree.nodes["TB(B1.1)"], ["uav1", "uav2", "ugv1"], units, W)
    assert set(out) == {"TB(B1.1)#1", "TB(B1.1)#2"}
    assert set(out.values()) == {"uav1", "uav2"}


def test_resolve_complex_mirrors_gap():
    node = TaemsNode("T", NodeKind.TASK, ("s1", "s2"), Qaf.SUM_ALL, Qaf.MAX)
    a = {
        ("a1", "s1"): Assessment(3, 1, 1), ("a1", "s2"): Assessment(1, 1, 1),
        ("a2", "s1"): Assessment(1, 1, 1), ("a2", "s2"): Assessment(3, 1, 1),
        ("a3", "s1"): Assessment(0, 1, 1), ("a3", "s2"): Assessment(0, 1, 1),
    }
    assert resolve_complex(node, ["a1", "a2", "a3"], a, (1, 0, 0)) == {"s1": "a1", "s2": "a2"}


def test_resolve_complex_errors():
    plain = TaemsNode("T", NodeKind.TASK, ("s1",), Qaf.SUM_ALL)
    with pytest.raises(NotComplexlyRedundant):
        resolve_complex(plain, ["a"], {}, W)
    node = TaemsNode("T", NodeKind.TASK, ("s1", "s2"), Qaf.SUM_ALL, Qaf.MAX)
    a = {("a", s): Assessment(1, 1, 1) for s in ("s1", "s2")}
    with pytest.raises(TooFewAgents):
        resolve_complex(node, ["a"], a, W)

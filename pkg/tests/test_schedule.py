import json

import pytest
from hypothesis import given, settings, strategies as st

from wallplan.errors import Deadlock
from wallplan.mission import MissionSpec, assessment_table, generate_tree
from wallplan.oracle import random_mission
from wallplan.coordinate import plan_schedule
from wallplan.schedule import (
    ScheduledAction,
    build_schedule,
    check_schedule,
    make_schedule,
    mission_context,
    objective,
    reference,
    schedule_from_json,
    schedule_to_json,
)
from wallplan.taems import Interrelationship, RelKind, TaemsTree

from conftest import brick, uav

BOTH = {"TB(B1.1)": "uav1", "TB(B2.1)": "uav1"}


def kinds(schedule):
    return [a.split("(")[0] for a in schedule.order()]


def rules(violations):
    return {v.rule for v in violations}


def test_interleaved_without_resource(stacked):
    tree = generate_tree(stacked, resources=False)
    table = assessment_table(stacked, tree)
    s = build_schedule(tree, BOTH, table)
    assert kinds(s) == ["GP", "PU", "GP", "PU", "GW", "GW", "PD", "PD"]
    assert check_schedule(s, tree, table) == []


def test_sequential_with_resource(stacked):
    tree = generate_tree(stacked)
    table = assessment_table(stacked, tree)
    for spec in (None, stacked):
        s = build_schedule(tree, BOTH, table, spec=spec)
        assert kinds(s) == ["GP", "PU", "GW", "PD", "GP", "PU", "GW", "PD"]
        assert check_schedule(s, tree, table, spec) == []


def test_positional_chaining(stacked):
    tree, table = mission_context(stacked)
    s = build_schedule(tree, BOTH, table, spec=stacked)
    second_gp = s.entry("GP(B2.1)")
    # leaves from the wall (0, 5, 0.1) back to the pile (5, 0, 0)
    assert second_gp.end - second_gp.start == pytest.approx(((25 + 25 + 0.01) ** 0.5) / 2.0)


def test_joint_actions_start_together(orange_spec):
    tree, table = mission_context(orange_spec)
    assign = {"TB(B1.1)#1": "uav1", "TB(B1.1)#2": "uav2", "TB(B1.2)": "uav2"}
    s = build_schedule(tree, assign, table, spec=orange_spec)
    for k in ("GP", "PU", "GW", "PD"):
        a, b = s.entry(f"{k}(B1.1)#1"), s.entry(f"{k}(B1.1)#2")
        assert a.start == b.start and a.end == b.end
    assert check_schedule(s, tree, table, orange_spec) == []


def test_joint_needs_distinct_agents(orange_spec):
    tree, table = mission_context(orange_spec)
    with pytest.raises(ValueError):
        build_schedule(tree, {"TB(B1.1)#1": "uav1", "TB(B1.1)#2": "uav1", "TB(B1.2)": "uav2"}, table)


def test_unassigned_task_rejected(stacked):
    tree, table = mission_context(stacked)
    with pytest.raises(ValueError):
        build_schedule(tree, {"TB(B1.1)": "uav1"}, table)
    part = build_schedule(tree, {"TB(B1.1)": "uav1"}, table, partial=True)
    assert len(part.entries) == 4


def test_fixed_order_can_deadlock():
    spec = MissionSpec(
        (brick("B1.1"), brick("B1.2", x=0.6), brick("B2.1", layer=1, x=0.3, supports=("B1.1", "B1.2"))),
        (uav("uav1"), uav("uav2")),
    )
    tree, table = mission_context(spec)
    assign = {"TB(B1.1)": "uav1", "TB(B2.1)": "uav1", "TB(B1.2)": "uav2"}
    ok = build_schedule(tree, assign, table, order={"uav1": ["TB(B1.1)", "TB(B2.1)"], "uav2": ["TB(B1.2)"]})
    assert check_schedule(ok, tree, table) == []
    with pytest.raises(Deadlock) as info:
        build_schedule(tree, assign, table, order={"uav1": ["TB(B2.1)", "TB(B1.1)"], "uav2": ["TB(B1.2)"]})
    assert info.value.blocked


def test_disables_cycle_reports_cycle(stacked):
    tree = generate_tree(stacked, resources=False)
    extra = (
        Interrelationship(RelKind.DISABLES, "GP(B1.1)", "PD(B2.1)"),
    )
    bad = TaemsTree(tree.root, tree.nodes, tree.interrelationships + extra, tree.resources)
    table = assessment_table(stacked, tree)
    with pytest.raises(Deadlock) as info:
        build_schedule(bad, BOTH, table)
    assert info.value.cycle


def test_disables_orders_completion(stacked):
    tree = generate_tree(stacked, resources=False)
    # PD(B1.1) may only finish once GW(B2.1) is over
    extra = (Interrelationship(RelKind.DISABLES, "PD(B1.1)", "GW(B2.1)"),)
    t2 = TaemsTree(tree.root, tree.nodes, tree.interrelationships + extra, tree.resources)
    table = assessment_table(stacked, tree)
    s = build_schedule(t2, BOTH, table)
    assert s.entry("GW(B2.1)").end <= s.entry("PD(B1.1)").end
    assert check_schedule(s, t2, table) == []


def test_seeded_enables_fault(stacked):
    tree = generate_tree(stacked, resources=False)
    table = assessment_table(stacked, tree)
    good = build_schedule(tree, BOTH, table)
    moved = [
        ScheduledAction(e.agent, e.action, e.start - 100, e.end - 100, e.cost, e.quality) if e.action == "GP(B2.1)" else e
        for e in good.entries
    ]
    assert "EnablesViolation" in rules(check_schedule(make_schedule(moved), tree, table))


def test_seeded_resource_fault(stacked):
    tree = generate_tree(stacked, resources=False)
    table = assessment_table(stacked, tree)
    interleaved = build_schedule(tree, BOTH, table)
    with_carry = generate_tree(stacked)
    assert "ResourceViolation" in rules(check_schedule(interleaved, with_carry, table))


def test_other_seeded_faults(stacked):
    tree, table = mission_context(stacked)
    good = build_schedule(tree, BOTH, table, spec=stacked)
    e = list(good.entries)
    stretched = [ScheduledAction(x.agent, x.action, x.start, x.end + (1 if x.action == "PU(B1.1)" else 0)) for x in e]
    assert "DurationViolation" in rules(check_schedule(make_schedule(stretched), tree, table, stacked))
    assert "IncompleteTask" in rules(check_schedule(make_schedule(e[1:]), tree, table, stacked))
    split = [ScheduledAction("uav9" if x.action == "PD(B2.1)" else x.agent, x.action, x.start, x.end) for x in e]
    assert "SplitTask" in rules(check_schedule(make_schedule(split), tree, table, stacked))
    dup = e + [e[0]]
    assert "DuplicateAction" in rules(check_schedule(make_schedule(dup), tree, table, stacked))


def test_objective_bounds(reference_spec):
    s = plan_schedule(reference_spec)
    j = objective(s, reference_spec)
    assert j <= 1.0
    ref = reference(reference_spec)
    assert s.total_quality <= ref.q_best + 1e-9


def test_serial_reference_scores_zero_time_and_cost(stacked):
    # a lone agent can only run the serial plan
    tree, table = mission_context(stacked)
    s = build_schedule(tree, BOTH, table, spec=stacked)
    assert objective(s, stacked, (0, 1, 0)) == pytest.approx(0.0)
    assert objective(s, stacked, (0, 0, 1)) == pytest.approx(0.0)
    assert objective(s, stacked, (1, 0, 0)) == pytest.approx(1.0)


def test_json_round_trip(reference_spec):
    s = plan_schedule(reference_spec)
    text = json.dumps(schedule_to_json(s), sort_keys=True)
    again = schedule_from_json(json.loads(text))
    assert again == s
    assert json.dumps(schedule_to_json(again), sort_keys=True) == text


def test_deterministic(reference_spec):
    a = plan_schedule(reference_spec)
    b = plan_schedule(reference_spec)
    assert schedule_to_json(a) == schedule_to_json(b)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 7), st.integers(1, 4), st.booleans())
def test_built_schedules_are_valid(seed, n, m, orange):
    spec = random_mission(seed, n, m, orange=orange and m >= 3)
    tree, table = mission_context(spec)
    s = plan_schedule(spec)
    assert check_schedule(s, tree, table, spec) == []
    assert s.makespan == max(e.end for e in s.entries)
    for ag in s.agents:
        lane = s.lane(ag)
        # one brick in hand at a time
        holds = []
        for e in lane:
            if e.action.startswith("GP("):
                holds.append([e.start, None])
            if e.action.startswith("PD("):
                holds[-1][1] = e.end
        for (s1, e1), (s2, _) in zip(holds, holds[1:]):
            assert e1 <= s2 + 1e-9

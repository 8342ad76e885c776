"""Event-driven list scheduling of task trees onto agents, schedule checking
and the mission objective."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from .errors import Deadlock
from .mission import (
    AgentKind,
    Assessment,
    Criteria,
    MissionSpec,
    assess,
    assessment_table,
    check_weights,
    generate_tree,
    parse_action,
)
from .taems import INSUFFICIENT, RelKind, TaemsTree, Violation, apply_resource_effect

TIME_EPS = 1e-9


@dataclass(frozen=True)
class ScheduledAction:
    agent: str
    action: str
    start: float
    end: float
    cost: float = 0.0
    quality: float = 0.0


@dataclass(frozen=True)
class Schedule:
    entries: tuple[ScheduledAction, ...]
    makespan: float
    total_cost: float
    total_quality: float
    binding_enables: tuple[tuple[str, str], ...] = ()

    @property
    def agents(self) -> list[str]:
        return sorted({e.agent for e in self.entries})

    def lane(self, agent: str) -> list[ScheduledAction]:
        return [e for e in self.entries if e.agent == agent]

    def order(self, agent: str | None = None) -> list[str]:
        """Action ids by start time, optionally for one agent."""
        return [e.action for e in self.entries if agent is None or e.agent == agent]

    def entry(self, action: str) -> ScheduledAction:
        for e in self.entries:
            if e.action == action:
                return e
        raise KeyError(action)


def location_after(spec: MissionSpec, action: str, current):
    """Where an agent stands once ``action`` is over."""
    kind, bid, _ = parse_action(action)
    if kind == "GP":
        return spec.brick(bid).pile_xyz
    if kind == "GW":
        return spec.brick(bid).wall_xyz
    return current


def _sort_entries(entries: Iterable[ScheduledAction]) -> tuple[ScheduledAction, ...]:
    return tuple(sorted(entries, key=lambda e: (e.start, e.end, e.agent, e.action)))


def make_schedule(entries: Iterable[ScheduledAction], binding=()) -> Schedule:
    entries = _sort_entries(entries)
    makespan = max((e.end for e in entries), default=0.0)
    canonical = sorted(entries, key=lambda e: (e.action, e.agent))
    total_cost = math.fsum(e.cost for e in canonical)
    total_quality = math.fsum(e.quality for e in canonical)
    return Schedule(entries, makespan, total_cost, total_quality, tuple(sorted(binding)))


def merge_schedules(parts: Iterable[Schedule]) -> Schedule:
    entries, binding = [], set()
    for part in parts:
        entries.extend(part.entries)
        binding.update(part.binding_enables)
    return make_schedule(entries, binding)


def restrict(schedule: Schedule, agent: str) -> Schedule:
    """One agent's share of a schedule."""
    lane = [e for e in schedule.entries if e.agent == agent]
    mine = {e.action for e in lane}
    return make_schedule(lane, [p for p in schedule.binding_enables if p[1] in mine])


# --------------------------------------------------------------------------
# building


class _Simulation:
    def __init__(self, tree, assignments, assessments, spec, order, partial):
        self.tree = tree
        self.idx = tree.index
        self.spec = spec
        self.table = assessments
        assigned = {u: a for u, a in assignments.items() if u in tree.units}
        unknown = set(assignments) - set(tree.units)
        if unknown:
            raise ValueError(f"not assignable tasks: {sorted(unknown)}")
        if not partial:
            missing = set(tree.units) - set(assigned)
            if missing:
                raise ValueError(f"unassigned tasks: {sorted(missing)}")
        self.units = sorted(assigned)
        self.unit_agent = assigned
        self.agent_of = {a: assigned[u] for u in self.units for a in tree.nodes[u].children}
        self.in_play = set(self.agent_of)
        self.requires = {a: self.idx.requires[a] & self.in_play for a in self.in_play}
        self.disabled = {a: self.idx.disabled_until[a] & self.in_play for a in self.in_play}
        self.agents = sorted(set(assigned.values()))
        self.rank = {}
        for u in self.units:
            for k, a in enumerate(tree.nodes[u].children):
                self.rank[a] = k
        self.joint = {}
        for a in self.in_play:
            group = self.idx.joint_group.get(a)
            if group and all(x in self.in_play for x in group):
                owners = [self.agent_of[x] for x in group]
                if len(set(owners)) != len(owners):
                    raise ValueError(f"joint actions {group} need distinct agents")
                self.joint[a] = group

        for a in self.in_play:
            s = self._base(self.agent_of[a], a)
            if not s.feasible:
                raise ValueError(f"{a} is infeasible for {self.agent_of[a]}")

        self.order = None
        if order is not None:
            self.order = {}
            for ag in self.agents:
                seq = list(order.get(ag, ()))
                mine = sorted(u for u in self.units if self.unit_agent[u] == ag)
                if sorted(seq) != mine:
                    raise ValueError(f"order for {ag} must list exactly its tasks")
                self.order[ag] = seq

        self.res_state = dict(tree.resources)
        self.position = {}
        if spec is not None:
            self._agent_specs = {a.id: a for a in spec.agents}
            for ag in self.agents:
                if ag in self._agent_specs:
                    self.position[ag] = self._agent_specs[ag].start_position
        self.done: set[str] = set()
        self.running: dict[str, float] = {}
        self.busy: dict[str, str] = {}
        self.waiting: dict[str, str] = {}
        self.entries: list[ScheduledAction] = []
        self.t = 0.0

    def _base(self, agent: str, action: str) -> Assessment:
        try:
            return self.table[(agent, action)]
        except KeyError:
            raise ValueError(f"no assessment for {agent} on {action}") from None

    def _duration(self, agent: str, action: str) -> float:
        base = self._base(agent, action)
        if self.spec is not None and agent in self.position and action.startswith("GP("):
            return assess(self.spec, self._agent_specs[agent], action, self.position[agent]).duration
        return base.duration

    def _owned(self, rid: str, agent: str) -> bool:
        owner = self.res_state[rid].owner_agent
        return owner is None or owner == agent

    def executable(self, agent: str, action: str) -> bool:
        if action in self.done or action in self.running:
            return False
        if not self.requires[action] <= self.done or not self.disabled[action] <= self.done:
            return False
        for rid in self.idx.limited_by[action]:
            if rid not in self.res_state or not self._owned(rid, agent):
                continue
            need = sum(amt for r, amt in self.idx.consumes[action] if r == rid)
            if apply_resource_effect(self.res_state[rid], -need) is INSUFFICIENT:
                return False
        return True

    def _next_in_order(self, agent: str) -> str | None:
        for u in self.order[agent]:
            for a in self.tree.nodes[u].children:
                if a not in self.done:
                    return a
        return None

    def choose(self, agent: str) -> str | None:
        if agent in self.waiting:
            return self.waiting[agent]
        if self.order is not None:
            nxt = self._next_in_order(agent)
            return nxt if nxt is not None and nxt not in self.running and self.executable(agent, nxt) else None
        cands = [
            a for u in self.units if self.unit_agent[u] == agent
            for a in self.tree.nodes[u].children if self.executable(agent, a)
        ]
        if not cands:
            return None
        waited_on = set(self.waiting.values())

        def key(a):
            partner_waiting = a in self.joint and any(x in waited_on for x in self.joint[a] if x != a)
            return (not partner_waiting, self.rank[a], self.idx.depth.get(a, 0), self.tree.unit_of[a], a)

        return min(cands, key=key)

    def _partner_ready(self, agent: str, action: str) -> bool:
        if agent in self.busy:
            return False
        committed = self.waiting.get(agent)
        if committed is not None and committed != action:
            return False
        if self.order is not None and self._next_in_order(agent) != action:
            return False
        return self.executable(agent, action)

    def start(self, pairs: list[tuple[str, str]]) -> None:
        durations = [self._duration(ag, a) for ag, a in pairs]
        d = max(durations)
        for ag, a in pairs:
            for rid, amt in self.idx.consumes[a]:
                if rid in self.res_state and self._owned(rid, ag):
                    self.res_state[rid] = apply_resource_effect(self.res_state[rid], -amt)
            base = self._base(ag, a)
            if d == base.duration:
                cost = base.cost
            else:
                cost = d * (base.cost / base.duration) if base.duration > 0 else base.cost
            self.entries.append(ScheduledAction(ag, a, self.t, self.t + d, cost, base.quality))
            self.running[a] = self.t + d
            self.busy[ag] = a
            self.waiting.pop(ag, None)

    def finish_due(self) -> None:
        self.t = min(self.running.values())
        due = sorted(a for a, end in self.running.items() if end <= self.t)
        for a in due:
            ag = self.agent_of[a]
            del self.running[a]
            del self.busy[ag]
            self.done.add(a)
            for rid, amt in self.idx.produces[a]:
                if rid in self.res_state and self._owned(rid, ag):
                    self.res_state[rid] = apply_resource_effect(self.res_state[rid], amt)
            if self.spec is not None and ag in self.position:
                self.position[ag] = location_after(self.spec, a, self.position[ag])

    def run(self) -> Schedule:
        while len(self.done) < len(self.in_play):
            progress = True
            while progress:
                progress = False
                for ag in self.agents:
                    if ag in self.busy:
                        continue
                    act = self.choose(ag)
                    if act is None:
                        continue
                    group = self.joint.get(act)
                    if group is None:
                        self.start([(ag, act)])
                        progress = True
                        continue
                    members = [(self.agent_of[x], x) for x in group]
                    if all(self._partner_ready(m, x) for m, x in members if m != ag):
                        self.start(members)
                        progress = True
                    else:
                        self.waiting[ag] = act
            if not self.running:
                self._deadlock()
            self.finish_due()
        return make_schedule(self.entries, self._binding())

    def _binding(self) -> list[tuple[str, str]]:
        by_action = {e.action: e for e in self.entries}
        prev_end = {}
        lanes: dict[str, list[ScheduledAction]] = {}
        for e in _sort_entries(self.entries):
            lanes.setdefault(e.agent, []).append(e)
        for lane in lanes.values():
            last = 0.0
            for e in lane:
                prev_end[e.action] = last
                last = e.end
        out = []
        for rel in self.tree.edges(RelKind.ENABLES):
            u, v = by_action.get(rel.source), by_action.get(rel.target)
            if u is None or v is None or u.agent == v.agent:
                continue
            if abs(v.start - u.end) <= TIME_EPS and v.start - prev_end[v.action] > TIME_EPS:
                out.append((rel.source, rel.target))
        return sorted(out)

    def _deadlock(self) -> None:
        blocked = sorted(self.in_play - self.done)
        waits: dict[str, set[str]] = {}
        holding: dict[str, str] = {}
        for u in self.units:
            kids = self.tree.nodes[u].children
            if kids[0] in self.done and kids[-1] not in self.done:
                holding[self.unit_agent[u]] = u
        for u in self.units:
            nxt = next((a for a in self.tree.nodes[u].children if a not in self.done), None)
            if nxt is None:
                continue
            ag = self.unit_agent[u]
            w = waits.setdefault(u, set())
            for p in (self.requires[nxt] | self.disabled[nxt]) - self.done:
                w.add(self.tree.unit_of[p])
            if not self.executable(ag, nxt) and holding.get(ag) not in (None, u):
                w.add(holding[ag])
            for x in self.joint.get(nxt, ()):
                if x != nxt:
                    w.add(self.tree.unit_of[x])
            if self.order is not None:
                seq = self.order[ag]
                pos = seq.index(u)
                for prev in seq[:pos]:
                    if self.tree.nodes[prev].children[-1] not in self.done:
                        w.add(prev)
                        break
            if self.waiting.get(ag) and self.tree.unit_of[self.waiting[ag]] != u:
                w.add(self.tree.unit_of[self.waiting[ag]])
            w.discard(u)
        cycle = _shortest_cycle(waits)
        detail = " -> ".join(cycle) if cycle else "no cycle found"
        raise Deadlock(f"no progress at t={self.t}: {detail}", blocked=blocked, cycle=cycle)


def _shortest_cycle(graph: Mapping[str, set[str]]) -> list[str]:
    best: list[str] = []
    for s in sorted(graph):
        parent = {s: None}
        q = deque([s])
        found = None
        while q and found is None:
            n = q.popleft()
            for m in sorted(graph.get(n, ())):
                if m == s:
                    found = n
                    break
                if m not in parent:
                    parent[m] = n
                    q.append(m)
        if found is None:
            continue
        path = [found]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        path.append(s)
        if not best or len(path) < len(best):
            best = path
    return best


def build_schedule(
    tree: TaemsTree,
    assignments: Mapping[str, str],
    assessments: Mapping[tuple[str, str], Assessment],
    *,
    spec: MissionSpec | None = None,
    order: Mapping[str, Sequence[str]] | None = None,
    partial: bool = False,
) -> Schedule:
    """Simulate execution of ``tree`` with tasks assigned to agents.

    Whenever an agent is idle it starts its most urgent executable action:
    earlier step of its task first, then shallower in the precedence graph,
    then lowest task id.  Joint actions start together on all their agents.
    With ``spec`` an agent's GP leg is measured from where it last released
    a brick.  ``order`` pins each agent's task sequence instead.  With
    ``partial`` unassigned tasks are left out.
    """
    return _Simulation(tree, assignments, assessments, spec, order, partial).run()


# --------------------------------------------------------------------------
# checking


def check_schedule(
    schedule: Schedule,
    tree: TaemsTree,
    assessments: Mapping[tuple[str, str], Assessment],
    spec: MissionSpec | None = None,
) -> list[Violation]:
    out: list[Violation] = []
    by_action: dict[str, ScheduledAction] = {}
    for e in schedule.entries:
        if e.action not in tree.nodes or not tree.nodes[e.action].is_action:
            out.append(Violation("UnknownAction", e.action))
            continue
        if e.action in by_action:
            out.append(Violation("DuplicateAction", e.action))
        by_action[e.action] = e
        if e.end < e.start:
            out.append(Violation("NegativeDuration", e.action))
    idx = tree.index

    # whole tasks, one owner each
    for u in tree.units:
        kids = tree.nodes[u].children
        present = [a for a in kids if a in by_action]
        if present and len(present) != len(kids):
            out.append(Violation("IncompleteTask", u, f"{len(present)}/{len(kids)} actions scheduled"))
        if len({by_action[a].agent for a in present}) > 1:
            out.append(Violation("SplitTask", u))

    # durations
    agents = {a.id: a for a in spec.agents} if spec else {}
    lanes: dict[str, list[ScheduledAction]] = {}
    for e in _sort_entries(by_action.values()):
        lanes.setdefault(e.agent, []).append(e)
    expected: dict[str, float] = {}
    for ag, lane in lanes.items():
        pos = agents[ag].start_position if ag in agents else None
        for e in lane:
            base = assessments.get((ag, e.action))
            if base is None or not base.feasible:
                out.append(Violation("InfeasibleAssignment", e.action, ag))
                expected[e.action] = e.end - e.start
                continue
            d = base.duration
            if pos is not None and e.action.startswith("GP("):
                d = assess(spec, agents[ag], e.action, pos).duration
            expected[e.action] = d
            if pos is not None:
                pos = location_after(spec, e.action, pos)
        last = None
        for e in lane:
            if last is not None and e.start < last.end - TIME_EPS:
                out.append(Violation("OverlapViolation", e.action, f"{ag} still busy with {last.action}"))
            last = e
    for a, e in by_action.items():
        group = idx.joint_group.get(a)
        want = expected.get(a, e.end - e.start)
        if group and all(x in by_action for x in group):
            want = max(expected.get(x, 0.0) for x in group)
        if abs((e.end - e.start) - want) > 1e-6 * max(1.0, want):
            out.append(Violation("DurationViolation", a, f"{e.end - e.start} != {want}"))

    # precedence
    for a, e in by_action.items():
        for p in sorted(idx.requires.get(a, ())):
            if p in by_action and by_action[p].end > e.start + TIME_EPS:
                rule = "SeqViolation" if tree.unit_of.get(p) == tree.unit_of.get(a) else "EnablesViolation"
                out.append(Violation(rule, a, f"starts before {p} ends"))
            elif p not in by_action and tree.unit_of.get(p) in {tree.unit_of.get(x) for x in by_action}:
                out.append(Violation("EnablesViolation", a, f"{p} never runs"))
        for b in sorted(idx.disabled_until.get(a, ())):
            if b in by_action and by_action[b].end > e.end + TIME_EPS:
                out.append(Violation("DisablesViolation", a, f"finishes before {b}"))

    # joint sync
    seen_groups = set()
    for a in by_action:
        group = idx.joint_group.get(a)
        if not group or group in seen_groups:
            continue
        seen_groups.add(group)
        present = [by_action[x] for x in group if x in by_action]
        if len(present) != len(group):
            out.append(Violation("SyncViolation", a, "joint partner missing"))
            continue
        if len({p.start for p in present}) > 1:
            out.append(Violation("SyncViolation", a, "joint actions start at different times"))
        if len({p.agent for p in present}) != len(present):
            out.append(Violation("SyncViolation", a, "joint actions share an agent"))

    # resources: replay consume at start, produce at end
    events = []
    for a, e in by_action.items():
        for rid, amt in idx.consumes.get(a, ()):
            events.append((e.start, 1, a, e.agent, rid, -amt))
        for rid, amt in idx.produces.get(a, ()):
            events.append((e.end, 0, a, e.agent, rid, amt))
    state = dict(tree.resources)
    for _, _, a, ag, rid, amt in sorted(events):
        res = state.get(rid)
        if res is None or res.owner_agent not in (None, ag):
            continue
        new = apply_resource_effect(res, amt)
        if new is INSUFFICIENT:
            out.append(Violation("ResourceViolation", a, f"{rid} exhausted for {ag}"))
        else:
            state[rid] = new

    if by_action and abs(schedule.makespan - max(e.end for e in by_action.values())) > TIME_EPS:
        out.append(Violation("MakespanMismatch", str(schedule.makespan)))
    return out


# --------------------------------------------------------------------------
# objective


@dataclass(frozen=True)
class Reference:
    q_best: float
    t_ref: float
    c_ref: float


@lru_cache(maxsize=256)
def mission_context(spec: MissionSpec) -> tuple[TaemsTree, dict]:
    tree = generate_tree(spec)
    return tree, assessment_table(spec, tree)


def unit_preds(tree: TaemsTree) -> dict[str, set[str]]:
    """Task-level precedence derived from action-level enables edges."""
    out: dict[str, set[str]] = {u: set() for u in tree.units}
    for rel in tree.edges(RelKind.ENABLES):
        for s in tree.leaves_under(rel.source) if rel.source in tree.nodes else ():
            for t in tree.leaves_under(rel.target) if rel.target in tree.nodes else ():
                us, ut = tree.unit_of.get(s), tree.unit_of.get(t)
                if us and ut and us != ut:
                    out[ut].add(us)
    return out


def topological_units(tree: TaemsTree) -> list[str]:
    preds = unit_preds(tree)
    depth: dict[str, int] = {}

    def d(u: str, trail=()) -> int:
        if u not in depth:
            depth[u] = 1 + max((d(p, trail + (u,)) for p in preds[u] if p not in trail), default=-1)
        return depth[u]

    return sorted(tree.units, key=lambda u: (d(u), u))


def joint_units(tree: TaemsTree) -> list[tuple[str, ...]]:
    return [
        tuple(n.children)
        for n in tree.nodes.values()
        if n.local_qaf is not None and not n.is_action and all(c in tree.units for c in n.children)
    ]


@lru_cache(maxsize=256)
def reference(spec: MissionSpec) -> Reference:
    """Normalizers for the objective.

    Quality is measured against every action done by its best-scoring agent.
    Time and cost are measured against the cheaper (resp. quicker) of the
    serial plans in which one agent builds the whole wall alone, helped only
    where a brick needs a second carrier.
    """
    tree, table = mission_context(spec)
    agents = [a.id for a in spec.planning_agents]
    best_q = {}
    for a in tree.actions:
        if a.startswith("PD("):
            qs = [table[(ag, a)].quality for ag in agents if table[(ag, a)].feasible]
            best_q[a] = max(qs, default=0.0)
    q_best = math.fsum(best_q[k] for k in sorted(best_q))

    groups = joint_units(tree)
    in_group = {u for g in groups for u in g}
    solo = [u for u in topological_units(tree) if u not in in_group]
    uavs = [a.id for a in spec.planning_agents if a.kind is AgentKind.UAV]

    def capable(ag: str, unit: str) -> bool:
        return all(table[(ag, a)].feasible for a in tree.nodes[unit].children)

    makespans, costs = [], []
    for lead in agents:
        if not all(capable(lead, u) for u in solo):
            continue
        helpers = [None] if not groups else [h for h in uavs if h != lead]
        if groups and lead not in uavs:
            continue
        for helper in helpers:
            assign = {u: lead for u in solo}
            order = {lead: [], helper: []} if helper else {lead: []}
            for g in groups:
                assign[g[0]], assign[g[1]] = lead, helper
            for u in topological_units(tree):
                if u in assign:
                    order[assign[u]].append(u)
            try:
                sched = build_schedule(tree, assign, table, spec=spec, order=order)
            except (Deadlock, ValueError):
                continue
            makespans.append(sched.makespan)
            costs.append(sched.total_cost)
    if makespans:
        return Reference(q_best, min(makespans), min(costs))

    # no single agent can do everything: serial sum of per-task bests
    units = tree.units
    unit_d = [min(sum(table[(ag, a)].duration for a in tree.nodes[u].children) for ag in agents if capable(ag, u)) for u in units]
    unit_c = [min(sum(table[(ag, a)].cost for a in tree.nodes[u].children) for ag in agents if capable(ag, u)) for u in units]
    return Reference(q_best, math.fsum(unit_d), math.fsum(unit_c))


def objective(schedule: Schedule, spec: MissionSpec, criteria: Criteria | Sequence[float] | None = None) -> float:
    """Weighted score of a schedule, at most 1.

    alpha * quality share + beta * relative time saving + gamma * relative
    cost saving, the savings measured against the serial reference plans.
    """
    if criteria is None:
        criteria = spec.criteria
    weights = criteria.weights if isinstance(criteria, Criteria) else tuple(criteria)[:3]
    check_weights(weights)
    alpha, beta, gamma = weights
    ref = reference(spec)
    q = schedule.total_quality / ref.q_best if ref.q_best > 0 else 1.0
    t = 1.0 - schedule.makespan / ref.t_ref if ref.t_ref > 0 else 0.0
    c = 1.0 - schedule.total_cost / ref.c_ref if ref.c_ref > 0 else 0.0
    return alpha * q + beta * t + gamma * c


# --------------------------------------------------------------------------
# JSON


def schedule_to_json(schedule: Schedule) -> dict:
    return {
        "entries": [
            {
                "agent": e.agent,
                "action": e.action,
                "start": e.start,
                "end": e.end,
                "cost": e.cost,
                "quality": e.quality,
            }
            for e in schedule.entries
        ],
        "makespan": schedule.makespan,
        "total_cost": schedule.total_cost,
        "total_quality": schedule.total_quality,
        "binding_enables": [list(p) for p in schedule.binding_enables],
    }


def schedule_from_json(data: Mapping) -> Schedule:
    entries = [
        ScheduledAction(
            str(e["agent"]),
            str(e["action"]),
            float(e["start"]),
            float(e["end"]),
            float(e.get("cost", 0.0)),
            float(e.get("quality", 0.0)),
        )
        for e in data["entries"]
    ]
    return make_schedule(entries, [tuple(p) for p in data.get("binding_enables", ())])


def dump_schedule(schedule: Schedule, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule_to_json(schedule), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schedule(path) -> Schedule:
    with open(path, encoding="utf-8") as fh:
        return schedule_from_json(json.load(fh))

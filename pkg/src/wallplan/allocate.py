"""Redundancy resolution: normalized multi-criteria ratings, the market-based
allocation scheme, and exact one-to-one assignment for joint tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import (
    EmptyAgentSet,
    InfeasibleDimensions,
    InfeasibleTask,
    NotComplexlyRedundant,
    TooFewAgents,
)
from .mission import Assessment, check_delta, check_weights
from .taems import Qaf, TaemsNode


@dataclass(frozen=True)
class AllocationScheme:
    pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        tasks = [t for t, _ in self.pairs]
        if len(set(tasks)) != len(tasks):
            raise ValueError("a task may appear at most once in an allocation scheme")

    def agent_for(self, task: str) -> str | None:
        for t, a in self.pairs:
            if t == task:
                return a
        return None

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.pairs

    def as_dict(self) -> dict[str, str]:
        return dict(self.pairs)


@dataclass(frozen=True)
class AssignmentMatrix:
    ratings: tuple[tuple[float, ...], ...]
    agents: tuple[str, ...]
    subtasks: tuple[str, ...]

    def __post_init__(self):
        if len(self.ratings) != len(self.agents):
            raise ValueError("one rating row per agent")
        for row in self.ratings:
            if len(row) != len(self.subtasks):
                raise ValueError("one rating column per subtask")
            if not all(math.isfinite(v) for v in row):
                raise ValueError("ratings must be finite")

    def objective(self, assignment: Mapping[str, str]) -> float:
        row = {a: i for i, a in enumerate(self.agents)}
        return sum(self.ratings[row[assignment[t]]][j] for j, t in enumerate(self.subtasks))


def _ratio(num: float, span: float) -> float:
    # shared constant on a degenerate span keeps the argmax and stays in [0, 1]
    return 1.0 if span == 0 else num / span


def rate(inputs: Mapping[str, Assessment], weights: Sequence[float]) -> dict[str, float]:
    """Weighted normalized rating R_i(j) of each capable agent for one task.

    Agents whose assessment is infeasible are left out before normalizing.
    """
    check_weights(weights)
    alpha, beta, gamma = weights
    pool = {a: s for a, s in inputs.items() if s.feasible}
    if not pool:
        raise EmptyAgentSet("no agent can perform the task")
    qs = [s.quality for s in pool.values()]
    ds = [s.duration for s in pool.values()]
    cs = [s.cost for s in pool.values()]
    q_min, q_max = min(qs), max(qs)
    d_min, d_max = min(ds), max(ds)
    c_min, c_max = min(cs), max(cs)
    out = {}
    for agent in sorted(pool):
        s = pool[agent]
        r_q = _ratio(s.quality - q_min, q_max - q_min)
        r_d = _ratio(d_max - s.duration, d_max - d_min)
        r_c = _ratio(c_max - s.cost, c_max - c_min)
        out[agent] = alpha * r_q + beta * r_d + gamma * r_c
    return out


def total_rating(
    ratings: Mapping[str, float],
    scheme: AllocationScheme,
    task: str,
    delta: float,
    check: bool = True,
) -> dict[str, float]:
    """Blend of the normalized rating and the market preference for ``task``.

    ``check=False`` evaluates the formula for any delta, which is only useful
    for probing behaviour outside the admissible range.
    """
    if check:
        check_delta(delta)
    if not ratings:
        raise EmptyAgentSet("no ratings to combine")
    r_min, r_max = min(ratings.values()), max(ratings.values())
    preferred = scheme.agent_for(task)
    return {
        agent: delta * _ratio(r - r_min, r_max - r_min) + (1 - delta) * (1.0 if agent == preferred else 0.0)
        for agent, r in sorted(ratings.items())
    }


def _argmax(values: Mapping[str, float]) -> str:
    return min(values, key=lambda a: (-values[a], a))


def resolve_simple(
    task: str,
    candidates: Iterable[str],
    assessments: Mapping[str, Assessment],
    scheme: AllocationScheme,
    weights: Sequence[float],
    delta: float,
) -> str:
    """Winner of a simply redundant task; everyone else drops it."""
    pool = sorted(set(candidates))
    if not pool:
        raise EmptyAgentSet(f"no candidates for {task}")
    ratings = rate({a: assessments[a] for a in pool}, weights)
    return _argmax(total_rating(ratings, scheme, task, delta))


def market_allocation(
    tasks: Sequence[str],
    agents: Sequence[str],
    assessments: Mapping[tuple[str, str], Assessment],
    enables_order: Mapping[str, Iterable[str]] | None = None,
    *,
    lags: Mapping[tuple[str, str], float] | None = None,
    joint_groups: Iterable[Sequence[str]] = (),
) -> AllocationScheme:
    """Greedy sequential auction that aims at a short mission.

    Every round looks at the tasks whose predecessors are already placed and
    commits the (task, agent) pair that would finish earliest on the tentative
    timelines.  ``lags[(agent, pred)]`` is how long after its start ``pred``
    releases its successors; by default the whole duration.  Tasks in a joint
    group go to distinct agents and start together.
    """
    enables_order = enables_order or {}
    lags = lags or {}
    agents = sorted(agents)
    group_of: dict[str, tuple[str, ...]] = {}
    for g in joint_groups:
        g = tuple(sorted(g))
        for t in g:
            group_of[t] = g

    def dur(agent: str, task: str) -> float:
        s = assessments.get((agent, task))
        return s.duration if s is not None and s.feasible else math.inf

    for t in tasks:
        if all(math.isinf(dur(a, t)) for a in agents):
            raise InfeasibleTask(f"no agent can perform {t}")
        if t in group_of and sum(not math.isinf(dur(a, t)) for a in agents) < len(group_of[t]):
            raise InfeasibleTask(f"not enough agents for joint task {t}")

    avail = {a: 0.0 for a in agents}
    started: dict[str, float] = {}
    owner: dict[str, str] = {}
    pending = set(tasks)
    preds = {t: set(enables_order.get(t, ())) & set(tasks) for t in tasks}
    pairs: list[tuple[str, str]] = []

    def release(pred: str) -> float:
        a = owner[pred]
        return started[pred] + lags.get((a, pred), dur(a, pred))

    while pending:
        best = None
        ready = sorted(t for t in pending if preds[t] <= started.keys())
        if not ready:
            raise InfeasibleTask("cyclic precedence among " + ", ".join(sorted(pending)))
        for t in ready:
            group = group_of.get(t, (t,))
            if t != group[0] or not all(g in ready for g in group):
                continue
            ready_at = max((release(p) for g in group for p in preds[g]), default=0.0)
            if len(group) == 1:
                for a in agents:
                    d = dur(a, t)
                    if math.isinf(d):
                        continue
                    start = max(avail[a], ready_at)
                    key = (start + d, t, a)
                    if best is None or key < best[0]:
                        best = (key, [(t, a, start)])
            else:
                picked = _pick_joint(group, agents, avail, dur, ready_at)
                if picked is None:
                    continue
                finish, start, chosen = picked
                key = (finish, t, chosen[0])
                if best is None or key < best[0]:
                    best = (key, [(g, a, start) for g, a in zip(group, chosen)])
        if best is None:
            raise InfeasibleTask("no feasible placement for " + ", ".join(sorted(pending)))
        for t, a, start in best[1]:
            started[t] = start
            owner[t] = a
            avail[a] = start + dur(a, t)
            pending.discard(t)
            pairs.append((t, a))
        if len(best[1]) > 1:
            finish = best[0][0]
            for _, a, _ in best[1]:
                avail[a] = finish
    return AllocationScheme(tuple(pairs))


def _pick_joint(group, agents, avail, dur, ready_at):
    """Distinct agents for a joint group: earliest individual finishers first."""
    options = []
    for a in agents:
        ds = [dur(a, g) for g in group]
        if any(math.isinf(d) for d in ds):
            continue
        options.append((max(avail[a], ready_at) + max(ds), a))
    options.sort()
    if len(options) < len(group):
        return None
    chosen = [a for _, a in options[: len(group)]]
    start = max(max(avail[a] for a in chosen), ready_at)
    finish = start + max(dur(a, g) for a in chosen for g in group)
    return finish, start, chosen


def solve_gap(matrix: AssignmentMatrix) -> dict[str, str]:
    """Exact max-rating one-to-one assignment of subtasks to agents.

    Every subtask gets exactly one agent and no agent takes more than one.
    Depth-first branch and bound; the optimistic bound adds, for every open
    subtask, the best rating among agents still free.
    """
    m, n = len(matrix.agents), len(matrix.subtasks)
    if m < n:
        raise InfeasibleDimensions(f"{m} agents cannot cover {n} subtasks")
    if n == 0:
        return {}
    R = matrix.ratings
    cols = sorted(range(n), key=lambda j: (-(max(R[i][j] for i in range(m)) - min(R[i][j] for i in range(m))), j))
    rows_for = {j: sorted(range(m), key=lambda i: (-R[i][j], i)) for j in cols}
    slack = 1e-9

    best_value = -math.inf
    best: list[int] | None = None
    chosen = [-1] * n
    used = [False] * m

    def bound(depth: int) -> float:
        total = 0.0
        for j in cols[depth:]:
            total += max(R[i][j] for i in range(m) if not used[i])
        return total

    def dfs(depth: int, value: float) -> None:
        nonlocal best_value, best
        if depth == n:
            exact = sum(R[chosen[j]][j] for j in range(n))
            if exact > best_value:
                best_value, best = exact, list(chosen)
            return
        if value + bound(depth) < best_value - slack:
            return
        j = cols[depth]
        for i in rows_for[j]:
            if used[i]:
                continue
            used[i] = True
            chosen[j] = i
            dfs(depth + 1, value + R[i][j])
            used[i] = False
        chosen[j] = -1

    dfs(0, 0.0)
    assert best is not None
    return {matrix.subtasks[j]: matrix.agents[best[j]] for j in range(n)}


def resolve_complex(
    task: TaemsNode,
    eligible_agents: Iterable[str],
    assessments: Mapping[tuple[str, str], Assessment],
    weights: Sequence[float],
) -> dict[str, str]:
    """One agent per subtask of a joint task, maximizing the summed rating."""
    if task.local_qaf is not Qaf.MAX or task.is_action:
        raise NotComplexlyRedundant(task.id)
    subtasks = tuple(task.children)
    pool = sorted(
        a
        for a in set(eligible_agents)
        if all(assessments.get((a, s)) is not None and assessments[(a, s)].feasible for s in subtasks)
    )
    if len(pool) < len(subtasks):
        raise TooFewAgents(f"{task.id} needs {len(subtasks)} agents, {len(pool)} eligible")
    per_sub = {s: rate({a: assessments[(a, s)] for a in pool}, weights) for s in subtasks}
    matrix = AssignmentMatrix(
        ratings=tuple(tuple(per_sub[s][a] for s in subtasks) for a in pool),
        agents=tuple(pool),
        subtasks=subtasks,
    )
    return solve_gap(matrix)

"""Ground truth for benchmarking: an exhaustive optimal planner, a central
auction baseline, a seeded mission generator and optimality-gap statistics."""

from __future__ import annotations

import itertools
import json
import math
import random
import statistics
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from .coordinate import run_coordination
from .errors import Deadlock, TooLarge, UnsupportedJointTask
from .mission import (
    AgentKind,
    AgentSpec,
    Brick,
    Color,
    Criteria,
    MissionSpec,
    check_mission,
)
from .schedule import (
    Schedule,
    build_schedule,
    joint_units,
    mission_context,
    objective,
    unit_preds,
)

MAX_BRICKS = 6
MAX_AGENTS = 3

TABLE_ROWS: tuple[tuple[float, float, float], ...] = (
    (0.5, 0.35, 0.15),
    (0.35, 0.15, 0.5),
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
)

BRICK_LENGTHS = (0.3, 0.6, 1.2, 1.8)
LAYER_HEIGHT = 0.2
FIELD = 4.0


# --------------------------------------------------------------------------
# exhaustive search


@dataclass(frozen=True)
class Plan:
    assignment: tuple[tuple[str, str], ...]
    order: tuple[tuple[str, tuple[str, ...]], ...]
    quality: float
    makespan: float
    cost: float


def _criteria(c) -> Criteria:
    if isinstance(c, Criteria):
        return c.validate()
    a, b, g = tuple(c)[:3]
    return Criteria(a, b, g).validate()


def _closure(preds: Mapping[str, set[str]]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}

    def walk(u: str) -> set[str]:
        if u not in out:
            out[u] = set()
            acc = set()
            for p in preds.get(u, ()):
                acc.add(p)
                acc |= walk(p)
            out[u] = acc
        return out[u]

    for u in preds:
        walk(u)
    return out


def linear_extensions(items: Sequence[str], before: Mapping[str, set[str]]) -> Iterable[tuple[str, ...]]:
    """Every ordering of ``items`` that respects ``before`` restricted to them."""
    items = sorted(items)
    pool = set(items)
    need = {u: before.get(u, set()) & pool for u in items}

    def rec(prefix: list[str], placed: set[str]):
        if len(prefix) == len(items):
            yield tuple(prefix)
            return
        for u in items:
            if u not in placed and need[u] <= placed:
                prefix.append(u)
                placed.add(u)
                yield from rec(prefix, placed)
                placed.discard(u)
                prefix.pop()

    yield from rec([], set())


def _guard(spec: MissionSpec) -> None:
    n_agents = len(spec.planning_agents)
    if len(spec.bricks) > MAX_BRICKS or n_agents > MAX_AGENTS:
        raise TooLarge(
            f"exhaustive search is limited to {MAX_BRICKS} bricks and {MAX_AGENTS} agents, "
            f"got {len(spec.bricks)} and {n_agents}"
        )


def _assignments(tree, table, agents):
    units = list(tree.units)
    options = []
    for u in units:
        opts = [a for a in agents if all(table[(a, x)].feasible for x in tree.nodes[u].children)]
        options.append(opts)
    groups = joint_units(tree)
    for combo in itertools.product(*options):
        assign = dict(zip(units, combo))
        if all(len({assign[u] for u in g}) == len(g) for g in groups):
            yield assign


@lru_cache(maxsize=64)
def _plans(spec: MissionSpec) -> tuple[Plan, ...]:
    tree, table = mission_context(spec)
    agents = [a.id for a in spec.planning_agents]
    before = _closure(unit_preds(tree))
    plans = []
    for assign in _assignments(tree, table, agents):
        lanes = {a: [u for u, ag in assign.items() if ag == a] for a in agents}
        lanes = {a: us for a, us in lanes.items() if us}
        per_agent = [list(linear_extensions(us, before)) for us in lanes.values()]
        for orders in itertools.product(*per_agent):
            order = dict(zip(lanes, orders))
            try:
                sched = build_schedule(tree, assign, table, spec=spec, order=order)
            except Deadlock:
                continue
            plans.append(
                Plan(
                    tuple(sorted(assign.items())),
                    tuple(sorted((a, tuple(o)) for a, o in order.items())),
                    sched.total_quality,
                    sched.makespan,
                    sched.total_cost,
                )
            )
    return tuple(plans)


def enumerate_plans(spec: MissionSpec) -> tuple[Plan, ...]:
    """All feasible (assignment, per-agent order) plans with their totals."""
    _guard(spec)
    return _plans(spec.with_criteria(Criteria()))


def replay(spec: MissionSpec, plan: Plan) -> Schedule:
    tree, table = mission_context(spec)
    return build_schedule(tree, dict(plan.assignment), table, spec=spec, order={a: list(o) for a, o in plan.order})


def exhaustive_optimal(spec: MissionSpec, criteria=None) -> tuple[Schedule, float]:
    """Best schedule over every assignment and precedence-consistent order.

    Ties keep the first plan in enumeration order.
    """
    crit = _criteria(criteria if criteria is not None else spec.criteria)
    plans = enumerate_plans(spec)
    if not plans:
        raise Deadlock("no executable plan exists")
    best, best_j = None, -math.inf
    for p in plans:
        j = _score(spec, crit, p)
        if j > best_j:
            best, best_j = p, j
    sched = replay(spec, best)
    return sched, objective(sched, spec, crit)


def _score(spec: MissionSpec, crit: Criteria, plan: Plan) -> float:
    # objective() only reads these three totals
    return objective(_Totals(plan.quality, plan.makespan, plan.cost), spec, crit)


@dataclass(frozen=True)
class _Totals:
    total_quality: float
    makespan: float
    total_cost: float


# --------------------------------------------------------------------------
# auction baseline


def auction_baseline(spec: MissionSpec, criteria=None) -> Schedule:
    """Central auctioneer selling one precedence-ready task per round.

    Each capable agent bids the objective of the partial plan with the task
    inserted at the best precedence-consistent slot of its queue; the highest
    bid wins, ties to the lowest (task, agent, slot).
    """
    crit = _criteria(criteria if criteria is not None else spec.criteria)
    tree, table = mission_context(spec)
    if joint_units(tree):
        raise UnsupportedJointTask("the auction baseline cannot sell joint tasks")
    preds = unit_preds(tree)
    before = _closure(preds)
    agents = [a.id for a in spec.planning_agents]
    assign: dict[str, str] = {}
    order: dict[str, list[str]] = {a: [] for a in agents}
    pending = set(tree.units)
    while pending:
        ready = sorted(u for u in pending if preds[u] <= assign.keys())
        best = None
        for u in ready:
            for a in agents:
                if not all(table[(a, x)].feasible for x in tree.nodes[u].children):
                    continue
                queue = order[a]
                first = max((i + 1 for i, v in enumerate(queue) if v in before[u]), default=0)
                for slot in range(first, len(queue) + 1):
                    trial_order = {ag: list(q) for ag, q in order.items() if q}
                    trial_order[a] = queue[:slot] + [u] + queue[slot:]
                    try:
                        sched = build_schedule(
                            tree, {**assign, u: a}, table, spec=spec, order=trial_order, partial=True
                        )
                    except Deadlock:
                        continue
                    key = (-objective(sched, spec, crit), u, a, slot)
                    if best is None or key < best:
                        best = key
        if best is None:
            raise Deadlock("auction stalled: " + ", ".join(sorted(pending)))
        _, u, a, slot = best
        assign[u] = a
        order[a].insert(slot, u)
        pending.discard(u)
    return build_schedule(tree, assign, table, spec=spec, order={a: q for a, q in order.items() if q})


# --------------------------------------------------------------------------
# random missions


def _pyramid(n: int, rng: random.Random) -> list[tuple[int, int]]:
    """(layer, slot) cells for ``n`` bricks, each upper brick on two below."""
    w = 1
    while w * (w + 1) // 2 < n:
        w += 1
    if w < n and rng.random() < 0.5:
        w += 1
    cells = []
    layer, width = 0, w
    while len(cells) < n:
        for s in range(width):
            if len(cells) == n:
                break
            cells.append((layer, s))
        layer += 1
        width -= 1
    return cells


def random_mission(seed: int, n_bricks: int, n_agents: int = 3, orange: bool = False) -> MissionSpec:
    """Seeded pseudo-random mission.

    Agents are ``uav1..uav{n-1}`` plus ``ugv1`` (a lone agent is a UAV), all
    starting at the origin.  Bricks form a supported pyramid; colors are
    random but at least one brick is blue and one red or green brick sits
    within the ground robot's reach.
    """
    if n_bricks < 1 or n_agents < 1:
        raise ValueError("need at least one brick and one agent")
    rng = random.Random(seed)
    palette = [Color.RED, Color.GREEN, Color.BLUE] + ([Color.ORANGE] if orange else [])
    piles = {c: (round(rng.uniform(-FIELD, FIELD), 3), round(rng.uniform(-FIELD, FIELD), 3)) for c in Color}
    wall_x, wall_y = round(rng.uniform(-FIELD, FIELD), 3), round(rng.uniform(-FIELD, FIELD), 3)
    step = max(BRICK_LENGTHS) / 2

    cells = _pyramid(n_bricks, rng)
    ids = {cell: f"B{cell[0] + 1}.{cell[1] + 1}" for cell in cells}
    colors = [rng.choice(palette) for _ in cells]
    lengths = [rng.choice(BRICK_LENGTHS) for _ in cells]
    if n_bricks >= 2:
        if Color.BLUE not in colors:
            colors[-1] = Color.BLUE
        if not any(c in (Color.RED, Color.GREEN) and cells[i][0] <= 1 for i, c in enumerate(colors)):
            colors[0] = rng.choice([Color.RED, Color.GREEN])
    bricks = []
    for i, (layer, slot) in enumerate(cells):
        supports = tuple(ids[(layer - 1, s)] for s in (slot, slot + 1)) if layer else ()
        x = wall_x + (2 * slot + layer) * step
        z = LAYER_HEIGHT * layer + LAYER_HEIGHT / 2
        bricks.append(
            Brick(
                id=ids[(layer, slot)],
                color=colors[i],
                length=lengths[i],
                width=0.2,
                height=LAYER_HEIGHT,
                pile_position=piles[colors[i]],
                wall_pose=(round(x, 3), wall_y, round(z, 3), 0.0),
                layer=layer,
                supports=supports,
            )
        )

    agents = []
    n_uav = n_agents - 1 if n_agents > 1 else 1
    for k in range(n_uav):
        agents.append(AgentSpec(f"uav{k + 1}", AgentKind.UAV, round(rng.uniform(1.0, 3.0), 3), 1.0))
    if n_agents > 1:
        agents.append(
            AgentSpec("ugv1", AgentKind.UGV, round(rng.uniform(0.3, 0.9), 3), 0.2, reach_height=0.45)
        )
    spec = MissionSpec(tuple(bricks), tuple(agents))
    check_mission(spec)
    return spec


def corpus(n: int = 20, n_agents: int = 3) -> list[MissionSpec]:
    """The seeded benchmark set: seeds 1..n with 3 to 5 bricks."""
    return [random_mission(seed, 3 + seed % 3, n_agents) for seed in range(1, n + 1)]


# --------------------------------------------------------------------------
# gaps


@dataclass(frozen=True)
class GapReport:
    criteria: tuple[float, float, float]
    mean_gap: float
    std_gap: float
    gaps: tuple[float, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {
            "criteria": list(self.criteria),
            "mean_gap": self.mean_gap,
            "std_gap": self.std_gap,
            "gaps": list(self.gaps),
        }


GAP_TOL = 1e-9


def gap(j_star: float, j: float) -> float:
    """Relative shortfall in percent; a zero optimum counts as all or nothing."""
    if abs(j_star) <= 1e-12:
        return 0.0 if j >= j_star - GAP_TOL else 100.0
    g = 100.0 * (j_star - j) / abs(j_star)
    return 0.0 if abs(g) < GAP_TOL else g


def summarize(criteria, gaps: Sequence[float]) -> GapReport:
    gaps = tuple(gaps)
    if not gaps:
        raise ValueError("no gaps to summarize")
    mean = math.fsum(gaps) / len(gaps)
    std = statistics.stdev(gaps) if len(gaps) > 1 else 0.0
    return GapReport(tuple(criteria), mean, std, gaps)


def method_schedule(spec: MissionSpec) -> Schedule:
    return run_coordination(spec)[0]


def gap_report(missions: Sequence[MissionSpec], criteria, method=method_schedule) -> GapReport:
    """Gap of ``method`` against the exhaustive optimum on every mission."""
    crit = _criteria(criteria)
    if not missions:
        raise ValueError("empty corpus")
    for m in missions:
        _guard(m)
    gaps = []
    for m in missions:
        spec = m.with_criteria(Criteria(*crit.weights, delta=m.criteria.delta))
        _, j_star = exhaustive_optimal(spec, crit)
        j = objective(method(spec), spec, crit)
        gaps.append(gap(j_star, j))
    return summarize(crit.weights, gaps)


def table_report(missions: Sequence[MissionSpec], rows=TABLE_ROWS, baseline: bool = True) -> dict:
    """Gap reports per criteria row for the method and, if asked, the auction."""
    out = {"rows": []}
    for row in rows:
        entry = {"criteria": list(row), "method": gap_report(missions, row).to_json()}
        if baseline:
            entry["auction"] = gap_report(missions, row, method=lambda s: auction_baseline(s)).to_json()
        out["rows"].append(entry)
    return out


def format_table(report: Mapping) -> str:
    lines = [f"{'alpha':>6} {'beta':>6} {'gamma':>6} | {'method mean':>11} {'std':>7} | {'auction mean':>12} {'std':>7}"]
    for row in report["rows"]:
        a, b, g = row["criteria"]
        m = row["method"]
        line = f"{a:6.2f} {b:6.2f} {g:6.2f} | {m['mean_gap']:10.2f}% {m['std_gap']:6.2f}%"
        if "auction" in row:
            au = row["auction"]
            line += f" | {au['mean_gap']:11.2f}% {au['std_gap']:6.2f}%"
        lines.append(line)
    return "\n".join(lines) + "\n"


def report_json(report: Mapping) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"

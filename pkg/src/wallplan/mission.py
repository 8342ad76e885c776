"""Wall-building missions: bricks, agents, task-tree generation and
per-agent (quality, duration, cost) assessments."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import BadDelta, BadWeights, EmptyWall, InvalidMission, NoEligibleAgent, UnknownAction
from .taems import Interrelationship, NodeKind, Qaf, RelKind, Resource, TaemsNode, TaemsTree

BIG_M = 1e6
SMALLEST_BRICK_M = 0.3
ROOT_ID = "Wall"
ACTION_TYPES = ("GP", "PU", "GW", "PD")
JOINT_PARTS = 2

_ACTION_RE = re.compile(r"^(GP|PU|GW|PD)\((.+)\)(?:#(\d+))?$")
_TASK_RE = re.compile(r"^TB\((.+)\)(?:#(\d+))?$")


class Color(str, Enum):
    RED = "Red"
    GREEN = "Green"
    BLUE = "Blue"
    ORANGE = "Orange"


class AgentKind(str, Enum):
    UGV = "UGV"
    UAV = "UAV"
    UAVX2 = "UAVx2"


@dataclass(frozen=True)
class Brick:
    id: str
    color: Color
    length: float
    width: float
    height: float
    pile_position: tuple[float, float]
    wall_pose: tuple[float, float, float, float]
    layer: int = 0
    supports: tuple[str, ...] = ()

    @property
    def pile_xyz(self) -> tuple[float, float, float]:
        return (self.pile_position[0], self.pile_position[1], 0.0)

    @property
    def wall_xyz(self) -> tuple[float, float, float]:
        return self.wall_pose[:3]


@dataclass(frozen=True)
class AgentSpec:
    id: str
    kind: AgentKind
    speed: float
    cost_rate: float
    start_position: tuple[float, float] = (0.0, 0.0)
    reach_height: float | None = None
    member_ids: tuple[str, ...] = ()

    @property
    def is_aerial(self) -> bool:
        return self.kind in (AgentKind.UAV, AgentKind.UAVX2)


@dataclass(frozen=True)
class ScoreTable:
    base_points: Mapping[str, float] = field(
        default_factory=lambda: {"Red": 1.0, "Green": 2.0, "Blue": 3.0, "Orange": 4.0}
    )
    uav_bonus: Mapping[str, float] = field(
        default_factory=lambda: {"Red": 2.0, "Green": 1.4, "Blue": 1.0, "Orange": 1.0}
    )

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.base_points.items())), tuple(sorted(self.uav_bonus.items()))))


@dataclass(frozen=True)
class Criteria:
    alpha: float = 0.5
    beta: float = 0.35
    gamma: float = 0.15
    delta: float = 0.7

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def validate(self) -> "Criteria":
        check_weights(self.weights)
        check_delta(self.delta)
        return self


def check_weights(weights: Sequence[float]) -> None:
    if len(weights) != 3 or any(not math.isfinite(w) or w < 0 for w in weights):
        raise BadWeights(f"weights must be three non-negative reals, got {tuple(weights)}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise BadWeights(f"weights must sum to 1, got {sum(weights)}")


def check_delta(delta: float) -> None:
    if not (0.5 <= delta < 1.0):
        raise BadDelta(f"delta must lie in [0.5, 1), got {delta}")


@dataclass(frozen=True)
class Assessment:
    quality: float
    duration: float
    cost: float

    @property
    def feasible(self) -> bool:
        return self.duration < BIG_M and self.cost < BIG_M


INFEASIBLE = Assessment(0.0, BIG_M, BIG_M)


@dataclass(frozen=True)
class MissionSpec:
    bricks: tuple[Brick, ...]
    agents: tuple[AgentSpec, ...]
    score_table: ScoreTable = field(default_factory=ScoreTable)
    criteria: Criteria = field(default_factory=Criteria)
    fixed_grab_s: float = 5.0
    fixed_release_s: float = 5.0

    def brick(self, brick_id: str) -> Brick:
        for b in self.bricks:
            if b.id == brick_id:
                return b
        raise KeyError(brick_id)

    def agent(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def planning_agents(self) -> tuple[AgentSpec, ...]:
        """Agents that bid for work; pair descriptors are derived on demand."""
        return tuple(sorted((a for a in self.agents if a.kind is not AgentKind.UAVX2), key=lambda a: a.id))

    def with_criteria(self, criteria: Criteria) -> "MissionSpec":
        return MissionSpec(self.bricks, self.agents, self.score_table, criteria, self.fixed_grab_s, self.fixed_release_s)


# --------------------------------------------------------------------------
# node naming


def task_id(brick_id: str, part: int | None = None) -> str:
    return f"TB({brick_id})" + (f"#{part}" if part else "")


def action_id(kind: str, brick_id: str, part: int | None = None) -> str:
    return f"{kind}({brick_id})" + (f"#{part}" if part else "")


def parse_action(action: str) -> tuple[str, str, int | None]:
    m = _ACTION_RE.match(action)
    if not m:
        raise UnknownAction(action)
    return m.group(1), m.group(2), int(m.group(3)) if m.group(3) else None


def parse_task(task: str) -> tuple[str, int | None]:
    m = _TASK_RE.match(task)
    if not m:
        raise KeyError(task)
    return m.group(1), int(m.group(2)) if m.group(2) else None


def brick_of(node_id: str) -> str:
    m = _ACTION_RE.match(node_id) or _TASK_RE.match(node_id)
    if not m:
        raise KeyError(node_id)
    return m.group(2) if m.re is _ACTION_RE else m.group(1)


# --------------------------------------------------------------------------
# validation


def validate_mission(spec: MissionSpec) -> list[str]:
    problems = []
    ids = [b.id for b in spec.bricks]
    if len(set(ids)) != len(ids):
        problems.append("duplicate brick ids")
    by_id = {b.id: b for b in spec.bricks}
    for b in spec.bricks:
        if not isinstance(b.color, Color):
            problems.append(f"{b.id}: unknown color {b.color!r}")
        if not (SMALLEST_BRICK_M - 1e-12 <= b.length <= 1.8 + 1e-12):
            problems.append(f"{b.id}: length {b.length} outside [0.3, 1.8] m")
        if b.layer < 0:
            problems.append(f"{b.id}: negative layer")
        if b.layer == 0 and b.supports:
            problems.append(f"{b.id}: layer-0 brick cannot rest on other bricks")
        for s in b.supports:
            if s not in by_id:
                problems.append(f"{b.id}: unknown support {s}")
            elif by_id[s].layer >= b.layer:
                problems.append(f"{b.id}: support {s} is not in a lower layer")

    agent_ids = [a.id for a in spec.agents]
    if len(set(agent_ids)) != len(agent_ids):
        problems.append("duplicate agent ids")
    kinds = {a.id: a.kind for a in spec.agents}
    for a in spec.agents:
        if not a.speed > 0:
            problems.append(f"{a.id}: speed must be positive")
        if a.cost_rate < 0:
            problems.append(f"{a.id}: cost rate must be non-negative")
        if a.kind is AgentKind.UAVX2:
            m = a.member_ids
            if len(m) != 2 or m[0] == m[1] or any(kinds.get(x) is not AgentKind.UAV for x in m):
                problems.append(f"{a.id}: UAVx2 members must be two distinct existing UAVs")

    for table in (spec.score_table.base_points, spec.score_table.uav_bonus):
        for color, pts in table.items():
            if pts < 0:
                problems.append(f"score table: negative value for {color}")
    try:
        spec.criteria.validate()
    except (BadWeights, BadDelta) as exc:
        problems.append(str(exc))
    if spec.fixed_grab_s < 0 or spec.fixed_release_s < 0:
        problems.append("grab/release durations must be non-negative")
    return problems


def check_mission(spec: MissionSpec) -> None:
    problems = validate_mission(spec)
    if problems:
        raise InvalidMission("; ".join(problems))


# --------------------------------------------------------------------------
# tree generation


def _eligible_kinds(color: Color) -> frozenset[str]:
    if color is Color.BLUE:
        return frozenset({AgentKind.UAV.value})
    if color is Color.ORANGE:
        return frozenset({AgentKind.UAVX2.value})
    return frozenset({AgentKind.UGV.value, AgentKind.UAV.value})


def build_order(spec: MissionSpec) -> list[Brick]:
    return sorted(spec.bricks, key=lambda b: (b.layer, b.wall_pose[0], b.id))


def _left_neighbours(spec: MissionSpec) -> dict[str, str]:
    out = {}
    layers: dict[int, list[Brick]] = {}
    for b in build_order(spec):
        layers.setdefault(b.layer, []).append(b)
    for row in layers.values():
        for left, right in zip(row, row[1:]):
            out[right.id] = left.id
    return out


def generate_tree(spec: MissionSpec, resources: bool = True) -> TaemsTree:
    """Task tree for ``spec``.

    Each brick becomes an ordered GP, PU, GW, PD sequence.  Orange bricks
    split into one sequence per carrier, joined under a task whose local QAF
    is Max.  With ``resources`` every planning agent gets a one-brick carry
    slot gating its GP actions.
    """
    check_mission(spec)
    if not spec.bricks:
        raise EmptyWall("the wall has no bricks")
    agents = spec.planning_agents
    uavs = [a for a in agents if a.kind is AgentKind.UAV]
    for b in spec.bricks:
        if not any(_brick_feasible(a, b, None if b.color is not Color.ORANGE else 1) for a in agents) or (
            b.color is Color.ORANGE and len(uavs) < JOINT_PARTS
        ):
            raise NoEligibleAgent(f"no agent can handle brick {b.id} ({b.color.value})")

    nodes: dict[str, TaemsNode] = {}
    order = build_order(spec)
    parts_of: dict[str, list[int | None]] = {}
    for b in order:
        kinds = _eligible_kinds(b.color)
        if b.color is Color.ORANGE:
            parts: list[int | None] = list(range(1, JOINT_PARTS + 1))
            for p in parts:
                acts = [action_id(k, b.id, p) for k in ACTION_TYPES]
                for a in acts:
                    nodes[a] = TaemsNode(a, NodeKind.ACTION, eligible_agent_kinds=frozenset({AgentKind.UAV.value}))
                sub = task_id(b.id, p)
                nodes[sub] = TaemsNode(
                    sub, NodeKind.TASK, tuple(acts), Qaf.SEQ_SUM_ALL,
                    eligible_agent_kinds=frozenset({AgentKind.UAV.value}),
                )
            tb = task_id(b.id)
            nodes[tb] = TaemsNode(
                tb, NodeKind.TASK, tuple(task_id(b.id, p) for p in parts), Qaf.SUM_ALL,
                local_qaf=Qaf.MAX, eligible_agent_kinds=kinds,
            )
        else:
            parts = [None]
            acts = [action_id(k, b.id) for k in ACTION_TYPES]
            for a in acts:
                nodes[a] = TaemsNode(a, NodeKind.ACTION, eligible_agent_kinds=kinds)
            tb = task_id(b.id)
            nodes[tb] = TaemsNode(tb, NodeKind.TASK, tuple(acts), Qaf.SEQ_SUM_ALL, eligible_agent_kinds=kinds)
        parts_of[b.id] = parts
    nodes[ROOT_ID] = TaemsNode(ROOT_ID, NodeKind.TASK, tuple(task_id(b.id) for b in order), Qaf.SUM_ALL)

    edges: list[Interrelationship] = []
    seen: set[tuple[str, str]] = set()

    def enable(src: str, dst: str) -> None:
        if (src, dst) not in seen:
            seen.add((src, dst))
            edges.append(Interrelationship(RelKind.ENABLES, src, dst))

    by_id = {b.id: b for b in spec.bricks}
    left = _left_neighbours(spec)
    for b in order:
        earlier = list(b.supports)
        if b.id in left:
            earlier.append(left[b.id])
        for e in earlier:
            joint = by_id[e].color is Color.ORANGE or b.color is Color.ORANGE
            src_kind = "PD" if joint else "PU"
            for pe in parts_of[e]:
                for pb in parts_of[b.id]:
                    enable(action_id(src_kind, e, pe), action_id("GP", b.id, pb))

    res: dict[str, Resource] = {}
    if resources:
        gps = [a for a in nodes if a.startswith("GP(")]
        pds = [a for a in nodes if a.startswith("PD(")]
        for agent in agents:
            rid = f"carry({agent.id})"
            res[rid] = Resource(rid, state=1.0, lower=0.0, upper=1.1, owner_agent=agent.id)
            for gp in gps:
                edges.append(Interrelationship(RelKind.CONSUMES, gp, rid, 1.0))
            for pd in pds:
                edges.append(Interrelationship(RelKind.PRODUCES, pd, rid, 1.0))
            for gp in gps:
                edges.append(Interrelationship(RelKind.LIMITS, rid, gp))
    return TaemsTree(ROOT_ID, nodes, tuple(edges), res)


# --------------------------------------------------------------------------
# assessment


def _distance(p: Sequence[float], q: Sequence[float]) -> float:
    return math.dist(tuple(p) + (0.0,) * (3 - len(p)), tuple(q) + (0.0,) * (3 - len(q)))


def _brick_feasible(agent: AgentSpec, brick: Brick, part: int | None) -> bool:
    if agent.kind is AgentKind.UGV:
        if brick.color not in (Color.RED, Color.GREEN):
            return False
        return agent.reach_height is None or brick.wall_pose[2] <= agent.reach_height
    if agent.kind is AgentKind.UAV:
        if brick.color is Color.ORANGE:
            return part is not None
        return True
    return brick.color is Color.ORANGE


def _motion(spec: MissionSpec, agent: AgentSpec) -> tuple[float, float]:
    """(speed, cost rate); a pair moves at its slower member's pace and pays both."""
    if agent.kind is AgentKind.UAVX2 and agent.member_ids:
        members = []
        for mid in agent.member_ids:
            try:
                members.append(spec.agent(mid))
            except KeyError:
                pass
        if members:
            return min(m.speed for m in members), sum(m.cost_rate for m in members)
    return agent.speed, agent.cost_rate


def pair_agent(spec: MissionSpec, first: AgentSpec, second: AgentSpec) -> AgentSpec:
    return AgentSpec(
        id=f"{first.id}+{second.id}",
        kind=AgentKind.UAVX2,
        speed=min(first.speed, second.speed),
        cost_rate=first.cost_rate + second.cost_rate,
        start_position=first.start_position,
        member_ids=(first.id, second.id),
    )


def assess(
    spec: MissionSpec,
    agent: AgentSpec,
    action: str,
    position: Sequence[float] | None = None,
) -> Assessment:
    """Quality, duration and cost of ``agent`` performing ``action``.

    ``position`` is where the agent stands before a GP; it defaults to the
    agent's start position.
    """
    kind, bid, part = parse_action(action)
    try:
        brick = spec.brick(bid)
    except KeyError:
        raise UnknownAction(action) from None
    whole_orange = part is None and agent.kind is AgentKind.UAVX2
    if (part is not None or whole_orange) != (brick.color is Color.ORANGE) or (
        part is not None and not 1 <= part <= JOINT_PARTS
    ):
        raise UnknownAction(action)
    if not _brick_feasible(agent, brick, part):
        return INFEASIBLE

    speed, rate = _motion(spec, agent)
    if kind == "GP":
        origin = agent.start_position if position is None else position
        duration = _distance(origin, brick.pile_xyz) / speed
    elif kind == "GW":
        duration = _distance(brick.pile_xyz, brick.wall_xyz) / speed
    elif kind == "PU":
        duration = spec.fixed_grab_s
    else:
        duration = spec.fixed_release_s

    quality = 0.0
    if kind == "PD":
        color = brick.color.value
        quality = spec.score_table.base_points.get(color, 0.0)
        if agent.is_aerial:
            quality *= spec.score_table.uav_bonus.get(color, 1.0)
        if part is not None:
            quality /= JOINT_PARTS
    cost = duration * rate * (brick.length / SMALLEST_BRICK_M)
    return Assessment(quality, duration, cost)


def assessment_table(spec: MissionSpec, tree: TaemsTree) -> dict[tuple[str, str], Assessment]:
    """Static assessments of every action by every planning agent."""
    return {
        (agent.id, a): assess(spec, agent, a)
        for agent in spec.planning_agents
        for a in tree.actions
    }


def combine(assessments: Iterable[Assessment]) -> Assessment:
    """Task-level assessment of an ordered action sequence."""
    items = list(assessments)
    if not items or not all(a.feasible for a in items):
        return INFEASIBLE
    return Assessment(
        sum(a.quality for a in items),
        sum(a.duration for a in items),
        sum(a.cost for a in items),
    )


def unit_assessments(
    tree: TaemsTree, table: Mapping[tuple[str, str], Assessment], agents: Iterable[str]
) -> dict[tuple[str, str], Assessment]:
    agents = list(agents)
    return {
        (ag, u): combine(table[(ag, a)] for a in tree.nodes[u].children)
        for u in tree.units
        for ag in agents
    }


# --------------------------------------------------------------------------
# JSON


def mission_to_json(spec: MissionSpec) -> dict:
    return {
        "bricks": [
            {
                "id": b.id,
                "color": b.color.value,
                "length": b.length,
                "width": b.width,
                "height": b.height,
                "pile_position": list(b.pile_position),
                "wall_pose": list(b.wall_pose),
                "layer": b.layer,
                "supports": list(b.supports),
            }
            for b in spec.bricks
        ],
        "agents": [
            {
                "id": a.id,
                "kind": a.kind.value,
                "speed": a.speed,
                "cost_rate": a.cost_rate,
                "start_position": list(a.start_position),
                "reach_height": a.reach_height,
                "member_ids": list(a.member_ids),
            }
            for a in spec.agents
        ],
        "score_table": {
            "base_points": dict(spec.score_table.base_points),
            "uav_bonus": dict(spec.score_table.uav_bonus),
        },
        "criteria": {
            "alpha": spec.criteria.alpha,
            "beta": spec.criteria.beta,
            "gamma": spec.criteria.gamma,
            "delta": spec.criteria.delta,
        },
        "fixed_grab_s": spec.fixed_grab_s,
        "fixed_release_s": spec.fixed_release_s,
    }


def mission_from_json(data: Mapping) -> MissionSpec:
    """Parse a mission document.  Structural problems raise InvalidMission."""
    try:
        bricks = tuple(
            Brick(
                id=str(b["id"]),
                color=Color(b["color"]),
                length=float(b["length"]),
                width=float(b.get("width", 0.2)),
                height=float(b.get("height", 0.2)),
                pile_position=tuple(float(v) for v in b["pile_position"])[:2],
                wall_pose=_pose(b["wall_pose"]),
                layer=int(b.get("layer", 0)),
                supports=tuple(b.get("supports", ())),
            )
            for b in data["bricks"]
        )
        agents = tuple(
            AgentSpec(
                id=str(a["id"]),
                kind=AgentKind(a["kind"]),
                speed=float(a["speed"]),
                cost_rate=float(a["cost_rate"]),
                start_position=tuple(float(v) for v in a.get("start_position", (0.0, 0.0)))[:2],
                reach_height=None if a.get("reach_height") is None else float(a["reach_height"]),
                member_ids=tuple(a.get("member_ids", ())),
            )
            for a in data["agents"]
        )
        st = data.get("score_table") or {}
        defaults = ScoreTable()
        table = ScoreTable(
            base_points={**defaults.base_points, **{k: float(v) for k, v in st.get("base_points", {}).items()}},
            uav_bonus={**defaults.uav_bonus, **{k: float(v) for k, v in st.get("uav_bonus", {}).items()}},
        )
        crit = data.get("criteria") or {}
        if isinstance(crit, (list, tuple)):
            crit = dict(zip(("alpha", "beta", "gamma", "delta"), crit))
        criteria = Criteria(**{k: float(v) for k, v in crit.items()})
        return MissionSpec(
            bricks=bricks,
            agents=agents,
            score_table=table,
            criteria=criteria,
            fixed_grab_s=float(data.get("fixed_grab_s", 5.0)),
            fixed_release_s=float(data.get("fixed_release_s", 5.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidMission(f"malformed mission: {exc}") from exc


def _pose(raw: Sequence[float]) -> tuple[float, float, float, float]:
    vals = [float(v) for v in raw]
    if len(vals) == 3:
        vals.append(0.0)
    if len(vals) != 4:
        raise ValueError("wall_pose needs x, y, z[, yaw]")
    return tuple(vals)  # type: ignore[return-value]


def load_mission(path) -> MissionSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidMission(f"{path}: {exc}") from exc
    return mission_from_json(data)


def dump_mission(spec: MissionSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mission_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def canonical_key(spec: MissionSpec) -> str:
    return json.dumps(mission_to_json(spec), sort_keys=True)

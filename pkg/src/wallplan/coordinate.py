"""Decentralized coordination: agents are isolated processes that talk only
through a deterministic simulated message bus.

The protocol runs in rounds that each agent advances on its own as messages
arrive:

1. every agent assesses every action and broadcasts an AssessmentShare;
2. the global referee (smallest agent id) computes the market scheme and
   broadcasts it;
3. for every task, the referee of that task's capable agents picks a winner
   and broadcasts an Award (Drop goes to the losers); joint tasks are
   resolved as one-to-one assignments by the referee of their carriers;
4. once all awards are known each agent builds its local schedule;
5. joint actions are synchronized with a SyncRequest/SyncAck handshake.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .allocate import AllocationScheme, market_allocation, resolve_complex, resolve_simple
from .errors import CoordinationTimeout, EmptyAgentSet
from .mission import AgentSpec, Assessment, Criteria, MissionSpec, assess, combine
from .schedule import (
    Schedule,
    build_schedule,
    joint_units,
    merge_schedules,
    mission_context,
    restrict,
    unit_preds,
)
from .taems import RelKind, TaemsTree

BROADCAST = "*"


class MessageKind(str, Enum):
    ASSESSMENT_SHARE = "AssessmentShare"
    REFEREE_CLAIM = "RefereeClaim"
    ALLOCATION_SCHEME = "AllocationScheme"
    AWARD = "Award"
    DROP = "Drop"
    SYNC_REQUEST = "SyncRequest"
    SYNC_ACK = "SyncAck"
    STATUS_UPDATE = "StatusUpdate"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    to: str
    payload: Mapping
    seq: int
    t: int = 0

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "from": self.sender,
            "to": self.to,
            "payload": self.payload,
            "seq": self.seq,
            "t": self.t,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Message":
        return cls(MessageKind(data["kind"]), data["from"], data["to"], data["payload"], int(data["seq"]), int(data.get("t", 0)))


def trace_to_ndjson(trace: Iterable[Message]) -> str:
    return "".join(json.dumps(m.to_json(), sort_keys=True) + "\n" for m in trace)


def trace_from_ndjson(text: str) -> list[Message]:
    return [Message.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


def awards_from_trace(trace: Iterable[Message]) -> dict[str, str]:
    return {m.payload["task"]: m.payload["agent"] for m in trace if m.kind is MessageKind.AWARD}


# --------------------------------------------------------------------------
# bus


class Bus:
    """Per-sender FIFO queues drained one message per sender per tick, in a
    seeded round-robin order."""

    def __init__(self, agents: Sequence[str], seed: int = 0):
        self.agents = sorted(agents)
        self.rng = random.Random(seed)
        self.queues: dict[str, deque] = {a: deque() for a in self.agents}
        self.tick = 0
        self.trace: list[Message] = []
        self.dropped: list[Message] = []

    def send(self, msg: Message, delay: int = 0) -> None:
        self.queues[msg.sender].append((self.tick + 1 + delay, msg))

    def pending(self) -> bool:
        return any(self.queues.values())

    def step(self) -> list[Message]:
        self.tick += 1
        turn = list(self.agents)
        self.rng.shuffle(turn)
        out = []
        for sender in turn:
            q = self.queues[sender]
            if q and q[0][0] <= self.tick:
                _, msg = q.popleft()
                msg = Message(msg.kind, msg.sender, msg.to, msg.payload, msg.seq, self.tick)
                self.trace.append(msg)
                out.append(msg)
        return out


@dataclass(frozen=True)
class FaultPolicy:
    """Deterministic message faults.

    ``drop`` lists (kind, n) pairs: the n-th message of that kind (1-based)
    is lost.  ``delay`` holds every message back by that many ticks.
    ``drop_rate`` loses messages at random, seeded by ``seed``.
    """

    drop: tuple[tuple[str, int], ...] = ()
    delay: int = 0
    drop_rate: float = 0.0
    seed: int = 0


class FaultyBus:
    def __init__(self, inner: Bus, policy: FaultPolicy):
        self.inner = inner
        self.policy = policy
        self.rng = random.Random(policy.seed)
        self.counts: dict[str, int] = {}
        self.drop = {(MessageKind(k).value, n) for k, n in policy.drop}

    @property
    def tick(self) -> int:
        return self.inner.tick

    @property
    def trace(self) -> list[Message]:
        return self.inner.trace

    @property
    def dropped(self) -> list[Message]:
        return self.inner.dropped

    def send(self, msg: Message, delay: int = 0) -> None:
        n = self.counts[msg.kind.value] = self.counts.get(msg.kind.value, 0) + 1
        lost = (msg.kind.value, n) in self.drop
        if self.policy.drop_rate > 0 and self.rng.random() < self.policy.drop_rate:
            lost = True
        if lost:
            self.inner.dropped.append(msg)
            return
        self.inner.send(msg, delay + self.policy.delay)

    def pending(self) -> bool:
        return self.inner.pending()

    def step(self) -> list[Message]:
        return self.inner.step()


def inject_fault(bus: Bus, policy: FaultPolicy) -> FaultyBus:
    return FaultyBus(bus, policy)


# --------------------------------------------------------------------------
# shared planning steps


def elect_referee(agents: Iterable[str]) -> str:
    pool = sorted(agents)
    if not pool:
        raise EmptyAgentSet("cannot elect a referee from nobody")
    return pool[0]


def release_lags(tree: TaemsTree, table: Mapping[tuple[str, str], Assessment], agents: Iterable[str]) -> dict:
    """Time from a task's start until it releases the tasks it enables."""
    last_source: dict[str, int] = {}
    for rel in tree.edges(RelKind.ENABLES):
        u = tree.unit_of.get(rel.source)
        if u is not None and tree.unit_of.get(rel.target) != u:
            k = tree.nodes[u].children.index(rel.source)
            last_source[u] = max(last_source.get(u, 0), k)
    lags = {}
    for ag in agents:
        for u, k in last_source.items():
            kids = tree.nodes[u].children[: k + 1]
            lags[(ag, u)] = sum(table[(ag, a)].duration for a in kids)
    return lags


def unit_table(tree: TaemsTree, table: Mapping[tuple[str, str], Assessment], agents: Iterable[str]) -> dict:
    return {
        (ag, u): combine(table[(ag, a)] for a in tree.nodes[u].children)
        for ag in agents
        for u in tree.units
    }


def compute_scheme(tree: TaemsTree, table: Mapping[tuple[str, str], Assessment], agents: Sequence[str]) -> AllocationScheme:
    units = unit_table(tree, table, agents)
    return market_allocation(
        list(tree.units),
        list(agents),
        units,
        unit_preds(tree),
        lags=release_lags(tree, table, agents),
        joint_groups=joint_units(tree),
    )


def simple_units(tree: TaemsTree) -> list[str]:
    joint = {u for g in joint_units(tree) for u in g}
    return [u for u in tree.units if u not in joint]


def joint_parents(tree: TaemsTree) -> list[str]:
    return sorted(
        n.id for n in tree.nodes.values()
        if n.local_qaf is not None and not n.is_action and all(c in tree.units for c in n.children)
    )


def capable_agents(tree, units_tab, agents, unit) -> list[str]:
    return sorted(a for a in agents if units_tab[(a, unit)].feasible)


def joint_carriers(tree, units_tab, agents, parent) -> list[str]:
    subs = tree.nodes[parent].children
    return sorted(a for a in agents if all(units_tab[(a, s)].feasible for s in subs))


def plan_centralized(spec: MissionSpec, criteria: Criteria | None = None) -> tuple[dict[str, str], AllocationScheme]:
    """The same decisions the referees reach, computed in one place."""
    criteria = (criteria or spec.criteria).validate()
    tree, table = mission_context(spec)
    agents = [a.id for a in spec.planning_agents]
    units_tab = unit_table(tree, table, agents)
    scheme = compute_scheme(tree, table, agents)
    awards = {}
    for u in simple_units(tree):
        pool = capable_agents(tree, units_tab, agents, u)
        awards[u] = resolve_simple(u, pool, {a: units_tab[(a, u)] for a in pool}, scheme, criteria.weights, criteria.delta)
    for p in joint_parents(tree):
        pool = joint_carriers(tree, units_tab, agents, p)
        awards.update(resolve_complex(tree.nodes[p], pool, units_tab, criteria.weights))
    return awards, scheme


def plan_schedule(spec: MissionSpec, criteria: Criteria | None = None) -> Schedule:
    awards, _ = plan_centralized(spec, criteria)
    tree, table = mission_context(spec)
    return build_schedule(tree, awards, table, spec=spec)


# --------------------------------------------------------------------------
# agents


class AgentProcess:
    """One robot.  Knows the wall, the roster and its own capabilities; learns
    everything else from messages."""

    def __init__(self, spec: AgentSpec, mission: MissionSpec, criteria: Criteria, bus, sync_timeout: int, max_retries: int):
        self.id = spec.id
        self.spec = spec
        self.mission = mission
        self.criteria = criteria
        self.bus = bus
        self.tree, _ = mission_context(mission)
        self.roster = [a.id for a in mission.planning_agents]
        self.referee = elect_referee(self.roster)
        self.sync_timeout = sync_timeout
        self.max_retries = max_retries
        self.seq = 0
        self.shared: dict[str, dict[str, Assessment]] = {}
        self.scheme: AllocationScheme | None = None
        self.resolved = False
        self.awards: dict[str, str] = {}
        self.dropped: set[str] = set()
        self.full_schedule: Schedule | None = None
        self.local_schedule: Schedule | None = None
        self.syncs: list[tuple[str, ...]] = []
        self.awaiting: dict | None = None
        self.pending_requests: list[Message] = []
        self.finished = False

    # transport
    def send(self, kind: MessageKind, to: str, payload: Mapping) -> None:
        self.seq += 1
        self.bus.send(Message(kind, self.id, to, payload, self.seq))

    # protocol
    def start(self) -> None:
        mine = {a: assess(self.mission, self.spec, a) for a in self.tree.actions}
        self.shared[self.id] = mine
        if self.id == self.referee:
            self.send(MessageKind.REFEREE_CLAIM, BROADCAST, {"scope": "global"})
        self.send(
            MessageKind.ASSESSMENT_SHARE,
            BROADCAST,
            {"actions": {a: [s.quality, s.duration, s.cost] for a, s in sorted(mine.items())}},
        )
        self._advance()

    def receive(self, msg: Message) -> None:
        kind = msg.kind
        if kind is MessageKind.ASSESSMENT_SHARE:
            self.shared[msg.sender] = {a: Assessment(*v) for a, v in msg.payload["actions"].items()}
        elif kind is MessageKind.ALLOCATION_SCHEME:
            self.scheme = AllocationScheme(tuple(tuple(p) for p in msg.payload["pairs"]))
        elif kind is MessageKind.AWARD:
            self.awards[msg.payload["task"]] = msg.payload["agent"]
        elif kind is MessageKind.DROP:
            self.dropped.add(msg.payload["task"])
        elif kind is MessageKind.SYNC_REQUEST:
            self.pending_requests.append(msg)
        elif kind is MessageKind.SYNC_ACK:
            self._on_ack(msg)
        self._advance()

    def on_tick(self, now: int, quiet: bool) -> None:
        """Retry an unanswered handshake once nothing is left in flight and
        the minimum wait has passed; only a lost message can cause that."""
        if self.awaiting is None or not quiet or now < self.awaiting["deadline"]:
            return
        if self.awaiting["retries"] >= self.max_retries:
            raise CoordinationTimeout(f"{self.id}: no SyncAck for {self.awaiting['actions']}")
        self.awaiting["retries"] += 1
        self._request_sync(self.awaiting, now)

    # internals
    def _table(self) -> dict[tuple[str, str], Assessment]:
        return {(ag, a): s for ag, acts in self.shared.items() for a, s in acts.items()}

    def _advance(self) -> None:
        have_all = all(a in self.shared for a in self.roster)
        if have_all and self.id == self.referee and self.scheme is None:
            self.scheme = compute_scheme(self.tree, self._table(), self.roster)
            self.send(MessageKind.ALLOCATION_SCHEME, BROADCAST, {"pairs": [list(p) for p in self.scheme.pairs]})
        if have_all and self.scheme is not None and not self.resolved:
            self.resolved = True
            self._referee_duties()
        if self.full_schedule is None and set(self.awards) >= set(self.tree.units):
            self._build_local()
        if self.full_schedule is not None:
            self._answer_syncs()
            if self.awaiting is None and not self.finished:
                self._next_sync()

    def _referee_duties(self) -> None:
        table = self._table()
        units_tab = unit_table(self.tree, table, self.roster)
        weights, delta = self.criteria.weights, self.criteria.delta
        for u in simple_units(self.tree):
            pool = capable_agents(self.tree, units_tab, self.roster, u)
            if not pool or elect_referee(pool) != self.id:
                continue
            winner = resolve_simple(u, pool, {a: units_tab[(a, u)] for a in pool}, self.scheme, weights, delta)
            self._award(u, winner, [a for a in pool if a != winner])
        for p in joint_parents(self.tree):
            pool = joint_carriers(self.tree, units_tab, self.roster, p)
            if not pool or elect_referee(pool) != self.id:
                continue
            result = resolve_complex(self.tree.nodes[p], pool, units_tab, weights)
            chosen = set(result.values())
            for sub, winner in sorted(result.items()):
                self._award(sub, winner, [a for a in pool if a not in chosen])

    def _award(self, task: str, winner: str, losers: Sequence[str]) -> None:
        self.awards[task] = winner
        self.send(MessageKind.AWARD, BROADCAST, {"task": task, "agent": winner})
        for a in losers:
            if a == self.id:
                self.dropped.add(task)
            else:
                self.send(MessageKind.DROP, a, {"task": task})

    def _build_local(self) -> None:
        self.full_schedule = build_schedule(self.tree, self.awards, self._table(), spec=self.mission)
        self.local_schedule = restrict(self.full_schedule, self.id)
        seen = set()
        for e in self.local_schedule.entries:
            group = self.tree.index.joint_group.get(e.action)
            if not group or group in seen:
                continue
            seen.add(group)
            members = sorted({self.full_schedule.entry(x).agent for x in group})
            if members[0] == self.id:
                self.syncs.append(group)

    def _next_sync(self) -> None:
        if not self.syncs:
            self.finished = True
            self.send(
                MessageKind.STATUS_UPDATE,
                BROADCAST,
                {"done": True, "actions": len(self.local_schedule.entries)},
            )
            return
        group = self.syncs.pop(0)
        sched = self.full_schedule
        partners = sorted({sched.entry(x).agent for x in group} - {self.id})
        self.awaiting = {"actions": list(group), "partners": set(partners), "retries": 0, "deadline": 0}
        self._request_sync(self.awaiting, self.bus.tick)

    def _request_sync(self, waiting: dict, now: int) -> None:
        start = self.full_schedule.entry(waiting["actions"][0]).start
        for p in sorted(waiting["partners"]):
            self.send(MessageKind.SYNC_REQUEST, p, {"actions": waiting["actions"], "start": start})
        waiting["deadline"] = now + self.sync_timeout

    def _on_ack(self, msg: Message) -> None:
        if self.awaiting is None or msg.payload["actions"] != self.awaiting["actions"]:
            return
        self.awaiting["partners"].discard(msg.sender)
        if not self.awaiting["partners"]:
            self.awaiting = None

    def _answer_syncs(self) -> None:
        while self.pending_requests:
            req = self.pending_requests.pop(0)
            self.send(MessageKind.SYNC_ACK, req.sender, {"actions": req.payload["actions"], "start": req.payload["start"]})


class Coordinator:
    def __init__(
        self,
        spec: MissionSpec,
        seed: int = 0,
        *,
        criteria: Criteria | None = None,
        policy: FaultPolicy | None = None,
        sync_timeout: int = 4,
        max_retries: int = 3,
        max_ticks: int = 100_000,
    ):
        self.spec = spec
        self.criteria = (criteria or spec.criteria).validate()
        roster = [a.id for a in spec.planning_agents]
        bus = Bus(roster, seed)
        self.bus = inject_fault(bus, policy) if policy is not None else bus
        self.max_ticks = max_ticks
        self.agents = {
            a.id: AgentProcess(a, spec, self.criteria, self.bus, sync_timeout, max_retries)
            for a in spec.planning_agents
        }

    def run(self) -> tuple[Schedule, list[Message]]:
        for aid in sorted(self.agents):
            self.agents[aid].start()
        while True:
            if not self.bus.pending() and all(a.finished and a.awaiting is None for a in self.agents.values()):
                break
            if self.bus.tick >= self.max_ticks:
                raise CoordinationTimeout("coordination did not finish")
            if not self.bus.pending() and all(a.awaiting is None for a in self.agents.values()):
                stuck = sorted(a for a, p in self.agents.items() if not p.finished)
                raise CoordinationTimeout("agents never responded: " + ", ".join(stuck))
            for msg in self.bus.step():
                targets = [a for a in sorted(self.agents) if a != msg.sender] if msg.to == BROADCAST else [msg.to]
                for aid in targets:
                    if aid in self.agents:
                        self.agents[aid].receive(msg)
            quiet = not self.bus.pending()
            for aid in sorted(self.agents):
                self.agents[aid].on_tick(self.bus.tick, quiet)
        merged = merge_schedules(p.local_schedule for p in self.agents.values())
        return merged, list(self.bus.trace)

    def views(self) -> dict[str, dict[str, str]]:
        return {aid: dict(sorted(p.awards.items())) for aid, p in self.agents.items()}


def run_coordination(spec: MissionSpec, seed: int = 0, **kwargs) -> tuple[Schedule, list[Message]]:
    """Run the full protocol; returns the merged schedule and the message trace."""
    return Coordinator(spec, seed, **kwargs).run()

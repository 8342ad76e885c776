"""Hierarchical task trees: nodes, quality accumulation, interrelationships and
virtual resources.

Trees are immutable snapshots.  Anything that changes over time (resource
states, the set of finished actions) is passed in and returned as new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping


class Qaf(str, Enum):
    SUM_ALL = "SumAll"
    MAX = "Max"
    SEQ_SUM_ALL = "SeqSumAll"
    SUM = "Sum"


class NodeKind(str, Enum):
    TASK = "Task"
    ACTION = "Action"


class RelKind(str, Enum):
    ENABLES = "Enables"
    DISABLES = "Disables"
    CONSUMES = "Consumes"
    PRODUCES = "Produces"
    LIMITS = "Limits"


NODE_RELATIONS = (RelKind.ENABLES, RelKind.DISABLES)


@dataclass(frozen=True)
class TaemsNode:
    id: str
    kind: NodeKind
    children: tuple[str, ...] = ()
    qaf: Qaf | None = None
    local_qaf: Qaf | None = None
    eligible_agent_kinds: frozenset[str] = frozenset()

    @property
    def is_action(self) -> bool:
        return self.kind is NodeKind.ACTION


@dataclass(frozen=True)
class Interrelationship:
    kind: RelKind
    source: str
    target: str
    amount: float = 0.0


@dataclass(frozen=True)
class Resource:
    id: str
    state: float = 1.0
    lower: float = 0.0
    upper: float = 1.1
    owner_agent: str | None = None


class Insufficient:
    """Marker returned when a consume would push a resource below its lower limit."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INSUFFICIENT"

    def __bool__(self) -> bool:
        return False


INSUFFICIENT = Insufficient()


class MissingLeafQuality(KeyError):
    pass


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    detail: str = ""


@dataclass(frozen=True, eq=False)
class TaemsTree:
    root: str
    nodes: Mapping[str, TaemsNode]
    interrelationships: tuple[Interrelationship, ...] = ()
    resources: Mapping[str, Resource] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TaemsTree):
            return NotImplemented
        return (
            self.root == other.root
            and dict(self.nodes) == dict(other.nodes)
            and tuple(self.interrelationships) == tuple(other.interrelationships)
            and dict(self.resources) == dict(other.resources)
        )

    def __getitem__(self, node_id: str) -> TaemsNode:
        return self.nodes[node_id]

    @cached_property
    def parent(self) -> dict[str, str]:
        out = {}
        for node in self.nodes.values():
            for child in node.children:
                out.setdefault(child, node.id)
        return out

    @cached_property
    def actions(self) -> tuple[str, ...]:
        """Action leaves in depth-first order from the root."""
        if self.root not in self.nodes:
            return ()
        out: list[str] = []
        seen: set[str] = set()
        stack = [self.root]
        while stack:
            nid = stack.pop()
            if nid in seen or nid not in self.nodes:
                continue
            seen.add(nid)
            node = self.nodes[nid]
            if node.is_action:
                out.append(nid)
            stack.extend(reversed(node.children))
        return tuple(out)

    def ancestors(self, node_id: str) -> list[str]:
        out = []
        cur = self.parent.get(node_id)
        while cur is not None and cur not in out:
            out.append(cur)
            cur = self.parent.get(cur)
        return out

    def leaves_under(self, node_id: str) -> tuple[str, ...]:
        return self._leaves[node_id]

    @cached_property
    def _leaves(self) -> dict[str, tuple[str, ...]]:
        memo: dict[str, tuple[str, ...]] = {}

        def walk(nid: str, trail: frozenset[str]) -> tuple[str, ...]:
            if nid in memo:
                return memo[nid]
            node = self.nodes.get(nid)
            if node is None or nid in trail:
                return ()
            if node.is_action:
                res: tuple[str, ...] = (nid,)
            else:
                res = tuple(a for c in node.children for a in walk(c, trail | {nid}))
            memo[nid] = res
            return res

        for nid in self.nodes:
            walk(nid, frozenset())
        return memo

    @cached_property
    def units(self) -> tuple[str, ...]:
        """Tasks whose children are all actions: the unit of agent assignment."""
        out = []
        for nid in self.nodes:
            node = self.nodes[nid]
            if (
                not node.is_action
                and node.children
                and all(c in self.nodes and self.nodes[c].is_action for c in node.children)
            ):
                out.append(nid)
        return tuple(sorted(out))

    @cached_property
    def unit_of(self) -> dict[str, str]:
        return {a: u for u in self.units for a in self.nodes[u].children}

    @cached_property
    def index(self) -> "TreeIndex":
        return TreeIndex.build(self)

    def edges(self, *kinds: RelKind) -> list[Interrelationship]:
        return [r for r in self.interrelationships if r.kind in kinds]


@dataclass(frozen=True)
class TreeIndex:
    """Per-action precomputed gating information."""

    requires: dict[str, frozenset[str]]
    disabled_until: dict[str, frozenset[str]]
    consumes: dict[str, tuple[tuple[str, float], ...]]
    produces: dict[str, tuple[tuple[str, float], ...]]
    limited_by: dict[str, tuple[str, ...]]
    joint_group: dict[str, tuple[str, ...]]
    depth: dict[str, int]

    @classmethod
    def build(cls, tree: TaemsTree) -> "TreeIndex":
        actions = [n for n, node in tree.nodes.items() if node.is_action]
        requires: dict[str, set[str]] = {a: set() for a in actions}
        disabled: dict[str, set[str]] = {a: set() for a in actions}

        def expand(nid: str) -> tuple[str, ...]:
            return tree.leaves_under(nid) if nid in tree.nodes else ()

        # ordered-AND predecessors, inherited from every ancestor level
        for a in actions:
            chain = [a] + tree.ancestors(a)
            for child, parent in zip(chain, chain[1:]):
                pnode = tree.nodes[parent]
                if pnode.qaf is Qaf.SEQ_SUM_ALL:
                    for sib in pnode.children[: pnode.children.index(child)]:
                        requires[a].update(expand(sib))

        for rel in tree.edges(RelKind.ENABLES):
            sources = expand(rel.source)
            for tgt in expand(rel.target):
                requires[tgt].update(sources)
        # a disables b: every action under a waits for all of b
        for rel in tree.edges(RelKind.DISABLES):
            blockers = expand(rel.target)
            for src in expand(rel.source):
                disabled[src].update(blockers)

        consumes: dict[str, list[tuple[str, float]]] = {a: [] for a in actions}
        produces: dict[str, list[tuple[str, float]]] = {a: [] for a in actions}
        limited: dict[str, list[str]] = {a: [] for a in actions}
        for rel in tree.edges(RelKind.CONSUMES, RelKind.PRODUCES):
            bucket = consumes if rel.kind is RelKind.CONSUMES else produces
            for a in expand(rel.source):
                bucket[a].append((rel.target, rel.amount))
        for rel in tree.edges(RelKind.LIMITS):
            for a in expand(rel.target):
                limited[a].append(rel.source)

        joint: dict[str, tuple[str, ...]] = {}
        for node in tree.nodes.values():
            if node.local_qaf is Qaf.MAX and not node.is_action:
                subs = [tree.nodes[c].children for c in node.children if c in tree.nodes]
                width = min((len(s) for s in subs), default=0)
                for k in range(width):
                    group = tuple(s[k] for s in subs)
                    for a in group:
                        joint[a] = group

        depth: dict[str, int] = {}
        for a in _topological(actions, requires):
            depth[a] = max((depth[p] + 1 for p in requires[a] if p in depth), default=0)

        return cls(
            requires={a: frozenset(v - {a}) for a, v in requires.items()},
            disabled_until={a: frozenset(v - {a}) for a, v in disabled.items()},
            consumes={a: tuple(v) for a, v in consumes.items()},
            produces={a: tuple(v) for a, v in produces.items()},
            limited_by={a: tuple(v) for a, v in limited.items()},
            joint_group=joint,
            depth=depth,
        )


def _topological(nodes: Iterable[str], preds: Mapping[str, Iterable[str]]) -> list[str]:
    """Kahn ordering; nodes on cycles are appended last in input order."""
    nodes = list(nodes)
    members = set(nodes)
    indeg = {n: sum(1 for p in set(preds.get(n, ())) if p in members and p != n) for n in nodes}
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    for n in nodes:
        for p in set(preds.get(n, ())):
            if p in members and p != n:
                succ[p].append(n)
    ready = sorted(n for n in nodes if indeg[n] == 0)
    out = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for s in sorted(succ[n]):
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
        ready.sort()
    placed = set(out)
    out.extend(n for n in nodes if n not in placed)
    return out


# --------------------------------------------------------------------------
# validation


def validate_tree(tree: TaemsTree) -> list[Violation]:
    """Collect every structural problem in ``tree``; an empty list means valid."""
    out: list[Violation] = []
    nodes = tree.nodes

    if tree.root not in nodes:
        out.append(Violation("UnresolvedReference", tree.root, "root is not a node"))

    for key, node in nodes.items():
        if not node.id:
            out.append(Violation("EmptyId", key, "node id is empty"))
        if key != node.id:
            out.append(Violation("KeyMismatch", key, f"stored under {key!r} but id is {node.id!r}"))
        for child in node.children:
            if child not in nodes:
                out.append(Violation("UnresolvedReference", node.id, f"child {child!r} does not exist"))
        if node.is_action:
            if node.children:
                out.append(Violation("ActionHasChildren", node.id))
            if node.qaf is not None or node.local_qaf is not None:
                out.append(Violation("ActionHasQaf", node.id))
        else:
            if not node.children:
                out.append(Violation("EmptyTask", node.id))
            if node.qaf is None:
                out.append(Violation("MissingQaf", node.id))
        if len(set(node.children)) != len(node.children):
            out.append(Violation("DuplicateChild", node.id))

    parents: dict[str, list[str]] = {}
    for node in nodes.values():
        for child in node.children:
            parents.setdefault(child, []).append(node.id)
    for child, ps in sorted(parents.items()):
        if len(ps) > 1:
            out.append(Violation("MultipleParents", child, ", ".join(sorted(ps))))
    if tree.root in parents:
        out.append(Violation("RootHasParent", tree.root))

    # hierarchy cycles and reachability
    if tree.root in nodes:
        seen: set[str] = set()
        on_path: set[str] = set()
        cyclic: set[str] = set()

        def visit(nid: str) -> None:
            seen.add(nid)
            on_path.add(nid)
            for child in nodes[nid].children:
                if child not in nodes:
                    continue
                if child in on_path:
                    cyclic.add(child)
                elif child not in seen:
                    visit(child)
            on_path.discard(nid)

        visit(tree.root)
        for nid in sorted(cyclic):
            out.append(Violation("CyclicHierarchy", nid))
        for nid in sorted(set(nodes) - seen):
            out.append(Violation("Unreachable", nid, "not connected to the root"))

    res_ids = set(tree.resources)
    for key, res in tree.resources.items():
        if key != res.id:
            out.append(Violation("KeyMismatch", key, f"resource id is {res.id!r}"))
        if not (res.lower <= res.state <= res.upper):
            out.append(Violation("ResourceOutOfBounds", res.id, f"{res.lower} <= {res.state} <= {res.upper}"))

    for rel in tree.interrelationships:
        tag = f"{rel.kind.value}({rel.source}->{rel.target})"
        if rel.source == rel.target:
            out.append(Violation("SelfLoop", tag))
        if rel.kind in NODE_RELATIONS:
            ends = (rel.source in nodes, rel.target in nodes)
        elif rel.kind is RelKind.LIMITS:
            ends = (rel.source in res_ids, rel.target in nodes)
        else:
            ends = (rel.source in nodes, rel.target in res_ids)
        if not all(ends):
            known = nodes.keys() | res_ids
            if rel.source not in known or rel.target not in known:
                out.append(Violation("UnresolvedReference", tag))
            else:
                out.append(Violation("BadRelationEndpoints", tag))

    cycle = _enables_cycle(tree)
    if cycle:
        out.append(Violation("CyclicEnables", " -> ".join(cycle)))
    return out


def _enables_cycle(tree: TaemsTree) -> list[str]:
    succ: dict[str, list[str]] = {}
    for rel in tree.edges(RelKind.ENABLES):
        succ.setdefault(rel.source, []).append(rel.target)
    color: dict[str, int] = {}
    stack: list[str] = []

    def dfs(n: str) -> list[str]:
        color[n] = 1
        stack.append(n)
        for m in sorted(succ.get(n, ())):
            if color.get(m) == 1:
                return stack[stack.index(m):] + [m]
            if m not in color:
                found = dfs(m)
                if found:
                    return found
        color[n] = 2
        stack.pop()
        return []

    for n in sorted(succ):
        if n not in color:
            found = dfs(n)
            if found:
                return found
    return []


# --------------------------------------------------------------------------
# quality and resources


def aggregate_quality(tree: TaemsTree, leaf_qualities: Mapping[str, float]) -> float:
    """Root quality, accumulated bottom-up through each task's QAF.

    SumAll and SeqSumAll are logical AND: a zero child zeroes the parent.
    Max takes the best child and Sum adds whatever was achieved.
    """

    def q(nid: str) -> float:
        node = tree.nodes[nid]
        if node.is_action:
            if nid not in leaf_qualities:
                raise MissingLeafQuality(nid)
            return float(leaf_qualities[nid])
        vals = [q(c) for c in node.children]
        if node.qaf is Qaf.MAX:
            return max(vals)
        if node.qaf in (Qaf.SUM_ALL, Qaf.SEQ_SUM_ALL) and any(v == 0 for v in vals):
            return 0.0
        return sum(vals)

    if tree.root not in tree.nodes:
        return 0.0
    return q(tree.root)


def apply_resource_effect(res: Resource, delta: float) -> Resource | Insufficient:
    new = res.state + delta
    if new < res.lower:
        return INSUFFICIENT
    return replace(res, state=min(new, res.upper))


def resource_sufficient(res: Resource, need: float) -> bool:
    return apply_resource_effect(res, -need) is not INSUFFICIENT


def executable_actions(
    tree: TaemsTree,
    done: Iterable[str],
    in_progress: Iterable[str],
    resources: Mapping[str, Resource],
    agent: str | None = None,
) -> set[str]:
    """Actions that may start now.

    ``resources`` holds the current resource states.  When ``agent`` is
    given, only resources owned by that agent (or unowned) gate execution.
    """
    done = set(done)
    busy = set(in_progress)
    if done & busy:
        raise ValueError("an action cannot be both done and in progress")
    idx = tree.index
    out = set()
    for a in tree.actions:
        if a in done or a in busy:
            continue
        if not idx.requires[a] <= done or not idx.disabled_until[a] <= done:
            continue
        if not _resources_allow(idx, a, resources, agent):
            continue
        out.add(a)
    return out


def _resources_allow(idx: TreeIndex, action: str, resources: Mapping[str, Resource], agent: str | None) -> bool:
    for rid in idx.limited_by[action]:
        res = resources.get(rid)
        if res is None or (agent is not None and res.owner_agent not in (None, agent)):
            continue
        need = sum(amt for r, amt in idx.consumes[action] if r == rid)
        if not resource_sufficient(res, need):
            return False
    return True


# --------------------------------------------------------------------------
# JSON


def tree_to_json(tree: TaemsTree) -> dict:
    return {
        "root": tree.root,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "children": list(n.children),
                "qaf": n.qaf.value if n.qaf else None,
                "local_qaf": n.local_qaf.value if n.local_qaf else None,
                "eligible_agent_kinds": sorted(n.eligible_agent_kinds),
            }
            for n in tree.nodes.values()
        ],
        "edges": [
            {"kind": r.kind.value, "source": r.source, "target": r.target, "amount": r.amount}
            for r in tree.interrelationships
        ],
        "resources": [
            {
                "id": r.id,
                "state": r.state,
                "lower": r.lower,
                "upper": r.upper,
                "owner_agent": r.owner_agent,
            }
            for r in tree.resources.values()
        ],
    }


def tree_from_json(data: Mapping) -> TaemsTree:
    nodes = {}
    for raw in data["nodes"]:
        node = TaemsNode(
            id=raw["id"],
            kind=NodeKind(raw["kind"]),
            children=tuple(raw.get("children", ())),
            qaf=Qaf(raw["qaf"]) if raw.get("qaf") else None,
            local_qaf=Qaf(raw["local_qaf"]) if raw.get("local_qaf") else None,
            eligible_agent_kinds=frozenset(raw.get("eligible_agent_kinds", ())),
        )
        nodes[node.id] = node
    edges = tuple(
        Interrelationship(RelKind(e["kind"]), e["source"], e["target"], float(e.get("amount", 0.0)))
        for e in data.get("edges", ())
    )
    resources = {
        r["id"]: Resource(
            id=r["id"],
            state=float(r["state"]),
            lower=float(r["lower"]),
            upper=float(r["upper"]),
            owner_agent=r.get("owner_agent"),
        )
        for r in data.get("resources", ())
    }
    root = data.get("root")
    if root is None:
        # the root is the only node nobody lists as a child
        children = {c for n in nodes.values() for c in n.children}
        roots = [n for n in nodes if n not in children]
        root = roots[0] if roots else ""
    return TaemsTree(root=root, nodes=nodes, interrelationships=edges, resources=resources)

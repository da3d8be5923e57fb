"""Dependency-graph model for cached, distributed builds.

A build is a DAG of targets; an edge stores who executes first (the
dependency) and who waits (the dependent).  This module owns the graph
data model plus the pure graph operations everything else builds on:
dirty closure, graph diff, classification of a new edge against critical
paths, and extraction of heaviest upstream/downstream chains.

Chains are plain tuples of target names in execution order, earliest
first.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Union

from .errors import BuildDataError, CycleError, ParseError, UnknownTargetError

Chain = tuple[str, ...]

GraphSource = Union[str, Path, IO[str], IO[bytes], bytes]


@dataclass(frozen=True, order=True)
class Edge:
    """One prerequisite relation: ``dependent`` waits for ``dependency``."""

    dependency: str
    dependent: str

    def __post_init__(self) -> None:
        if self.dependency == self.dependent:
            raise ValueError(f"self-loop on target {self.dependency!r}")

    def __str__(self) -> str:
        return f"{self.dependency}->{self.dependent}"

    def to_dict(self) -> dict:
        return {"dependency": self.dependency, "dependent": self.dependent}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Edge":
        return cls(dependency=d["dependency"], dependent=d["dependent"])


class DependencyGraph:
    """Immutable, validated DAG of build targets.

    Construction checks that every edge endpoint is a declared target and
    that the edge set is acyclic; a violation raises UnknownTargetError or
    CycleError (with a witness cycle).  Instances never change afterwards,
    so they are safe to share across threads.
    """

    __slots__ = ("targets", "edges", "_deps", "_dependents")

    def __init__(self, targets: Iterable[str], edges: Iterable[Edge]):
        self.targets: frozenset[str] = frozenset(targets)
        self.edges: frozenset[Edge] = frozenset(edges)

        deps: dict[str, list[str]] = {t: [] for t in self.targets}
        dependents: dict[str, list[str]] = {t: [] for t in self.targets}
        for e in self.edges:
            if e.dependency not in self.targets:
                raise UnknownTargetError(e.dependency, f"edge {e}")
            if e.dependent not in self.targets:
                raise UnknownTargetError(e.dependent, f"edge {e}")
            deps[e.dependent].append(e.dependency)
            dependents[e.dependency].append(e.dependent)
        self._deps = {t: tuple(sorted(v)) for t, v in deps.items()}
        self._dependents = {t: tuple(sorted(v)) for t, v in dependents.items()}
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        WHITE, GRAY, BLACK = 0, 1, 2
        color = dict.fromkeys(self.targets, WHITE)
        parent: dict[str, str | None] = {}
        for root in sorted(self.targets):
            if color[root] != WHITE:
                continue
            stack: list[tuple[str, Iterator[str]]] = [(root, iter(self._dependents[root]))]
            color[root] = GRAY
            parent[root] = None
            while stack:
                node, it = stack[-1]
                advanced = False
                for nxt in it:
                    if color[nxt] == GRAY:
                        # back edge node -> nxt closes a cycle
                        cycle = [node]
                        cur = parent[node]
                        while cur is not None and cycle[-1] != nxt:
                            cycle.append(cur)
                            cur = parent[cur]
                        if cycle[-1] != nxt:
                            cycle.append(nxt)
                        cycle.reverse()
                        pivot = cycle.index(min(cycle))
                        raise CycleError(cycle[pivot:] + cycle[:pivot])
                    if color[nxt] == WHITE:
                        color[nxt] = GRAY
                        parent[nxt] = node
                        stack.append((nxt, iter(self._dependents[nxt])))
                        advanced = True
                        break
                if not advanced:
                    color[node] = BLACK
                    stack.pop()

    # -- queries ------------------------------------------------------------

    def dependencies_of(self, target: str) -> tuple[str, ...]:
        """Direct prerequisites of *target*, sorted by name."""
        try:
            return self._deps[target]
        except KeyError:
            raise UnknownTargetError(target, "graph") from None

    def dependents_of(self, target: str) -> tuple[str, ...]:
        """Direct dependents of *target*, sorted by name."""
        try:
            return self._dependents[target]
        except KeyError:
            raise UnknownTargetError(target, "graph") from None

    def sources(self) -> tuple[str, ...]:
        return tuple(t for t in sorted(self.targets) if not self._deps[t])

    def sinks(self) -> tuple[str, ...]:
        return tuple(t for t in sorted(self.targets) if not self._dependents[t])

    def has_edge(self, dependency: str, dependent: str) -> bool:
        return Edge(dependency, dependent) in self.edges

    def without_edge(self, edge: Edge) -> "DependencyGraph":
        """Copy of the graph with *edge* removed (targets unchanged)."""
        return DependencyGraph(self.targets, self.edges - {edge})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return self.targets == other.targets and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.targets, self.edges))

    def __repr__(self) -> str:
        return f"DependencyGraph(targets={len(self.targets)}, edges={len(self.edges)})"

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "targets": [{"name": t} for t in sorted(self.targets)],
            "edges": [e.to_dict() for e in sorted(self.edges)],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DependencyGraph":
        try:
            names = [t["name"] for t in d["targets"]]
            raw_edges = d["edges"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"graph object missing key: {exc}") from None
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ParseError(f"duplicate target names: {', '.join(dupes)}")
        for n in names:
            if not isinstance(n, str) or not n:
                raise ParseError(f"target name must be a non-empty string, got {n!r}")
        try:
            edges = [Edge.from_dict(e) for e in raw_edges]
        except KeyError as exc:
            raise ParseError(f"edge object missing key: {exc}") from None
        except ValueError as exc:
            raise ParseError(str(exc)) from None
        return cls(names, edges)


def load_graph(source: GraphSource) -> DependencyGraph:
    """Load and validate a graph file (JSON with "targets" and "edges")."""
    text = _read_text(source)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in graph file: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError("graph file must contain a JSON object")
    return DependencyGraph.from_dict(data)


def save_graph(g: DependencyGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_text(source: GraphSource) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


# -- dirty closure ------------------------------------------------------------


def dirty_closure(g: DependencyGraph, changed: Iterable[str]) -> frozenset[str]:
    """Changed targets plus every transitive dependent.

    Exactly the set that must execute rather than come from cache when
    *changed* is modified.
    """
    queue = deque()
    for t in changed:
        if t not in g.targets:
            raise UnknownTargetError(t, "graph")
        queue.append(t)
    out: set[str] = set(queue)
    while queue:
        for nxt in g.dependents_of(queue.popleft()):
            if nxt not in out:
                out.add(nxt)
                queue.append(nxt)
    return frozenset(out)


# -- graph diff ----------------------------------------------------------------


@dataclass(frozen=True)
class GraphDiff:
    """Set difference between two graphs, lexicographically ordered."""

    added_edges: tuple[Edge, ...]
    removed_edges: tuple[Edge, ...]
    added_targets: tuple[str, ...]
    removed_targets: tuple[str, ...]

    @property
    def is_empty(self) -> bool:
        return not (self.added_edges or self.removed_edges or self.added_targets or self.removed_targets)

    def to_dict(self) -> dict:
        return {
            "added_edges": [e.to_dict() for e in self.added_edges],
            "removed_edges": [e.to_dict() for e in self.removed_edges],
            "added_targets": list(self.added_targets),
            "removed_targets": list(self.removed_targets),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GraphDiff":
        return cls(
            added_edges=tuple(Edge.from_dict(e) for e in d["added_edges"]),
            removed_edges=tuple(Edge.from_dict(e) for e in d["removed_edges"]),
            added_targets=tuple(d["added_targets"]),
            removed_targets=tuple(d["removed_targets"]),
        )


def graph_diff(g_prev: DependencyGraph, g_curr: DependencyGraph) -> GraphDiff:
    """Targets and edges added or removed between two graph snapshots."""
    return GraphDiff(
        added_edges=tuple(sorted(g_curr.edges - g_prev.edges)),
        removed_edges=tuple(sorted(g_prev.edges - g_curr.edges)),
        added_targets=tuple(sorted(g_curr.targets - g_prev.targets)),
        removed_targets=tuple(sorted(g_prev.targets - g_curr.targets)),
    )


def apply_diff(g_prev: DependencyGraph, diff: GraphDiff) -> DependencyGraph:
    """Reconstruct the post-change graph from the pre-change graph and a diff."""
    targets = (g_prev.targets - set(diff.removed_targets)) | set(diff.added_targets)
    edges = (g_prev.edges - set(diff.removed_edges)) | set(diff.added_edges)
    return DependencyGraph(targets, edges)


# -- classification against critical paths -------------------------------------


class Kind(str, Enum):
    OUTWARD = "outward"
    INWARD = "inward"
    UNRELATED = "unrelated"


@dataclass(frozen=True)
class EdgeClassification:
    """How a new edge touches one critical path.

    Outward: the edge's dependent sits on the path at ``lcp_index`` (the
    path target now waits on an external chain).  Inward: the edge's
    dependency sits on the path (an external chain now waits on the path
    target).  Unrelated: neither endpoint is on any path; ``lcp`` and
    ``lcp_index`` are None.
    """

    kind: Kind
    lcp: Chain | None
    lcp_index: int | None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "lcp": list(self.lcp) if self.lcp is not None else None,
            "lcp_index": self.lcp_index,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EdgeClassification":
        lcp = d["lcp"]
        return cls(
            kind=Kind(d["kind"]),
            lcp=tuple(lcp) if lcp is not None else None,
            lcp_index=d["lcp_index"],
        )


def classify_edge(edge: Edge, lcps: list[Chain]) -> list[EdgeClassification]:
    """Classify *edge* against each critical path it touches.

    Returns one entry per (path, role) combination; an edge whose endpoints
    both sit on the same path yields an outward and an inward entry for it.
    Touching no path at all yields a single unrelated entry.
    """
    if not lcps:
        raise ValueError("lcps must be non-empty")
    out: list[EdgeClassification] = []
    for lcp in lcps:
        if edge.dependent in lcp:
            out.append(EdgeClassification(Kind.OUTWARD, lcp, lcp.index(edge.dependent)))
        if edge.dependency in lcp:
            out.append(EdgeClassification(Kind.INWARD, lcp, lcp.index(edge.dependency)))
    if not out:
        return [EdgeClassification(Kind.UNRELATED, None, None)]
    return out


def validate_chain(g: DependencyGraph, chain: Chain) -> None:
    """Raise unless *chain* is a repeat-free path of *g* in execution order."""
    if len(set(chain)) != len(chain):
        raise BuildDataError(f"chain repeats a target: {chain}")
    for t in chain:
        if t not in g.targets:
            raise UnknownTargetError(t, "graph")
    for u, v in zip(chain, chain[1:]):
        if not g.has_edge(u, v):
            raise BuildDataError(f"chain breaks between {u!r} and {v!r}: no such edge")


# -- heaviest chains ------------------------------------------------------------


def upstream_chain(g: DependencyGraph, times: Mapping[str, float], node: str) -> Chain:
    """Heaviest-duration path from some source down to *node*, inclusive.

    Ties are broken lexicographically by target name at each step.
    """
    if node not in g.targets:
        raise UnknownTargetError(node, "graph")
    members = _reachable(g, node, g.dependencies_of)
    dist: dict[str, float] = {}
    choice: dict[str, str | None] = {}
    for t in _topo_order(members, g.dependencies_of):
        preds = g.dependencies_of(t)
        if preds:
            best = max(dist[p] for p in preds)
            choice[t] = min(p for p in preds if dist[p] == best)
        else:
            best = 0.0
            choice[t] = None
        dist[t] = best + _time_of(times, t)
    chain = [node]
    while choice[chain[-1]] is not None:
        chain.append(choice[chain[-1]])  # type: ignore[arg-type]
    chain.reverse()
    return tuple(chain)


def downstream_chain(g: DependencyGraph, times: Mapping[str, float], node: str) -> Chain:
    """Heaviest-duration path from *node*, inclusive, down to some sink.

    Mirror of upstream_chain over the dependent relation; same tie-break.
    """
    if node not in g.targets:
        raise UnknownTargetError(node, "graph")
    members = _reachable(g, node, g.dependents_of)
    dist: dict[str, float] = {}
    choice: dict[str, str | None] = {}
    for t in _topo_order(members, g.dependents_of):
        succs = g.dependents_of(t)
        if succs:
            best = max(dist[s] for s in succs)
            choice[t] = min(s for s in succs if dist[s] == best)
        else:
            best = 0.0
            choice[t] = None
        dist[t] = best + _time_of(times, t)
    chain = [node]
    while choice[chain[-1]] is not None:
        chain.append(choice[chain[-1]])  # type: ignore[arg-type]
    return tuple(chain)


def _time_of(times: Mapping[str, float], target: str) -> float:
    try:
        return float(times[target])
    except KeyError:
        raise UnknownTargetError(target, "time model") from None


def _reachable(g: DependencyGraph, node: str, neighbors) -> set[str]:
    seen = {node}
    queue = deque([node])
    while queue:
        for nxt in neighbors(queue.popleft()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def _topo_order(members: set[str], neighbors) -> list[str]:
    """Members ordered so every neighbor(t) within the set precedes t."""
    indeg = dict.fromkeys(members, 0)
    for t in members:
        for n in neighbors(t):
            if n in members:
                indeg[t] += 1
    ready = deque(sorted(t for t in members if indeg[t] == 0))
    order: list[str] = []
    rev: dict[str, list[str]] = {t: [] for t in members}
    for t in members:
        for n in neighbors(t):
            if n in members:
                rev[n].append(t)
    while ready:
        t = ready.popleft()
        order.append(t)
        for m in rev[t]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    return order

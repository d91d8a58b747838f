"""Typed acyclic directed mixed graphs (ADMGs) with the missingness-graph node taxonomy.

Nodes are one of four kinds: fully observed substantive variables, substantive
variables affected by missingness, binary missingness indicators (one per
missing-affected variable), and optional proxy nodes (the observed, maskable
copy of a missing-affected variable). Directed edges carry causation,
bidirected edges latent confounding.

Conventions used throughout the package:

* ``ancestors``/``descendants`` are reflexive: they include the query set
  itself. Criteria that read "X is an ancestor of Y" with X == Y therefore
  hold trivially, which is the convention the recovery criteria are written
  in.
* Graphs are immutable value objects; every operation returns a new graph.
  Equality is structural (node map plus edge sets), insertion order never
  matters.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional


class GraphError(Exception):
    """Base class for graph construction and query errors."""


class NodeNotFound(GraphError):
    def __init__(self, name: str):
        super().__init__(f"unknown node: {name!r}")
        self.name = name


class CycleDetected(GraphError):
    def __init__(self, cycle: tuple[str, ...]):
        super().__init__(f"directed cycle: {' -> '.join(cycle)}")
        self.cycle = cycle


class InvalidGraph(GraphError):
    pass


OBSERVED = "observed"
MISSING = "missing"
INDICATOR = "indicator"
PROXY = "proxy"

_KINDS = (OBSERVED, MISSING, INDICATOR, PROXY)


@dataclass(frozen=True)
class NodeKind:
    """Node taxonomy tag. ``of`` names the missing-affected variable an
    indicator or proxy belongs to; it is None for substantive nodes."""

    kind: str
    of: Optional[str] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidGraph(f"unknown node kind: {self.kind!r}")
        if self.kind in (INDICATOR, PROXY) and not self.of:
            raise InvalidGraph(f"{self.kind} node needs an 'of' target")
        if self.kind in (OBSERVED, MISSING) and self.of is not None:
            raise InvalidGraph(f"{self.kind} node cannot have an 'of' target")

    @staticmethod
    def observed() -> "NodeKind":
        return NodeKind(OBSERVED)

    @staticmethod
    def missing() -> "NodeKind":
        return NodeKind(MISSING)

    @staticmethod
    def indicator(of: str) -> "NodeKind":
        return NodeKind(INDICATOR, of)

    @staticmethod
    def proxy(of: str) -> "NodeKind":
        return NodeKind(PROXY, of)


def _norm_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class Admg:
    """Immutable acyclic directed mixed graph with typed nodes."""

    __slots__ = ("nodes", "directed", "bidirected", "_children", "_parents", "_hash")

    def __init__(
        self,
        nodes: Mapping[str, NodeKind],
        directed: Iterable[tuple[str, str]] = (),
        bidirected: Iterable[tuple[str, str]] = (),
    ):
        node_map = dict(nodes)
        for name in node_map:
            if not name:
                raise InvalidGraph("node names must be nonempty")
        dir_edges = frozenset((str(a), str(b)) for a, b in directed)
        bi_edges = frozenset(_norm_pair(str(a), str(b)) for a, b in bidirected)

        for a, b in dir_edges | bi_edges:
            if a == b:
                raise InvalidGraph(f"self-loop on {a!r}")
            for end in (a, b):
                if end not in node_map:
                    raise NodeNotFound(end)

        self._check_taxonomy(node_map)

        object.__setattr__(self, "nodes", node_map)
        object.__setattr__(self, "directed", dir_edges)
        object.__setattr__(self, "bidirected", bi_edges)

        children: dict[str, set[str]] = {v: set() for v in node_map}
        parents: dict[str, set[str]] = {v: set() for v in node_map}
        for a, b in dir_edges:
            children[a].add(b)
            parents[b].add(a)
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_parents", parents)
        object.__setattr__(self, "_hash", None)

        self.topological_order()  # raises CycleDetected on a cyclic directed part

    @staticmethod
    def _check_taxonomy(nodes: Mapping[str, NodeKind]) -> None:
        seen_indicator: set[str] = set()
        seen_proxy: set[str] = set()
        for name, kind in nodes.items():
            if kind.kind in (INDICATOR, PROXY):
                target = kind.of
                if target not in nodes:
                    raise InvalidGraph(f"{name!r} refers to unknown node {target!r}")
                if nodes[target].kind != MISSING:
                    raise InvalidGraph(
                        f"{name!r} must refer to a missing-affected node, "
                        f"got {nodes[target].kind!r}"
                    )
                bucket = seen_indicator if kind.kind == INDICATOR else seen_proxy
                if target in bucket:
                    raise InvalidGraph(f"duplicate {kind.kind} for {target!r}")
                bucket.add(target)

    # -- identity ----------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, Admg):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.directed == other.directed
            and self.bidirected == other.bidirected
        )

    def __hash__(self) -> int:
        if self._hash is None:
            h = hash((frozenset(self.nodes.items()), self.directed, self.bidirected))
            object.__setattr__(self, "_hash", h)
        return self._hash

    def __repr__(self) -> str:
        return (
            f"Admg({len(self.nodes)} nodes, {len(self.directed)} directed, "
            f"{len(self.bidirected)} bidirected)"
        )

    def __setattr__(self, *args):
        raise AttributeError("Admg is immutable")

    # -- node helpers -------------------------------------------------------

    def __contains__(self, name: str) -> bool:
        return name in self.nodes

    def __iter__(self) -> Iterator[str]:
        return iter(self.nodes)

    def _require(self, names: Iterable[str]) -> frozenset[str]:
        s = frozenset(names)
        for name in s:
            if name not in self.nodes:
                raise NodeNotFound(name)
        return s

    def nodes_of_kind(self, *kinds: str) -> frozenset[str]:
        return frozenset(v for v, k in self.nodes.items() if k.kind in kinds)

    @property
    def substantive(self) -> frozenset[str]:
        return self.nodes_of_kind(OBSERVED, MISSING)

    @property
    def indicators(self) -> frozenset[str]:
        return self.nodes_of_kind(INDICATOR)

    @property
    def proxies(self) -> frozenset[str]:
        return self.nodes_of_kind(PROXY)

    def indicator_of(self, var: str) -> str:
        """The indicator node paired with missing-affected ``var``."""
        if var not in self.nodes:
            raise NodeNotFound(var)
        for name, kind in self.nodes.items():
            if kind.kind == INDICATOR and kind.of == var:
                return name
        raise InvalidGraph(f"no indicator declared for {var!r}")

    def proxy_of(self, var: str) -> Optional[str]:
        if var not in self.nodes:
            raise NodeNotFound(var)
        for name, kind in self.nodes.items():
            if kind.kind == PROXY and kind.of == var:
                return name
        return None

    # -- relatives ----------------------------------------------------------

    def parents(self, s: Iterable[str]) -> frozenset[str]:
        s = self._require(s)
        out: set[str] = set()
        for v in s:
            out |= self._parents[v]
        return frozenset(out)

    def children(self, s: Iterable[str]) -> frozenset[str]:
        s = self._require(s)
        out: set[str] = set()
        for v in s:
            out |= self._children[v]
        return frozenset(out)

    def _reach(self, s: frozenset[str], step: dict[str, set[str]]) -> frozenset[str]:
        out = set(s)
        stack = list(s)
        while stack:
            v = stack.pop()
            for w in step[v]:
                if w not in out:
                    out.add(w)
                    stack.append(w)
        return frozenset(out)

    def ancestors(self, s: Iterable[str]) -> frozenset[str]:
        """Reflexive ancestors of ``s`` along directed edges."""
        return self._reach(self._require(s), self._parents)

    def descendants(self, s: Iterable[str]) -> frozenset[str]:
        """Reflexive descendants of ``s`` along directed edges."""
        return self._reach(self._require(s), self._children)

    def nondescendants(self, s: Iterable[str]) -> frozenset[str]:
        return frozenset(self.nodes) - self.descendants(s)

    # -- mutilation ----------------------------------------------------------

    def mutilate_over(self, s: Iterable[str]) -> "Admg":
        """Delete directed edges *into* ``s`` (intervention graph)."""
        s = self._require(s)
        directed = frozenset(e for e in self.directed if e[1] not in s)
        return Admg(self.nodes, directed, self.bidirected)

    def mutilate_under(self, s: Iterable[str]) -> "Admg":
        """Delete directed edges *out of* ``s``."""
        s = self._require(s)
        directed = frozenset(e for e in self.directed if e[0] not in s)
        return Admg(self.nodes, directed, self.bidirected)

    def drop_directed(self, edges: Iterable[tuple[str, str]]) -> "Admg":
        drop = frozenset(edges)
        return Admg(self.nodes, self.directed - drop, self.bidirected)

    def add_directed(self, edges: Iterable[tuple[str, str]]) -> "Admg":
        return Admg(self.nodes, self.directed | frozenset(edges), self.bidirected)

    # -- topological order ----------------------------------------------------

    def topological_order(self) -> list[str]:
        """Directed-edge-respecting order, deterministic via lexicographic
        tie-breaking on node names."""
        indeg = {v: len(self._parents[v]) for v in self.nodes}
        ready = [v for v, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        out: list[str] = []
        while ready:
            v = heapq.heappop(ready)
            out.append(v)
            for w in sorted(self._children[v]):
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(ready, w)
        if len(out) != len(self.nodes):
            raise CycleDetected(self._find_cycle())
        return out

    def _find_cycle(self) -> tuple[str, ...]:
        # DFS witness over the directed part; only called when one exists.
        color: dict[str, int] = {}
        trail: list[str] = []

        def visit(v: str) -> Optional[tuple[str, ...]]:
            color[v] = 1
            trail.append(v)
            for w in sorted(self._children[v]):
                if color.get(w, 0) == 1:
                    i = trail.index(w)
                    return tuple(trail[i:]) + (w,)
                if color.get(w, 0) == 0:
                    found = visit(w)
                    if found:
                        return found
            color[v] = 2
            trail.pop()
            return None

        for v in sorted(self.nodes):
            if color.get(v, 0) == 0:
                found = visit(v)
                if found:
                    return found
        raise AssertionError("no cycle found")  # pragma: no cover

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for name in sorted(self.nodes):
            kind = self.nodes[name]
            entry: dict = {"name": name, "kind": kind.kind}
            if kind.of is not None:
                entry["of"] = kind.of
            nodes.append(entry)
        return {
            "nodes": nodes,
            "directed": sorted([a, b] for a, b in self.directed),
            "bidirected": sorted([a, b] for a, b in self.bidirected),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @staticmethod
    def from_dict(payload: Mapping) -> "Admg":
        nodes: dict[str, NodeKind] = {}
        for entry in payload.get("nodes", []):
            nodes[entry["name"]] = NodeKind(entry["kind"], entry.get("of"))
        return Admg(
            nodes,
            [tuple(e) for e in payload.get("directed", [])],
            [tuple(e) for e in payload.get("bidirected", [])],
        )

    @staticmethod
    def from_json(text: str) -> "Admg":
        return Admg.from_dict(json.loads(text))

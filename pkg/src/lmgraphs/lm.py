"""Labeled missingness graphs.

An lm-graph extends an m-graph for systems where a variable's missingness
changes downstream causal mechanisms: for each shift-affected variable X a
nonempty set of shifted children S_X is declared, the indicator R_X gains
arrows into every Z in S_X, and the edge X -> Z is labeled with the
deactivating context R_X = 0 whenever X and Z are not latently confounded.
Labels encode context-specific independencies: in the context R_X = 0 the
labeled edges are absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from .graph import (
    INDICATOR,
    MISSING,
    PROXY,
    Admg,
    CycleDetected,
    GraphError,
    InvalidGraph,
    NodeNotFound,
)
from .separation import InvalidQuery, m_separated


class InvalidShiftSet(GraphError):
    pass


class FeedbackRisk(GraphError):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    """Declares, per shift-affected variable X, the children whose mechanisms
    switch when X is missing."""

    shifted_children: Mapping[str, frozenset[str]]

    def __init__(self, shifted_children: Mapping[str, Iterable[str]]):
        object.__setattr__(
            self,
            "shifted_children",
            {x: frozenset(s) for x, s in dict(shifted_children).items()},
        )

    def __bool__(self) -> bool:
        return bool(self.shifted_children)

    @property
    def shifted_vars(self) -> frozenset[str]:
        return frozenset(self.shifted_children)

    def items(self):
        return self.shifted_children.items()


def validate_m_graph(g: Admg) -> None:
    """Indicators may only point at other indicators or proxies: the classical
    m-graph assumption that missingness has no substantive descendants. Every
    missing-affected variable must carry its indicator."""
    allowed = g.indicators | g.proxies
    for r in g.indicators:
        bad = g.children([r]) - allowed
        if bad:
            raise InvalidGraph(
                f"base graph is not an m-graph: indicator {r!r} has "
                f"substantive children {sorted(bad)}"
            )
    for v in g.nodes_of_kind(MISSING):
        g.indicator_of(v)  # raises InvalidGraph when absent


@dataclass(frozen=True)
class LmGraph:
    """An augmented graph plus its label set and provenance.

    ``labels`` holds the directed edges (X, Z) deactivated in the context
    R_X = 0; every labeled pair also has the arrow R_X -> Z in ``graph``.
    """

    base: Admg
    spec: ShiftSpec
    graph: Admg
    labels: frozenset[tuple[str, str]]

    @property
    def shifted_vars(self) -> frozenset[str]:
        return self.spec.shifted_vars

    @property
    def shifted_indicators(self) -> frozenset[str]:
        return frozenset(self.graph.indicator_of(x) for x in self.shifted_vars)

    def labels_of(self, var: str) -> frozenset[tuple[str, str]]:
        """Labeled edges deactivated when ``var`` is missing."""
        return frozenset(e for e in self.labels if e[0] == var)

    def to_dict(self) -> dict:
        payload = self.base.to_dict()
        payload["shifts"] = {
            x: sorted(s) for x, s in sorted(self.spec.items())
        }
        payload["labels"] = sorted([x, z] for x, z in self.labels)
        return payload

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @staticmethod
    def from_dict(payload: Mapping) -> "LmGraph":
        base = Admg.from_dict(payload)
        shifts = payload.get("shifts", {})
        return build_lm_graph(base, ShiftSpec(shifts))

    @staticmethod
    def from_json(text: str) -> "LmGraph":
        return LmGraph.from_dict(json.loads(text))


def build_lm_graph(base: Admg, spec: ShiftSpec) -> LmGraph:
    """Construct the lm-graph for ``base`` under ``spec``.

    Adds R_X -> Z for every declared shifted child, labels X -> Z unless
    X <-> Z, and rejects declarations that would create feedback. An empty
    spec returns the base graph unchanged with no labels.
    """
    validate_m_graph(base)

    new_edges: set[tuple[str, str]] = set()
    labels: set[tuple[str, str]] = set()
    for x, s_x in sorted(spec.items()):
        if x not in base.nodes:
            raise NodeNotFound(x)
        if base.nodes[x].kind != MISSING:
            raise InvalidShiftSet(f"{x!r} is not a missing-affected variable")
        if not s_x:
            raise InvalidShiftSet(f"empty shifted-children set for {x!r}")
        r_x = base.indicator_of(x)
        children = base.children([x])
        if not s_x <= children:
            raise InvalidShiftSet(
                f"shifted children of {x!r} must be children in the base "
                f"graph; offending: {sorted(s_x - children)}"
            )
        feedback = s_x & base.ancestors([r_x])
        if feedback:
            raise FeedbackRisk(
                f"shifted children of {x!r} include ancestors of {r_x!r}: "
                f"{sorted(feedback)}"
            )
        for z in sorted(s_x):
            new_edges.add((r_x, z))
            if (min(x, z), max(x, z)) not in base.bidirected:
                labels.add((x, z))

    try:
        graph = base.add_directed(new_edges)
    except CycleDetected:
        raise
    return LmGraph(base=base, spec=spec, graph=graph, labels=frozenset(labels))


def check_regular_maximal(lm: LmGraph) -> bool:
    """Regularity: every labeled edge (X, Z) has R_X among Z's parents.
    Maximality holds structurally for binary indicators with the single
    context value 0; checked as: no labeled pair occurs twice."""
    seen: set[tuple[str, str]] = set()
    for x, z in lm.labels:
        r_x = lm.graph.indicator_of(x)
        if r_x not in lm.graph.parents([z]):
            return False
        if (x, z) in seen:
            return False  # pragma: no cover - frozenset cannot duplicate
        seen.add((x, z))
    return True


ContextPattern = Mapping[str, int]


def context_graph(lm: LmGraph, pattern: ContextPattern) -> Admg:
    """The graph of the context selected by ``pattern``: labeled edges of every
    indicator assigned 0 are removed; indicators assigned 1 remove nothing.

    Pattern keys are indicator node names of shift-affected variables.
    """
    drop: set[tuple[str, str]] = set()
    shifted = lm.shifted_indicators
    for r, value in pattern.items():
        if r not in lm.graph.nodes:
            raise NodeNotFound(r)
        if lm.graph.nodes[r].kind != INDICATOR or r not in shifted:
            raise InvalidQuery(f"{r!r} is not a shift-affected indicator")
        if value not in (0, 1):
            raise InvalidQuery(f"context value for {r!r} must be 0 or 1")
        if value == 0:
            drop |= lm.labels_of(lm.graph.nodes[r].of)
    return lm.graph.drop_directed(drop)


def csi_holds_graphically(
    lm: LmGraph, edge: tuple[str, str], w: Iterable[str]
) -> bool:
    """Sufficient graphical check for the context-specific independence
    Z independent of X given W in the context R_X = 0: m-separation of Z and X
    given W and R_X after deleting the labeled edge X -> Z."""
    edge = (edge[0], edge[1])
    if edge not in lm.labels:
        raise InvalidQuery(f"edge {edge!r} is not labeled")
    x, z = edge
    r_x = lm.graph.indicator_of(x)
    pruned = lm.graph.drop_directed([edge])
    return m_separated(pruned, {z}, {x}, frozenset(w) | {r_x})

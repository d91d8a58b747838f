"""Recoverability of the full and natural average treatment effects.

FATE: the effect had no data been missing, do(A=a, all indicators = 1). Its
recovery routes through the reduced indicator set R_phi (the shift indicators
with a directed route to the outcome once A and the shift indicators are
intervened on) and a sequential-factorization adjustment criterion over a
candidate set split into observed and missing-affected parts.

NATE: the effect under the unaltered missingness-driven mechanism shifts.
Recovery is certified by a witness (K, H, {L_r}) whose per-pattern conditions
reduce to m-separation statements in context graphs; on success the estimand
is the pattern-weighted sum of context-specific adjustments.

Both criteria are sufficient, not complete: the honest negative verdict is
"not decided", never "not recoverable".
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .estimand import CondExp, Diff, Estimand, Given, IntOver, MixtureSum, render_latex, render_text
from .graph import Admg, GraphError, MISSING, OBSERVED
from .lm import LmGraph, context_graph
from .separation import find_open_path, m_separated


class InvalidWitness(GraphError):
    pass


class WitnessSearchLimit(GraphError):
    pass


FATE = "fate"
NATE = "nate"


@dataclass(frozen=True)
class QuerySpec:
    """A binary point-exposure effect query on an lm-graph."""

    exposure: str
    outcome: str
    target: str = NATE

    def __post_init__(self):
        if self.target not in (FATE, NATE):
            raise ValueError(f"target must be 'fate' or 'nate', got {self.target!r}")
        if self.exposure == self.outcome:
            raise ValueError("exposure and outcome must differ")

    def validate(self, g: Admg) -> None:
        for v in (self.exposure, self.outcome):
            if v not in g.nodes:
                raise GraphError(f"query variable {v!r} not in graph")
            if g.nodes[v].kind not in (OBSERVED, MISSING):
                raise GraphError(f"query variable {v!r} must be substantive")
        downstream = g.descendants([self.outcome]) - g.proxies
        if downstream != {self.outcome}:
            raise GraphError(
                f"outcome {self.outcome!r} has descendants {sorted(downstream - {self.outcome})}; "
                "the criteria assume an outcome without causal descendants"
            )


def compute_r_phi(lm: LmGraph, q: QuerySpec) -> frozenset[str]:
    """Shift indicators with an unblocked directed route to the outcome under
    intervention on the exposure and all shift indicators."""
    q.validate(lm.graph)
    r_sh = lm.shifted_indicators
    if not r_sh:
        return frozenset()
    mutilated = lm.graph.mutilate_over(r_sh | {q.exposure})
    return r_sh & mutilated.ancestors([q.outcome])


# --- FATE ------------------------------------------------------------------------


@dataclass(frozen=True)
class FateVerdict:
    recoverable: bool
    r_phi: frozenset[str]
    adjustment_observed: frozenset[str] = frozenset()
    adjustment_missing: frozenset[str] = frozenset()
    r_adjust: frozenset[str] = frozenset()
    estimand: Optional[Estimand] = None
    reason: str = ""

    @property
    def adjustment(self) -> frozenset[str]:
        return self.adjustment_observed | self.adjustment_missing

    def to_dict(self) -> dict:
        out = {
            "target": "FATE",
            "verdict": "recoverable" if self.recoverable else "not-decided",
            "r_phi": sorted(self.r_phi),
        }
        if self.recoverable:
            out["adjustment"] = {
                "observed": sorted(self.adjustment_observed),
                "missing": sorted(self.adjustment_missing),
                "indicators": sorted(self.r_adjust),
            }
            out["estimand_text"] = render_text(self.estimand)
            out["estimand_latex"] = render_latex(self.estimand)
        else:
            out["reason"] = self.reason
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _fate_estimand(
    q: QuerySpec,
    z_obs: frozenset[str],
    z_mis: frozenset[str],
    r_adj: frozenset[str],
) -> Estimand:
    inner_given = (
        tuple(Given(v) for v in sorted(z_obs | z_mis))
        + (Given(q.exposure, "a"),)
        + tuple(Given(r, "1") for r in sorted(r_adj))
    )
    body: Estimand = Diff("a", CondExp(q.outcome, inner_given))
    if z_mis:
        given = tuple(Given(v) for v in sorted(z_obs)) + tuple(
            Given(r, "1") for r in sorted(r_adj)
        )
        body = IntOver(tuple(sorted(z_mis)), given, body)
    if z_obs:
        body = IntOver(tuple(sorted(z_obs)), (), body)
    return body


def check_fate_recovery(
    lm: LmGraph, q: QuerySpec, max_set_size: int | None = None
) -> FateVerdict:
    """Search adjustment candidates for the sequential-factorization criterion.

    Candidates are substantive sets Z (split into observed part Z_o and
    missing-affected part Z_m), searched in increasing size with
    lexicographic tie-breaking. With R_adj = R_phi plus the indicators of
    Z_m, the conditions are:

    (i)   Z contains no descendant of A or R_adj;
    (ii)  Y is m-separated from A and R_adj given Z once their outgoing
          edges are removed;
    (iii) Z_m is m-separated from R_adj given Z_o in the full graph.

    The criterion is sufficient, not complete: exhaustion yields the verdict
    "not decided".
    """
    q.validate(lm.graph)
    g = lm.graph
    r_phi = compute_r_phi(lm, q)
    candidates = sorted(g.substantive - {q.exposure, q.outcome})
    cap = len(candidates) if max_set_size is None else min(max_set_size, len(candidates))

    for size in range(cap + 1):
        for combo in itertools.combinations(candidates, size):
            z = frozenset(combo)
            z_mis = frozenset(v for v in z if g.nodes[v].kind == MISSING)
            z_obs = z - z_mis
            r_adj = r_phi | frozenset(g.indicator_of(v) for v in z_mis)
            intervened = r_adj | {q.exposure}
            if z & g.descendants(intervened):
                continue
            mutilated = g.mutilate_under(intervened)
            if not m_separated(mutilated, {q.outcome}, intervened, z):
                continue
            if z_mis and r_adj and not m_separated(g, z_mis, r_adj, z_obs):
                continue
            return FateVerdict(
                recoverable=True,
                r_phi=r_phi,
                adjustment_observed=z_obs,
                adjustment_missing=z_mis,
                r_adjust=r_adj,
                estimand=_fate_estimand(q, z_obs, z_mis, r_adj),
            )
    return FateVerdict(
        recoverable=False,
        r_phi=r_phi,
        reason=(
            "no admissible adjustment set found (criterion is sufficient, "
            f"not complete); candidates searched up to size {cap}"
        ),
    )


# --- NATE ------------------------------------------------------------------------


Pattern = tuple[int, ...]


@dataclass(frozen=True)
class NateWitness:
    """Certificate sets for NATE recovery.

    ``k`` is an ordered tuple of shift-affected variables indexing the
    missingness patterns; ``h`` a set of shift-affected variables whose
    labeled edges are additionally removed for the final exposure-separation
    check; ``l`` maps each pattern over ``k`` to its adjustment set L_r.
    """

    k: tuple[str, ...]
    h: frozenset[str]
    l: Mapping[Pattern, frozenset[str]] = field(default_factory=dict)

    def __init__(
        self,
        k: Iterable[str] = (),
        h: Iterable[str] = (),
        l: Mapping[Iterable[int], Iterable[str]] | None = None,
    ):
        object.__setattr__(self, "k", tuple(k))
        object.__setattr__(self, "h", frozenset(h))
        mapping: dict[Pattern, frozenset[str]] = {}
        for pattern, l_r in (l or {}).items():
            mapping[tuple(int(b) for b in pattern)] = frozenset(l_r)
        if not self.k and not mapping:
            mapping[()] = frozenset()
        object.__setattr__(self, "l", mapping)

    @property
    def patterns(self) -> list[Pattern]:
        return sorted(self.l)

    @property
    def total_size(self) -> int:
        return len(self.k) + len(self.h) + sum(len(s) for s in self.l.values())

    def sort_key(self):
        return (
            self.total_size,
            self.k,
            tuple(sorted(self.h)),
            tuple(tuple(sorted(self.l[p])) for p in self.patterns),
        )

    def to_dict(self) -> dict:
        return {
            "k": list(self.k),
            "h": sorted(self.h),
            "l": {"".join(map(str, p)): sorted(s) for p, s in sorted(self.l.items())},
        }

    @staticmethod
    def from_dict(payload: Mapping) -> "NateWitness":
        return NateWitness(
            k=payload.get("k", ()),
            h=payload.get("h", ()),
            l={tuple(int(c) for c in p): s for p, s in payload.get("l", {}).items()},
        )


@dataclass(frozen=True)
class ConditionFailure:
    condition: int  # 2..5, numbering of the per-pattern conditions
    pattern: Pattern
    description: str
    open_path: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "pattern": "".join(map(str, self.pattern)),
            "description": self.description,
            "open_path": list(self.open_path),
        }


@dataclass(frozen=True)
class NateVerdict:
    recoverable: bool
    witness: Optional[NateWitness] = None
    estimand: Optional[Estimand] = None
    failure: Optional[ConditionFailure] = None

    def to_dict(self) -> dict:
        out = {
            "target": "NATE",
            "verdict": "recoverable" if self.recoverable else "condition-failed",
        }
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        if self.recoverable:
            out["estimand_text"] = render_text(self.estimand)
            out["estimand_latex"] = render_latex(self.estimand)
        elif self.failure is not None:
            out["failure"] = self.failure.to_dict()
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _validate_witness(lm: LmGraph, q: QuerySpec, w: NateWitness) -> None:
    sh = lm.shifted_vars - {q.exposure, q.outcome}
    bad_k = [v for v in w.k if v not in sh]
    if bad_k:
        raise InvalidWitness(
            f"K must contain shift-affected variables other than exposure/outcome; "
            f"offending: {bad_k}"
        )
    if len(set(w.k)) != len(w.k):
        raise InvalidWitness("K contains duplicates")
    if not w.h <= sh:
        raise InvalidWitness(
            f"H must contain shift-affected variables other than exposure/outcome; "
            f"offending: {sorted(w.h - sh)}"
        )
    if set(w.k) & w.h:
        raise InvalidWitness("K and H must be disjoint")
    pool = lm.graph.substantive - ({q.exposure, q.outcome} | w.h)
    if not w.l:
        raise InvalidWitness("witness must carry at least one pattern")
    for pattern, l_r in w.l.items():
        if len(pattern) != len(w.k):
            raise InvalidWitness(
                f"pattern {pattern} does not match |K| = {len(w.k)}"
            )
        if not l_r <= pool:
            raise InvalidWitness(
                f"L_{pattern} must be substantive and exclude exposure, outcome "
                f"and H; offending: {sorted(l_r - pool)}"
            )
        required = {kj for kj, bit in zip(w.k, pattern) if bit == 1}
        forbidden = {kj for kj, bit in zip(w.k, pattern) if bit == 0}
        if l_r & forbidden:
            raise InvalidWitness(
                f"condition (i) violated for pattern {pattern}: L_r contains "
                f"{sorted(l_r & forbidden)} although their indicators are 0"
            )
        if not required <= l_r:
            raise InvalidWitness(
                f"condition (i) violated for pattern {pattern}: L_r must "
                f"contain {sorted(required - l_r)}"
            )


def _nate_estimand(
    lm: LmGraph, q: QuerySpec, w: NateWitness, per_pattern: dict[Pattern, dict]
) -> Estimand:
    terms = []
    for pattern in w.patterns:
        info = per_pattern[pattern]
        l_r: frozenset[str] = w.l[pattern]
        k_assign = tuple(
            Given(lm.graph.indicator_of(kj), str(bit))
            for kj, bit in zip(w.k, pattern)
        )
        m_assign = tuple(Given(r, "1") for r in sorted(info["r_m"]))
        h_assign = tuple(Given(r, "0") for r in sorted(info["r_h"]))
        cond_given = (
            tuple(Given(v) for v in sorted(l_r))
            + (Given(q.exposure, "a"),)
            + k_assign
            + m_assign
            + h_assign
        )
        body: Estimand = Diff("a", CondExp(q.outcome, cond_given))
        if l_r:
            body = IntOver(tuple(sorted(l_r)), k_assign + m_assign, body)
        terms.append((k_assign, body))
    if len(terms) == 1 and not terms[0][0]:
        return terms[0][1]
    return MixtureSum(tuple(terms))


def check_nate_recovery(lm: LmGraph, q: QuerySpec, w: NateWitness) -> NateVerdict:
    """Check the per-pattern witness conditions and emit the estimand.

    For each pattern r over K, with M_r the missing-affected variables among
    the exposure, outcome and L_r \\ K, G_r the context graph of r (labeled
    edges of zero-indicators removed) and H_r the further reduction by H's
    labeled edges:

    (ii)  none of R_K, L_r, R_{M_r}, R_H descends from A in G_r;
    (iii) Y is m-separated from R_{M_r} given A, R_K in G_r with A's incoming
          edges removed;
    (iv)  Y is m-separated from R_H given A, L_r, R_K, R_{M_r} in that graph;
    (v)   Y is m-separated from A given L_r, R_K, R_{M_r}, R_H in H_r with
          A's outgoing edges removed.
    """
    q.validate(lm.graph)
    _validate_witness(lm, q, w)
    g = lm.graph
    v_m = g.nodes_of_kind(MISSING)
    r_k = frozenset(g.indicator_of(kj) for kj in w.k)
    r_h = frozenset(g.indicator_of(hj) for hj in w.h)
    h_labels = frozenset(e for hj in w.h for e in lm.labels_of(hj))

    per_pattern: dict[Pattern, dict] = {}
    for pattern in w.patterns:
        l_r = w.l[pattern]
        g_r = context_graph(
            lm,
            {g.indicator_of(kj): bit for kj, bit in zip(w.k, pattern)},
        )
        h_r = g_r.drop_directed(h_labels)
        m_r = v_m & (({q.exposure, q.outcome} | l_r) - set(w.k))
        r_m = frozenset(g.indicator_of(v) for v in m_r)
        per_pattern[pattern] = {"r_m": r_m, "r_h": r_h if w.h else frozenset()}

        blocked = (r_k | l_r | r_m | r_h) & g_r.descendants([q.exposure])
        if blocked:
            return NateVerdict(
                recoverable=False,
                witness=w,
                failure=ConditionFailure(
                    condition=2,
                    pattern=pattern,
                    description=(
                        f"{sorted(blocked)} descend from exposure "
                        f"{q.exposure!r} in the context graph"
                    ),
                    open_path=tuple(
                        _directed_path(g_r, q.exposure, sorted(blocked)[0])
                    ),
                ),
            )

        g_r_over = g_r.mutilate_over([q.exposure])
        if r_m and not m_separated(
            g_r_over, {q.outcome}, r_m, {q.exposure} | r_k
        ):
            path = find_open_path(g_r_over, {q.outcome}, r_m, {q.exposure} | r_k)
            return NateVerdict(
                recoverable=False,
                witness=w,
                failure=ConditionFailure(
                    condition=3,
                    pattern=pattern,
                    description=(
                        f"outcome not separated from {sorted(r_m)} given "
                        f"exposure and R_K"
                    ),
                    open_path=tuple(path or ()),
                ),
            )

        if r_h and not m_separated(
            g_r_over, {q.outcome}, r_h, {q.exposure} | l_r | r_k | r_m
        ):
            path = find_open_path(
                g_r_over, {q.outcome}, r_h, {q.exposure} | l_r | r_k | r_m
            )
            return NateVerdict(
                recoverable=False,
                witness=w,
                failure=ConditionFailure(
                    condition=4,
                    pattern=pattern,
                    description=(
                        f"outcome not separated from {sorted(r_h)} given "
                        f"exposure, L_r, R_K and R_M"
                    ),
                    open_path=tuple(path or ()),
                ),
            )

        h_r_under = h_r.mutilate_under([q.exposure])
        cond = l_r | r_k | r_m | r_h
        if not m_separated(h_r_under, {q.outcome}, {q.exposure}, cond):
            path = find_open_path(h_r_under, {q.outcome}, {q.exposure}, cond)
            return NateVerdict(
                recoverable=False,
                witness=w,
                failure=ConditionFailure(
                    condition=5,
                    pattern=pattern,
                    description=(
                        "outcome not separated from exposure given "
                        f"{sorted(cond)} in the exposure-mutilated context graph"
                    ),
                    open_path=tuple(path or ()),
                ),
            )

    return NateVerdict(
        recoverable=True,
        witness=w,
        estimand=_nate_estimand(lm, q, w, per_pattern),
    )


def _directed_path(g: Admg, source: str, target: str) -> list[str]:
    """Shortest directed path source -> ... -> target, as node/arrow list."""
    prev: dict[str, str] = {}
    frontier = [source]
    seen = {source}
    while frontier:
        new: list[str] = []
        for v in frontier:
            for child in sorted(g.children([v])):
                if child in seen:
                    continue
                prev[child] = v
                if child == target:
                    path = [target]
                    while path[-1] != source:
                        path.append(prev[path[-1]])
                    nodes = list(reversed(path))
                    out = [nodes[0]]
                    for node in nodes[1:]:
                        out.extend(["->", node])
                    return out
                seen.add(child)
                new.append(child)
        frontier = new
    return [source] if source == target else []


def search_nate_witness(
    lm: LmGraph,
    q: QuerySpec,
    k_max: int = 2,
    h_max: int = 2,
    l_max: int = 6,
    max_candidates: int = 500_000,
) -> Optional[NateWitness]:
    """Enumerate witnesses in increasing total size (lexicographic
    tie-breaking) and return the first one passing
    :func:`check_nate_recovery`, or None when the capped space is exhausted.
    """
    q.validate(lm.graph)
    sh = sorted(lm.shifted_vars - {q.exposure, q.outcome})
    substantive = lm.graph.substantive

    candidates: list[NateWitness] = []
    for k_size in range(min(k_max, len(sh)) + 1):
        for k in itertools.combinations(sh, k_size):
            rest = [v for v in sh if v not in k]
            for h_size in range(min(h_max, len(rest)) + 1):
                for h in itertools.combinations(rest, h_size):
                    pool = sorted(
                        substantive - ({q.exposure, q.outcome} | set(h) | set(k))
                    )
                    patterns = list(itertools.product((0, 1), repeat=k_size))
                    per_pattern_options = []
                    for pattern in patterns:
                        required = frozenset(
                            kj for kj, bit in zip(k, pattern) if bit == 1
                        )
                        budget = l_max - len(required)
                        opts = []
                        for extra_size in range(max(budget, 0) + 1):
                            for extra in itertools.combinations(pool, extra_size):
                                opts.append(required | frozenset(extra))
                        per_pattern_options.append(opts)
                    for choice in itertools.product(*per_pattern_options):
                        candidates.append(
                            NateWitness(
                                k=k,
                                h=h,
                                l={p: l_r for p, l_r in zip(patterns, choice)},
                            )
                        )
                        if len(candidates) > max_candidates:
                            raise WitnessSearchLimit(
                                f"witness space exceeds {max_candidates}; "
                                "lower k_max/h_max/l_max"
                            )

    candidates.sort(key=NateWitness.sort_key)
    for witness in candidates:
        try:
            verdict = check_nate_recovery(lm, q, witness)
        except InvalidWitness:  # pragma: no cover - enumeration is valid
            continue
        if verdict.recoverable:
            return witness
    return None

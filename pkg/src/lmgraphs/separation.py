"""m-separation on ADMGs.

The main routine reduces bidirected edges to the canonical latent expansion
(each V1 <-> V2 becomes V1 <- U -> V2 with a fresh latent U that is never
conditioned on) and runs the standard active-trail reachability algorithm on
the resulting DAG. A brute-force path enumerator over the mixed graph serves
as the independent test oracle; the two must agree everywhere.
"""

from __future__ import annotations

from typing import Iterable

from .graph import Admg, GraphError, NodeNotFound


class InvalidQuery(GraphError):
    pass


class OracleLimitExceeded(GraphError):
    pass


def _validate(g: Admg, x, y, z) -> tuple[frozenset, frozenset, frozenset]:
    x, y, z = frozenset(x), frozenset(y), frozenset(z)
    for s in (x, y, z):
        for v in s:
            if v not in g.nodes:
                raise NodeNotFound(v)
    if x & y or x & z or y & z:
        raise InvalidQuery("x, y, z must be pairwise disjoint")
    if not x or not y:
        raise InvalidQuery("x and y must be nonempty")
    return x, y, z


def _latent_expansion(g: Admg) -> tuple[dict[str, set[str]], dict[str, set[str]]]:
    """Directed parent/child maps of the DAG obtained by replacing every
    bidirected edge with a fresh exogenous latent parent."""
    parents: dict[str, set[str]] = {v: set() for v in g.nodes}
    children: dict[str, set[str]] = {v: set() for v in g.nodes}
    for a, b in g.directed:
        parents[b].add(a)
        children[a].add(b)
    for i, (a, b) in enumerate(sorted(g.bidirected)):
        u = f"#latent{i}"
        parents[u] = set()
        children[u] = {a, b}
        parents[a].add(u)
        parents[b].add(u)
    return parents, children


def m_separated(g: Admg, x: Iterable[str], y: Iterable[str], z: Iterable[str]) -> bool:
    """True iff every path between ``x`` and ``y`` is blocked given ``z``.

    Colliders are nodes where both adjacent path edges point into the node;
    bidirected edge-ends count as arrowheads. A collider unblocks iff it or
    one of its descendants is in ``z``.
    """
    x, y, z = _validate(g, x, y, z)
    parents, children = _latent_expansion(g)

    # ancestors of z (reflexive) in the expanded DAG
    anz: set[str] = set(z)
    stack = list(z)
    while stack:
        v = stack.pop()
        for p in parents[v]:
            if p not in anz:
                anz.add(p)
                stack.append(p)

    # Active-trail reachability from x. State (node, direction): "down" means
    # we entered the node through an arrowhead (from a parent), "up" means we
    # entered through a tail (from a child).
    start = [(v, "up") for v in x]
    visited: set[tuple[str, str]] = set()
    agenda = list(start)
    while agenda:
        node, direction = agenda.pop()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node in y:
            return False
        if direction == "up" and node not in z:
            for p in parents[node]:
                agenda.append((p, "up"))
            for c in children[node]:
                agenda.append((c, "down"))
        elif direction == "down":
            if node not in z:
                for c in children[node]:
                    agenda.append((c, "down"))
            if node in anz:
                for p in parents[node]:
                    agenda.append((p, "up"))
    return True


# --- brute-force oracle -------------------------------------------------------

_ORACLE_MAX_NODES = 14


def _mixed_adjacency(g: Admg) -> dict[str, list[tuple[str, str]]]:
    """Adjacency of the mixed graph: node -> [(neighbour, edge mark)] where the
    mark is the edge as seen from the *current* node: 'out' (tail here),
    'in' (arrowhead here), 'bi' (arrowheads both ends)."""
    adj: dict[str, list[tuple[str, str]]] = {v: [] for v in g.nodes}
    for a, b in g.directed:
        adj[a].append((b, "out"))
        adj[b].append((a, "in"))
    for a, b in g.bidirected:
        adj[a].append((b, "bi"))
        adj[b].append((a, "bi"))
    return adj


def _path_open(
    path: list[str],
    marks: list[str],
    z: frozenset[str],
    desc: dict[str, frozenset[str]],
) -> bool:
    """Blocking rules applied to an explicit path.

    ``marks[i]`` is the edge between path[i] and path[i+1] as seen from
    path[i], so an arrowhead sits at interior node v = path[i] on its left
    edge iff marks[i-1] is 'out' or 'bi', and on its right edge iff marks[i]
    is 'in' or 'bi'.
    """
    for i in range(1, len(path) - 1):
        v = path[i]
        collider = marks[i - 1] in ("out", "bi") and marks[i] in ("in", "bi")
        if collider:
            if not (desc[v] & z):
                return False
        elif v in z:
            return False
    return True


def m_separated_bruteforce(
    g: Admg, x: Iterable[str], y: Iterable[str], z: Iterable[str]
) -> bool:
    """Exhaustive simple-path enumeration with the blocking rules; agrees with
    :func:`m_separated` by construction. Limited to small graphs."""
    if len(g.nodes) > _ORACLE_MAX_NODES:
        raise OracleLimitExceeded(
            f"oracle limited to {_ORACLE_MAX_NODES} nodes, got {len(g.nodes)}"
        )
    x, y, z = _validate(g, x, y, z)
    adj = _mixed_adjacency(g)
    desc = {v: g.descendants([v]) for v in g.nodes}

    def dfs(v: str, path: list[str], marks: list[str]) -> bool:
        # True as soon as one open path into y is found; paths stop at the
        # first y-node hit (an open longer path implies an open prefix).
        for w, mark in adj[v]:
            if w in path or w in x:
                continue
            path.append(w)
            marks.append(mark)
            if w in y:
                if _path_open(path, marks, z, desc):
                    return True
            elif dfs(w, path, marks):
                return True
            path.pop()
            marks.pop()
        return False

    for s in sorted(x):
        if dfs(s, [s], []):
            return False
    return True


_MARK_ARROW = {"out": "->", "in": "<-", "bi": "<->"}


def find_open_path(
    g: Admg, x: Iterable[str], y: Iterable[str], z: Iterable[str]
) -> list[str] | None:
    """A concrete unblocked path between ``x`` and ``y`` given ``z``, rendered
    as an alternating node/edge-mark list (e.g. ``['W', '->', 'A']``), or None
    when the sets are m-separated. Small graphs only (same cap as the oracle).
    """
    if len(g.nodes) > _ORACLE_MAX_NODES:
        raise OracleLimitExceeded(
            f"witness search limited to {_ORACLE_MAX_NODES} nodes, got {len(g.nodes)}"
        )
    x, y, z = _validate(g, x, y, z)
    adj = _mixed_adjacency(g)
    desc = {v: g.descendants([v]) for v in g.nodes}
    found: list[list] = []

    def dfs(v: str, path: list[str], marks: list[str]) -> bool:
        for w, mark in adj[v]:
            if w in path or w in x:
                continue
            path.append(w)
            marks.append(mark)
            if w in y:
                if _path_open(path, marks, z, desc):
                    found.append([list(path), list(marks)])
                    return True
            elif dfs(w, path, marks):
                return True
            path.pop()
            marks.pop()
        return False

    for s in sorted(x):
        if dfs(s, [s], []):
            path, marks = found[0]
            out: list[str] = [path[0]]
            for node, mark in zip(path[1:], marks):
                out.append(_MARK_ARROW[mark])
                out.append(node)
            return out
    return None

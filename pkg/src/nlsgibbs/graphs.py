"""Wick pairings of the vertex set and the multigraphs they collapse to."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

FAMILIES = ("R", "Q")
OBSERVABLE_KINDS = ("general", "identity")


class Vertex(NamedTuple):
    """A slot (i, theta, delta) of the expansion; delta = +1 marks a conjugated field."""

    i: int
    theta: int
    delta: int

    def label(self) -> str:
        return f"({self.i},{self.theta},{'+' if self.delta > 0 else '-'})"


def _sign_rank(delta: int) -> int:
    # "+" sorts before "-"
    return 0 if delta > 0 else 1


def vertex_order_key(v: Vertex, m: int, d: int) -> tuple:
    if d == 1:
        return (v.i, _sign_rank(v.delta), v.theta)
    if v.i <= m:
        return (v.i, v.theta, _sign_rank(v.delta))
    return (v.i, _sign_rank(v.delta), v.theta)


def build_vertex_set(m: int, r: int, d: int, observable: str = "general") -> list[Vertex]:
    """All 4m + 2r vertices, sorted in the order used for the given dimension."""
    if m < 0 or r < 0:
        raise ValueError("m and r must be nonnegative")
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if observable not in OBSERVABLE_KINDS:
        raise ValueError(f"unknown observable kind {observable!r}")
    if observable == "identity" and d != 1:
        raise ValueError("the identity observable is only available for d = 1")
    verts = [Vertex(i, th, s) for i in range(1, m + 1) for th in (1, 2) for s in (1, -1)]
    verts += [Vertex(m + 1, th, s) for th in range(1, r + 1) for s in (1, -1)]
    return sorted(verts, key=lambda v: vertex_order_key(v, m, d))


@dataclass(frozen=True)
class Pairing:
    """A perfect matching of +/- vertices; edges hold positions in the ordered vertex list."""

    family: str
    m: int
    r: int
    d: int
    vertices: tuple[Vertex, ...]
    edges: tuple[tuple[int, int], ...]
    observable: str = "general"

    def vertex_pairs(self) -> list[tuple[Vertex, Vertex]]:
        return [(self.vertices[a], self.vertices[b]) for a, b in self.edges]

    def key(self) -> tuple:
        return (self.family, self.m, self.r, self.d, self.edges)


def _forbidden(u: Vertex, v: Vertex, m: int) -> bool:
    return u.i == v.i and u.theta == v.theta and u.i <= m


def enumerate_pairings(vertices: list[Vertex], family: str, m: int, d: int, observable: str = "general") -> list[Pairing]:
    """Every matching of + slots to - slots; family R drops the internal self-pairs."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    order = {v: n for n, v in enumerate(vertices)}
    plus = [v for v in vertices if v.delta > 0]
    minus = [v for v in vertices if v.delta < 0]
    if len(plus) != len(minus):
        raise ValueError("vertex set must have as many + as - slots")
    r = len(plus) - 2 * m
    used = [False] * len(minus)
    chosen: list[tuple[int, int]] = []
    out: list[Pairing] = []

    def extend(n: int) -> None:
        if n == len(plus):
            edges = tuple(sorted(chosen))
            out.append(Pairing(family, m, r, d, tuple(vertices), edges, observable))
            return
        u = plus[n]
        for j, v in enumerate(minus):
            if used[j] or (family == "R" and _forbidden(u, v, m)):
                continue
            used[j] = True
            a, b = order[u], order[v]
            chosen.append((min(a, b), max(a, b)))
            extend(n + 1)
            chosen.pop()
            used[j] = False

    extend(0)
    return sorted(out, key=lambda p: p.edges)


def default_family(d: int) -> str:
    return "Q" if d == 1 else "R"


def pairings_for(m: int, r: int, d: int, observable: str = "general", family: str | None = None) -> list[Pairing]:
    fam = default_family(d) if family is None else family
    verts = build_vertex_set(m, r, d, observable)
    return enumerate_pairings(verts, fam, m, d, observable)


def count_q(m: int, r: int) -> int:
    return math.factorial(2 * m + r)


def count_r(m: int, r: int) -> int:
    """Inclusion-exclusion over the 2m forbidden internal self-pairs."""
    return sum((-1) ** j * math.comb(2 * m, j) * math.factorial(2 * m + r - j) for j in range(2 * m + 1))


class Edge(NamedTuple):
    a: int
    b: int
    sigma: int


@dataclass(frozen=True)
class Multigraph:
    """Edge-coloured multigraph on collapsed vertices.

    ``nodes`` lists collapsed labels: (i, theta) for internal vertices, the full
    vertex triple for external ones (or (m+1, theta) in the identity variant).
    Node order follows the smallest member of each class.
    """

    m: int
    r: int
    d: int
    variant: str
    nodes: tuple[tuple, ...]
    degree_two: tuple[int, ...]
    degree_one: tuple[int, ...]
    edges: tuple[Edge, ...]

    def node_time_slot(self, n: int) -> int:
        """Index i of the time attached to node n; m + 1 means the external time 0."""
        return self.nodes[n][0]

    def degrees(self) -> list[int]:
        deg = [0] * len(self.nodes)
        for e in self.edges:
            deg[e.a] += 1
            deg[e.b] += 1
        return deg

    def has_loop(self) -> bool:
        return any(e.a == e.b for e in self.edges)

    def canonical(self) -> tuple:
        return (self.variant, self.m, self.r, self.d, self.nodes, tuple(sorted(self.edges)))

    def to_edge_list(self) -> str:
        lines = [f"# variant={self.variant} m={self.m} r={self.r} d={self.d}"]
        for n, lab in enumerate(self.nodes):
            kind = "v2" if n in self.degree_two else "v1"
            lines.append(f"node {n} {kind} " + ",".join(str(x) for x in lab))
        for e in self.edges:
            lines.append(f"edge {e.a} {e.b} {e.sigma:+d}")
        return "\n".join(lines) + "\n"


def _class_label(v: Vertex, m: int, variant: str) -> tuple:
    if v.i <= m or variant == "identity":
        return (v.i, v.theta)
    return tuple(v)


def collapse(pairing: Pairing, variant: str | None = None) -> Multigraph:
    """Identify the two slots of each (i, theta) and colour edges by the later slot's sign."""
    variant = pairing.observable if variant is None else variant
    if variant == "identity" and pairing.d != 1:
        raise ValueError("the identity collapse is only defined for d = 1")
    m = pairing.m
    verts = pairing.vertices
    first_seen: dict[tuple, int] = {}
    for pos, v in enumerate(verts):
        first_seen.setdefault(_class_label(v, m, variant), pos)
    labels = sorted(first_seen, key=first_seen.__getitem__)
    index = {lab: n for n, lab in enumerate(labels)}
    edges = []
    for a, b in pairing.edges:
        va, vb = verts[a], verts[b]
        na, nb = index[_class_label(va, m, variant)], index[_class_label(vb, m, variant)]
        edges.append(Edge(min(na, nb), max(na, nb), vb.delta))
    two = tuple(n for n, lab in enumerate(labels) if len(lab) == 2)
    one = tuple(n for n, lab in enumerate(labels) if len(lab) == 3)
    g = Multigraph(m, pairing.r, pairing.d, variant, tuple(labels), two, one, tuple(edges))
    deg = g.degrees()
    for n in range(len(labels)):
        want = 2 if n in two else 1
        if deg[n] != want:
            raise AssertionError(f"collapsed node {labels[n]} has degree {deg[n]}, expected {want}")
    if pairing.family == "R" and g.has_loop():
        raise AssertionError("a Wick-ordered pairing collapsed to a loop")
    return g


@dataclass(frozen=True)
class Path:
    edges: tuple[int, ...]
    nodes: tuple[int, ...]
    closed: bool

    @property
    def classification(self) -> str:
        return "closed" if self.closed else "open"


def path_decompose(g: Multigraph) -> list[Path]:
    """Split the edge multiset into maximal paths, sorted by their smallest node."""
    incident: dict[int, list[int]] = {n: [] for n in range(len(g.nodes))}
    for j, e in enumerate(g.edges):
        incident[e.a].append(j)
        if e.b != e.a:
            incident[e.b].append(j)
    seen_edges: set[int] = set()
    paths = []
    ends = set(g.degree_one)

    def walk(start: int) -> Path:
        node, edges, nodes = start, [], [start]
        while True:
            nxt = [j for j in incident[node] if j not in seen_edges]
            if not nxt:
                break
            j = nxt[0]
            seen_edges.add(j)
            edges.append(j)
            e = g.edges[j]
            node = e.b if e.a == node else e.a
            if node == start:
                break
            nodes.append(node)
        closed = not (start in ends)
        return Path(tuple(edges), tuple(nodes), closed)

    for start in sorted(ends):
        if incident[start] and incident[start][0] not in seen_edges:
            paths.append(walk(start))
    for start in range(len(g.nodes)):
        if any(j not in seen_edges for j in incident[start]):
            paths.append(walk(start))
    return sorted(paths, key=lambda p: min(p.nodes))


def interaction_labels(g: Multigraph, paths: list[Path]) -> dict[tuple, str]:
    """Assign each internal node "w" or "one" so that each pair {a, a*} carries one w."""
    where: dict[int, int] = {}
    for pidx, p in enumerate(paths):
        for n in p.nodes:
            where[n] = pidx
    index = {lab: n for n, lab in enumerate(g.nodes)}
    labels: dict[tuple, str] = {}
    for n in g.degree_two:
        i, th = g.nodes[n]
        if i > g.m:
            continue
        partner = index[(i, 3 - th)]
        j, ell = where[n], where[partner]
        if j < ell:
            labels[(i, th)] = "w"
        elif j > ell:
            labels[(i, th)] = "one"
        else:
            labels[(i, th)] = "w" if th == 1 else "one"
    return labels


def iter_multigraphs(m: int, r: int, d: int, observable: str = "general") -> Iterator[tuple[Pairing, Multigraph]]:
    for p in pairings_for(m, r, d, observable):
        yield p, collapse(p)

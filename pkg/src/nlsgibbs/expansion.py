"""Graph values and expansion coefficients, quantum and classical."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .graphs import Multigraph, collapse, count_q, count_r, default_family, pairings_for
from .potentials import PotentialSpec, mollify
from .spectral import (
    FourierKernel,
    TorusSpec,
    classical_green,
    kernel_eval_many,
    mode_ball,
    mode_index,
    q1_coefficients,
    q2_coefficients,
)

CLASSICAL = math.inf
# rows per enumeration block when summing over free momenta
BLOCK_ROWS = 1 << 18


def default_eta(d: int) -> float:
    return 0.0 if d == 1 else 0.125


# ---------------------------------------------------------------- observables


@dataclass(frozen=True)
class Observable:
    """A finite-rank r-body observable given by its mode matrix.

    For r = 1 the tensor is xi_hat[k, l]; for r = 2 it is xi_hat[k1, k2, l1, l2],
    pairing conjugated slots k with plain slots l. ``identity`` stands for the
    r-fold identity, meaningful only in d = 1.
    """

    spec: TorusSpec
    rank: int
    tensor: np.ndarray | None = None
    identity: bool = False
    name: str = ""

    def __post_init__(self):
        if self.rank not in (0, 1, 2):
            raise ValueError("observables of rank 0, 1 or 2 only")
        if self.identity:
            if self.spec.d != 1:
                raise ValueError("the identity observable is only available for d = 1")
            object.__setattr__(self, "tensor", None)
            return
        if self.rank == 0:
            object.__setattr__(self, "tensor", None)
            return
        t = np.array(self.tensor, dtype=complex, copy=True)
        n = self.spec.n_modes
        if t.shape != (n,) * (2 * self.rank):
            raise ValueError(f"observable tensor must have shape {(n,) * (2 * self.rank)}, got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "tensor", t)

    @property
    def hs_norm(self) -> float:
        if self.identity:
            return math.inf
        if self.rank == 0:
            return 1.0
        return float(np.sqrt(np.sum(np.abs(self.tensor) ** 2)))

    def adjoint_defect(self) -> float:
        if self.tensor is None:
            return 0.0
        n = self.spec.n_modes
        r = self.rank
        mat = self.tensor.reshape(n**r, n**r)
        return float(np.abs(mat - mat.conj().T).max())

    def is_self_adjoint(self, tol: float = 1e-12) -> bool:
        return self.adjoint_defect() <= tol

    def in_unit_ball(self) -> bool:
        return self.is_self_adjoint() and self.hs_norm <= 1.0 + 1e-12

    def theta(self, phi_hat: np.ndarray) -> np.ndarray:
        """Theta(xi) for a batch of mode vectors, shape (samples, n_modes) -> (samples,)."""
        phi = np.atleast_2d(phi_hat)
        if self.rank == 0:
            return np.ones(phi.shape[0])
        if self.identity:
            return np.sum(np.abs(phi) ** 2, axis=1) ** self.rank
        c = phi.conj()
        if self.rank == 1:
            val = np.einsum("sk,kl,sl->s", c, self.tensor, phi, optimize=True)
        else:
            half = np.einsum("sa,sb,abcd->scd", c, c, self.tensor, optimize=True)
            val = np.einsum("scd,sc,sd->s", half, phi, phi, optimize=True)
        scale = max(1.0, float(np.abs(val).max(initial=0.0)))
        if float(np.abs(val.imag).max(initial=0.0)) > 1e-9 * scale:
            raise ValueError("observable produced a complex expectation; is it self-adjoint?")
        return val.real

    # constructors

    @classmethod
    def empty(cls, spec: TorusSpec) -> "Observable":
        return cls(spec, 0, name="empty")

    @classmethod
    def unit(cls, spec: TorusSpec, k=None) -> "Observable":
        """Projection onto a single Fourier mode (zero mode by default)."""
        n = spec.n_modes
        j = spec.zero_index() if k is None else int(mode_index(spec.d, spec.cutoff, np.reshape(k, (1, -1)))[0])
        if j < 0:
            raise ValueError(f"mode {k} is outside the cutoff ball")
        t = np.zeros((n, n), dtype=complex)
        t[j, j] = 1.0
        return cls(spec, 1, t, name=f"unit{'' if k is None else tuple(np.ravel(k))}")

    @classmethod
    def from_matrix(cls, spec: TorusSpec, mat, name: str = "matrix") -> "Observable":
        return cls(spec, 1, np.asarray(mat, dtype=complex), name=name)

    @classmethod
    def from_products(cls, spec: TorusSpec, factors, name: str = "product") -> "Observable":
        """Rank two from a sum of tensor products A_j (x) B_j of mode matrices."""
        factors = list(factors)
        if not 1 <= len(factors) <= 4:
            raise ValueError("between one and four product terms are supported")
        n = spec.n_modes
        t = np.zeros((n,) * 4, dtype=complex)
        for a, b in factors:
            t += np.einsum("ac,bd->abcd", np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))
        return cls(spec, 2, t, name=name)

    @classmethod
    def random_hermitian(cls, spec: TorusSpec, rng: np.random.Generator, rank: int = 1, terms: int = 1) -> "Observable":
        """Random self-adjoint observable with unit Hilbert-Schmidt norm."""
        n = spec.n_modes

        def herm():
            a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            return 0.5 * (a + a.conj().T)

        if rank == 1:
            m = herm()
            return cls(spec, 1, m / np.linalg.norm(m), name="randomHermitian")
        if rank != 2:
            raise ValueError("random observables of rank 1 or 2 only")
        obs = cls.from_products(spec, [(herm(), herm()) for _ in range(terms)], name="randomProduct")
        return cls(spec, 2, obs.tensor / obs.hs_norm, name="randomProduct")

    @classmethod
    def identity_op(cls, spec: TorusSpec, rank: int) -> "Observable":
        return cls(spec, rank, identity=True, name=f"identity{rank}")


def observable_battery(spec: TorusSpec, rank: int, seed: int = 7) -> list[Observable]:
    """Fixed finite family standing in for the unit ball of observables."""
    if rank == 0:
        return [Observable.empty(spec)]
    rng = np.random.default_rng(seed)
    if rank == 1:
        out = [Observable.unit(spec)]
        if spec.cutoff > 0:
            out.append(Observable.unit(spec, np.eye(spec.d, dtype=int)[0]))
        out.append(Observable.random_hermitian(spec, rng, 1))
        return out
    n = spec.n_modes
    e0 = np.zeros((n, n))
    e0[spec.zero_index(), spec.zero_index()] = 1.0
    return [
        Observable.from_products(spec, [(e0, e0)], name="unitProduct"),
        Observable.random_hermitian(spec, rng, 2, terms=2),
    ]


# -------------------------------------------------------------- time / records


@dataclass(frozen=True)
class TimeConfig:
    """Ordered interaction times t_1 > ... > t_m inside (eta, 1 - eta)."""

    eta: float
    times: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 <= self.eta <= 0.25:
            raise ValueError(f"eta must lie in [0, 1/4], got {self.eta}")
        ts = tuple(float(t) for t in self.times)
        for a, b in zip(ts, ts[1:]):
            if not a > b:
                raise ValueError("times must be strictly decreasing")
        if ts and not (self.eta < ts[-1] and ts[0] < 1.0 - self.eta):
            raise ValueError(f"times must lie in ({self.eta}, {1 - self.eta})")
        object.__setattr__(self, "times", ts)

    def slot_time(self, i: int) -> float:
        """Time attached to index i; external slots sit at time zero."""
        return self.times[i - 1] if 1 <= i <= len(self.times) else 0.0


@dataclass(frozen=True)
class CoeffRecord:
    m: int
    tau: float
    value: float
    quadrature_error: float
    pairings: int
    observable: str = ""

    def row(self) -> dict:
        tau = "inf" if math.isinf(self.tau) else repr(self.tau)
        return {
            "m": self.m,
            "tau": tau,
            "value": repr(self.value),
            "quadError": repr(self.quadrature_error),
            "pairings": self.pairings,
        }


def write_coefficients_csv(records: list[CoeffRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["m", "tau", "value", "quadError", "pairings"])
        wr.writeheader()
        for rec in records:
            wr.writerow(rec.row())


def read_coefficients_csv(path) -> list[CoeffRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                CoeffRecord(
                    int(row["m"]),
                    float(row["tau"]),
                    float(row["value"]),
                    float(row["quadError"]),
                    int(row["pairings"]),
                )
            )
    return out


# --------------------------------------------------------------- edge kernels


def edge_time_difference(g: Multigraph, edge_index: int, times: TimeConfig | None) -> tuple[float, bool]:
    """(s_a - s_b, whether both ends share the same index i)."""
    e = g.edges[edge_index]
    ia, ib = g.node_time_slot(e.a), g.node_time_slot(e.b)
    if times is None:
        return 0.0, ia == ib
    diff = times.slot_time(ia) - times.slot_time(ib)
    return diff, ia == ib


def edge_coefficients(lam: np.ndarray, tau: float, sigma: int, diff: float, same_index: bool, q1_only: bool = False) -> np.ndarray:
    """Fourier coefficients of the edge kernel for colour sigma and time gap diff >= 0."""
    if math.isinf(tau):
        return 1.0 / lam
    if not -1.0 < diff < 1.0:
        raise ValueError(f"time difference {diff} outside (-1, 1)")
    t = sigma * diff
    c = q1_coefficients(lam, tau, t)
    if q1_only:
        return c
    c = c + q2_coefficients(lam, tau, t) / tau
    if sigma > 0 and same_index:
        c = c + 1.0 / tau
    return c


def edge_kernel(g: Multigraph, edge_index: int, times: TimeConfig | None, tau: float, spec: TorusSpec, q1_only: bool = False) -> FourierKernel:
    """Kernel attached to one edge of a collapsed graph (classical when tau is inf)."""
    if math.isinf(tau):
        return classical_green(spec)
    diff, same = edge_time_difference(g, edge_index, times)
    sigma = g.edges[edge_index].sigma
    return FourierKernel(spec, edge_coefficients(spec.eigenvalues, tau, sigma, diff, same, q1_only), "custom")


# ------------------------------------------------- momentum-space evaluation


@dataclass
class _Line:
    tail: int
    head: int
    cutoff: int
    kind: str  # "edge" or "w"
    ref: int  # edge index or interaction index i


def _lines(g: Multigraph, K: int, Kw: int) -> list[_Line]:
    lines = [_Line(e.a, e.b, K, "edge", j) for j, e in enumerate(g.edges)]
    index = {lab: n for n, lab in enumerate(g.nodes)}
    for i in range(1, g.m + 1):
        lines.append(_Line(index[(i, 1)], index[(i, 2)], Kw, "w", i))
    return lines


def _constrained_nodes(g: Multigraph) -> list[int]:
    # internal vertices conserve momentum; external slots feed the observable
    return list(g.degree_two)


def _solve_constraints(g: Multigraph, lines: list[_Line]) -> tuple[list[int], dict[int, list[tuple[int, int]]]]:
    """Split line momenta into free ones and integer combinations of them."""
    nodes = _constrained_nodes(g)
    n_lines = len(lines)
    # pivot preference: interaction lines first, then edges
    col_order = [j for j, ln in enumerate(lines) if ln.kind == "w"] + [j for j, ln in enumerate(lines) if ln.kind == "edge"]
    rows = []
    for n in nodes:
        row = [Fraction(0)] * n_lines
        for j, ln in enumerate(lines):
            if ln.tail == ln.head:
                continue
            if ln.tail == n:
                row[j] += 1
            if ln.head == n:
                row[j] -= 1
        rows.append(row)
    pivots: list[int] = []
    r = 0
    for col in col_order:
        piv = next((i for i in range(r, len(rows)) if rows[i][col] != 0), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        lead = rows[r][col]
        rows[r] = [x / lead for x in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][col] != 0:
                f = rows[i][col]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        pivots.append(col)
        r += 1
        if r == len(rows):
            break
    free = [j for j in range(n_lines) if j not in pivots]
    dependent: dict[int, list[tuple[int, int]]] = {}
    for i, col in enumerate(pivots):
        combo = []
        for j in free:
            coef = -rows[i][j]
            if coef != 0:
                if coef.denominator != 1:
                    raise AssertionError("non-integral momentum constraint")
                combo.append((j, int(coef)))
        dependent[col] = combo
    return free, dependent


@dataclass
class StructurePart:
    """Admissible momentum assignments of one group of connected components."""

    lines: list[int]
    line_index: list[np.ndarray]
    external: list[np.ndarray]
    n_rows: int


@dataclass
class GraphStructure:
    """Index tables of all momentum assignments allowed by conservation, per component group."""

    lines: list[_Line]
    parts: list[StructurePart]


def _external_slots(g: Multigraph, lines: list[_Line]) -> list[tuple[int, int, str, int]]:
    """(line, sign, slot, node) per external leg, ordered as the observable tensor's axes."""
    out = []
    for n in g.degree_one:
        i, th, delta = g.nodes[n]
        j = next(jj for jj, ln in enumerate(lines) if n in (ln.tail, ln.head))
        ln = lines[j]
        # momentum leaving the external node along the line
        out.append(((0 if delta > 0 else 1, th), j, 1 if ln.tail == n else -1, n))
    out.sort()
    return [(j, s, "k" if key[0] == 0 else "l", n) for key, j, s, n in out]


def _line_groups(g: Multigraph, lines: list[_Line]) -> list[list[int]]:
    """Lines grouped by connected component; components touching the observable are merged."""
    parent = list(range(len(g.nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ln in lines:
        parent[find(ln.tail)] = find(ln.head)
    ext_roots = {find(n) for n in g.degree_one}
    groups: dict[int, list[int]] = {}
    for j, ln in enumerate(lines):
        root = find(ln.tail)
        key = -1 if root in ext_roots else root
        groups.setdefault(key, []).append(j)
    return [groups[k] for k in sorted(groups)]


def _enumerate_part(d, lines, members, free, dependent, ext_slots, K) -> StructurePart:
    free = [j for j in free if j in members]
    dep = {j: c for j, c in dependent.items() if j in members}
    ext = [e for e in ext_slots if e[0] in members]
    sizes = [len(mode_ball(d, lines[j].cutoff)) for j in free]
    total = int(np.prod(sizes)) if free else 1
    idx_blocks: dict[int, list[np.ndarray]] = {j: [] for j in members}
    ext_blocks: list[list[np.ndarray]] = [[] for _ in ext]
    n_rows = 0
    for start in range(0, total, BLOCK_ROWS):
        chunk = np.arange(start, min(total, start + BLOCK_ROWS), dtype=np.int64)
        coords = np.unravel_index(chunk, sizes) if free else ()
        momenta: dict[int, np.ndarray] = {}
        index: dict[int, np.ndarray] = {}
        for j, c in zip(free, coords):
            momenta[j] = mode_ball(d, lines[j].cutoff)[c]
            index[j] = c.astype(np.int64)
        ok = np.ones(len(chunk), dtype=bool)
        for j, combo in dep.items():
            mom = np.zeros((len(chunk), d), dtype=np.int64)
            for jj, coef in combo:
                mom += coef * momenta[jj]
            momenta[j] = mom
            idx = mode_index(d, lines[j].cutoff, mom)
            index[j] = idx
            ok &= idx >= 0
        for j in members:
            idx_blocks[j].append(np.broadcast_to(index[j], ok.shape)[ok].astype(np.int32))
        for s, (j, sign, slot, _) in enumerate(ext):
            # conjugated slots see minus the outgoing momentum, plain slots see it as is
            mom = sign * momenta[j][ok]
            if slot == "k":
                mom = -mom
            ext_blocks[s].append(mode_index(d, K, mom).astype(np.int32))
        n_rows += int(ok.sum())
    return StructurePart(
        list(members),
        [np.concatenate(idx_blocks[j]) for j in members],
        [np.concatenate(b) for b in ext_blocks],
        n_rows,
    )


def build_structure(g: Multigraph, K: int, Kw: int) -> GraphStructure:
    lines = _lines(g, K, Kw)
    free, dependent = _solve_constraints(g, lines)
    ext_slots = _external_slots(g, lines)
    groups = _line_groups(g, lines)
    parts = [_enumerate_part(g.d, lines, members, free, dependent, ext_slots, K) for members in groups]
    return GraphStructure(lines, parts)


_STRUCTURE_CACHE: "OrderedDict[tuple, GraphStructure]" = OrderedDict()
_STRUCTURE_CACHE_SIZE = 64


def cached_structure(g: Multigraph, K: int, Kw: int) -> GraphStructure:
    key = (g.canonical(), K, Kw)
    hit = _STRUCTURE_CACHE.get(key)
    if hit is not None:
        _STRUCTURE_CACHE.move_to_end(key)
        return hit
    st = build_structure(g, K, Kw)
    _STRUCTURE_CACHE[key] = st
    if len(_STRUCTURE_CACHE) > _STRUCTURE_CACHE_SIZE:
        _STRUCTURE_CACHE.popitem(last=False)
    return st


def evaluate_structure(st: GraphStructure, weights: list[np.ndarray], obs: Observable | None) -> float:
    """Product over component groups of the summed line weights (times the observable)."""
    total = 1.0 + 0.0j
    for part in st.parts:
        if part.n_rows == 0:
            return 0.0
        prod = np.ones(part.n_rows)
        for j, idx in zip(part.lines, part.line_index):
            prod = prod * weights[j][idx]
        if part.external and obs is not None and obs.rank > 0 and not obs.identity:
            total *= complex(np.sum(prod * obs.tensor[tuple(part.external)]))
        else:
            total *= float(np.sum(prod))
    scale = max(1.0, abs(total))
    if abs(total.imag) > 1e-10 * scale:
        raise ValueError(f"graph value has imaginary residue {total.imag:.3e}")
    return total.real


def _check_specs(spec: TorusSpec, w: PotentialSpec | None, obs: Observable | None):
    if w is not None and (w.spec.d != spec.d or w.spec.kappa != spec.kappa):
        raise ValueError("potential and field live on different tori")
    if obs is not None and obs.rank > 0 and not obs.identity and obs.spec != spec:
        raise ValueError(f"observable cutoff {obs.spec} does not match {spec}")


def _line_weights(
    g: Multigraph,
    lines: list[_Line],
    spec: TorusSpec,
    tau: float,
    w: PotentialSpec | None,
    times: TimeConfig | None,
    q1_only: bool = False,
) -> list[np.ndarray]:
    lam = spec.eigenvalues
    out = []
    for ln in lines:
        if ln.kind == "w":
            out.append(np.asarray(w.coeffs))
        else:
            e = g.edges[ln.ref]
            diff, same = edge_time_difference(g, ln.ref, times)
            out.append(edge_coefficients(lam, tau, e.sigma, diff, same, q1_only))
    return out


def graph_value(
    g: Multigraph,
    spec: TorusSpec,
    w: PotentialSpec | None = None,
    obs: Observable | None = None,
    tau: float = CLASSICAL,
    times: TimeConfig | None = None,
    q1_only: bool = False,
) -> float:
    """Value of a collapsed graph, computed as a finite sum over momenta."""
    _check_specs(spec, w, obs)
    if g.m > 0 and w is None:
        raise ValueError("graphs with interaction vertices need a potential")
    if not math.isinf(tau) and g.m > 0 and (times is None or len(times.times) != g.m):
        raise ValueError(f"quantum graph values need {g.m} interaction times")
    if g.m == 0 and g.r == 0:
        return 1.0
    Kw = w.spec.cutoff if w is not None else 0
    st = cached_structure(g, spec.cutoff, Kw)
    weights = _line_weights(g, st.lines, spec, tau, w, times, q1_only)
    return evaluate_structure(st, weights, obs)


def graph_value_position(
    g: Multigraph,
    spec: TorusSpec,
    w: PotentialSpec | None = None,
    obs: Observable | None = None,
    tau: float = CLASSICAL,
    times: TimeConfig | None = None,
    n: int | None = None,
) -> float:
    """Independent check: the same integral by trapezoid quadrature in position space.

    Exact for trigonometric polynomials once n exceeds the largest frequency
    appearing in any single position variable.
    """
    _check_specs(spec, w, obs)
    d, K = spec.d, spec.cutoff
    Kw = w.spec.cutoff if w is not None else 0
    n = 2 * K + Kw + 1 if n is None else n
    axis = np.arange(n) / n
    pts = np.stack([a.ravel() for a in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    P = len(pts)
    diffs = (pts[:, None, :] - pts[None, :, :]).reshape(-1, d)

    def matrix(kernel: FourierKernel) -> np.ndarray:
        return kernel_eval_many(kernel, diffs).reshape(P, P)

    operands: list = []
    lines = _lines(g, K, Kw)
    weights = _line_weights(g, lines, spec, tau, w, times)
    for ln, wt in zip(lines, weights):
        kspec = w.spec if ln.kind == "w" else spec
        mat = matrix(FourierKernel(kspec, wt, "custom"))
        operands += [mat, [ln.tail, ln.head]]
    if obs is not None and obs.rank > 0 and not obs.identity:
        modes = spec.modes
        plane = np.exp(2j * np.pi * pts @ modes.T)  # [x, k]
        nodes_k, nodes_l = [], []
        for _, _, slot, node in _external_slots(g, lines):
            (nodes_k if slot == "k" else nodes_l).append(node)
        xi = obs.tensor
        subs = list(range(len(g.nodes), len(g.nodes) + 2 * obs.rank))
        ops = [xi, subs]
        for s, node in zip(subs[: obs.rank], nodes_k):
            ops += [plane, [node, s]]
        for s, node in zip(subs[obs.rank :], nodes_l):
            ops += [plane.conj(), [node, s]]
        operands += ops
    if not operands:
        return 1.0
    val = np.einsum(*operands, [], optimize="greedy") / P ** len(g.nodes)
    val = complex(val)
    if abs(val.imag) > 1e-9 * max(1.0, abs(val)):
        raise ValueError("position-space value is not real")
    return val.real


# --------------------------------------------------------------- coefficients


def _collapsed_groups(m: int, r: int, d: int, observable: str) -> list[tuple[Multigraph, int]]:
    """Distinct collapsed graphs with multiplicities, in canonical order."""
    groups: dict[tuple, list] = {}
    for p in pairings_for(m, r, d, observable):
        g = collapse(p)
        key = g.canonical()
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [g, 1]
    return [(g, c) for _, (g, c) in sorted(groups.items(), key=lambda kv: repr(kv[0]))]


def _obs_kind(obs: Observable) -> str:
    return "identity" if obs.identity else "general"


def _map_ordered(fn, items, workers: int | None):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def pairing_sum(
    m: int,
    obs: Observable,
    spec: TorusSpec,
    w: PotentialSpec | None,
    tau: float = CLASSICAL,
    times: TimeConfig | None = None,
    q1_only: bool = False,
    workers: int | None = None,
) -> float:
    """Sum of graph values over every admissible pairing."""
    groups = _collapsed_groups(m, obs.rank, spec.d, _obs_kind(obs))
    vals = _map_ordered(lambda gc: gc[1] * graph_value(gc[0], spec, w, obs, tau, times, q1_only), groups, workers)
    return float(sum(vals))


def pairing_count(m: int, r: int, d: int) -> int:
    return count_q(m, r) if default_family(d) == "Q" else count_r(m, r)


def simplex_rule(m: int, eta: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes t_1 > ... > t_m in (eta, 1-eta) and weights of a tensor Gauss-Legendre rule.

    The ordered simplex is pulled back from the cube by x_j = y_1 ... y_j.
    """
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    if m == 0:
        return np.zeros((1, 0)), np.ones(1)
    gx, gw = np.polynomial.legendre.leggauss(order)
    y1, w1 = 0.5 * (gx + 1.0), 0.5 * gw
    grids = np.meshgrid(*([y1] * m), indexing="ij")
    wgrids = np.meshgrid(*([w1] * m), indexing="ij")
    ys = np.stack([g.ravel() for g in grids], axis=1)
    ws = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    xs = np.cumprod(ys, axis=1)
    jac = np.prod(ys[:, : m - 1] ** np.arange(m - 1, 0, -1), axis=1) if m > 1 else np.ones(len(ys))
    span = 1.0 - 2.0 * eta
    ts = eta + span * xs
    return ts, ws * jac * span**m


def _quantum_integral(m, obs, spec, w, tau, eta, order, q1_only, workers) -> float:
    ts, ws = simplex_rule(m, eta, order)
    groups = _collapsed_groups(m, obs.rank, spec.d, _obs_kind(obs))
    Kw = w.spec.cutoff if w is not None else 0

    def one_group(gc):
        g, mult = gc
        if g.m == 0 and g.r == 0:
            return mult * float(np.sum(ws))
        st = cached_structure(g, spec.cutoff, Kw)
        acc = 0.0
        for t, wt in zip(ts, ws):
            times = TimeConfig(eta, tuple(t)) if m else None
            weights = _line_weights(g, st.lines, spec, tau, w, times, q1_only)
            acc += wt * evaluate_structure(st, weights, obs)
        return mult * acc

    return float(sum(_map_ordered(one_group, groups, workers)))


def coeff_quantum(
    m: int,
    obs: Observable,
    tau: float,
    w: PotentialSpec | None,
    spec: TorusSpec,
    eta: float | None = None,
    order: int = 8,
    q1_only: bool = False,
    workers: int | None = None,
) -> CoeffRecord:
    """Quantum coefficient: simplex integral of the pairing sum, with prefactor."""
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    if not tau >= 1:
        raise ValueError("tau must be >= 1")
    eta = default_eta(spec.d) if eta is None else eta
    if (eta == 0.0) != (spec.d == 1):
        raise ValueError("eta must vanish exactly when d = 1")
    _check_specs(spec, w, obs)
    pref = (-1) ** m / ((1.0 - 2.0 * eta) ** m * 2.0**m)
    coarse = _quantum_integral(m, obs, spec, w, tau, eta, order, q1_only, workers)
    fine = _quantum_integral(m, obs, spec, w, tau, eta, 2 * order, q1_only, workers) if m else coarse
    return CoeffRecord(m, float(tau), pref * fine, abs(pref) * abs(fine - coarse), pairing_count(m, obs.rank, spec.d), obs.name)


def coeff_classical(m: int, obs: Observable, w: PotentialSpec | None, spec: TorusSpec, workers: int | None = None) -> CoeffRecord:
    """Classical coefficient (-1)^m/(m! 2^m) times the pairing sum."""
    _check_specs(spec, w, obs)
    pref = (-1) ** m / (math.factorial(m) * 2.0**m)
    s = pairing_sum(m, obs, spec, w, CLASSICAL, None, workers=workers)
    return CoeffRecord(m, CLASSICAL, pref * s, 0.0, pairing_count(m, obs.rank, spec.d), obs.name)


def series_eval(coeffs, z: float, M: int) -> float:
    """Partial sum of the first M coefficients at coupling z."""
    vals = [c.value if isinstance(c, CoeffRecord) else float(c) for c in coeffs]
    if M > len(vals):
        raise ValueError(f"need {M} coefficients, have {len(vals)}")
    return float(sum(vals[j] * z**j for j in range(M)))


@dataclass
class ScanRow:
    tau: float
    value: float
    gap: float
    quadrature_error: float
    sup_w: float = field(default=math.nan)


def convergence_scan(
    m: int,
    obs: Observable,
    taus,
    w: PotentialSpec,
    spec: TorusSpec,
    beta: float = 0.5,
    p: float = 2.0,
    frozen: bool = False,
    order: int = 8,
    workers: int | None = None,
) -> tuple[CoeffRecord, list[ScanRow]]:
    """Gap between quantum and classical coefficients along a list of temperatures.

    With ``frozen`` the same potential is used at every tau; that mode is a
    diagnostic of kernel convergence only.
    """
    limit = coeff_classical(m, obs, w, spec, workers)
    rows = []
    for tau in taus:
        if tau < 1:
            raise ValueError("scan temperatures must be >= 1")
        w_tau = w if frozen else mollify(w, tau, beta, p)
        rec = coeff_quantum(m, obs, tau, w_tau, spec, order=order, workers=workers)
        sup = float(np.abs(w_tau.coeffs).sum())
        rows.append(ScanRow(float(tau), rec.value, abs(rec.value - limit.value), rec.quadrature_error, sup))
    return limit, rows


def write_scan_csv(rows: list[ScanRow], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["tau", "value", "gap", "quadError", "supBound"])
        for r in rows:
            wr.writerow([repr(r.tau), repr(r.value), repr(r.gap), repr(r.quadrature_error), repr(r.sup_w)])

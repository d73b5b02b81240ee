"""Spectral data of h = -Laplacian + kappa on the unit torus.

Everything translation invariant is stored as Fourier coefficients over a
Euclidean ball of integer modes ``|k| <= K``.  Physical-space values are
recovered by direct summation or by FFT on a uniform grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

TWO_PI = 2.0 * math.pi
FOUR_PI_SQ = 4.0 * math.pi**2

KERNEL_KINDS = (
    "classicalGreen",
    "truncatedClassicalGreen",
    "quantumGreen",
    "timeEvolvedGreen",
    "timeEvolvedDelta",
    "Q1",
    "Q2",
    "deltaK",
    "potential",
    "custom",
)

# Desk-scale caps on the stored mode ball per dimension.
CUTOFF_CAPS = {1: 64, 2: 16, 3: 8}


@lru_cache(maxsize=None)
def mode_ball(d: int, K: int) -> np.ndarray:
    """Integer modes with Euclidean norm <= K, lexicographically sorted.

    The ordering is symmetric: mode ``j`` and mode ``N-1-j`` are negatives
    of each other.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if K < 0:
        raise ValueError(f"cutoff must be nonnegative, got {K}")
    axis = np.arange(-K, K + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    keep = (pts**2).sum(axis=1) <= K * K
    out = pts[keep]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _index_table(d: int, K: int) -> np.ndarray:
    """Dense lookup from shifted mode coordinates to ball index (-1 outside)."""
    modes = mode_ball(d, K)
    table = -np.ones((2 * K + 1,) * d, dtype=np.int64)
    table[tuple((modes + K).T)] = np.arange(len(modes))
    table.setflags(write=False)
    return table


def mode_index(d: int, K: int, k: np.ndarray) -> np.ndarray:
    """Ball indices of the integer vectors ``k`` (shape (..., d)); -1 if outside."""
    k = np.asarray(k, dtype=np.int64)
    table = _index_table(d, K)
    inside = np.all(np.abs(k) <= K, axis=-1)
    shifted = np.where(inside[..., None], k + K, 0)
    idx = table[tuple(np.moveaxis(shifted, -1, 0))]
    return np.where(inside, idx, -1)


def japanese(modes: np.ndarray) -> np.ndarray:
    """<k> = (1 + |k|^2)^(1/2)."""
    return np.sqrt(1.0 + (np.asarray(modes, dtype=float) ** 2).sum(axis=-1))


@dataclass(frozen=True)
class TorusSpec:
    """Dimension, chemical potential and Fourier cutoff."""

    d: int
    kappa: float = 1.0
    cutoff: int = 0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 0:
            raise ValueError(f"cutoff must be a nonnegative integer, got {self.cutoff}")
        if self.cutoff > CUTOFF_CAPS[self.d]:
            raise ValueError(
                f"cutoff {self.cutoff} exceeds the cap {CUTOFF_CAPS[self.d]} for d={self.d}"
            )

    @property
    def modes(self) -> np.ndarray:
        return mode_ball(self.d, self.cutoff)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def eigenvalues(self) -> np.ndarray:
        return FOUR_PI_SQ * (self.modes.astype(float) ** 2).sum(axis=1) + self.kappa

    def with_cutoff(self, K: int) -> "TorusSpec":
        return TorusSpec(self.d, self.kappa, K)

    def zero_index(self) -> int:
        return self.n_modes // 2


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``n`` points per dimension (or a Gauss-Legendre grid)."""

    n: int
    rule: str = "uniform-trapezoid"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid needs at least one point")
        if self.rule not in ("uniform-trapezoid", "gauss-legendre"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")

    @classmethod
    def default_for(cls, K: int) -> "GridSpec":
        return cls(4 * K + 1)

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        if self.rule == "uniform-trapezoid":
            x = np.arange(self.n) / self.n
            w = np.full(self.n, 1.0 / self.n)
        else:
            x, w = np.polynomial.legendre.leggauss(self.n)
            x = 0.5 * (x + 1.0)
            w = 0.5 * w
        return x, w


@dataclass(frozen=True)
class FourierKernel:
    """Translation-invariant kernel K(x;y) = sum_k c_k e^{2 pi i k (x-y)}."""

    spec: TorusSpec
    coeffs: np.ndarray
    kind: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, copy=True)
        if c.shape != (self.spec.n_modes,):
            raise ValueError(
                f"expected {self.spec.n_modes} coefficients, got shape {c.shape}"
            )
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not np.all(np.isfinite(c)):
            raise ValueError("kernel coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def modes(self) -> np.ndarray:
        return self.spec.modes

    def is_even(self, tol: float = 0.0) -> bool:
        c = self.coeffs
        return bool(np.all(np.abs(c - c[::-1]) <= tol * max(1.0, np.abs(c).max(initial=0.0))))

    def coefficient(self, k) -> float:
        idx = int(mode_index(self.spec.d, self.spec.cutoff, np.asarray(k).reshape(1, -1))[0])
        return 0.0 if idx < 0 else float(self.coeffs[idx])

    def __add__(self, other: "FourierKernel") -> "FourierKernel":
        _check_same_spec(self, other)
        return FourierKernel(self.spec, self.coeffs + other.coeffs, "custom")

    def __sub__(self, other: "FourierKernel") -> "FourierKernel":
        _check_same_spec(self, other)
        return FourierKernel(self.spec, self.coeffs - other.coeffs, "custom")

    def scaled(self, a: float, kind: str = "custom") -> "FourierKernel":
        return FourierKernel(self.spec, a * self.coeffs, kind)

    def restricted(self, K: int) -> "FourierKernel":
        """Same kernel viewed at a smaller (or larger, zero padded) cutoff."""
        return FourierKernel(self.spec.with_cutoff(K), _recut(self.spec, self.coeffs, K), self.kind)

    def total(self) -> float:
        """Value at x = 0, i.e. the sum of all coefficients."""
        return float(self.coeffs.sum())

    def grid_values(self, n: int | None = None) -> np.ndarray:
        """Values on the uniform grid j/n via inverse FFT; shape (n,)*d."""
        K = self.spec.cutoff
        n = 4 * K + 1 if n is None else n
        if n < 2 * K + 1:
            raise ValueError(f"grid with n={n} does not resolve cutoff K={K}")
        arr = np.zeros((n,) * self.spec.d, dtype=complex)
        idx = tuple((self.modes % n).T)
        np.add.at(arr, idx, self.coeffs)
        vals = np.fft.ifftn(arr) * n**self.spec.d
        return _real_part(vals, self.coeffs)


def _check_same_spec(a: FourierKernel, b: FourierKernel):
    if a.spec != b.spec:
        raise ValueError(f"kernel specs differ: {a.spec} vs {b.spec}")


def _recut(spec: TorusSpec, coeffs: np.ndarray, K: int) -> np.ndarray:
    new_modes = mode_ball(spec.d, K)
    idx = mode_index(spec.d, spec.cutoff, new_modes)
    return np.where(idx >= 0, coeffs[np.maximum(idx, 0)], 0.0)


def _real_part(vals: np.ndarray, coeffs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    scale = max(1.0, float(np.abs(coeffs).sum()))
    resid = float(np.abs(vals.imag).max(initial=0.0))
    if resid > tol * scale:
        raise ValueError(f"kernel is not even: imaginary residue {resid:.3e}")
    return vals.real


def eigenvalue(spec: TorusSpec, k) -> float:
    """4 pi^2 |k|^2 + kappa."""
    k = np.asarray(k)
    if not np.issubdtype(k.dtype, np.integer) and not np.all(k == np.round(k)):
        raise ValueError("mode components must be integers")
    return float(FOUR_PI_SQ * float((k.astype(float) ** 2).sum()) + spec.kappa)


def classical_green(spec: TorusSpec) -> FourierKernel:
    """Coefficients 1/lambda_k on the full stored ball."""
    return FourierKernel(spec, 1.0 / spec.eigenvalues, "classicalGreen")


def truncated_classical_green(spec: TorusSpec, K: int) -> FourierKernel:
    """1/lambda_k for |k| <= K, zero for the remaining stored modes."""
    if K > spec.cutoff:
        raise ValueError(f"truncation {K} exceeds stored cutoff {spec.cutoff}")
    if K < 0:
        raise ValueError("truncation must be nonnegative")
    norm2 = (spec.modes.astype(float) ** 2).sum(axis=1)
    c = np.where(norm2 <= K * K, 1.0 / spec.eigenvalues, 0.0)
    return FourierKernel(spec, c, "truncatedClassicalGreen")


def delta_kernel(spec: TorusSpec) -> FourierKernel:
    """The all-ones kernel: the delta function at cutoff."""
    return FourierKernel(spec, np.ones(spec.n_modes), "deltaK")


def frac(t: float) -> float:
    return t - math.floor(t)


def q1_coefficients(lam: np.ndarray, tau: float, t: float) -> np.ndarray:
    """e^{-{t} x} / (tau (e^x - 1)) with x = lam/tau, written to avoid overflow."""
    x = np.asarray(lam, dtype=float) / tau
    ft = frac(t)
    return np.exp(-(1.0 + ft) * x) / (-tau * np.expm1(-x))


def q2_coefficients(lam: np.ndarray, tau: float, t: float) -> np.ndarray:
    x = np.asarray(lam, dtype=float) / tau
    if t == 0:
        return np.zeros_like(x)
    return np.exp(-frac(t) * x)


def _check_time(t: float):
    if not -1.0 < t < 1.0:
        raise ValueError(f"time must lie in (-1, 1), got {t}")


def _check_tau(tau: float):
    if not tau >= 1.0:
        raise ValueError(f"tau must be >= 1, got {tau}")


def quantum_kernels(spec: TorusSpec, tau: float, t: float) -> tuple[FourierKernel, FourierKernel]:
    """The split Q = Q1 + Q2/tau of the time-evolved quantum kernel."""
    _check_tau(tau)
    _check_time(t)
    lam = spec.eigenvalues
    q1 = FourierKernel(spec, q1_coefficients(lam, tau, t), "Q1", {"tau": tau, "t": t})
    q2 = FourierKernel(spec, q2_coefficients(lam, tau, t), "Q2", {"tau": tau, "t": t})
    return q1, q2


def quantum_green(spec: TorusSpec, tau: float) -> FourierKernel:
    """1/(tau (e^{lambda/tau} - 1))."""
    _check_tau(tau)
    return FourierKernel(spec, q1_coefficients(spec.eigenvalues, tau, 0.0), "quantumGreen")


def time_evolved_green(spec: TorusSpec, tau: float, t: float) -> FourierKernel:
    """e^{-t lambda/tau} / (tau (e^{lambda/tau} - 1)) for t > -1."""
    _check_tau(tau)
    if not t > -1:
        raise ValueError("time-evolved Green function needs t > -1")
    x = spec.eigenvalues / tau
    c = np.exp(-(1.0 + t) * x) / (-tau * np.expm1(-x))
    return FourierKernel(spec, c, "timeEvolvedGreen")


def time_evolved_delta(spec: TorusSpec, tau: float, t: float) -> FourierKernel:
    """e^{-t lambda/tau} for t >= 0."""
    _check_tau(tau)
    if not t >= 0:
        raise ValueError("time-evolved delta needs t >= 0")
    return FourierKernel(spec, np.exp(-t * spec.eigenvalues / tau), "timeEvolvedDelta")


def assembled_q(spec: TorusSpec, tau: float, t: float) -> FourierKernel:
    """Q_{tau,t} from its case split, without going through Q1/Q2."""
    _check_time(t)
    g = time_evolved_green(spec, tau, t)
    if t > 0:
        s = time_evolved_delta(spec, tau, t)
        return FourierKernel(spec, g.coeffs + s.coeffs / tau, "custom")
    return FourierKernel(spec, g.coeffs, "custom")


def kernel_eval(kernel: FourierKernel, x) -> float:
    """Direct-sum evaluation at one point; asserts a real value."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (kernel.spec.d,):
        raise ValueError(f"point must have {kernel.spec.d} components")
    phase = np.exp(1j * TWO_PI * (kernel.modes @ x))
    val = complex(np.dot(kernel.coeffs, phase))
    scale = max(1.0, float(np.abs(kernel.coeffs).sum()))
    if abs(val.imag) > 1e-12 * scale:
        raise ValueError(f"kernel is not even: imaginary residue {abs(val.imag):.3e}")
    return val.real


def kernel_eval_many(kernel: FourierKernel, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float).reshape(-1, kernel.spec.d)
    phase = np.exp(1j * TWO_PI * (xs @ kernel.modes.T))
    vals = phase @ kernel.coeffs
    return _real_part(vals, kernel.coeffs)


def lp_norm(kernel: FourierKernel, q: float, grid: GridSpec | None = None) -> float:
    """L^q norm of x -> kernel(x) by quadrature on ``grid``."""
    K = kernel.spec.cutoff
    grid = GridSpec.default_for(K) if grid is None else grid
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if grid.rule == "uniform-trapezoid":
        if grid.n < 2 * K + 1:
            raise ValueError(f"grid with n={grid.n} does not resolve cutoff K={K}")
        vals = np.abs(kernel.grid_values(grid.n))
        if math.isinf(q):
            return float(vals.max())
        return float(np.mean(vals**q) ** (1.0 / q))
    if grid.n < K + 1:
        raise ValueError(f"Gauss-Legendre grid with n={grid.n} under-resolves K={K}")
    x, w = grid.nodes_weights()
    d = kernel.spec.d
    pts = np.stack([g.ravel() for g in np.meshgrid(*([x] * d), indexing="ij")], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * d), indexing="ij")], axis=1), axis=1)
    vals = np.abs(kernel_eval_many(kernel, pts))
    if math.isinf(q):
        return float(vals.max())
    return float(np.dot(wts, vals**q) ** (1.0 / q))


def l2_coefficient_norm(kernel: FourierKernel) -> float:
    return float(np.sqrt(np.sum(kernel.coeffs**2)))


def sobolev_norm(kernel: FourierKernel, s: float) -> float:
    """(sum_k <k>^{2s} c_k^2)^{1/2}."""
    return float(np.sqrt(np.sum(japanese(kernel.modes) ** (2 * s) * kernel.coeffs**2)))


def truncated_density(spec: TorusSpec) -> float:
    """sum_{|k| <= K} 1/lambda_k."""
    return float(np.sum(1.0 / spec.eigenvalues))


@lru_cache(maxsize=64)
def shell_counts(d: int, nmax: int) -> np.ndarray:
    """r_d(n) = #{k in Z^d : |k|^2 = n} for n = 0..nmax."""
    from scipy.signal import fftconvolve

    jmax = math.isqrt(nmax)
    one = np.zeros(nmax + 1, dtype=np.int64)
    j = np.arange(-jmax, jmax + 1)
    np.add.at(one, j * j, 1)
    out = one.copy()
    for _ in range(d - 1):
        if nmax < 4096:
            out = np.convolve(out, one)[: nmax + 1]
        else:
            # counts stay far below 2^52, so rounding the float convolution is exact
            out = np.rint(fftconvolve(out.astype(float), one.astype(float))[: nmax + 1]).astype(np.int64)
    out.setflags(write=False)
    return out


def adaptive_radius(tau: float, tol: float) -> int:
    """Mode radius beyond which the thermal summand is below tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    return int(math.ceil(math.sqrt(tau * (math.log(1.0 / tol) + math.log(tau))) / TWO_PI)) + 2


def radial_sum(d: int, kappa: float, R: int, fn) -> float:
    """sum_{|k| <= R} fn(lambda_k), grouped by shells |k|^2 = n."""
    counts = shell_counts(d, R * R)
    n = np.nonzero(counts)[0]
    lam = FOUR_PI_SQ * n + kappa
    return float(np.sum(counts[n] * fn(lam)))


def quantum_density(d: int, kappa: float, tau: float, tol: float = 1e-12) -> float:
    """sum over all modes of 1/(tau (e^{lambda_k/tau} - 1)), tail below tol."""
    _check_tau(tau)
    R = adaptive_radius(tau, tol)
    return radial_sum(d, kappa, R, lambda lam: q1_coefficients(lam, tau, 0.0))


def q1_sup(d: int, kappa: float, tau: float, t: float, tol: float = 1e-12) -> float:
    """sup_x of the untruncated Q1 kernel, attained at x = 0 (nonnegative coefficients)."""
    R = adaptive_radius(tau, tol)
    return radial_sum(d, kappa, R, lambda lam: q1_coefficients(lam, tau, t))


def q2_sup(d: int, kappa: float, tau: float, t: float, tol: float = 1e-12) -> float:
    """sup_x of the untruncated Q2 kernel (value at 0)."""
    if t == 0:
        return 0.0
    s = frac(t) / tau
    R = int(math.ceil(math.sqrt(math.log(1.0 / tol) / (FOUR_PI_SQ * s)))) + 2
    return radial_sum(d, kappa, R, lambda lam: np.exp(-s * lam))


def theta_1d(s: float, x: np.ndarray) -> np.ndarray:
    """Periodic heat kernel sum_k e^{-4 pi^2 s k^2} e^{2 pi i k x} via images."""
    x = np.asarray(x, dtype=float)
    xr = x - np.round(x)
    nmax = int(math.ceil(math.sqrt(4 * s * 40.0))) + 1
    n = np.arange(-nmax, nmax + 1)
    diff = xr[..., None] + n
    return np.exp(-(diff**2) / (4 * s)).sum(axis=-1) / math.sqrt(4 * math.pi * s)


def theta_1d_fourier(s: float, x: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    kmax = int(math.ceil(math.sqrt(math.log(1.0 / tol) / (FOUR_PI_SQ * s)))) + 1
    k = np.arange(1, kmax + 1)
    return 1.0 + 2.0 * np.cos(TWO_PI * x[..., None] * k) @ np.exp(-FOUR_PI_SQ * s * k**2)


def heat_poisson_residual(d: int, kappa: float, tau: float, t: float, x, ell: int = 0) -> float:
    """|Fourier side - image side| of the periodic heat kernel at time (ell+t)/tau."""
    _check_tau(tau)
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (d,):
        raise ValueError(f"point must have {d} components")
    s = (ell + t) / tau
    # Fourier side: sum over a ball large enough for 1e-17 tails.
    R = int(math.ceil(math.sqrt(40.0 / (FOUR_PI_SQ * s)))) + 2
    axis = np.arange(-R, R + 1)
    ks = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    lam = FOUR_PI_SQ * (ks**2).sum(axis=1) + kappa
    fourier = np.sum(np.exp(-s * lam) * np.cos(TWO_PI * (ks @ x)))
    # image side
    nmax = int(math.ceil(math.sqrt(4 * s * 40.0))) + 2
    axis = np.arange(-nmax, nmax + 1)
    ns = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    dist2 = ((ns + x) ** 2).sum(axis=1)
    image = math.exp(-s * kappa) * (4 * math.pi * s) ** (-d / 2) * np.sum(np.exp(-dist2 / (4 * s)))
    return float(abs(fourier - image))


def q1_on_grid(d: int, kappa: float, tau: float, t: float, n: int, switch: float = 0.05) -> np.ndarray:
    """Untruncated Q1 kernel on the uniform grid j/n, shape (n,)*d.

    Q1 = (1/tau) sum_{l>=1} H_{(l+{t})/tau} with H_s the heat kernel of h.
    Short times use separable image sums, the long-time tail is summed in
    closed form in Fourier space.
    """
    _check_tau(tau)
    _check_time(t)
    ft = frac(t)
    x = np.arange(n) / n
    # first l with s_l >= switch
    l0 = max(1, int(math.ceil(switch * tau - ft)))
    out = np.zeros((n,) * d)
    for ell in range(1, l0):
        s = (ell + ft) / tau
        th = theta_1d(s, x) * math.exp(-s * kappa / d)
        term = th
        for _ in range(d - 1):
            term = np.multiply.outer(term, th)
        out += term
    s0 = (l0 + ft) / tau
    kmax = int(math.ceil(math.sqrt(40.0 / (FOUR_PI_SQ * s0)))) + 1
    kmax = min(kmax, (n - 1) // 2)
    modes = mode_ball(d, kmax)
    lam = FOUR_PI_SQ * (modes.astype(float) ** 2).sum(axis=1) + kappa
    tail = np.exp(-s0 * lam) / (-np.expm1(-lam / tau))
    arr = np.zeros((n,) * d, dtype=complex)
    np.add.at(arr, tuple((modes % n).T), tail)
    out += np.fft.ifftn(arr).real * n**d
    return out / tau


def kernel_to_csv(kernel: FourierKernel, path, header: dict | None = None) -> None:
    """Columns k1..kd, coefficient; lexicographic mode order."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        wr = csv.writer(fh)
        wr.writerow([f"k{i + 1}" for i in range(kernel.spec.d)] + ["coefficient"])
        for k, c in zip(kernel.modes, kernel.coeffs):
            wr.writerow([int(v) for v in k] + [repr(float(c))])


def kernel_from_csv(path, kappa: float = 1.0, kind: str = "custom") -> tuple[FourierKernel, dict]:
    header: dict = {}
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    header[key] = val
            else:
                rows.append(line)
    reader = list(csv.reader(rows))
    cols = reader[0]
    d = len(cols) - 1
    body = reader[1:]
    ks = np.array([[int(v) for v in r[:d]] for r in body], dtype=np.int64)
    cs = np.array([float(r[d]) for r in body])
    K = int(math.isqrt(int((ks**2).sum(axis=1).max()))) if len(ks) else 0
    kappa = float(header.get("kappa", kappa))
    spec = TorusSpec(d, kappa, K)
    coeffs = np.zeros(spec.n_modes)
    idx = mode_index(d, K, ks)
    if np.any(idx < 0):
        raise ValueError("CSV contains modes outside the inferred ball")
    coeffs[idx] = cs
    return FourierKernel(spec, coeffs, header.get("kind", kind)), header


def modes_iter(spec: TorusSpec) -> Iterable[tuple[int, ...]]:
    for k in spec.modes:
        yield tuple(int(v) for v in k)

"""Interaction potentials and their bounded, tau-dependent approximations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .spectral import (
    FourierKernel,
    GridSpec,
    TorusSpec,
    japanese,
    kernel_from_csv,
    kernel_to_csv,
    lp_norm,
    mode_index,
    sobolev_norm,
)

VARIANTS = ("constant", "powerFourier", "selfConvolution", "endpointSquare", "userCoefficients")

# admissible L^p exponents and beta ranges per dimension, as (lo, lo_closed, hi, hi_closed)
P_RANGES = {1: (1.0, True, math.inf, False), 2: (1.0, False, math.inf, False), 3: (3.0, False, math.inf, False)}
BETA_RANGES = {1: (0.0, 1.0), 2: (0.0, 1.0), 3: (0.0, 0.5)}


def in_p_range(d: int, p: float) -> bool:
    lo, lo_closed, hi, hi_closed = P_RANGES[d]
    above = p >= lo if lo_closed else p > lo
    below = p <= hi if hi_closed else p < hi
    return above and below


def in_beta_range(d: int, beta: float) -> bool:
    lo, hi = BETA_RANGES[d]
    return lo < beta < hi


def conjugate_exponent(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def smooth_bump(r: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Radial spline bump: 1 on r <= inner, 0 on r >= outer, C^3 in between."""
    r = np.asarray(r, dtype=float)
    u = np.clip((r - inner) / (outer - inner), 0.0, 1.0)
    step = u**4 * (35.0 - 84.0 * u + 70.0 * u**2 - 20.0 * u**3)
    return 1.0 - step


CHI_INNER, CHI_OUTER = 0.5, 1.0
CHI_PROFILE = "C3 spline bump, 1 on |xi|<=1/2, 0 on |xi|>=1, step u^4(35-84u+70u^2-20u^3)"


def chi(xi_norm: np.ndarray) -> np.ndarray:
    return smooth_bump(xi_norm, CHI_INNER, CHI_OUTER)


@dataclass(frozen=True)
class PotentialSpec:
    """An even interaction potential stored by its Fourier coefficients."""

    kernel: FourierKernel
    variant: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown potential variant {self.variant!r}")
        if self.kernel.kind != "potential":
            object.__setattr__(self, "kernel", FourierKernel(self.kernel.spec, self.kernel.coeffs, "potential"))
        if not self.kernel.is_even(1e-13):
            raise ValueError("potential coefficients must be even in k")

    @property
    def spec(self) -> TorusSpec:
        return self.kernel.spec

    @property
    def coeffs(self) -> np.ndarray:
        return self.kernel.coeffs

    def is_positive_type(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.coeffs >= -tol))

    def grid_values(self, n: int | None = None) -> np.ndarray:
        return self.kernel.grid_values(n)

    def lp(self, p: float, n: int | None = None) -> float:
        n = default_norm_grid(self.spec) if n is None else n
        return lp_norm(self.kernel, p, GridSpec(n))

    def scaled(self, a: float) -> "PotentialSpec":
        params = dict(self.params)
        params["scale"] = params.get("scale", 1.0) * a
        return PotentialSpec(self.kernel.scaled(a, "potential"), self.variant, params)

    def with_coeffs(self, coeffs: np.ndarray, **extra) -> "PotentialSpec":
        params = dict(self.params)
        params.update(extra)
        return PotentialSpec(FourierKernel(self.spec, coeffs, "potential"), self.variant, params)


def default_norm_grid(spec: TorusSpec) -> int:
    n = 4 * spec.cutoff + 1
    cap = {1: 4097, 2: 257, 3: 65}[spec.d]
    return max(n, min(cap, 2 * n + 1))


def build_constant(spec: TorusSpec, c: float) -> PotentialSpec:
    """w identically equal to c: only the zero mode."""
    coeffs = np.zeros(spec.n_modes)
    coeffs[spec.zero_index()] = c
    return PotentialSpec(FourierKernel(spec, coeffs, "potential"), "constant", {"c": c})


def build_power_fourier(spec: TorusSpec, q: float, p: float = 2.0) -> PotentialSpec:
    """Coefficients <k>^{-d/q}; lies in L^p when 1 < q < p' and p >= 2."""
    if spec.d not in (2, 3):
        raise ValueError("powerFourier potentials are defined for d = 2, 3")
    if not in_p_range(spec.d, p):
        raise ValueError(f"p={p} is not an admissible exponent for d={spec.d}")
    pp = conjugate_exponent(p)
    if not 1.0 < q < pp:
        raise ValueError(f"q must lie in (1, {pp}), got {q}")
    coeffs = japanese(spec.modes) ** (-spec.d / q)
    return PotentialSpec(FourierKernel(spec, coeffs, "potential"), "powerFourier", {"q": q, "p": p})


def _radial_transform(d: int, a: float, rho: float, inner: float, outer: float) -> float:
    """Fourier transform at |k| = rho of |x|^{-a} * bump(|x|), supported in |x| <= outer."""
    from scipy import integrate, special

    def bump(r):
        return float(smooth_bump(r, inner, outer))

    # integrand without the algebraic factor r^{expo}
    expo = d - 1 - a
    if d == 1:
        def kern(r):
            return 2.0 * math.cos(2 * math.pi * rho * r)
    elif d == 2:
        def kern(r):
            return 2 * math.pi * special.j0(2 * math.pi * rho * r)
    else:
        def kern(r):
            z = 2 * math.pi * rho * r
            return 4 * math.pi * (math.sin(z) / z if z > 1e-12 else 1.0)
    val, _ = integrate.quad(lambda r: kern(r) * bump(r), 0.0, outer, weight="alg", wvar=(expo, 0.0), limit=400)
    return val


def build_self_convolution(spec: TorusSpec, q: float, p: float = 1.5) -> PotentialSpec:
    """w = f * f with f(x) = |x|^{-d/q} bump(x); coefficients are f_hat(k)^2.

    Needs 1 <= p < 2 and p < q < 2.
    """
    if not 1.0 <= p < 2.0:
        raise ValueError("selfConvolution construction targets 1 <= p < 2")
    if not p < q < 2.0:
        raise ValueError(f"q must lie in ({p}, 2), got {q}")
    a = spec.d / q
    norms = np.sqrt((spec.modes.astype(float) ** 2).sum(axis=1))
    cache: dict[float, float] = {}
    fhat = np.empty(len(norms))
    for j, rho in enumerate(norms):
        key = round(float(rho), 12)
        if key not in cache:
            cache[key] = _radial_transform(spec.d, a, key, 1.0 / 3.0, 0.5)
        fhat[j] = cache[key]
    coeffs = fhat**2
    return PotentialSpec(FourierKernel(spec, coeffs, "potential"), "selfConvolution", {"q": q, "p": p})


def _square_coefficients(d: int, K: int, fhat_modes: np.ndarray) -> np.ndarray:
    """Coefficients on the ball 2K of (sum_{|k|<=K} f_k e_k)^2 by direct convolution."""
    from .spectral import mode_ball

    modes = mode_ball(d, K)
    sums = (modes[:, None, :] + modes[None, :, :]).reshape(-1, d)
    vals = np.outer(fhat_modes, fhat_modes).ravel()
    out = np.zeros(len(mode_ball(d, 2 * K)))
    np.add.at(out, mode_index(d, 2 * K, sums), vals)
    return out


def build_endpoint_square(spec: TorusSpec, eps: float) -> PotentialSpec:
    """w = f^2 with f_hat(k) = <k>^{-1-eps} on |k| <= K; stored on the ball 2K."""
    if spec.d != 2:
        raise ValueError("endpointSquare potentials are defined for d = 2 only")
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    K = spec.cutoff
    fhat = japanese(spec.modes) ** (-1.0 - eps)
    coeffs = _square_coefficients(2, K, fhat)
    wspec = spec.with_cutoff(2 * K)
    coeffs = 0.5 * (coeffs + coeffs[::-1])
    L = float(np.max(coeffs * japanese(wspec.modes) ** eps))
    return PotentialSpec(
        FourierKernel(wspec, coeffs, "potential"),
        "endpointSquare",
        {"eps": eps, "L": L, "delta": eps / 2.0, "field_cutoff": K},
    )


def build_power_square(spec: TorusSpec, exponent: float) -> PotentialSpec:
    """w = f^2 with f_hat(k) = <k>^{-exponent}; pointwise nonnegative in any d.

    Used as the d = 1 test potential.  Stored on the ball 2K.
    """
    K = spec.cutoff
    fhat = japanese(spec.modes) ** (-exponent)
    coeffs = _square_coefficients(spec.d, K, fhat)
    coeffs = 0.5 * (coeffs + coeffs[::-1])
    return PotentialSpec(
        FourierKernel(spec.with_cutoff(2 * K), coeffs, "potential"),
        "userCoefficients",
        {"construction": "square", "exponent": exponent, "field_cutoff": K},
    )


def from_coefficients(spec: TorusSpec, coeffs, **params) -> PotentialSpec:
    return PotentialSpec(FourierKernel(spec, np.asarray(coeffs, float), "potential"), "userCoefficients", params)


def fitted_decay_exponent(w: PotentialSpec, kmin: float, kmax: float) -> float:
    """Least-squares slope of log w_hat against log <k> over kmin <= |k| <= kmax."""
    norms = np.sqrt((w.spec.modes.astype(float) ** 2).sum(axis=1))
    sel = (norms >= kmin) & (norms <= kmax) & (w.coeffs > 0)
    x = np.log(japanese(w.spec.modes[sel]))
    y = np.log(w.coeffs[sel])
    return float(np.polyfit(x, y, 1)[0])


def mollify_1d(w: PotentialSpec, tau: float, beta: float) -> PotentialSpec:
    """Clip to zero wherever w exceeds tau^beta, then re-expand.

    The grid has exactly 2K+1 points, so the re-expanded trigonometric
    polynomial interpolates the clipped grid values.
    """
    if w.spec.d != 1:
        raise ValueError("mollify_1d needs d = 1")
    K = w.spec.cutoff
    n = 2 * K + 1
    vals = w.grid_values(n)
    if vals.min() < -1e-10:
        raise ValueError(f"potential takes negative values (min {vals.min():.3e})")
    vals = np.maximum(vals, 0.0)
    cap = tau**beta
    clipped = np.where(vals <= cap, vals, 0.0)
    hat = np.fft.fft(clipped) / n
    coeffs = hat[w.spec.modes[:, 0] % n].real
    coeffs = 0.5 * (coeffs + coeffs[::-1])
    return w.with_coeffs(coeffs, tau=tau, beta=beta, mollifier="clip", clip_level=cap)


def cutoff_scale(w: PotentialSpec, tau: float, beta: float, p: float) -> float:
    """M(tau) = (tau^beta / ||w||_{L^p})^{1/d}."""
    norm = w.lp(p)
    return (tau**beta / norm) ** (1.0 / w.spec.d)


def mollify_fourier(w: PotentialSpec, tau: float, beta: float, p: float = 2.0) -> PotentialSpec:
    """Fourier cutoff w_hat_tau(k) = chi(k / M(tau)) w_hat(k)."""
    if w.spec.d not in (2, 3):
        raise ValueError("mollify_fourier needs d = 2 or 3")
    if np.any(w.coeffs < 0):
        raise ValueError("mollify_fourier needs a potential of positive type")
    M = cutoff_scale(w, tau, beta, p)
    norms = np.sqrt((w.spec.modes.astype(float) ** 2).sum(axis=1))
    factor = chi(norms / M)
    count = int(np.sum(norms <= M))
    coeffs = factor * w.coeffs
    return w.with_coeffs(
        coeffs,
        tau=tau,
        beta=beta,
        mollifier="fourier",
        M=M,
        sup_bound=count * float(w.lp(1.0)),
        sup_bound_constant=count / M ** w.spec.d if M > 0 else math.inf,
    )


def endpoint_damping(modes: np.ndarray, tau: float, beta: float) -> np.ndarray:
    return np.exp(-math.pi * (modes.astype(float) ** 2).sum(axis=1) / tau**beta)


def mollify_endpoint(w: PotentialSpec, tau: float, beta: float) -> PotentialSpec:
    """Gaussian damping w_hat_tau(k) = exp(-pi |k|^2 / tau^beta) w_hat(k)."""
    if w.spec.d != 2 or w.variant != "endpointSquare":
        raise ValueError("mollify_endpoint needs an endpointSquare potential in d = 2")
    coeffs = endpoint_damping(w.spec.modes, tau, beta) * w.coeffs
    return w.with_coeffs(coeffs, tau=tau, beta=beta, mollifier="gauss")


def mollify(w: PotentialSpec, tau: float, beta: float, p: float = 2.0) -> PotentialSpec:
    """Dispatch to the approximation appropriate for the dimension and class."""
    if w.spec.d == 1:
        return mollify_1d(w, tau, beta)
    if w.variant == "endpointSquare":
        return mollify_endpoint(w, tau, beta)
    return mollify_fourier(w, tau, beta, p)


@lru_cache(maxsize=None)
def multiplier_l1_norm(d: int, n: int = 0) -> float:
    """||inverse Fourier transform of chi||_{L^1(R^d)}, the transference constant."""
    n = n or {1: 8192, 2: 1024, 3: 128}[d]
    box = {1: 16.0, 2: 8.0, 3: 4.0}[d]
    h = 2 * box / n
    xi = (np.arange(n) - n // 2) * h
    grids = np.meshgrid(*([xi] * d), indexing="ij")
    r = np.sqrt(sum(g**2 for g in grids))
    vals = chi(r)
    # chi_check(x_j) ~ h^d * sum chi(xi) e^{2 pi i xi x}, x spacing 1/(n h)
    spatial = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(vals))) * h**d
    dx = 1.0 / (n * h)
    return float(np.abs(spatial).sum() * dx**d)


@dataclass
class PropertyReport:
    """Pass/fail per approximation clause, with measured quantities."""

    lemma: str
    clauses: list = field(default_factory=list)

    def add(self, name: str, passed: bool, **measured) -> None:
        self.clauses.append({"clause": name, "passed": bool(passed), **{k: _plain(v) for k, v in measured.items()}})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.clauses)

    def failures(self) -> list:
        return [c for c in self.clauses if not c["passed"]]

    def to_dict(self) -> dict:
        return {"lemma": self.lemma, "passed": self.passed, "clauses": list(self.clauses)}


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _common_grid(w: PotentialSpec, w_tau: PotentialSpec) -> tuple[np.ndarray, np.ndarray, int]:
    if w.spec != w_tau.spec:
        raise ValueError("w and w_tau must share the torus spec")
    if w.spec.d == 1 and w_tau.params.get("mollifier") == "clip":
        n = 2 * w.spec.cutoff + 1
    else:
        n = default_norm_grid(w.spec)
    return w.grid_values(n), w_tau.grid_values(n), n


def _grid_lp(vals: np.ndarray, p: float) -> float:
    a = np.abs(vals)
    return float(a.max()) if math.isinf(p) else float(np.mean(a**p) ** (1.0 / p))


def verify_potential(w: PotentialSpec, w_tau: PotentialSpec, p: float = 2.0, tol: float = 1e-10) -> PropertyReport:
    """Check every clause of the relevant approximation statement."""
    tau = float(w_tau.params.get("tau", 1.0))
    beta = float(w_tau.params.get("beta", 0.5))
    cap = tau**beta
    vals, vals_tau, n = _common_grid(w, w_tau)
    d = w.spec.d

    if w.variant == "endpointSquare":
        rep = PropertyReport("endpoint")
        s = -1.0 + float(w.params["delta"])
        L = float(w.params["L"])
        eps = float(w.params["eps"])
        h_tau, h_w = sobolev_norm(w_tau.kernel, s), sobolev_norm(w.kernel, s)
        const = float(np.sqrt(np.sum(japanese(w.spec.modes) ** (2 * s - 2 * eps))))
        rep.add("(i) H^{-1+delta} norm non-increasing and <= C L", h_tau <= h_w * (1 + 1e-12) and h_w <= const * L * (1 + 1e-12),
                norm_tau=h_tau, norm_w=h_w, C=const, L=L)
        rep.add("(ii) positive type", bool(np.all(w_tau.coeffs >= -tol)), min_coeff=float(w_tau.coeffs.min()))
        rep.add("(iii) w_hat_tau <= L", float(w_tau.coeffs.max()) <= L * (1 + 1e-12), max_coeff=float(w_tau.coeffs.max()), L=L)
        rep.add("(iv) pointwise nonnegative", float(vals_tau.min()) >= -tol, grid_min=float(vals_tau.min()))
        sup = float(np.abs(vals_tau).max())
        rep.add("(v) sup norm <= 4 L tau^beta", sup <= 4 * L * cap * (1 + 1e-12), sup=sup, bound=4 * L * cap)
        l1_tau, l1_w = _grid_lp(vals_tau, 1.0), _grid_lp(vals, 1.0)
        rep.add("(vi) L^1 norm <= L^1 norm of w", l1_tau <= l1_w * (1 + 1e-9), l1_tau=l1_tau, l1_w=l1_w)
        dist = sobolev_norm(w_tau.kernel - w.kernel, s)
        rep.add("(vii) H^{-1+delta} distance recorded", bool(np.isfinite(dist)), distance=dist)
        return rep

    if d == 1:
        rep = PropertyReport("approximation d=1")
        rep.add("(i) pointwise nonnegative", float(vals_tau.min()) >= -tol, grid_min=float(vals_tau.min()))
        sup = float(np.abs(vals_tau).max())
        rep.add("(ii) sup norm <= tau^beta", sup <= cap * (1 + 1e-12) + tol, sup=sup, cap=cap)
        n_tau, n_w = _grid_lp(vals_tau, p), _grid_lp(vals, p)
        rep.add("(iii) L^p norm non-increasing", n_tau <= n_w * (1 + 1e-12) + tol, lp_tau=n_tau, lp_w=n_w)
        rep.add("(iv) L^p distance recorded", True, distance=_grid_lp(vals_tau - vals, p))
        return rep

    rep = PropertyReport(f"approximation d={d}")
    rep.add("(i) positive type", bool(np.all(w_tau.coeffs >= -tol)), min_coeff=float(w_tau.coeffs.min()))
    sup = float(np.abs(vals_tau).max())
    rep.add("(ii) sup norm <= tau^beta", sup <= cap * (1 + 1e-12) + tol, sup=sup, cap=cap)
    n_tau, n_w = _grid_lp(vals_tau, p), _grid_lp(vals, p)
    ratio = n_tau / n_w if n_w > 0 else 0.0
    C = multiplier_l1_norm(d)
    rep.add("(iii) L^p norm <= C L^p norm of w", ratio <= C * (1 + 1e-6), ratio=ratio, C=C)
    rep.add("(iv) L^p distance recorded", True, distance=_grid_lp(vals_tau - vals, p))
    return rep


def potential_to_csv(w: PotentialSpec, path) -> None:
    header = {"variant": w.variant, "d": w.spec.d, "kappa": w.spec.kappa, "cutoff": w.spec.cutoff, "kind": "potential"}
    header.update({k: v for k, v in w.params.items() if isinstance(v, (int, float, str))})
    kernel_to_csv(w.kernel, path, header)


def potential_from_csv(path) -> PotentialSpec:
    kernel, header = kernel_from_csv(path, kind="potential")
    variant = header.pop("variant", "userCoefficients")
    params: dict = {}
    for key, val in header.items():
        if key in ("d", "kappa", "cutoff", "kind"):
            continue
        try:
            params[key] = float(val) if any(ch in val for ch in ".eE") or val.lstrip("-").isdigit() else val
        except ValueError:
            params[key] = val
    return PotentialSpec(kernel, variant, params)


def index_of(w: PotentialSpec, k) -> int:
    return int(mode_index(w.spec.d, w.spec.cutoff, np.asarray(k).reshape(1, -1))[0])

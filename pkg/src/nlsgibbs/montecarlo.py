"""Monte Carlo over the truncated free field: the independent oracle for the expansion."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .expansion import Observable
from .potentials import PotentialSpec
from .spectral import TorusSpec, mode_ball, mode_index, truncated_density

CHUNK = 8192
# cap on grid cells held at once when transforming a batch
_CELLS_PER_BATCH = 1 << 22


@dataclass(frozen=True)
class GFFSample:
    """Standard complex Gaussian amplitudes omega_k, one draw or a batch."""

    spec: TorusSpec
    omega: np.ndarray

    @property
    def phi_hat(self) -> np.ndarray:
        return self.omega / np.sqrt(self.spec.eigenvalues)

    def __len__(self) -> int:
        return 1 if self.omega.ndim == 1 else self.omega.shape[0]


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int
    seed: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("an estimate needs at least two samples")

    def zscore(self, target: float, extra_sigma: float = 0.0) -> float:
        sig = math.hypot(self.stderr, extra_sigma)
        return abs(self.mean - target) / sig if sig > 0 else (0.0 if self.mean == target else math.inf)


def sample_gff(spec: TorusSpec, rng: np.random.Generator, size: int | None = None) -> GFFSample:
    """Draw omega = (X + iY)/sqrt(2) with independent standard normals X, Y."""
    shape = (spec.n_modes,) if size is None else (size, spec.n_modes)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return GFFSample(spec, (re + 1j * im) / math.sqrt(2.0))


# ------------------------------------------------------------- field algebra


def _grid_size(K: int) -> int:
    return 4 * K + 1


def _batches(total: int, cells: int):
    step = max(1, _CELLS_PER_BATCH // max(cells, 1))
    for start in range(0, total, step):
        yield slice(start, min(total, start + step))


def field_on_grid(spec: TorusSpec, phi_hat: np.ndarray, n: int | None = None) -> np.ndarray:
    """phi(x) = sum_k phi_hat_k e^{2 pi i k x} on the uniform grid; batch axis first."""
    phi_hat = np.atleast_2d(phi_hat)
    d, K = spec.d, spec.cutoff
    n = _grid_size(K) if n is None else n
    idx = tuple((spec.modes % n).T)
    out = np.empty((phi_hat.shape[0],) + (n,) * d, dtype=complex)
    axes = tuple(range(1, d + 1))
    for sl in _batches(phi_hat.shape[0], n**d):
        arr = np.zeros((sl.stop - sl.start,) + (n,) * d, dtype=complex)
        arr[(slice(None),) + idx] = phi_hat[sl]
        out[sl] = np.fft.ifftn(arr, axes=axes) * n**d
    return out


def density_modes(spec: TorusSpec, phi_hat: np.ndarray, K_out: int) -> np.ndarray:
    """Fourier coefficients of |phi|^2 on the ball K_out (at most 2K), exact."""
    phi_hat = np.atleast_2d(phi_hat)
    d, K = spec.d, spec.cutoff
    K_out = min(K_out, 2 * K)
    n = _grid_size(K)
    out_modes = mode_ball(d, K_out)
    oidx = tuple((out_modes % n).T)
    res = np.empty((phi_hat.shape[0], len(out_modes)), dtype=complex)
    axes = tuple(range(1, d + 1))
    for sl in _batches(phi_hat.shape[0], n**d):
        f = field_on_grid(spec, phi_hat[sl], n)
        dens = np.abs(f) ** 2
        hat = np.fft.fftn(dens, axes=axes) / n**d
        res[sl] = hat[(slice(None),) + oidx]
    return res


def _interaction_from_density(w: PotentialSpec, rho_hat: np.ndarray, K_out: int) -> np.ndarray:
    wd = w.spec
    modes = mode_ball(wd.d, K_out)
    widx = mode_index(wd.d, wd.cutoff, modes)
    wcoef = np.where(widx >= 0, w.coeffs[np.maximum(widx, 0)], 0.0)
    return 0.5 * (np.abs(rho_hat) ** 2) @ wcoef


def _phi_of(sample) -> tuple[TorusSpec, np.ndarray]:
    if isinstance(sample, GFFSample):
        return sample.spec, np.atleast_2d(sample.phi_hat)
    raise TypeError("expected a GFFSample")


def _check_positive_type(w: PotentialSpec):
    if np.any(w.coeffs < 0):
        raise ValueError("the interaction needs a potential of positive type (nonnegative coefficients)")


def wick_interaction(sample: GFFSample, w: PotentialSpec) -> np.ndarray:
    """1/2 sum_q w_hat(q) |h_hat(q)|^2 with h = |phi|^2 minus its mean density."""
    spec, phi = _phi_of(sample)
    _check_positive_type(w)
    K_out = min(w.spec.cutoff, 2 * spec.cutoff)
    rho = density_modes(spec, phi, K_out)
    zero = len(mode_ball(spec.d, K_out)) // 2
    rho[:, zero] -= truncated_density(spec)
    return _interaction_from_density(w, rho, K_out)


def interaction_1d(sample: GFFSample, w: PotentialSpec) -> np.ndarray:
    """1/2 sum_q w_hat(q) |rho_hat(q)|^2, with no density subtraction."""
    spec, phi = _phi_of(sample)
    if spec.d != 1:
        raise ValueError("the un-renormalised interaction is the d = 1 one")
    _check_positive_type(w)
    K_out = min(w.spec.cutoff, 2 * spec.cutoff)
    rho = density_modes(spec, phi, K_out)
    return _interaction_from_density(w, rho, K_out)


def interaction(sample: GFFSample, w: PotentialSpec) -> np.ndarray:
    """The interaction appropriate to the dimension: plain in d = 1, Wick-ordered otherwise."""
    return interaction_1d(sample, w) if sample.spec.d == 1 else wick_interaction(sample, w)


def interaction_on_grid(sample: GFFSample, w: PotentialSpec, wick: bool | None = None) -> np.ndarray:
    """Grid cross-check: 1/2 iint w(x-y) h(x) h(y) by periodic convolution."""
    spec, phi = _phi_of(sample)
    wick = spec.d > 1 if wick is None else wick
    n = max(_grid_size(spec.cutoff), 2 * w.spec.cutoff + 1)
    f = field_on_grid(spec, phi, n)
    h = np.abs(f) ** 2
    if wick:
        h = h - truncated_density(spec)
    wv = w.kernel.grid_values(n)
    axes = tuple(range(1, spec.d + 1))
    conv = np.fft.ifftn(np.fft.fftn(h, axes=axes) * np.fft.fftn(wv)[None], axes=axes).real / n**spec.d
    return 0.5 * np.sum(h * conv, axis=axes) / n**spec.d


def l4_bound(sample: GFFSample, w: PotentialSpec) -> np.ndarray:
    """||phi||_4^4 ||w||_1, an upper bound for the d = 1 interaction."""
    spec, phi = _phi_of(sample)
    n = _grid_size(spec.cutoff)
    f = field_on_grid(spec, phi, n)
    axes = tuple(range(1, spec.d + 1))
    l4 = np.mean(np.abs(f) ** 4, axis=axes)
    return l4 * w.lp(1.0)


def mass(sample: GFFSample) -> np.ndarray:
    """sum_k |phi_hat_k|^2, the squared L^2 norm."""
    _, phi = _phi_of(sample)
    return np.sum(np.abs(phi) ** 2, axis=1)


def theta_observable(sample: GFFSample, obs: Observable) -> np.ndarray:
    if obs.rank > 2:
        raise ValueError("observables of rank at most two")
    _, phi = _phi_of(sample)
    return obs.theta(phi)


# ---------------------------------------------------------------- streams


def _chunk_sizes(n: int) -> list[int]:
    full, rest = divmod(n, CHUNK)
    return [CHUNK] * full + ([rest] if rest else [])


def stream_values(spec: TorusSpec, n: int, seed: int, fn, workers: int | None = None) -> np.ndarray:
    """Apply ``fn`` to n draws split over spawned substreams; rows come back in substream order."""
    if n < 2:
        raise ValueError("need at least two samples")
    sizes = _chunk_sizes(n)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(job):
        child, size = job
        rng = np.random.default_rng(child)
        return np.asarray(fn(sample_gff(spec, rng, size)))

    jobs = list(zip(children, sizes))
    if workers is None or workers <= 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, jobs))
    return np.concatenate(parts, axis=0)


def _estimate(values: np.ndarray, seed: int) -> McEstimate:
    n = len(values)
    return McEstimate(float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(n)), n, seed)


def jackknife_ratio(num: np.ndarray, den: np.ndarray, blocks: int = 100) -> tuple[float, float]:
    """Ratio of means with a block-jackknife standard error."""
    n = len(num)
    blocks = max(2, min(blocks, n))
    edges = np.linspace(0, n, blocks + 1).astype(int)
    bn = np.add.reduceat(num, edges[:-1])
    bd = np.add.reduceat(den, edges[:-1])
    tn, td = bn.sum(), bd.sum()
    ratio = tn / td
    loo = (tn - bn) / (td - bd)
    err = math.sqrt((blocks - 1) / blocks * np.sum((loo - loo.mean()) ** 2))
    return float(ratio), float(err)


def _theta_and_w(obs: Observable, w: PotentialSpec | None):
    def fn(sample):
        th = theta_observable(sample, obs)
        ww = interaction(sample, w) if w is not None else np.zeros(len(th))
        return np.stack([th, ww], axis=1)

    return fn


def mc_moment(obs: Observable, w: PotentialSpec | None, m: int, n: int, seed: int, workers: int | None = None) -> McEstimate:
    """Estimate E[Theta(obs) W^m] under the free field."""
    if not 0 <= m <= 4:
        raise ValueError("moments up to m = 4 only")
    if m > 0 and w is None:
        raise ValueError("moments with m > 0 need a potential")
    vals = stream_values(obs.spec, n, seed, _theta_and_w(obs, w), workers)
    return _estimate(vals[:, 0] * vals[:, 1] ** m, seed)


def mc_moments(obs: Observable, w: PotentialSpec, ms, n: int, seed: int, workers: int | None = None) -> dict[int, McEstimate]:
    """Several moments from one shared stream."""
    vals = stream_values(obs.spec, n, seed, _theta_and_w(obs, w), workers)
    return {m: _estimate(vals[:, 0] * vals[:, 1] ** m, seed) for m in ms}


def mc_moment_table(observables, potentials, ms, n: int, seed: int, workers: int | None = None) -> dict[tuple, McEstimate]:
    """E[Theta_a W_b^m] for every observable a, potential b and order m, from one stream.

    The density modes are computed once per draw and reused by every potential.
    """
    observables, potentials = list(observables), list(potentials)
    if not observables or not potentials:
        raise ValueError("need at least one observable and one potential")
    spec = observables[0].spec
    if any(o.spec != spec for o in observables):
        raise ValueError("observables must share the torus spec")
    for w in potentials:
        _check_positive_type(w)
    K_out = min(max(w.spec.cutoff for w in potentials), 2 * spec.cutoff)
    zero = len(mode_ball(spec.d, K_out)) // 2

    def fn(sample):
        _, phi = _phi_of(sample)
        rho = density_modes(spec, phi, K_out)
        if spec.d > 1:
            rho[:, zero] -= truncated_density(spec)
        cols = [o.theta(phi) for o in observables]
        cols += [_interaction_from_density(w, rho, K_out) for w in potentials]
        return np.stack(cols, axis=1)

    vals = stream_values(spec, n, seed, fn, workers)
    na = len(observables)
    out = {}
    for a in range(na):
        for b in range(len(potentials)):
            for m in ms:
                out[(a, b, m)] = _estimate(vals[:, a] * vals[:, na + b] ** m, seed)
    return out


def _weights(wvals: np.ndarray, z: float) -> np.ndarray:
    if not 0.0 <= z <= 2.0:
        raise ValueError("Monte Carlo couplings are real and lie in [0, 2]")
    wts = np.exp(-z * wvals)
    if not np.any(wts > 0):
        raise FloatingPointError("all importance weights underflowed; reduce z or the coupling")
    return wts


def mc_state_expectation(obs: Observable, w: PotentialSpec, z: float, n: int, seed: int, workers: int | None = None) -> McEstimate:
    """Interacting expectation E[Theta e^{-zW}] / E[e^{-zW}] from a shared stream."""
    if n < 1000:
        raise ValueError("use at least 1000 samples for a ratio estimate")
    vals = stream_values(obs.spec, n, seed, _theta_and_w(obs, w), workers)
    wts = _weights(vals[:, 1], z)
    mean, err = jackknife_ratio(vals[:, 0] * wts, wts)
    return McEstimate(mean, err, n, seed)


def mc_weighted_mean(obs: Observable, w: PotentialSpec, z: float, n: int, seed: int, workers: int | None = None) -> McEstimate:
    """Unnormalised E[Theta e^{-zW}] under the free field."""
    vals = stream_values(obs.spec, n, seed, _theta_and_w(obs, w), workers)
    return _estimate(vals[:, 0] * _weights(vals[:, 1], z), seed)


def mc_correlation(
    spec: TorusSpec,
    pairs,
    w: PotentialSpec | None,
    n: int,
    seed: int,
    z: float = 1.0,
    workers: int | None = None,
) -> dict[tuple, McEstimate]:
    """One-body correlation entries <conj(phi_hat_k) phi_hat_l> in the (interacting) state."""
    pairs = [(tuple(np.ravel(k)), tuple(np.ravel(l))) for k, l in pairs]
    kidx = mode_index(spec.d, spec.cutoff, np.array([k for k, _ in pairs]))
    lidx = mode_index(spec.d, spec.cutoff, np.array([l for _, l in pairs]))
    if np.any(kidx < 0) or np.any(lidx < 0):
        raise ValueError("requested modes lie outside the cutoff ball")

    def fn(sample):
        phi = np.atleast_2d(sample.phi_hat)
        prods = phi[:, kidx].conj() * phi[:, lidx]
        ww = interaction(sample, w) if w is not None else np.zeros(len(phi))
        return np.concatenate([prods, ww[:, None]], axis=1)

    vals = stream_values(spec, n, seed, fn, workers)
    wts = _weights(vals[:, -1].real, z if w is not None else 0.0)
    out = {}
    for j, pair in enumerate(pairs):
        mean_re, err_re = jackknife_ratio(vals[:, j].real * wts, wts)
        out[pair] = McEstimate(mean_re, err_re, n, seed)
    return out


def write_estimates_csv(rows, path) -> None:
    """rows: iterables of (observable id, m or z, McEstimate)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["observable", "index", "mean", "stderr", "n", "seed"])
        for name, index, est in rows:
            wr.writerow([name, index, repr(est.mean), repr(est.stderr), est.n, est.seed])


def grid_mass(sample: GFFSample) -> np.ndarray:
    """Squared L^2 norm from grid values, for the Parseval cross-check."""
    spec, phi = _phi_of(sample)
    f = field_on_grid(spec, phi)
    return np.mean(np.abs(f) ** 2, axis=tuple(range(1, spec.d + 1)))


import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlsgibbs.expansion import (
    CLASSICAL,
    CoeffRecord,
    Observable,
    TimeConfig,
    coeff_classical,
    coeff_quantum,
    convergence_scan,
    default_eta,
    edge_coefficients,
    graph_value,
    graph_value_position,
    observable_battery,
    pairing_count,
    pairing_sum,
    read_coefficients_csv,
    series_eval,
    simplex_rule,
    write_coefficients_csv,
    write_scan_csv,
)
from nlsgibbs.graphs import collapse, pairings_for
from nlsgibbs.potentials import build_constant, build_endpoint_square, build_power_fourier, build_power_square
from nlsgibbs.spectral import TorusSpec, q1_coefficients, truncated_density

from oracles import constant_potential_coefficient

# frozen from the exponential-moment oracle (d = 1, K = 4, kappa = 1, w = 0.5, identity observable)
IDENTITY_COEFFS_D1 = [1.0707689344983884, -1.6110740655003162, 4.027699962965239, -14.096949917941206]


def _cases():
    out = []
    for d, K in ((1, 3), (2, 2)):
        spec = TorusSpec(d, 1.0, K)
        ws = spec.with_cutoff(2 * K)
        pots = [build_constant(ws, 0.7)]
        if d == 2:
            pots += [build_power_fourier(ws, 1.5), build_endpoint_square(spec, 0.5)]
        else:
            pots += [build_power_square(spec, 1.0)]
        for w in pots:
            out.append((spec, w))
    return out


@pytest.mark.parametrize("spec,w", _cases(), ids=lambda x: getattr(x, "variant", None) or f"d{x.d}")
@pytest.mark.parametrize("m,r", [(0, 1), (1, 0), (1, 1)])
def test_momentum_sum_matches_position_quadrature(spec, w, m, r):
    rng = np.random.default_rng(3)
    obs = Observable.random_hermitian(spec, rng) if r else Observable.empty(spec)
    tc = TimeConfig(default_eta(spec.d), (0.4,)) if m else None
    for p in pairings_for(m, r, spec.d):
        g = collapse(p)
        a = graph_value(g, spec, w, obs)
        b = graph_value_position(g, spec, w, obs)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
        aq = graph_value(g, spec, w, obs, tau=3.0, times=tc)
        bq = graph_value_position(g, spec, w, obs, tau=3.0, times=tc)
        assert aq == pytest.approx(bq, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_identity_coefficients_frozen(m):
    spec = TorusSpec(1, 1.0, 4)
    w = build_constant(spec.with_cutoff(8), 0.5)
    got = coeff_classical(m, Observable.identity_op(spec, 1), w, spec).value
    assert got == pytest.approx(IDENTITY_COEFFS_D1[m], rel=1e-12)


@pytest.mark.parametrize("m", [0, 1, 2])
@pytest.mark.parametrize("kind", ["empty", "unit", "random"])
def test_constant_potential_against_exponential_moments(m, kind):
    spec = TorusSpec(1, 1.0, 3)
    c = 0.3
    w = build_constant(spec.with_cutoff(6), c)
    lams = list(spec.eigenvalues)
    if kind == "empty":
        obs, want = Observable.empty(spec), constant_potential_coefficient(lams, c, m)
    else:
        obs = Observable.unit(spec) if kind == "unit" else Observable.random_hermitian(spec, np.random.default_rng(1))
        diag = np.real(np.diag(obs.tensor))
        want = constant_potential_coefficient(lams, c, m, "diag", diag)
    assert coeff_classical(m, obs, w, spec).value == pytest.approx(want, rel=1e-11, abs=1e-14)


def test_first_order_closed_form():
    spec = TorusSpec(1, 1.0, 3)
    w = build_constant(spec, 0.5)
    rho = truncated_density(spec)
    s2 = float(np.sum(1 / spec.eigenvalues**2))
    assert coeff_classical(1, Observable.empty(spec), w, spec).value == pytest.approx(-(0.25) * (rho**2 + s2), rel=1e-13)


def test_zeroth_order_quantum_is_the_mode_occupation():
    spec = TorusSpec(2, 1.0, 2)
    obs = Observable.unit(spec)
    for tau in (1.0, 10.0, 1e3):
        rec = coeff_quantum(0, obs, tau, None, spec)
        assert rec.value == pytest.approx(q1_coefficients(np.array([1.0]), tau, 0.0)[0], rel=1e-13)
    assert coeff_classical(0, obs, None, spec).value == pytest.approx(1.0)


def test_quantum_approaches_classical_in_one_dimension():
    spec = TorusSpec(1, 1.0, 3)
    w = build_constant(spec.with_cutoff(6), 0.5)
    obs = Observable.identity_op(spec, 1)
    limit, rows = convergence_scan(1, obs, (1.0, 10.0, 100.0, 1000.0), w, spec)
    gaps = [r.gap for r in rows]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-2 * abs(limit.value)
    frozen_limit, frozen_rows = convergence_scan(1, obs, (1.0, 1000.0), w, spec, frozen=True)
    assert frozen_limit.value == limit.value
    assert frozen_rows[-1].gap < frozen_rows[0].gap


def test_quadrature_error_estimate_is_small_for_smooth_integrands():
    spec = TorusSpec(2, 1.0, 2)
    w = build_power_fourier(spec.with_cutoff(4), 1.5)
    rec = coeff_quantum(1, Observable.unit(spec), 10.0, w, spec)
    assert rec.quadrature_error < 1e-12
    assert rec.pairings == pairing_count(1, 1, 2) == 3


@given(st.integers(1, 3), st.floats(0.0, 0.25))
def test_simplex_rule_volume_and_monomial(m, eta):
    ts, ws = simplex_rule(m, eta, 6)
    span = 1 - 2 * eta
    assert ws.sum() == pytest.approx(span**m / math.factorial(m), rel=1e-12)
    assert np.all(np.diff(ts, axis=1) < 0)
    assert np.all((ts > eta) & (ts < 1 - eta))
    if m == 2 and eta == 0.0:
        # int_{1>t1>t2>0} t1 t2 = 1/8
        assert np.dot(ws, ts[:, 0] * ts[:, 1]) == pytest.approx(1 / 8, rel=1e-12)


def test_simplex_rule_exact_monomial():
    ts, ws = simplex_rule(2, 0.0, 6)
    assert np.dot(ws, ts[:, 0] * ts[:, 1]) == pytest.approx(1 / 8, rel=1e-13)
    with pytest.raises(ValueError):
        simplex_rule(2, 0.0, 1)


def test_time_config_validation():
    TimeConfig(0.125, (0.8, 0.3))
    with pytest.raises(ValueError):
        TimeConfig(0.125, (0.3, 0.8))
    with pytest.raises(ValueError):
        TimeConfig(0.125, (0.9,))
    with pytest.raises(ValueError):
        TimeConfig(0.3, ())
    assert TimeConfig(0.0, (0.5,)).slot_time(2) == 0.0


def test_eta_must_match_dimension():
    spec = TorusSpec(2, 1.0, 1)
    with pytest.raises(ValueError):
        coeff_quantum(0, Observable.empty(spec), 2.0, None, spec, eta=0.0)
    with pytest.raises(ValueError):
        coeff_quantum(0, Observable.empty(spec), 0.5, None, spec)


def test_edge_coefficients_cases():
    lam = np.array([1.0, 50.0])
    tau = 4.0
    same = edge_coefficients(lam, tau, 1, 0.3, True)
    other = edge_coefficients(lam, tau, 1, 0.3, False)
    np.testing.assert_allclose(same - other, 1 / tau)
    classical = edge_coefficients(lam, CLASSICAL, 1, 0.3, True)
    np.testing.assert_allclose(classical, 1 / lam)


def test_observable_properties():
    spec = TorusSpec(1, 1.0, 2)
    rng = np.random.default_rng(0)
    for r in (0, 1, 2):
        for obs in observable_battery(spec, r):
            assert obs.in_unit_ball()
    herm = Observable.random_hermitian(spec, rng, 2, terms=3)
    assert herm.is_self_adjoint()
    phi = rng.standard_normal((4, spec.n_modes)) + 1j * rng.standard_normal((4, spec.n_modes))
    unit = Observable.unit(spec, (1,))
    np.testing.assert_allclose(unit.theta(phi), np.abs(phi[:, spec.zero_index() + 1]) ** 2)
    ident = Observable.identity_op(spec, 2)
    np.testing.assert_allclose(ident.theta(phi), np.sum(np.abs(phi) ** 2, axis=1) ** 2)
    with pytest.raises(ValueError):
        Observable.identity_op(TorusSpec(2, 1.0, 1), 1)
    with pytest.raises(ValueError):
        Observable(spec, 1, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Observable.unit(spec, (5,))
    skew = Observable.from_matrix(spec, 1j * np.eye(spec.n_modes))
    with pytest.raises(ValueError):
        skew.theta(phi)


def test_rank_two_product_observable_theta():
    spec = TorusSpec(1, 1.0, 1)
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    obs = Observable.from_products(spec, [(a + a.T, b + b.T)])
    phi = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    want = np.einsum("sk,kl,sl->s", phi.conj(), a + a.T, phi) * np.einsum("sk,kl,sl->s", phi.conj(), b + b.T, phi)
    np.testing.assert_allclose(obs.theta(phi), want.real)


def test_threaded_pairing_sum_is_bit_identical():
    spec = TorusSpec(2, 1.0, 2)
    w = build_power_fourier(spec.with_cutoff(4), 1.5)
    obs = Observable.unit(spec)
    a = pairing_sum(2, obs, spec, w)
    b = pairing_sum(2, obs, spec, w, workers=3)
    assert a == b


def test_series_eval_and_csv(tmp_path):
    recs = [CoeffRecord(m, CLASSICAL, v, 0.0, 1) for m, v in enumerate(IDENTITY_COEFFS_D1)]
    assert series_eval(recs, 0.1, 2) == pytest.approx(IDENTITY_COEFFS_D1[0] + 0.1 * IDENTITY_COEFFS_D1[1])
    assert series_eval([1.0, 2.0], 0.5, 0) == 0.0
    with pytest.raises(ValueError):
        series_eval(recs, 0.1, 5)
    path = tmp_path / "c.csv"
    write_coefficients_csv(recs + [CoeffRecord(1, 10.0, -1.5, 1e-16, 6)], path)
    back = read_coefficients_csv(path)
    assert [r.value for r in back] == [r.value for r in recs] + [-1.5]
    assert math.isinf(back[0].tau)
    spec = TorusSpec(1, 1.0, 2)
    _, rows = convergence_scan(0, Observable.unit(spec), (1.0, 2.0), build_constant(spec, 0.1), spec)
    write_scan_csv(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("tau,value,gap")

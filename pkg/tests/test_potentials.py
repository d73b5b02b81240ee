import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from nlsgibbs.potentials import (
    build_constant,
    build_endpoint_square,
    build_power_fourier,
    build_power_square,
    build_self_convolution,
    chi,
    conjugate_exponent,
    cutoff_scale,
    fitted_decay_exponent,
    from_coefficients,
    in_beta_range,
    in_p_range,
    index_of,
    mollify,
    mollify_1d,
    mollify_endpoint,
    mollify_fourier,
    multiplier_l1_norm,
    potential_from_csv,
    potential_to_csv,
    smooth_bump,
    verify_potential,
)
from nlsgibbs.spectral import FourierKernel, TorusSpec, japanese, kernel_eval_many, mode_ball


def test_exponent_helpers():
    assert conjugate_exponent(2.0) == 2.0
    assert conjugate_exponent(1.0) == math.inf
    assert conjugate_exponent(math.inf) == 1.0
    assert in_p_range(1, 1.0) and not in_p_range(2, 1.0)
    assert not in_p_range(3, 3.0) and in_p_range(3, 3.5)
    assert in_beta_range(3, 0.4) and not in_beta_range(3, 0.5)


def test_chi_profile():
    r = np.linspace(0, 1.2, 121)
    vals = chi(r)
    assert np.all(vals[r <= 0.5] == 1.0)
    assert np.all(vals[r >= 1.0] == 0.0)
    assert np.all(np.diff(vals) <= 0)
    # C^1 at the joins: finite differences shrink with the step
    h = 1e-6
    assert abs(smooth_bump(np.array([0.5 + h]), 0.5, 1.0)[0] - 1.0) < 1e-12


def test_constant_potential():
    w = build_constant(TorusSpec(2, 1.0, 4), 0.7)
    np.testing.assert_allclose(w.grid_values(9), 0.7)
    assert w.is_positive_type()
    assert w.lp(2.0) == pytest.approx(0.7)


def test_power_fourier_coefficients_and_guards():
    spec = TorusSpec(3, 1.0, 3)
    w = build_power_fourier(spec, 1.2, p=4.0)
    np.testing.assert_allclose(w.coeffs, japanese(spec.modes) ** (-2.5))
    assert fitted_decay_exponent(w, 1.0, 3.0) == pytest.approx(-2.5, abs=1e-12)
    with pytest.raises(ValueError):
        build_power_fourier(TorusSpec(1, 1.0, 3), 1.5)
    with pytest.raises(ValueError):
        build_power_fourier(spec, 1.5, p=4.0)
    with pytest.raises(ValueError):
        build_power_fourier(spec, 1.2, p=2.5)


def _direct_transform_1d(a, k):
    def f(x):
        return abs(x) ** (-a) * smooth_bump(np.array([abs(x)]), 1 / 3, 0.5)[0] * math.cos(2 * math.pi * k * x)

    val, _ = integrate.quad(f, 0, 0.5, limit=400, points=[1 / 3])
    return 2 * val


def test_self_convolution_matches_direct_quadrature():
    q, p = 1.8, 1.5
    spec = TorusSpec(1, 1.0, 3)
    w = build_self_convolution(spec, q, p)
    for k in range(4):
        fk = _direct_transform_1d(1 / q, k)
        assert w.coeffs[index_of(w, (k,))] == pytest.approx(fk * fk, rel=1e-6)
    assert w.is_positive_type()
    with pytest.raises(ValueError):
        build_self_convolution(spec, 1.2, 1.5)


def test_self_convolution_two_dimensional_zero_mode():
    q = 1.8
    w = build_self_convolution(TorusSpec(2, 1.0, 2), q, 1.5)
    a = 2 / q
    val, _ = integrate.quad(lambda r: 2 * math.pi * r ** (1 - a) * smooth_bump(np.array([r]), 1 / 3, 0.5)[0], 0, 0.5, points=[1 / 3])
    assert w.coeffs[index_of(w, (0, 0))] == pytest.approx(val * val, rel=1e-7)


@pytest.mark.parametrize("builder", ["endpoint", "square"])
def test_square_potentials_are_pointwise_squares(builder):
    K = 3
    d = 2
    spec = TorusSpec(d, 1.0, K)
    if builder == "endpoint":
        w, power = build_endpoint_square(spec, 0.5), 1.5
    else:
        w, power = build_power_square(spec, 1.0), 1.0
    f = FourierKernel(spec, japanese(spec.modes) ** (-power))
    pts = np.random.default_rng(0).random((20, d))
    fx = kernel_eval_many(f, pts)
    wx = kernel_eval_many(w.kernel, pts)
    np.testing.assert_allclose(wx, fx**2, rtol=1e-12)
    assert w.spec.cutoff == 2 * K
    assert w.is_positive_type()


def test_endpoint_parameters():
    w = build_endpoint_square(TorusSpec(2, 1.0, 4), 0.4)
    assert w.params["delta"] == pytest.approx(0.2)
    assert w.params["L"] == pytest.approx(float(np.max(w.coeffs * japanese(w.spec.modes) ** 0.4)))
    with pytest.raises(ValueError):
        build_endpoint_square(TorusSpec(3, 1.0, 2), 0.5)
    with pytest.raises(ValueError):
        build_endpoint_square(TorusSpec(2, 1.0, 2), 0.0)


def test_odd_coefficients_rejected():
    spec = TorusSpec(1, 1.0, 2)
    with pytest.raises(ValueError):
        from_coefficients(spec, [0, 0, 0, 1.0, 0])


@given(st.floats(1.0, 1e4), st.floats(0.05, 0.95))
def test_clipping_mollifier_clauses(tau, beta):
    w = build_power_square(TorusSpec(1, 1.0, 6), 0.6)
    w_tau = mollify_1d(w, tau, beta)
    rep = verify_potential(w, w_tau)
    assert rep.passed, rep.failures()
    assert w_tau.grid_values(25).max() <= tau**beta * (1 + 1e-12)


def test_clipping_is_identity_below_cap():
    w = build_constant(TorusSpec(1, 1.0, 4), 0.5)
    w_tau = mollify_1d(w, 1.0, 0.5)
    np.testing.assert_allclose(w_tau.coeffs, w.coeffs, atol=1e-15)
    assert mollify_1d(w, 1.0, 0.0 + 1e-9).coeffs.max() >= 0


@given(st.sampled_from([2, 3]), st.floats(1.0, 1e4), st.floats(0.1, 0.45))
def test_fourier_mollifier_clauses(d, tau, beta):
    spec = TorusSpec(d, 1.0, {2: 8, 3: 4}[d])
    w = build_power_fourier(spec, 1.5 if d == 2 else 1.2, 2.0 if d == 2 else 4.0)
    p = w.params["p"]
    w_tau = mollify_fourier(w, tau, beta, p)
    rep = verify_potential(w, w_tau, p)
    assert rep.passed, rep.failures()
    assert w_tau.params["M"] == pytest.approx(cutoff_scale(w, tau, beta, p))


def test_fourier_mollifier_keeps_low_modes_exactly():
    w = build_power_fourier(TorusSpec(2, 1.0, 8), 1.5)
    w_tau = mollify_fourier(w, 1e4, 0.5)
    M = w_tau.params["M"]
    norms = np.sqrt((w.spec.modes**2).sum(axis=1))
    keep = norms <= M / 2
    np.testing.assert_array_equal(w_tau.coeffs[keep], w.coeffs[keep])
    assert np.all(w_tau.coeffs[norms >= M] == 0)


@pytest.mark.parametrize("tau", [1.0, 10.0, 1e2, 1e3])
def test_endpoint_mollifier_clauses(tau):
    w = build_endpoint_square(TorusSpec(2, 1.0, 4), 0.5)
    rep = verify_potential(w, mollify_endpoint(w, tau, 0.5))
    assert rep.passed, rep.failures()


def test_mollify_dispatch():
    w1 = build_constant(TorusSpec(1, 1.0, 4), 0.5)
    assert mollify(w1, 2.0, 0.5).params["mollifier"] == "clip"
    w2 = build_endpoint_square(TorusSpec(2, 1.0, 2), 0.5)
    assert mollify(w2, 2.0, 0.5).params["mollifier"] == "gauss"
    w3 = build_power_fourier(TorusSpec(2, 1.0, 4), 1.5)
    assert mollify(w3, 2.0, 0.5).params["mollifier"] == "fourier"
    with pytest.raises(ValueError):
        mollify_endpoint(w3, 2.0, 0.5)


@pytest.mark.parametrize("d", [1, 2])
def test_multiplier_norm_is_resolved(d):
    a = multiplier_l1_norm(d)
    b = multiplier_l1_norm(d, {1: 4096, 2: 512}[d])
    assert a >= 1.0
    assert a == pytest.approx(b, rel=1e-3)


def test_potential_csv_round_trip(tmp_path):
    w = build_endpoint_square(TorusSpec(2, 1.0, 2), 0.5)
    path = tmp_path / "w.csv"
    potential_to_csv(w, path)
    back = potential_from_csv(path)
    assert back.variant == "endpointSquare"
    np.testing.assert_array_equal(back.coeffs, w.coeffs)
    assert back.params["eps"] == 0.5


def test_mode_ball_sizes_for_stored_potentials():
    w = build_power_square(TorusSpec(1, 1.0, 5), 1.0)
    assert len(w.coeffs) == len(mode_ball(1, 10))

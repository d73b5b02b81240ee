import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlsgibbs.expansion import Observable, coeff_classical
from nlsgibbs.montecarlo import (
    McEstimate,
    density_modes,
    field_on_grid,
    grid_mass,
    interaction,
    interaction_1d,
    interaction_on_grid,
    jackknife_ratio,
    l4_bound,
    mass,
    mc_correlation,
    mc_moment,
    mc_moment_table,
    mc_moments,
    mc_state_expectation,
    mc_weighted_mean,
    sample_gff,
    stream_values,
    wick_interaction,
    write_estimates_csv,
)
from nlsgibbs.potentials import build_constant, build_endpoint_square, build_power_fourier, build_power_square, from_coefficients
from nlsgibbs.spectral import TorusSpec, mode_ball, truncated_density

from oracles import constant_potential_coefficient


def test_sampler_covariance():
    spec = TorusSpec(2, 1.0, 2)
    s = sample_gff(spec, np.random.default_rng(0), 40000)
    var = np.mean(np.abs(s.phi_hat) ** 2, axis=0)
    np.testing.assert_allclose(var * spec.eigenvalues, 1.0, rtol=0.05)
    # circular symmetry: E[phi^2] = 0
    assert np.abs(np.mean(s.phi_hat**2, axis=0) * spec.eigenvalues).max() < 0.05
    assert len(s) == 40000


@given(st.sampled_from([1, 2, 3]), st.integers(0, 10**6))
def test_density_modes_match_direct_convolution(d, seed):
    K = {1: 3, 2: 2, 3: 1}[d]
    spec = TorusSpec(d, 1.0, K)
    s = sample_gff(spec, np.random.default_rng(seed))
    phi = s.phi_hat
    modes = spec.modes
    want = {}
    for a, ka in enumerate(modes):
        for b, kb in enumerate(modes):
            q = tuple(ka - kb)
            want[q] = want.get(q, 0) + phi[a] * np.conj(phi[b])
    got = density_modes(spec, phi, 2 * K)[0]
    for j, q in enumerate(mode_ball(d, 2 * K)):
        assert got[j] == pytest.approx(want.get(tuple(q), 0), abs=1e-12)


def test_field_on_grid_and_mass():
    spec = TorusSpec(1, 1.0, 3)
    s = sample_gff(spec, np.random.default_rng(1), 3)
    f = field_on_grid(spec, s.phi_hat)
    x = np.arange(13) / 13
    direct = np.exp(2j * np.pi * np.outer(x, spec.modes[:, 0])) @ s.phi_hat[0]
    np.testing.assert_allclose(f[0], direct, atol=1e-12)
    np.testing.assert_allclose(mass(s), grid_mass(s), rtol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_interaction_modes_match_grid_convolution(d):
    spec = TorusSpec(d, 1.0, 3)
    w = build_power_square(spec, 1.0) if d == 1 else build_endpoint_square(spec, 0.5)
    s = sample_gff(spec, np.random.default_rng(5), 4)
    np.testing.assert_allclose(interaction(s, w), interaction_on_grid(s, w), rtol=1e-10)
    assert np.all(interaction(s, w) >= 0)


def test_one_dimensional_interaction_bounded_by_l4():
    spec = TorusSpec(1, 1.0, 4)
    w = build_power_square(spec, 1.0)
    s = sample_gff(spec, np.random.default_rng(2), 50)
    assert np.all(interaction_1d(s, w) <= 0.5 * l4_bound(s, w) * (1 + 1e-12) + 1e-12)
    with pytest.raises(ValueError):
        interaction_1d(sample_gff(TorusSpec(2, 1.0, 1), np.random.default_rng(0)), build_constant(TorusSpec(2, 1.0, 2), 1.0))


def test_wick_subtraction_of_constant_potential():
    spec = TorusSpec(2, 1.0, 2)
    c = 0.8
    w = build_constant(spec.with_cutoff(4), c)
    s = sample_gff(spec, np.random.default_rng(4), 10)
    want = 0.5 * c * (mass(s) - truncated_density(spec)) ** 2
    np.testing.assert_allclose(wick_interaction(s, w), want, rtol=1e-11)


def test_negative_coefficients_rejected():
    spec = TorusSpec(1, 1.0, 1)
    w = from_coefficients(spec.with_cutoff(2), [0, -1.0, 1.0, -1.0, 0])
    with pytest.raises(ValueError):
        interaction(sample_gff(spec, np.random.default_rng(0), 2), w)


def test_streams_are_seed_deterministic_and_thread_invariant():
    spec = TorusSpec(2, 1.0, 2)
    w = build_power_fourier(spec.with_cutoff(4), 1.5)
    obs = Observable.unit(spec)
    a = mc_moment(obs, w, 1, 20000, 11)
    b = mc_moment(obs, w, 1, 20000, 11)
    c = mc_moment(obs, w, 1, 20000, 11, workers=3)
    assert a == b == c
    assert mc_moment(obs, w, 1, 20000, 12).mean != a.mean


def test_stream_rows_follow_substream_order():
    spec = TorusSpec(1, 1.0, 1)
    vals = stream_values(spec, 10000, 3, lambda s: s.phi_hat[:, 0].real)
    again = stream_values(spec, 10000, 3, lambda s: s.phi_hat[:, 0].real, workers=2)
    np.testing.assert_array_equal(vals, again)
    with pytest.raises(ValueError):
        stream_values(spec, 1, 3, lambda s: s.phi_hat)


def test_moments_agree_with_exponential_oracle():
    spec = TorusSpec(1, 1.0, 3)
    c = 0.3
    w = build_constant(spec.with_cutoff(6), c)
    lams = list(spec.eigenvalues)
    est = mc_moments(Observable.empty(spec), w, [0, 1, 2], 60000, 99)
    for m in (1, 2):
        coeff = constant_potential_coefficient(lams, c, m)
        target = coeff * math.factorial(m) * (-1) ** m
        assert est[m].zscore(target) < 4


def test_moment_table_matches_single_streams():
    spec = TorusSpec(2, 1.0, 2)
    ws = spec.with_cutoff(4)
    pots = [build_constant(ws, 0.5), build_power_fourier(ws, 1.5)]
    obs = [Observable.empty(spec), Observable.unit(spec)]
    table = mc_moment_table(obs, pots, (0, 1, 2), 5000, 8)
    single = mc_moments(obs[1], pots[1], (0, 1, 2), 5000, 8)
    for m in (0, 1, 2):
        assert table[(1, 1, m)].mean == pytest.approx(single[m].mean, rel=1e-12)
    with pytest.raises(ValueError):
        mc_moment_table([], pots, (0,), 5000, 8)


def test_zeroth_moment_of_unit_observable_is_inverse_mass():
    spec = TorusSpec(2, 2.0, 2)
    est = mc_moment(Observable.unit(spec), None, 0, 50000, 1)
    assert est.zscore(0.5) < 4
    with pytest.raises(ValueError):
        mc_moment(Observable.unit(spec), None, 1, 5000, 1)
    with pytest.raises(ValueError):
        mc_moment(Observable.unit(spec), None, 5, 5000, 1)


def test_state_expectation_against_series_at_small_coupling():
    spec = TorusSpec(1, 1.0, 3)
    w = build_constant(spec.with_cutoff(6), 0.5)
    obs = Observable.identity_op(spec, 1)
    z = 0.02
    coeffs = [coeff_classical(m, obs, w, spec).value for m in range(3)]
    norms = [coeff_classical(m, Observable.empty(spec), w, spec).value for m in range(3)]
    series = sum(c * z**m for m, c in enumerate(coeffs)) / sum(c * z**m for m, c in enumerate(norms))
    est = mc_state_expectation(obs, w, z, 100000, 5)
    assert est.zscore(series, extra_sigma=1e-3) < 4
    unnorm = mc_weighted_mean(obs, w, z, 100000, 5)
    assert unnorm.mean < mc_moment(obs, w, 0, 100000, 5).mean
    with pytest.raises(ValueError):
        mc_state_expectation(obs, w, 3.0, 100000, 5)
    with pytest.raises(ValueError):
        mc_state_expectation(obs, w, 0.1, 10, 5)


def test_correlation_diagonal_and_offdiagonal():
    spec = TorusSpec(1, 1.0, 2)
    est = mc_correlation(spec, [((0,), (0,)), ((1,), (0,))], None, 40000, 2)
    assert est[((0,), (0,))].zscore(1.0) < 4
    assert est[((1,), (0,))].zscore(0.0) < 4
    with pytest.raises(ValueError):
        mc_correlation(spec, [((5,), (0,))], None, 4000, 2)


def test_jackknife_on_exact_ratio():
    num = np.arange(1, 1001, dtype=float)
    ratio, err = jackknife_ratio(2 * num, num)
    assert ratio == 2.0
    assert err == pytest.approx(0.0, abs=1e-12)


def test_estimate_helpers(tmp_path):
    e = McEstimate(1.0, 0.1, 100, 0)
    assert e.zscore(1.2) == pytest.approx(2.0)
    assert e.zscore(1.2, extra_sigma=0.1) == pytest.approx(2.0 / math.sqrt(2))
    assert McEstimate(1.0, 0.0, 2, 0).zscore(1.0) == 0.0
    with pytest.raises(ValueError):
        McEstimate(1.0, 0.1, 1, 0)
    path = tmp_path / "e.csv"
    write_estimates_csv([("unit", "m=0", e)], path)
    assert path.read_text().splitlines()[0] == "observable,index,mean,stderr,n,seed"

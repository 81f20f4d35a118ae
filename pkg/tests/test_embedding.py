import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from sasnet import embedding as em


def test_canonical_set_small_exhaustive():
    # every k in [-2,2]^2 minus [-1,1]^2, one representative per +-pair
    pts = em.high_band_points(1, 2)
    expected = [[0, 2], [1, -2], [1, 2], [2, -2], [2, -1], [2, 0], [2, 1], [2, 2]]
    assert pts.tolist() == expected


def test_canonical_count_default_bands():
    # (121^2 - 25^2) / 2 representatives
    assert len(em.high_band_points(12, 60)) == (121**2 - 25**2) // 2 == 7008


def test_canonicalize_is_sign_invariant():
    k = np.array([[3, -1], [-3, 1], [0, -4], [0, 4], [-2, 0]])
    c = em.canonicalize(k)
    assert c.tolist() == [[3, -1], [3, -1], [0, 4], [0, 4], [2, 0]]


def test_sampler_split_groups_and_sorting():
    rng = np.random.default_rng(0)
    k, g = em.sample_multipliers(400, 12, 60, 0.5, rng, n_band=5)
    m = np.abs(k).max(axis=1)
    assert (g == 0).sum() == 200 and np.all(m[g == 0] <= 12)
    assert np.all(np.diff(g) >= 0)
    assert np.all((m[g > 0] > 12) & (m[g > 0] <= 60))
    for band in range(1, 6):
        sel = m[g == band]
        assert np.all((sel > 12 + 10 * (band - 1)) & (sel <= 12 + 10 * band))
    high = k[g > 0]
    assert len(np.unique(high, axis=0)) == len(high)
    assert np.array_equal(em.canonicalize(k), k)


def test_sampler_reports_available_count():
    with pytest.raises(ValueError, match="only 8 distinct"):
        em.sample_multipliers(20, 1, 2, 0.0, np.random.default_rng(0))


def test_sampler_rejects_bad_bands():
    with pytest.raises(ValueError):
        em.sample_multipliers(10, 60, 60, 0.5, np.random.default_rng(0))


def test_band_width_and_groups():
    assert em.band_width(12, 60, 5) == 10
    k = np.array([[12, 0], [13, 0], [22, 5], [23, -1], [-60, 60]])
    assert em.assign_groups(k, 12, 60, 5).tolist() == [0, 1, 1, 2, 5]


def test_embedding_is_periodic_with_period_two():
    rng = np.random.default_rng(1)
    k, g = em.sample_multipliers(32, 4, 12, 0.5, rng, n_band=2)
    e = em.build_embedding(k, rng, band_low=4, band_limit=12, n_band=2, groups=g)
    x = rng.uniform(-1, 1, size=(50, 2))
    np.testing.assert_allclose(e(x), e(x + np.array([2.0, 0.0])), atol=1e-10)
    np.testing.assert_allclose(e(x), e(x + np.array([0.0, -2.0])), atol=1e-10)


def test_embedding_jacobian_matches_fd():
    rng = np.random.default_rng(2)
    k, g = em.sample_multipliers(16, 3, 9, 0.5, rng, n_band=2)
    e = em.build_embedding(k, rng, band_low=3, band_limit=9, n_band=2, groups=g)
    x = rng.uniform(-1, 1, size=(7, 2))
    h = 1e-6
    fd = np.stack([(e(x + h * d) - e(x - h * d)) / (2 * h) for d in np.eye(2)], axis=2)
    np.testing.assert_allclose(e.jacobian(x), fd, atol=1e-6)


# -- Bessel ---------------------------------------------------------------------


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.5, -3.0, 7.0, 12.0])
def test_bessel_series_matches_scipy(x):
    for n in range(-6, 7):
        assert abs(em.bessel_j_series(n, x) - special.jv(n, x)) < 1e-12


@pytest.mark.parametrize("x", [0.0, 1e-3, 0.5, 3.0, -4.2, 10.0, 30.0])
def test_miller_matches_series_and_scipy(x):
    vals = em.bessel_j_orders(x, 25)
    ref = special.jv(np.arange(26), x)
    np.testing.assert_allclose(vals, ref, atol=1e-14)
    if abs(x) <= 10:
        series = [em.bessel_j_series(n, x) for n in range(26)]
        np.testing.assert_allclose(vals, series, atol=1e-12)


def test_bessel_negative_orders():
    v = em.bessel_j(np.array([-3, -2, 2, 3]), 1.7)
    np.testing.assert_allclose(v, special.jv([-3, -2, 2, 3], 1.7), atol=1e-15)


def test_bessel_product_known_value():
    # J1(1) J0(0.5), a single expansion amplitude
    assert abs(em.bessel_j_series(1, 1.0) * em.bessel_j_series(0, 0.5) - 0.41297419) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(-8, 8), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_jacobi_anger_single_input(w, y, b):
    K = int(math.ceil(abs(w))) + 15
    exp = em.neuron_expansion([w], b, K)
    tail = 2 * sum(abs(em.bessel_j_series(n, w)) for n in range(K + 1, K + 40))  # truncation bound
    assert abs(exp.evaluate(np.array([[y]]))[0] - math.sin(w * math.sin(y) + b)) <= tail + 1e-13


def test_expansion_two_inputs_and_iteration():
    exp = em.neuron_expansion([1.0, 0.5], 0.2, 16)
    terms = {t.k: t.amplitude for t in exp}
    assert abs(terms[(1, 0)] - 0.41297419) < 1e-8
    y = np.random.default_rng(0).uniform(-3, 3, size=(20, 2))
    direct = np.sin(1.0 * np.sin(y[:, 0]) + 0.5 * np.sin(y[:, 1]) + 0.2)
    np.testing.assert_allclose(exp.evaluate(y), direct, atol=1e-12)


def test_expansion_pruning_bound():
    exp = em.neuron_expansion([2.0, -1.5, 0.7], 0.1, 18)
    y = np.random.default_rng(1).uniform(-3, 3, size=(30, 3))
    full = exp.evaluate(y)
    pruned = exp.evaluate(y, min_amplitude=1e-12)
    assert np.abs(full - pruned).max() <= exp.skipped_mass(1e-12) + 1e-15


# -- spectra ---------------------------------------------------------------------


def test_single_harmonic_lands_on_its_bin():
    # sin(pi (3 x + 5 y)) has all its energy at (kx, ky) = +-(3, 5)
    s = em.spectrum(lambda xy: np.sin(np.pi * (3 * xy[:, 0] + 5 * xy[:, 1])), 64)
    rows = s.rows()
    hot = rows[rows[:, 2] > 1e-12]
    assert sorted(map(tuple, hot[:, :2].astype(int).tolist())) == [(-3, -5), (3, 5)]
    np.testing.assert_allclose(hot[:, 2], 0.25, atol=1e-12)
    assert s.band_fraction(5) == pytest.approx(1.0)
    assert s.band_fraction(4) == pytest.approx(0.0, abs=1e-20)


def test_spectrum_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        em.spectrum(lambda xy: xy[:, 0], 100)

"""Polynomial chaos basis, expansions, moments, sampling, risk multiplier."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from lemuq import pce
from lemuq.errors import (
    IndexOutOfRange,
    InvalidRisk,
    OutOfSupport,
    UnsupportedDistribution,
)

from . import oracles


def test_basis_size_formula():
    b1 = pce.build_basis(pce.GermSpec((pce.gaussian_component(),), 2))
    assert b1.K == 3
    b3 = pce.build_basis(pce.default_germ(2))
    assert b3.K == 10
    # closed form against a few more shapes
    for d, p in [(2, 3), (3, 4), (4, 2)]:
        comps = tuple(pce.gaussian_component() for _ in range(d))
        basis = pce.build_basis(pce.GermSpec(comps, p))
        assert basis.K == math.factorial(p + d) // (math.factorial(p) * math.factorial(d))


def test_multi_index_layout():
    basis = pce.build_basis(pce.default_germ(2))
    assert basis.multi_indices[0] == (0, 0, 0)
    assert basis.multi_indices[1:4] == ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    degrees = [sum(idx) for idx in basis.multi_indices]
    assert degrees == sorted(degrees)


def test_constant_term_is_one():
    basis = pce.build_basis(pce.default_germ(2))
    vals = basis.eval(np.array([0.3, 0.5, 0.9]))
    assert vals[0] == 1.0


def test_normalized_hermite_degree2_at_one():
    # orthonormal degree-2 Hermite is (x^2 - 1)/sqrt(2), zero at x = 1
    basis = pce.build_basis(pce.GermSpec((pce.gaussian_component(),), 2))
    vals = basis.eval(np.array([1.0]))
    assert vals == pytest.approx([1.0, 1.0, 0.0], abs=1e-14)


def test_degree_one_polynomial_is_standardized_coordinate():
    # shared convention relied on by expand_affine_input
    germ = pce.default_germ(2)
    basis = pce.build_basis(germ)
    rng = np.random.default_rng(3)
    pts = pce.sample_germ(germ, 50, rng)
    vals = basis.eval_batch(pts)
    for j, comp in enumerate(germ.components):
        expected = (pts[:, j] - comp.mean) / comp.std
        assert vals[:, 1 + j] == pytest.approx(expected, abs=1e-12)


def test_basis_expectations_match_quadrature():
    basis = pce.build_basis(pce.default_germ(2))
    pts, wts = oracles.tensor_quadrature(basis.germ.components, 6)
    means = wts @ basis.eval_batch(pts)
    expected = np.zeros(basis.K)
    expected[0] = 1.0
    assert means == pytest.approx(expected, abs=1e-12)


def test_quadrature_gram_identity_high_degree():
    for degree in (2, 3, 4):
        basis = pce.build_basis(pce.GermSpec(pce.default_germ().components, degree))
        G = oracles.quadrature_gram(basis, degree + 2)
        assert np.abs(G - np.eye(basis.K)).max() < 1e-8


def test_monte_carlo_gram_identity():
    basis = pce.build_basis(pce.default_germ(2))
    samples = pce.sample_germ(basis.germ, 1_000_000, seed=11)
    psi = basis.eval_batch(samples)
    assert oracles.gram_within_3se(psi)


def test_affine_expansion_beta52():
    basis = pce.build_basis(pce.default_germ(2))
    series = pce.expand_affine_input(basis, 1, 0.0, 1.0)
    assert pce.mean(series) == pytest.approx(5.0 / 7.0, abs=1e-10)
    assert pce.variance(series) == pytest.approx(10.0 / (49.0 * 8.0), abs=1e-10)


def test_affine_expansion_reproduces_input_pointwise():
    germ = pce.default_germ(3)
    basis = pce.build_basis(germ)
    rng = np.random.default_rng(5)
    pts = pce.sample_germ(germ, 200, rng)
    for j in range(germ.d):
        series = pce.expand_affine_input(basis, j, offset=1.7, scale=-0.4)
        vals = basis.eval_batch(pts) @ series.as_array()
        assert vals == pytest.approx(1.7 - 0.4 * pts[:, j], abs=1e-12)


def test_affine_expansion_gaussian_unit():
    basis = pce.build_basis(pce.default_germ(2))
    series = pce.expand_affine_input(basis, 0, 0.0, 1.0)
    assert pce.mean(series) == 0.0
    assert pce.variance(series) == pytest.approx(1.0)


def test_affine_expansion_deterministic():
    basis = pce.build_basis(pce.default_germ(2))
    series = pce.expand_affine_input(basis, 2, offset=4.2, scale=0.0)
    assert series.coefficients[0] == 4.2
    assert all(c == 0.0 for c in series.coefficients[1:])


def test_affine_expansion_bad_index():
    basis = pce.build_basis(pce.default_germ(2))
    with pytest.raises(IndexOutOfRange):
        pce.expand_affine_input(basis, 3, 0.0, 1.0)


def test_moments_trivia():
    c = [3.0] + [0.0] * 9
    assert pce.mean(c) == 3.0
    assert pce.variance(c) == 0.0
    assert pce.variance([0.0, 1.0, 1.0]) == pytest.approx(2.0)
    assert pce.std([0.0, 3.0, 4.0]) == pytest.approx(5.0)


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=10, max_size=10))
def test_variance_nonnegative(coeffs):
    assert pce.variance(coeffs) >= 0.0


def test_series_moments_match_monte_carlo():
    germ = pce.default_germ(2)
    basis = pce.build_basis(germ)
    rng = np.random.default_rng(17)
    coeffs = rng.normal(size=basis.K)
    series = pce.PceSeries(tuple(coeffs))

    samples = pce.sample_germ(germ, 1_000_000, seed=23)
    vals = basis.eval_batch(samples) @ coeffs
    se_mean = oracles.mc_standard_error(vals)
    se_var = oracles.variance_standard_error(vals)
    assert abs(vals.mean() - pce.mean(series)) < 3 * se_mean
    assert abs(vals.var(ddof=1) - pce.variance(series)) < 3 * se_var


def test_series_moments_match_quadrature():
    basis = pce.build_basis(pce.default_germ(2))
    rng = np.random.default_rng(29)
    coeffs = rng.normal(size=basis.K)
    m, v = oracles.quadrature_moments(basis, coeffs, 8)
    assert m == pytest.approx(pce.mean(coeffs), abs=1e-10)
    assert v == pytest.approx(pce.variance(coeffs), abs=1e-10)


def test_sampling_determinism_and_moments():
    germ = pce.default_germ(2)
    a = pce.sample_germ(germ, 1000, seed=42)
    b = pce.sample_germ(germ, 1000, seed=42)
    assert np.array_equal(a, b)

    big = pce.sample_germ(germ, 1_000_000, seed=1)
    beta52 = big[:, 1]
    se = oracles.mc_standard_error(beta52)
    assert abs(beta52.mean() - 5.0 / 7.0) < 3 * se


def test_sampling_independence():
    germ = pce.default_germ(2)
    s = pce.sample_germ(germ, 100_000, seed=2)
    for i in range(3):
        for j in range(i + 1, 3):
            r = np.corrcoef(s[:, i], s[:, j])[0, 1]
            # Fisher-style bound: correlation of independent draws is
            # within 3/sqrt(n) with overwhelming probability
            assert abs(r) < 3.0 / math.sqrt(len(s))


def test_out_of_support():
    basis = pce.build_basis(pce.default_germ(2))
    with pytest.raises(OutOfSupport):
        basis.eval(np.array([0.0, 1.5, 0.5]))
    with pytest.raises(OutOfSupport):
        basis.eval(np.array([0.0, 0.5, -0.01]))
    with pytest.raises(OutOfSupport):
        basis.eval(np.array([np.nan, 0.5, 0.5]))
    # gaussian coordinate is unbounded
    basis.eval(np.array([25.0, 0.5, 0.5]))


def test_unsupported_distribution():
    with pytest.raises(UnsupportedDistribution):
        pce.GermComponent("uniform")
    with pytest.raises(UnsupportedDistribution):
        pce.beta_component(-1.0, 2.0)


def test_gamma_values():
    assert pce.gamma(0.05, "gaussian") == pytest.approx(
        oracles.inv_normal_cdf_bisect(0.95), abs=1e-9
    )
    assert pce.gamma(0.05, "gaussian") == pytest.approx(1.6449, abs=1e-4)
    assert pce.gamma(0.05, "dist_robust") == pytest.approx(math.sqrt(19.0))
    assert pce.gamma(0.5, "gaussian") == 0.0


def test_gamma_invalid():
    for eps in (0.0, -0.1, 0.51, 1.0):
        with pytest.raises(InvalidRisk):
            pce.gamma(eps, "gaussian")
    with pytest.raises(InvalidRisk):
        pce.gamma(0.1, "weird")


@settings(deadline=None, max_examples=60)
@given(
    st.floats(min_value=1e-4, max_value=0.499),
    st.floats(min_value=1e-4, max_value=0.499),
)
def test_gamma_strictly_decreasing(e1, e2):
    if e1 == e2:
        return
    lo, hi = min(e1, e2), max(e1, e2)
    for mode in ("gaussian", "dist_robust"):
        assert pce.gamma(lo, mode) > pce.gamma(hi, mode)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochlod.grid import build_coarse_grid, build_fine_grid
from stochlod.randfield import (EmbeddingError, FieldRealization, HierarchicalParams, MaternParams,
                                child_seed, contrast, draw_kappa, matern_cov, sample_gaussian,
                                sample_hierarchical, sample_hierarchical_gaussian, to_lognormal)

# sqrt(2) K_1(sqrt(2)), 30-digit evaluation
SQRT2_K1_SQRT2 = 0.44434252363223604134


@pytest.fixture(scope="module")
def grid32():
    return build_fine_grid(build_coarse_grid(0.25), 2.0 ** -5)


def test_cov_at_zero():
    assert matern_cov(MaternParams(0.7, 1.0, 0.1), 0.0) == 0.7


def test_cov_reference_value():
    p = MaternParams(1.0, 1.0, 2.0 ** -6)
    assert matern_cov(p, 2.0 ** -6) == pytest.approx(SQRT2_K1_SQRT2, rel=1e-13)


def test_cov_general_nu_matches_nu_one():
    # the quadrature branch agrees with the closed K_1 branch at nu = 1 + tiny
    r = np.array([0.01, 0.05, 0.2])
    a = matern_cov(MaternParams(1.0, 1.0, 0.05), r)
    b = matern_cov(MaternParams(1.0, 1.0 + 1e-9, 0.05), r)
    np.testing.assert_allclose(a, b, rtol=1e-7)


def test_cov_half_is_exponential():
    p = MaternParams(2.0, 0.5, 0.1)
    r = np.array([0.01, 0.1, 0.4])
    np.testing.assert_allclose(matern_cov(p, r), 2.0 * np.exp(-r / 0.1), rtol=1e-11)


def test_cov_monotone_and_bounded():
    p = MaternParams(1.3, 1.0, 2.0 ** -5)
    r = np.geomspace(1e-6, 2.0, 60)
    c = matern_cov(p, r)
    assert np.all(np.diff(c) < 0)
    assert np.all(c < p.sigma2)


def test_params_validation():
    with pytest.raises(ValueError):
        MaternParams(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        HierarchicalParams(1.0, 1.0, 0.2, 0.1)
    with pytest.raises(ValueError):
        matern_cov(MaternParams(1.0, 1.0, 0.1), -1.0)


def test_determinism(grid32):
    p = MaternParams(1.0, 1.0, 2.0 ** -4)
    a = sample_gaussian(p, grid32, 42, 3).values
    b = sample_gaussian(p, grid32, 42, 3).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_gaussian(p, grid32, 43, 3).values)
    assert not np.array_equal(a, sample_gaussian(p, grid32, 42, 2).values)


def test_sigma_linearity(grid32):
    z1 = sample_gaussian(MaternParams(1.0, 1.0, 2.0 ** -4), grid32, 5, 0).values
    z4 = sample_gaussian(MaternParams(4.0, 1.0, 2.0 ** -4), grid32, 5, 0).values
    np.testing.assert_allclose(z4, 2.0 * z1, rtol=1e-12, atol=1e-14)


def test_mean_and_stationarity(grid32):
    p = MaternParams(1.0, 1.0, 2.0 ** -4)
    n = 4000
    z = np.stack([sample_gaussian(p, grid32, 9, i).values for i in range(n)])
    se = np.sqrt(p.sigma2 / n)
    assert abs(z[:, 7, 11].mean()) < 4 * se
    # same separation vector at two locations
    for (a, b) in (((3, 4), (3, 6)), ((20, 10), (20, 12))):
        prod = z[:, a[0], a[1]] * z[:, b[0], b[1]]
        target = matern_cov(p, 2 * grid32.h)
        assert abs(prod.mean() - target) < 4 * prod.std() / np.sqrt(n)


def test_embedding_failure_is_loud(grid32):
    # very long correlation on a small grid cannot be embedded within x4 padding
    with pytest.raises(EmbeddingError, match="negative eigenvalue"):
        sample_gaussian(MaternParams(1.0, 4.0, 50.0), grid32, 0)


def test_lognormal_map(grid32):
    zero = FieldRealization(grid32, np.zeros((32, 32)), "gaussian")
    assert np.all(to_lognormal(zero).values == 1.0)
    z = sample_gaussian(MaternParams(1.0, 1.0, 0.1), grid32, 0)
    a = to_lognormal(z)
    assert np.array_equal(a.values, np.exp(z.values))
    assert contrast(a) == pytest.approx(np.exp(z.values.max() - z.values.min()), rel=1e-12)
    np.testing.assert_allclose(np.log(a.values), z.values, atol=1e-13)
    with pytest.raises(ValueError):
        to_lognormal(a)


def test_contrast_basics(grid32):
    assert contrast(np.ones((4, 4))) == 1.0
    assert contrast(np.array([1.0, 10.0])) == 10.0
    with pytest.raises(ValueError):
        contrast(np.array([0.0, 1.0]))


def test_hierarchical_degenerate_range(grid32):
    hp = HierarchicalParams(0.5, 1.0, 2.0 ** -4, 2.0 ** -4)
    kappa, a = sample_hierarchical(hp, grid32, 3, 1)
    assert kappa == 2.0 ** -4
    ref = to_lognormal(sample_gaussian(hp.with_kappa(kappa), grid32, 3, 2))
    assert np.array_equal(a.values, ref.values)


def test_hierarchical_gaussian_consistent(grid32):
    hp = HierarchicalParams(0.5, 1.0, 2.0 ** -6, 2.0 ** -3)
    k1, z = sample_hierarchical_gaussian(hp, grid32, 8, 4)
    k2, a = sample_hierarchical(hp, grid32, 8, 4)
    assert k1 == k2 and np.array_equal(np.exp(z.values), a.values)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 10**6))
def test_kappa_in_range(seed, index):
    hp = HierarchicalParams(1.0, 1.0, 2.0 ** -6, 2.0 ** -3)
    assert 2.0 ** -6 <= draw_kappa(hp, seed, index) <= 2.0 ** -3


def test_child_seed_nesting():
    a = np.random.default_rng(child_seed(child_seed(7, 1), 2)).random()
    b = np.random.default_rng(child_seed(7, 1, 2)).random()
    assert a == b

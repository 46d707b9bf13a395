import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfdetect.engine import DetectionConfig
from mrfdetect.errors import InvalidInputError, PreconditionError
from mrfdetect.feasibility import (
    asymptotic_feasible,
    bound_from_coefficient,
    count_inside,
    eigen_interval,
    feasibility_lower_bound,
    gaussian_eigen_bound,
    largest_admissible_xi,
)
from mrfdetect.gmrf import bhattacharyya, independence_pair


def block_corr(n_blocks, rho):
    return np.kron(np.eye(n_blocks), [[1.0, rho], [rho, 1.0]])


def random_corr(n, rng, spread=3.0):
    a = rng.normal(size=(n, n)) * spread
    s = a @ a.T + 0.05 * np.eye(n)
    d = 1.0 / np.sqrt(np.diag(s))
    return s * d[:, None] * d[None, :]


def test_identical_models_clamped():
    rep = feasibility_lower_bound(independence_pair(np.eye(3)), DetectionConfig(0.01, 0.01))
    assert rep.bhattacharyya == 1.0
    assert rep.raw_bound == pytest.approx(-9.0, abs=1e-12)
    assert rep.lower_bound == 0.0


def test_bivariate_sigma_06():
    rep = feasibility_lower_bound(independence_pair(block_corr(1, 0.6)), DetectionConfig(0.01, 0.01))
    assert rep.raw_bound == pytest.approx(1 - 0.937614 * 10, abs=1e-5)
    assert rep.lower_bound == 0.0


def test_eigen_bound_n200():
    cov = block_corr(100, 0.7)
    val = gaussian_eigen_bound(cov, 0.2)
    with mpmath.workdps(50):
        ref = mpmath.mpf("1.2") ** (-25)
    assert abs(val - float(ref)) <= 1e-12
    assert val == pytest.approx(0.010483, abs=1e-6)


def test_n200_certificate_is_0895_not_0999():
    cov = block_corr(100, 0.7)
    cfg = DetectionConfig(0.01, 0.01)
    certified, _ = bound_from_coefficient(gaussian_eigen_bound(cov, 0.2), cfg)
    with mpmath.workdps(50):
        ref = 1 - mpmath.mpf("1.2") ** (-25) * 10
    assert abs(certified - float(ref)) <= 1e-12
    assert certified == pytest.approx(0.895, abs=1e-3)
    # The actual coefficient is smaller, so the formula value can only be larger.
    rep = feasibility_lower_bound(independence_pair(cov), cfg)
    assert rep.lower_bound >= certified >= 0.89


def test_small_xi_vacuous():
    cov = block_corr(10, 0.99)
    assert gaussian_eigen_bound(cov, 1e-12) == pytest.approx(1.0, abs=1e-10)


def test_identity_fails_precondition():
    with pytest.raises(PreconditionError, match="200 of 200"):
        gaussian_eigen_bound(np.eye(200), 0.2)


def test_bad_inputs():
    with pytest.raises(InvalidInputError):
        gaussian_eigen_bound(block_corr(2, 0.5), 0.0)
    with pytest.raises(InvalidInputError):
        gaussian_eigen_bound(2 * np.eye(2), 0.1)
    with pytest.raises(InvalidInputError):
        asymptotic_feasible(0.1, float("inf"), 0.1)
    with pytest.raises(InvalidInputError):
        asymptotic_feasible(0.1, 0.1, -1.0)


def test_interval_endpoints_reciprocal():
    lo, hi = eigen_interval(0.2)
    assert lo * hi == pytest.approx(1.0, rel=1e-14)
    assert lo == pytest.approx((math.sqrt(1.2) - math.sqrt(0.2)) ** 2, rel=1e-15)


def test_asymptotic_condition():
    assert asymptotic_feasible(0.0, 0.0, 0.1)
    assert not asymptotic_feasible(0.2, 0.0, 0.1)
    kappa = bhattacharyya(independence_pair(block_corr(1, 0.6))).kappa_n
    assert kappa == pytest.approx(0.0644, abs=1e-4)
    assert asymptotic_feasible(0.128, 0.1, kappa)
    assert not asymptotic_feasible(0.13, 0.1, kappa)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_bound_monotone(b1, b2, a1, a2):
    lo_b, hi_b = sorted((b1, b2))
    lo_a, hi_a = sorted((a1, a2))
    cfg = DetectionConfig(lo_a, lo_a)
    assert bound_from_coefficient(lo_b, cfg)[0] >= bound_from_coefficient(hi_b, cfg)[0]
    assert bound_from_coefficient(lo_b, DetectionConfig(hi_a, hi_a))[0] >= \
        bound_from_coefficient(lo_b, cfg)[0]
    assert 0.0 <= bound_from_coefficient(hi_b, cfg)[0] <= 1.0


def test_eigen_bound_dominates_true_coefficient():
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(100):
        n = int(rng.integers(2, 51))
        cov = random_corr(n, rng)
        xi = largest_admissible_xi(cov)
        if xi <= 0:
            continue
        bound = gaussian_eigen_bound(cov, xi)
        true_b = bhattacharyya(independence_pair(cov)).coefficient
        assert bound >= true_b * (1 - 1e-12)
        checked += 1
    assert checked >= 90


def test_largest_admissible_xi_is_tight(rng):
    cov = random_corr(20, rng)
    xi = largest_admissible_xi(cov)
    lam = np.linalg.eigvalsh(cov)
    assert count_inside(lam, xi) <= 10
    assert count_inside(lam, xi * (1 + 1e-6)) > 10

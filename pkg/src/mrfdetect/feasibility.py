"""Feasibility certificates for the error budgets of a sequential test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import DetectionConfig
from .errors import InvalidInputError, PreconditionError, SingularityError
from .gmrf import HypothesisPair, bhattacharyya


@dataclass(frozen=True)
class FeasibilityReport:
    bhattacharyya: float
    kappa_n: float
    lower_bound: float
    raw_bound: float
    asymptotically_feasible: bool | None = None
    alpha_exp: float | None = None
    beta_exp: float | None = None


def bound_from_coefficient(b: float, config: DetectionConfig, prior0: float = 0.5,
                           prior1: float = 0.5) -> tuple[float, float]:
    """``(clamped, raw)`` value of ``1 - B (eps0/sqrt(beta) + eps1/sqrt(alpha))``."""
    raw = 1.0 - b * (prior0 / math.sqrt(config.beta) + prior1 / math.sqrt(config.alpha))
    return min(1.0, max(0.0, raw)), raw


def feasibility_lower_bound(
    pair: HypothesisPair,
    config: DetectionConfig,
    alpha_exp: float | None = None,
    beta_exp: float | None = None,
) -> FeasibilityReport:
    """Probability lower bound that the LLR leaves the band within ``n`` samples.

    When the error exponents are supplied the asymptotic condition is also
    evaluated, with ``kappa`` taken as ``kappa_n / n``.
    """
    bc = bhattacharyya(pair)
    clamped, raw = bound_from_coefficient(bc.coefficient, config, pair.prior0, pair.prior1)
    feasible = None
    if alpha_exp is not None and beta_exp is not None:
        feasible = asymptotic_feasible(alpha_exp, beta_exp, bc.kappa_n / pair.node_count)
    return FeasibilityReport(bc.coefficient, bc.kappa_n, clamped, raw, feasible, alpha_exp, beta_exp)


def eigen_interval(xi: float) -> tuple[float, float]:
    r1, r0 = math.sqrt(1.0 + xi), math.sqrt(xi)
    return (r1 - r0) ** 2, (r1 + r0) ** 2


def _unit_diagonal_eigenvalues(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInputError("covariance must be square")
    if not np.allclose(np.diag(cov), 1.0, rtol=0.0, atol=1e-12):
        raise InvalidInputError("covariance must have a unit diagonal")
    lam = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if lam.min() <= 0.0:
        raise SingularityError("covariance is not positive definite")
    return lam


def count_inside(lam: np.ndarray, xi: float) -> int:
    lo, hi = eigen_interval(xi)
    return int(np.count_nonzero((lam >= lo) & (lam <= hi)))


def gaussian_eigen_bound(cov, xi: float) -> float:
    """Certified upper bound ``(1 + xi)^(-n/8)`` on the Bhattacharyya coefficient
    of ``N(0, cov)`` against ``N(0, I)``.

    Requires at least half of the eigenvalues of ``cov`` outside the interval
    returned by :func:`eigen_interval`.
    """
    if not (isinstance(xi, (int, float)) and math.isfinite(xi) and xi > 0):
        raise InvalidInputError(f"xi must be a positive finite number, got {xi!r}")
    lam = _unit_diagonal_eigenvalues(cov)
    n = lam.size
    inside = count_inside(lam, xi)
    if 2 * (n - inside) < n:
        raise PreconditionError(
            f"{inside} of {n} eigenvalues fall inside the interval for xi={xi}; "
            "at most half may"
        )
    return (1.0 + xi) ** (-n / 8.0)


def largest_admissible_xi(cov) -> float:
    """Largest ``xi`` for which the half-eigenvalue condition holds (0 if none).

    The interval grows with ``xi``, so the admissible set is ``(0, xi*]`` where
    ``xi*`` sits just below the ``(floor(n/2) + 1)``-th smallest per-eigenvalue
    threshold.
    """
    lam = _unit_diagonal_eigenvalues(cov)
    n = lam.size
    # Eigenvalue l is inside once xi >= (l - 1)^2 / (4 l).
    thresholds = np.sort((lam - 1.0) ** 2 / (4.0 * lam))
    k = n - (n + 1) // 2  # at most this many may fall inside
    xi = float(thresholds[k])
    # The boundary itself counts as inside; step just below it.
    return xi * (1.0 - 1e-9)


def asymptotic_feasible(alpha_exp: float, beta_exp: float, kappa: float) -> bool:
    """``max(alpha, beta) < 2 kappa``."""
    vals = (alpha_exp, beta_exp, kappa)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidInputError("exponents and kappa must be finite")
    if kappa < 0:
        raise InvalidInputError(f"kappa must be non-negative, got {kappa}")
    return max(alpha_exp, beta_exp) < 2.0 * kappa

"""Information measures that drive node selection.

Everything here is the generic, dense computation: conditional Gaussians from
:func:`mrfdetect.gmrf.conditional` and closed-form multivariate KL divergences.
The GMRF closed forms at the bottom are accelerations that are checked
against these generic values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, PreconditionError, SingularityError
from .gmrf import HypothesisPair, _require_unit_independence, conditional, pairwise_llr
from .graph import evolve_observed_graph

MIN_VARIANCE = 1e-12


@dataclass(frozen=True, eq=False)
class MeasureContext:
    """A hypothesis pair together with the observations collected so far."""

    pair: HypothesisPair
    observed: tuple = ()

    def __post_init__(self):
        obs = tuple((int(v), float(y)) for v, y in self.observed)
        nodes = [v for v, _ in obs]
        if len(set(nodes)) != len(nodes):
            raise InvalidInputError("observed nodes must be distinct")
        n = self.pair.node_count
        if any(not 0 <= v < n for v in nodes):
            raise InvalidInputError("observed node out of range")
        object.__setattr__(self, "observed", obs)

    @property
    def observed_nodes(self) -> list[int]:
        return [v for v, _ in self.observed]

    @property
    def remaining(self) -> np.ndarray:
        mask = np.ones(self.pair.node_count, dtype=bool)
        mask[self.observed_nodes] = False
        return np.flatnonzero(mask)

    def extend(self, node: int, value: float) -> "MeasureContext":
        return MeasureContext(self.pair, self.observed + ((int(node), float(value)),))


def _factor(cov: np.ndarray) -> np.ndarray:
    try:
        chol = linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularityError("conditional covariance is not positive definite") from None
    if np.min(np.diag(chol)) ** 2 < MIN_VARIANCE:
        raise SingularityError("conditional variance below 1e-12")
    return chol


def gaussian_kl(mean_p, cov_p, mean_q, cov_q) -> float:
    """``KL(N(mean_p, cov_p) || N(mean_q, cov_q))``."""
    mean_p = np.atleast_1d(np.asarray(mean_p, dtype=float))
    mean_q = np.atleast_1d(np.asarray(mean_q, dtype=float))
    cov_p = np.atleast_2d(np.asarray(cov_p, dtype=float))
    cov_q = np.atleast_2d(np.asarray(cov_q, dtype=float))
    k = mean_p.shape[0]
    lp = _factor(cov_p)
    lq = _factor(cov_q)
    a = linalg.solve_triangular(lq, lp, lower=True, check_finite=False)
    d = linalg.solve_triangular(lq, mean_q - mean_p, lower=True, check_finite=False)
    logdet_ratio = 2.0 * (np.log(np.diag(lq)).sum() - np.log(np.diag(lp)).sum())
    kl = 0.5 * (float(np.sum(a * a)) + float(d @ d) - k + logdet_ratio)
    return max(kl, 0.0)


def univariate_kl(mean_p, var_p, mean_q, var_q):
    """Elementwise ``KL(N(mean_p, var_p) || N(mean_q, var_q))``."""
    return 0.5 * (np.log(var_q / var_p) + (var_p + (mean_p - mean_q) ** 2) / var_q - 1.0)


def _targets(ctx: MeasureContext, targets: Iterable[int]) -> list[int]:
    s = sorted({int(v) for v in targets})
    if not s:
        raise InvalidInputError("target set is empty")
    if set(s) & set(ctx.observed_nodes):
        raise InvalidInputError("target set overlaps the observed nodes")
    n = ctx.pair.node_count
    if s[0] < 0 or s[-1] >= n:
        raise InvalidInputError("target node out of range")
    return s


def conditional_kl(ctx: MeasureContext, ell: int, targets: Iterable[int]) -> float:
    """KL between the two models' conditionals of ``X_targets`` given the observations.

    ``ell`` is the model in the first argument of the divergence.
    """
    s = _targets(ctx, targets)
    p = conditional(ctx.pair.model(ell), s, ctx.observed)
    q = conditional(ctx.pair.model(1 - ell), s, ctx.observed)
    return gaussian_kl(p.mean, p.cov, q.mean, q.cov)


def expected_conditional_kl(
    ctx: MeasureContext, ell: int, given: Iterable[int], targets: Iterable[int]
) -> float:
    """``E[KL(f_ell(X_T | X_G, F) || f_other(X_T | X_G, F))]`` with ``X_G ~ f_ell(. | F)``.

    This is the second term of the KL chain rule; with ``given`` empty it
    reduces to :func:`conditional_kl`.
    """
    g = sorted({int(v) for v in given})
    t = _targets(ctx, targets)
    if set(g) & set(t):
        raise InvalidInputError("given and target sets overlap")
    if not g:
        return conditional_kl(ctx, ell, t)
    nodes = g + t
    k = len(g)
    parts = []
    for m in (ell, 1 - ell):
        c = conditional(ctx.pair.model(m), nodes, ctx.observed)
        s_gg, s_tg = c.cov[:k, :k], c.cov[k:, :k]
        gain = linalg.solve(s_gg, s_tg.T, assume_a="pos").T
        w = c.cov[k:, k:] - gain @ s_tg.T
        offset = c.mean[k:] - gain @ c.mean[:k]
        parts.append((gain, offset, w, c.mean[:k], s_gg))
    (b_p, a_p, w_p, mu_g, s_gg), (b_q, a_q, w_q, _, _) = parts
    db = b_p - b_q
    d = (a_p - a_q) + db @ mu_g
    # E[(d + db (X - mu))(...)^T] = d d^T + db S_gg db^T
    second = np.outer(d, d) + db @ s_gg @ db.T
    lq = _factor(0.5 * (w_q + w_q.T))
    lp = _factor(0.5 * (w_p + w_p.T))
    a = linalg.solve_triangular(lq, lp, lower=True, check_finite=False)
    winv_second = linalg.cho_solve((lq, True), second, check_finite=False)
    logdet_ratio = 2.0 * (np.log(np.diag(lq)).sum() - np.log(np.diag(lp)).sum())
    val = 0.5 * (float(np.sum(a * a)) + float(np.trace(winv_second)) - len(t) + logdet_ratio)
    return max(val, 0.0)


def chernoff_measure(ctx: MeasureContext, ell: int, node: int) -> float:
    if int(node) in ctx.observed_nodes:
        raise InvalidInputError(f"node {node} is already observed")
    return conditional_kl(ctx, ell, [node])


def m_measure(ctx: MeasureContext, ell: int, node: int, subset: Iterable[int]) -> float:
    """Joint information of the measurements from ``subset`` (which must contain ``node``)."""
    s = _targets(ctx, subset)
    if int(node) not in s:
        raise InvalidInputError(f"node {node} is not in the subset")
    return conditional_kl(ctx, ell, s)


def m_measure_chain(ctx: MeasureContext, ell: int, node: int, subset: Iterable[int]) -> float:
    """The same quantity as :func:`m_measure` via the chain rule split at ``node``."""
    s = _targets(ctx, subset)
    if int(node) not in s:
        raise InvalidInputError(f"node {node} is not in the subset")
    rest = [v for v in s if v != node]
    head = conditional_kl(ctx, ell, [node])
    return head + (expected_conditional_kl(ctx, ell, [node], rest) if rest else 0.0)


def m_measure_neighbor_sum(ctx: MeasureContext, ell: int, node: int, subset: Iterable[int]) -> float:
    """Per-neighbor chain-rule sum, exact when ``subset`` lies in the node's neighborhood
    of an acyclic union graph (the extra nodes are then independent given ``node``)."""
    s = _targets(ctx, subset)
    if int(node) not in s:
        raise InvalidInputError(f"node {node} is not in the subset")
    total = conditional_kl(ctx, ell, [node])
    for j in s:
        if j != node:
            total += expected_conditional_kl(ctx, ell, [node], [j])
    return total


# ----------------------------------------------------------------------------
# GMRF closed forms (unit-variance test against independence)
# ----------------------------------------------------------------------------

def future_term_closed_form(sigma: float, ell: int) -> float:
    """Expected information from one future neighbor across an edge of correlation ``sigma``."""
    s2 = sigma * sigma
    if ell == 0:
        return 0.5 * (math.log(1.0 - s2) + 2.0 * s2 / (1.0 - s2))
    return 0.5 * math.log(1.0 / (1.0 - s2))


def single_neighbor_measures(sigma: float, y: float) -> tuple[float, float]:
    """Exact ``(D_0, D_1)`` for a node whose only informative neighbor was observed at ``y``.

    ``D_1`` carries ``sigma^2 (y^2 - 1)`` on the quadratic term; the printed
    variant with an extra ``1 / (1 - sigma^2)`` factor does not match the
    univariate KL and is not used.
    """
    s2 = sigma * sigma
    d0 = 0.5 * (math.log(1.0 - s2) + s2 * (y * y + 1.0) / (1.0 - s2))
    d1 = 0.5 * (math.log(1.0 / (1.0 - s2)) + s2 * (y * y - 1.0))
    return d0, d1


class ClosedFormMeasures(NamedTuple):
    J0: float
    J1: float
    closed_form: bool


def _printed_star_measures(sigmas, ys, cov, nbrs) -> tuple[float, float]:
    s2 = sigmas**2
    pairs = [(a, b) for a in range(len(nbrs)) for b in range(a + 1, len(nbrs))]
    llr_sum = sum(pairwise_llr(ys[a], ys[b], cov[nbrs[a], nbrs[b]]) for a, b in pairs)
    s_jk2 = np.array([cov[nbrs[a], nbrs[b]] ** 2 for a, b in pairs])
    j0 = (0.5 * np.log(1 - s2).sum() + 0.5 * (s2 / (1 - s2) * (ys**2 + 1)).sum() + llr_sum)
    ratio = np.prod(1 - s2) / np.prod(1 - s_jk2)
    j1 = (0.5 * np.log(1 / (1 - s2)).sum() - 0.5 * np.log(1 / (1 - s_jk2)).sum()
          + 0.5 * ((s2 / (1 - s2) * (ys**2 - 1)).sum() + llr_sum) * ratio)
    return float(j0), float(j1)


def gmrf_closed_form_measures(ctx: MeasureContext, node: int, printed: bool = False) -> ClosedFormMeasures:
    """Single-node measures ``(J_0, J_1)`` from correlation coefficients only.

    Exact closed forms cover a node with no or one neighbor in the evolved
    observed graph, and a star of several neighbors via the Gaussian posterior
    of ``X_node``. ``printed=True`` evaluates the published multi-neighbor
    expressions instead (kept for comparison; they are not exact). Whenever
    the preconditions fail the generic conditional KL is returned with
    ``closed_form=False``.
    """
    pair = ctx.pair
    node = int(node)
    if node in ctx.observed_nodes:
        raise InvalidInputError(f"node {node} is already observed")

    def fallback() -> ClosedFormMeasures:
        return ClosedFormMeasures(conditional_kl(ctx, 0, [node]), conditional_kl(ctx, 1, [node]), False)

    try:
        _require_unit_independence(pair)
    except PreconditionError:
        return fallback()
    if not pair.union_graph.is_acyclic():
        return fallback()
    g_t = evolve_observed_graph(pair.union_graph, ctx.observed_nodes + [node])
    if not g_t.is_acyclic():
        return fallback()
    values = {v: y - pair.f0.mean[v] for v, y in ctx.observed}
    nbrs = sorted(g_t.adjacency(node))
    cov = pair.f1.covariance
    if not nbrs:
        return ClosedFormMeasures(0.0, 0.0, True)
    sig = np.array([cov[node, j] for j in nbrs])
    ys = np.array([values[j] for j in nbrs])
    if len(nbrs) == 1:
        d0, d1 = single_neighbor_measures(float(sig[0]), float(ys[0]))
        return ClosedFormMeasures(d0, d1, True)
    if printed:
        j0, j1 = _printed_star_measures(sig, ys, cov, nbrs)
        return ClosedFormMeasures(j0, j1, True)
    # Neighbors are independent given X_node: posterior precision adds up.
    prec = 1.0 + float(np.sum(sig**2 / (1.0 - sig**2)))
    mean = float(np.sum(sig * ys / (1.0 - sig**2))) / prec
    var = 1.0 / prec
    j0 = float(univariate_kl(0.0, 1.0, mean, var))
    j1 = float(univariate_kl(mean, var, 0.0, 1.0))
    return ClosedFormMeasures(j0, j1, True)

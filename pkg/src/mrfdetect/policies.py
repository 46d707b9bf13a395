"""Node-selection rules.

Every rule scores the remaining nodes under the model favoured by the current
log-likelihood ratio and picks a maximizer, breaking near-ties uniformly with
the caller's generator. Scores come from a :class:`ConditionalTracker`, which
the engine maintains incrementally; a context built from a bare
:class:`MeasureContext` replays its observations into a fresh tracker.
"""

from __future__ import annotations

from enum import IntEnum
from itertools import combinations
from typing import Callable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, InvalidStateError, PreconditionError
from .gmrf import HypothesisPair
from .measures import MeasureContext
from .tracker import ConditionalTracker

TIE_RTOL = 1e-12


class Hypothesis(IntEnum):
    H0 = 0
    H1 = 1


def ml_decision(llr: float) -> Hypothesis:
    """Maximum-likelihood decision; a zero ratio favours ``H1``."""
    return Hypothesis.H1 if llr >= 0 else Hypothesis.H0


class SelectionContext:
    """What a selection rule may look at: observations, remaining nodes, current LLR."""

    def __init__(
        self,
        measure_ctx: MeasureContext | None = None,
        remaining=None,
        current_llr: float = 0.0,
        max_subset_size: int | None = 4,
        tracker: ConditionalTracker | None = None,
    ):
        if measure_ctx is None and tracker is None:
            raise InvalidStateError("a selection context needs a measure context or a tracker")
        self._measure_ctx = measure_ctx
        self._tracker = tracker
        if remaining is None:
            if tracker is not None:
                remaining = np.flatnonzero(~tracker.observed)
            else:
                remaining = measure_ctx.remaining
        self.remaining = np.asarray(remaining, dtype=np.int64).reshape(-1)
        self.current_llr = float(current_llr)
        self.max_subset_size = max_subset_size
        if measure_ctx is not None:
            obs = set(measure_ctx.observed_nodes)
            if obs & set(self.remaining.tolist()):
                raise InvalidStateError("remaining and observed nodes overlap")

    @property
    def pair(self) -> HypothesisPair:
        return self._tracker.pair if self._tracker is not None else self._measure_ctx.pair

    @property
    def tracker(self) -> ConditionalTracker:
        if self._tracker is None:
            t = ConditionalTracker(self._measure_ctx.pair)
            for v, y in self._measure_ctx.observed:
                t.condition(v, y)
            self._tracker = t
        return self._tracker

    @property
    def measure_ctx(self) -> MeasureContext:
        if self._measure_ctx is None:
            raise InvalidStateError("context was built without the observation record")
        return self._measure_ctx

    @property
    def hypothesis(self) -> Hypothesis:
        return ml_decision(self.current_llr)


def argmax_with_ties(scores: np.ndarray, candidates: np.ndarray, rng: np.random.Generator) -> int:
    """Maximizer of ``scores`` over ``candidates``; near-ties drawn uniformly.

    The generator is consumed only when more than one candidate ties.
    """
    vals = scores[candidates]
    best = vals.max()
    tol = TIE_RTOL * max(1.0, abs(best))
    ties = candidates[vals >= best - tol]
    if ties.size == 1:
        return int(ties[0])
    return int(ties[rng.integers(ties.size)])


def _require_remaining(ctx: SelectionContext) -> None:
    if ctx.remaining.size == 0:
        raise InvalidStateError("no remaining nodes to select from")


def chernoff_scores(ctx: SelectionContext) -> np.ndarray:
    return ctx.tracker.single_node_kl(int(ctx.hypothesis))


def _components_of_remaining(ctx: SelectionContext) -> list[np.ndarray]:
    t = ctx.tracker
    n = t.node_count
    free = ~t.observed
    e = t.edges
    if e.size:
        keep = free[e[:, 0]] & free[e[:, 1]]
        e = e[keep]
    adj = csr_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    rem = np.sort(ctx.remaining)
    lab = labels[rem]
    order = np.argsort(lab, kind="stable")
    splits = np.flatnonzero(np.diff(lab[order])) + 1
    return [np.sort(c) for c in np.split(rem[order], splits)]


def exhaustive_scores(ctx: SelectionContext) -> np.ndarray:
    """Best normalized joint information over subsets containing each node.

    Subsets are enumerated once each in lexicographic order. Nodes in
    different components of the unobserved union graph are conditionally
    independent under both models, so a subset spanning components averages
    values already attained inside a single component; enumeration therefore
    stays within components without changing any maximum or tie set.
    """
    cap = ctx.max_subset_size
    if cap is not None and int(cap) < 1:
        raise ConfigError(f"max_subset_size must be at least 1, got {cap}")
    t = ctx.tracker
    ell = int(ctx.hypothesis)
    best = np.full(t.node_count, -np.inf)
    single = t.single_node_kl(ell)
    best[ctx.remaining] = single[ctx.remaining]
    for comp in _components_of_remaining(ctx):
        kmax = comp.size if cap is None else min(int(cap), comp.size)
        for k in range(2, kmax + 1):
            for subset in combinations(comp.tolist(), k):
                val = t.subset_kl(ell, subset) / k
                for v in subset:
                    if val > best[v]:
                        best[v] = val
    return best


def neighborhood_scores(ctx: SelectionContext) -> np.ndarray:
    """Best normalized information over ``{i}`` plus unobserved neighbours of ``i``."""
    t = ctx.tracker
    if not _union_acyclic(ctx.pair):
        raise PreconditionError("neighbourhood search requires an acyclic union graph")
    return t.neighborhood_scores(int(ctx.hypothesis))


_ACYCLIC_CACHE: dict[int, tuple[HypothesisPair, bool]] = {}


def _union_acyclic(pair: HypothesisPair) -> bool:
    hit = _ACYCLIC_CACHE.get(id(pair))
    if hit is not None and hit[0] is pair:
        return hit[1]
    flag = pair.union_graph.is_acyclic()
    if len(_ACYCLIC_CACHE) > 64:
        _ACYCLIC_CACHE.clear()
    _ACYCLIC_CACHE[id(pair)] = (pair, flag)
    return flag


def neighborhood_candidates(ctx: SelectionContext, node: int) -> list[tuple]:
    """Subsets searched for ``node``: ``{node}`` plus any set of its unobserved neighbours,
    in lexicographic order."""
    t = ctx.tracker
    nbrs = [j for j in ctx.pair.union_graph.adjacency(int(node)) if not t.observed[j]]
    out = []
    for k in range(len(nbrs) + 1):
        out.extend(tuple(sorted((int(node), *c))) for c in combinations(nbrs, k))
    return out


def chernoff_select(ctx: SelectionContext, rng: np.random.Generator) -> int:
    _require_remaining(ctx)
    return argmax_with_ties(chernoff_scores(ctx), ctx.remaining, rng)


def correlation_select_exhaustive(ctx: SelectionContext, rng: np.random.Generator) -> int:
    _require_remaining(ctx)
    return argmax_with_ties(exhaustive_scores(ctx), ctx.remaining, rng)


def correlation_select_neighborhood(ctx: SelectionContext, rng: np.random.Generator) -> int:
    _require_remaining(ctx)
    return argmax_with_ties(neighborhood_scores(ctx), ctx.remaining, rng)


def random_select(ctx: SelectionContext, rng: np.random.Generator) -> int:
    _require_remaining(ctx)
    return int(ctx.remaining[rng.integers(ctx.remaining.size)])


class Policy:
    """A named selection rule with an optional precondition on the pair."""

    def __init__(self, name: str, select: Callable, needs_acyclic: bool = False):
        self.name = name
        self._select = select
        self.needs_acyclic = needs_acyclic

    def check(self, pair: HypothesisPair) -> None:
        if self.needs_acyclic and not _union_acyclic(pair):
            raise ConfigError(
                f"policy '{self.name}' requires an acyclic union dependency graph; "
                "use 'correlation-exhaustive'"
            )

    def select(self, ctx: SelectionContext, rng: np.random.Generator) -> int:
        return self._select(ctx, rng)

    __call__ = select

    def __repr__(self):
        return f"Policy({self.name!r})"


POLICIES = {
    "chernoff": Policy("chernoff", chernoff_select),
    "correlation": Policy("correlation", correlation_select_neighborhood, needs_acyclic=True),
    "correlation-exhaustive": Policy("correlation-exhaustive", correlation_select_exhaustive),
    "random": Policy("random", random_select),
}


def get_policy(name) -> Policy:
    if isinstance(name, Policy):
        return name
    try:
        return POLICIES[name]
    except KeyError:
        raise ConfigError(
            f"unknown policy '{name}'; choose from {', '.join(sorted(POLICIES))}"
        ) from None

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfdetect.errors import ConfigError, InvalidStateError, PreconditionError
from mrfdetect.gmrf import GaussianModel, HypothesisPair, independence_pair, tree_covariance_completion
from mrfdetect.graph import Graph
from mrfdetect.measures import MeasureContext, m_measure
from mrfdetect.policies import (
    POLICIES,
    Hypothesis,
    SelectionContext,
    chernoff_scores,
    chernoff_select,
    correlation_select_exhaustive,
    correlation_select_neighborhood,
    exhaustive_scores,
    get_policy,
    ml_decision,
    neighborhood_candidates,
    neighborhood_scores,
    random_select,
)

from conftest import random_spd, random_tree, tree_pair


def path_pair(*corr):
    n = len(corr) + 1
    tree = Graph.path(n)
    return independence_pair(tree_covariance_completion(
        {(k, k + 1): c for k, c in enumerate(corr)}, tree))


def ctx_of(pair, obs=(), llr=0.0, cap=4):
    return SelectionContext(MeasureContext(pair, tuple(obs)), current_llr=llr, max_subset_size=cap)


@pytest.mark.parametrize("llr,expected", [(0.0, Hypothesis.H1), (-0.1, Hypothesis.H0),
                                          (5.0, Hypothesis.H1)])
def test_ml_decision(llr, expected):
    assert ml_decision(llr) is expected


class TestChernoff:
    def test_single_remaining(self, rng):
        pair = path_pair(0.5)
        assert chernoff_select(ctx_of(pair, [(0, 0.2)]), rng) == 1

    def test_prefers_strong_edge(self, rng):
        pair = path_pair(0.5, 0.1)
        for y in (-1.3, 0.4, 2.0):
            for llr in (-1.0, 1.0):
                assert chernoff_select(ctx_of(pair, [(1, y)], llr), rng) == 0

    def test_uniform_ties_reproducible(self):
        pair = independence_pair(np.eye(6))
        ctx = ctx_of(pair)
        picks = [chernoff_select(ctx, np.random.default_rng(s)) for s in range(200)]
        assert picks == [chernoff_select(ctx, np.random.default_rng(s)) for s in range(200)]
        assert set(picks) == set(range(6))

    def test_empty_remaining(self, rng):
        pair = path_pair(0.5)
        ctx = ctx_of(pair, [(0, 0.1), (1, 0.2)])
        for f in (chernoff_select, correlation_select_exhaustive, correlation_select_neighborhood,
                  random_select):
            with pytest.raises(InvalidStateError):
                f(ctx, rng)


class TestExhaustive:
    def test_two_disjoint_edges(self, rng):
        cov = np.eye(4)
        cov[0, 1] = cov[1, 0] = 0.5
        cov[2, 3] = cov[3, 2] = 0.1
        pair = independence_pair(cov)
        for seed in range(20):
            assert correlation_select_exhaustive(ctx_of(pair), np.random.default_rng(seed)) in (0, 1)

    def test_scores_are_best_normalized_measure(self, rng):
        pair, _ = tree_pair(random_tree(5, rng), rng)
        ctx = ctx_of(pair, [(2, 0.7)], llr=-0.4, cap=None)
        got = exhaustive_scores(ctx)
        from itertools import combinations
        free = [0, 1, 3, 4]
        for i in free:
            ref = max(m_measure(ctx.measure_ctx, 0, i, s) / len(s)
                      for k in range(1, 5) for s in combinations(free, k) if i in s)
            assert got[i] == pytest.approx(ref, abs=1e-12)

    def test_cap_one_equals_chernoff(self):
        rng = np.random.default_rng(7)
        for trial in range(1000):
            n = int(rng.integers(2, 7))
            if trial % 2:
                pair = HypothesisPair(GaussianModel(rng.normal(size=n), random_spd(n, rng)),
                                      GaussianModel(rng.normal(size=n), random_spd(n, rng)))
            else:
                pair, _ = tree_pair(random_tree(n, rng), rng)
            x = pair.f0.sample(rng)
            k = int(rng.integers(0, n))
            obs = [(int(v), float(x[v])) for v in rng.permutation(n)[:k]]
            ctx = ctx_of(pair, obs, float(rng.normal()), cap=1)
            seed = int(rng.integers(2**31))
            assert correlation_select_exhaustive(ctx, np.random.default_rng(seed)) == \
                chernoff_select(ctx, np.random.default_rng(seed))

    def test_invalid_cap(self, rng):
        with pytest.raises(ConfigError):
            correlation_select_exhaustive(ctx_of(path_pair(0.5), cap=0), rng)


class TestNeighborhood:
    def test_leaf_without_unobserved_neighbors(self):
        ctx = ctx_of(path_pair(0.5, 0.1), [(1, 0.0)])
        assert neighborhood_candidates(ctx, 0) == [(0,)]

    def test_star_candidate_counts(self):
        k = 4
        tree = Graph.from_edges(k + 1, [(0, j) for j in range(1, k + 1)])
        pair = independence_pair(tree_covariance_completion({e: 0.3 for e in tree.edges}, tree))
        ctx = ctx_of(pair)
        assert len(neighborhood_candidates(ctx, 0)) == 2**k
        assert all(len(neighborhood_candidates(ctx, j)) == 2 for j in range(1, k + 1))

    def test_path3_agrees_with_exhaustive(self):
        pair = path_pair(0.5, 0.1)
        ctx = ctx_of(pair, cap=None)
        r = ctx.remaining
        assert neighborhood_scores(ctx)[r].max() == pytest.approx(exhaustive_scores(ctx)[r].max(),
                                                                  abs=1e-12)
        for seed in range(20):
            assert correlation_select_neighborhood(ctx, np.random.default_rng(seed)) == \
                correlation_select_exhaustive(ctx, np.random.default_rng(seed))

    def test_stars_agree_with_exhaustive(self, rng):
        for _ in range(20):
            k = int(rng.integers(1, 6))
            tree = Graph.from_edges(k + 1, [(0, j) for j in range(1, k + 1)])
            pair, _ = tree_pair(tree, rng)
            ctx = ctx_of(pair, llr=float(rng.normal()), cap=None)
            assert neighborhood_scores(ctx).max() == pytest.approx(exhaustive_scores(ctx).max(),
                                                                   abs=1e-12)

    def test_path4_counterexample(self):
        # With equal correlations the whole path averages more than any
        # neighbourhood subset, so the restricted search misses the maximum.
        pair = path_pair(0.5, 0.5, 0.5)
        ctx = ctx_of(pair, cap=None)
        e = 0.5 * np.log(1 / 0.75)
        assert exhaustive_scores(ctx).max() == pytest.approx(3 * e / 4, abs=1e-12)
        assert neighborhood_scores(ctx).max() == pytest.approx(2 * e / 3, abs=1e-12)

    def test_cyclic_union_rejected(self, rng):
        cov = np.full((3, 3), 0.3) + 0.7 * np.eye(3)
        ctx = ctx_of(independence_pair(cov))
        with pytest.raises(PreconditionError):
            correlation_select_neighborhood(ctx, rng)
        with pytest.raises(ConfigError):
            get_policy("correlation").check(ctx.pair)


class TestRandom:
    def test_frequencies(self):
        ctx = ctx_of(independence_pair(np.eye(10)))
        rng = np.random.default_rng(3)
        draws = np.array([random_select(ctx, rng) for _ in range(100_000)])
        freq = np.bincount(draws, minlength=10) / draws.size
        assert np.all(np.abs(freq - 0.1) <= 0.01)

    def test_reproducible(self):
        ctx = ctx_of(independence_pair(np.eye(10)))
        a = [random_select(ctx, np.random.default_rng(s)) for s in range(50)]
        assert a == [random_select(ctx, np.random.default_rng(s)) for s in range(50)]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.sampled_from(sorted(POLICIES)))
def test_selection_is_remaining_and_shift_invariant(n, seed, name):
    rng = np.random.default_rng(seed)
    pair, corr = tree_pair(random_tree(n, rng), rng)
    x = pair.f1.sample(rng)
    k = int(rng.integers(0, n))
    obs = [(int(v), float(x[v])) for v in rng.permutation(n)[:k]]
    llr = float(rng.normal())
    ctx = ctx_of(pair, obs, llr)
    pol = get_policy(name)
    node = pol.select(ctx, np.random.default_rng(seed))
    assert node in set(ctx.remaining.tolist())
    # Shifting both means and the data by the same vector leaves every measure unchanged.
    shift = rng.normal(size=n) * 3
    shifted = HypothesisPair(GaussianModel(shift, pair.f0.covariance),
                             GaussianModel(shift, pair.f1.covariance))
    ctx2 = ctx_of(shifted, [(v, y + shift[v]) for v, y in obs], llr)
    assert pol.select(ctx2, np.random.default_rng(seed)) == node


def test_unknown_policy():
    with pytest.raises(ConfigError, match="unknown policy"):
        get_policy("greedy")


def test_chernoff_scores_observed_masked():
    ctx = ctx_of(path_pair(0.5, 0.1), [(1, 0.3)])
    assert np.isneginf(chernoff_scores(ctx)[1])

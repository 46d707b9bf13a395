"""Scenario generators, Monte Carlo aggregation and baseline estimators."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .engine import DetectionConfig, SamplingState, run_trial
from .errors import ConfigError, DetectionError, InvalidCorrelationError, InvalidInputError
from .gmrf import GaussianModel, HypothesisPair, independence_pair, tree_covariance_completion
from .graph import Graph
from .policies import Hypothesis, get_policy


@dataclass(frozen=True, eq=False)
class Scenario:
    pair: HypothesisPair
    name: str
    metadata: dict = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return self.pair.node_count


def _check_corr(name: str, value: float, allow_zero: bool = True) -> float:
    value = float(value)
    if not -1.0 < value < 1.0 or (not allow_zero and value == 0.0):
        raise InvalidCorrelationError(f"{name} must lie in (-1, 1), got {value}")
    return value


def _line_edges(nodes: Sequence[int]) -> list[tuple[int, int]]:
    return [(int(nodes[k]), int(nodes[k + 1])) for k in range(len(nodes) - 1)]


def _tree_pair(n: int, edge_corr: dict) -> HypothesisPair:
    tree = Graph.from_edges(n, edge_corr.keys())
    return independence_pair(tree_covariance_completion(edge_corr, tree))


def gen_nearest_neighbor(n: int, M: float, a: float, rng: np.random.Generator,
                         max_attempts: int = 100) -> Scenario:
    """Nodes uniform in the unit square, each linked to its nearest neighbour.

    Edge correlation is ``M exp(-a R)`` for distance ``R``. The nearest
    neighbour graph is a forest unless distances tie; such draws are redrawn.
    """
    if not 0.0 <= M < 1.0:
        raise InvalidCorrelationError(f"M must lie in [0, 1), got {M}")
    if a < 0:
        raise InvalidInputError(f"a must be non-negative, got {a}")
    if n < 2:
        raise InvalidInputError("nearest-neighbour scenarios need at least 2 nodes")
    for _ in range(max_attempts):
        pts = rng.random((n, 2))
        dist, idx = cKDTree(pts).query(pts, k=2)
        edges = {}
        for i in range(n):
            j = int(idx[i, 1])
            edges[(min(i, j), max(i, j))] = float(M * math.exp(-a * dist[i, 1]))
        tree = Graph.from_edges(n, edges.keys())
        if tree.is_acyclic():
            break
    else:
        raise DetectionError("could not draw an acyclic nearest-neighbour graph")
    if M == 0.0:
        pair = independence_pair(np.eye(n))
    else:
        pair = independence_pair(tree_covariance_completion(edges, tree))
    return Scenario(pair, "nearest-neighbor", {"n": n, "M": M, "a": a, "points": pts,
                                                "edges": sorted(edges)})


def gen_replicated_subgraph(copies: int, strong_corr: float = 0.5, weak_corr: float = 0.1) -> Scenario:
    """``copies`` disjoint 3-node paths with edge correlations ``strong`` then ``weak``."""
    if copies < 1:
        raise ConfigError(f"copies must be at least 1, got {copies}")
    s = _check_corr("strong_corr", strong_corr)
    w = _check_corr("weak_corr", weak_corr)
    n = 3 * copies
    block = np.array([[1.0, s, s * w], [s, 1.0, w], [s * w, w, 1.0]])
    cov = np.kron(np.eye(copies), block)
    return Scenario(independence_pair(cov), "replicated",
                    {"copies": copies, "strong_corr": s, "weak_corr": w})


def gen_homogeneous_tree(n: int, sigma: float, rng: np.random.Generator) -> Scenario:
    """Random recursive tree (node ``k`` attaches to a uniform earlier node), all edges ``sigma``."""
    sigma = _check_corr("sigma", sigma)
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    parents = [int(rng.integers(k)) for k in range(1, n)]
    edges = {(p, k): sigma for k, p in enumerate(parents, start=1)}
    return Scenario(_tree_pair(n, edges), "tree", {"n": n, "sigma": sigma})


def gen_cluster(n: int, p: int, sigma_A: float, rng: np.random.Generator) -> Scenario:
    """A correlated ``p``-node line ``A`` hidden among ``n - p`` independent nodes."""
    if not 1 <= p <= n:
        raise ConfigError(f"cluster size p must satisfy 1 <= p <= n, got p={p}, n={n}")
    sigma_A = _check_corr("sigma_A", sigma_A)
    a_nodes = rng.permutation(n)[:p]
    edges = {e: sigma_A for e in _line_edges(a_nodes)}
    return Scenario(_tree_pair(n, edges), "cluster",
                    {"n": n, "p": p, "sigma_A": sigma_A, "cluster": np.sort(a_nodes)})


def gen_two_cluster(n: int, p: int, a_corr: float, b_corr: float, rng: np.random.Generator) -> Scenario:
    """Two disjoint lines: ``A`` with ``p`` nodes and ``B`` with the remaining ``n - p``."""
    if not 1 <= p < n:
        raise ConfigError(f"cluster size p must satisfy 1 <= p < n, got p={p}, n={n}")
    a_corr = _check_corr("a_corr", a_corr, allow_zero=False)
    b_corr = _check_corr("b_corr", b_corr, allow_zero=False)
    perm = rng.permutation(n)
    a_nodes, b_nodes = perm[:p], perm[p:]
    edges = {e: a_corr for e in _line_edges(a_nodes)}
    edges.update({e: b_corr for e in _line_edges(b_nodes)})
    return Scenario(_tree_pair(n, edges), "two-cluster",
                    {"n": n, "p": p, "a_corr": a_corr, "b_corr": b_corr,
                     "cluster": np.sort(a_nodes)})


SCENARIO_GENERATORS = {
    "nearest-neighbor": gen_nearest_neighbor,
    "replicated": gen_replicated_subgraph,
    "tree": gen_homogeneous_tree,
    "cluster": gen_cluster,
    "two-cluster": gen_two_cluster,
}


# ----------------------------------------------------------------------------
# Monte Carlo
# ----------------------------------------------------------------------------

def _binomial_se(p: float, trials: int) -> float:
    return math.sqrt(p * (1.0 - p) / trials)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(np.mean(x)), se


@dataclass(frozen=True)
class RunStats:
    label: str
    trials: int
    n: int
    alpha: float
    beta: float
    seed: int
    avg_delay_h0: float
    se0: float
    avg_delay_h1: float
    se1: float
    avg_delay_weighted: float
    se_weighted: float
    p_fa: float
    se_fa: float
    p_md: float
    se_md: float
    p_fa_exit: float | None
    p_md_exit: float | None
    forced_stop_rate: float
    band_exit_rate: float
    max_llr_error: float | None
    delays_h0: np.ndarray = field(repr=False, compare=False)
    delays_h1: np.ndarray = field(repr=False, compare=False)
    false_alarms: int = 0
    missed_detections: int = 0


def _trial_job(args):
    pair, truth, policy, config, seed, check_llr, max_subset_size = args
    rng = np.random.default_rng([seed, truth])
    try:
        return run_trial(pair, truth, policy, config, rng, check_llr=check_llr,
                         max_subset_size=max_subset_size, seed=seed)
    except DetectionError as exc:
        raise type(exc)(f"trial seed={seed} truth=H{truth}: {exc}") from exc


def run_trials(scenario: Scenario, policy, config: DetectionConfig, trials: int, base_seed: int,
               truth: int, check_llr: bool = False, max_subset_size: int | None = 4,
               workers: int | None = None) -> list:
    """Trials ``base_seed + k`` for ``k < trials`` under one true hypothesis."""
    if trials < 1:
        raise ConfigError(f"trials must be at least 1, got {trials}")
    pol = get_policy(policy)
    jobs = [(scenario.pair, int(truth), pol, config, base_seed + k, check_llr, max_subset_size)
            for k in range(trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_trial_job, jobs, chunksize=max(1, trials // (4 * workers))))
    return [_trial_job(j) for j in jobs]


def aggregate(label: str, results0: list, results1: list, scenario: Scenario,
              config: DetectionConfig, base_seed: int) -> RunStats:
    trials = len(results0)
    d0 = np.array([r.stopping_time for r in results0], dtype=float)
    d1 = np.array([r.stopping_time for r in results1], dtype=float)
    m0, s0 = _mean_se(d0)
    m1, s1 = _mean_se(d1)
    e0, e1 = scenario.pair.prior0, scenario.pair.prior1
    fa = sum(r.decision == Hypothesis.H1 for r in results0)
    md = sum(r.decision == Hypothesis.H0 for r in results1)
    exits0 = [r for r in results0 if not r.forced_stop]
    exits1 = [r for r in results1 if not r.forced_stop]
    fa_exit = sum(r.decision == Hypothesis.H1 for r in exits0) / len(exits0) if exits0 else None
    md_exit = sum(r.decision == Hypothesis.H0 for r in exits1) / len(exits1) if exits1 else None
    forced = sum(r.forced_stop for r in results0) + sum(r.forced_stop for r in results1)
    everything = results0 + results1
    errs = [r.llr_error for r in everything if r.llr_error is not None]
    p_fa, p_md = fa / trials, md / trials
    return RunStats(
        label=label, trials=trials, n=scenario.node_count, alpha=config.alpha, beta=config.beta,
        seed=base_seed,
        avg_delay_h0=m0, se0=s0, avg_delay_h1=m1, se1=s1,
        avg_delay_weighted=e0 * m0 + e1 * m1, se_weighted=math.hypot(e0 * s0, e1 * s1),
        p_fa=p_fa, se_fa=_binomial_se(p_fa, trials), p_md=p_md, se_md=_binomial_se(p_md, trials),
        p_fa_exit=fa_exit, p_md_exit=md_exit,
        forced_stop_rate=forced / (2 * trials),
        band_exit_rate=1.0 - forced / (2 * trials),
        max_llr_error=max(errs) if errs else None,
        delays_h0=d0, delays_h1=d1, false_alarms=fa, missed_detections=md,
    )


def monte_carlo(scenario: Scenario, policy, config: DetectionConfig, trials: int, base_seed: int,
                check_llr: bool = False, max_subset_size: int | None = 4,
                workers: int | None = None) -> RunStats:
    """``trials`` seeded trials under each hypothesis, aggregated.

    Trial ``k`` under ``H_l`` uses ``default_rng([base_seed + k, l])``, so the
    same seed reveals the same realization to every policy.
    """
    pol = get_policy(policy)
    pol.check(scenario.pair)
    r0 = run_trials(scenario, pol, config, trials, base_seed, 0, check_llr, max_subset_size, workers)
    r1 = run_trials(scenario, pol, config, trials, base_seed, 1, check_llr, max_subset_size, workers)
    return aggregate(pol.name, r0, r1, scenario, config, base_seed)


# ----------------------------------------------------------------------------
# Fixed-sample baseline and information estimates
# ----------------------------------------------------------------------------

class NPResult(NamedTuple):
    threshold: float
    p_md_hat: float
    p_fa_hat: float
    subset: np.ndarray


def _subset_llr(pair: HypothesisPair, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return pair.f1.logpdf(x[:, idx], idx) - pair.f0.logpdf(x[:, idx], idx)


def np_baseline(scenario: Scenario, sample_size: int, alpha_target: float, calibration_trials: int,
                rng: np.random.Generator, test_trials: int | None = None) -> NPResult:
    """Fixed-size likelihood ratio test on a random node subset.

    The threshold is the empirical ``1 - alpha_target`` quantile of the LLR
    under ``H0``; the missed-detection rate is then estimated under ``H1``
    on fresh draws.
    """
    pair = scenario.pair
    n = pair.node_count
    if not 1 <= sample_size <= n:
        raise ConfigError(f"sample_size must lie in [1, {n}], got {sample_size}")
    if not 0.0 < alpha_target < 1.0:
        raise ConfigError(f"alpha_target must lie in (0, 1), got {alpha_target}")
    if calibration_trials < 10.0 / alpha_target:
        raise ConfigError(
            f"calibration_trials={calibration_trials} is below 10/alpha_target="
            f"{10.0 / alpha_target:g}"
        )
    test_trials = calibration_trials if test_trials is None else test_trials
    idx = np.sort(rng.choice(n, size=sample_size, replace=False))
    llr0 = _subset_llr(pair, pair.f0.sample(rng, calibration_trials), idx)
    threshold = float(np.quantile(llr0, 1.0 - alpha_target))
    # Randomize at the threshold so atoms (e.g. identical models) still get size alpha.
    above = float(np.mean(llr0 > threshold))
    atom = float(np.mean(llr0 == threshold))
    gamma = min(1.0, max(0.0, (alpha_target - above) / atom)) if atom > 0 else 0.0
    llr1 = _subset_llr(pair, pair.f1.sample(rng, test_trials), idx)
    p_md = float(np.mean(llr1 < threshold)) + (1.0 - gamma) * float(np.mean(llr1 == threshold))
    return NPResult(threshold, p_md, above + gamma * atom, idx)


class NLLREstimate(NamedTuple):
    I0_hat: float
    se0: float
    I1_hat: float
    se1: float


def estimate_nllr(scenario: Scenario, subset: Sequence[int], trials: int,
                  rng: np.random.Generator) -> NLLREstimate:
    """Monte Carlo normalized LLRs of a node subset under each hypothesis."""
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size == 0:
        raise InvalidInputError("subset must be non-empty")
    if trials < 2:
        raise ConfigError("trials must be at least 2")
    pair = scenario.pair
    k = idx.size
    l0 = -_subset_llr(pair, pair.f0.sample(rng, trials), idx) / k
    l1 = _subset_llr(pair, pair.f1.sample(rng, trials), idx) / k
    m0, s0 = _mean_se(l0)
    m1, s1 = _mean_se(l1)
    return NLLREstimate(m0, s0, m1, s1)


class ExponentPoint(NamedTuple):
    alpha: float
    beta: float
    delay_h0: float
    delay_h1: float
    e_fa: float
    se_fa: float
    fa_bound_only: bool
    e_md: float
    se_md: float
    md_bound_only: bool
    stats: RunStats


def _exponent(errors: int, trials: int, delay: float, delay_se: float) -> tuple[float, float, bool]:
    # Rule of three when no error was observed: the value is a one-sided bound.
    bound_only = errors == 0
    p = 3.0 / trials if bound_only else errors / trials
    lp = math.log(p)
    e = -lp / delay
    var_lp = (1.0 - p) / (trials * p)
    var = var_lp / delay**2 + lp * lp * delay_se**2 / delay**4
    return e, math.sqrt(var), bound_only


def estimate_error_exponents(scenario: Scenario, policy, configs: Iterable[DetectionConfig],
                             trials: int, base_seed: int = 0, max_subset_size: int | None = 4,
                             workers: int | None = None) -> list[ExponentPoint]:
    """Empirical ``(-ln p_fa / E1[tau], -ln p_md / E0[tau])`` per budget."""
    out = []
    for cfg in configs:
        st = monte_carlo(scenario, policy, cfg, trials, base_seed,
                         max_subset_size=max_subset_size, workers=workers)
        e_fa, s_fa, b_fa = _exponent(st.false_alarms, trials, st.avg_delay_h1, st.se1)
        e_md, s_md, b_md = _exponent(st.missed_detections, trials, st.avg_delay_h0, st.se0)
        out.append(ExponentPoint(cfg.alpha, cfg.beta, st.avg_delay_h0, st.avg_delay_h1,
                                 e_fa, s_fa, b_fa, e_md, s_md, b_md, st))
    return out


# ----------------------------------------------------------------------------
# Cluster diagnostics
# ----------------------------------------------------------------------------

def samples_before_entry(scenario: Scenario, policy, cluster: Iterable[int], truth: int,
                         rng: np.random.Generator, max_subset_size: int | None = 4) -> int:
    """Measurements taken outside ``cluster`` before the first one inside it."""
    pol = get_policy(policy)
    pol.check(scenario.pair)
    pair = scenario.pair
    inside = np.zeros(pair.node_count, dtype=bool)
    inside[np.asarray(list(cluster), dtype=np.int64)] = True
    x = pair.model(int(truth)).sample(rng)
    state = SamplingState(pair, max_subset_size)
    while state.t < pair.node_count:
        node = pol.select(state.context(), rng)
        if inside[node]:
            return state.t
        state.observe(node, float(x[node]))
    return state.t


def cluster_entry_samples(scenario: Scenario, policy, trials: int, base_seed: int,
                          truth: int = 1, cluster: Iterable[int] | None = None) -> np.ndarray:
    """Per-trial counts from :func:`samples_before_entry` with seeds ``base_seed + k``."""
    if cluster is None:
        cluster = scenario.metadata["cluster"]
    cluster = list(cluster)
    return np.array([
        samples_before_entry(scenario, policy, cluster, truth,
                             np.random.default_rng([base_seed + k, truth]))
        for k in range(trials)
    ])


def line_edge_information(sigma: float) -> tuple[float, float]:
    """Per-edge KL of a unit-variance line against independence: ``(I_0, I_1)``."""
    s2 = _check_corr("sigma", sigma) ** 2
    i0 = 0.5 * (math.log1p(-s2) + 2.0 * s2 / (1.0 - s2))
    i1 = -0.5 * math.log1p(-s2)
    return i0, i1


def two_cluster_information_ratio(a: float, b: float) -> tuple[float, float]:
    """``I_l^A / I_l^B`` for lines with edge correlations ``a`` and ``b``, per hypothesis."""
    a0, a1 = line_edge_information(a)
    b0, b1 = line_edge_information(b)
    if b0 == 0.0 or b1 == 0.0:
        raise InvalidCorrelationError("b must be non-zero")
    return a0 / b0, a1 / b1


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------

CSV_COLUMNS = ("scenario", "policy", "n", "alpha", "beta", "trials", "avg_delay_h0", "se0",
               "avg_delay_h1", "se1", "p_fa", "p_md", "forced_stop_rate", "seed")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def stats_row(scenario_name: str, stats: RunStats) -> dict:
    return {
        "scenario": scenario_name, "policy": stats.label, "n": stats.n,
        "alpha": stats.alpha, "beta": stats.beta, "trials": stats.trials,
        "avg_delay_h0": stats.avg_delay_h0, "se0": stats.se0,
        "avg_delay_h1": stats.avg_delay_h1, "se1": stats.se1,
        "p_fa": stats.p_fa, "p_md": stats.p_md,
        "forced_stop_rate": stats.forced_stop_rate, "seed": stats.seed,
    }


def write_csv(rows: Iterable[dict], out=None, columns: Sequence[str] = CSV_COLUMNS) -> str:
    """Write rows with a header; returns the text and writes it to ``out`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    text = buf.getvalue()
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w", newline="") as fh:
                fh.write(text)
    return text

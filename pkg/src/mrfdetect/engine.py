"""The sequential sampling loop: select, measure, update the LLR, test the band."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvalidInputError, PreconditionError, SingularityError
from .gmrf import HypothesisPair, conditional, joint_llr
from .measures import MeasureContext
from .policies import Hypothesis, Policy, SelectionContext, get_policy, ml_decision
from .tracker import ConditionalTracker


@dataclass(frozen=True)
class DetectionConfig:
    """Error budgets ``alpha`` (false alarm) and ``beta`` (missed detection)."""

    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {v!r}")

    @property
    def lower_threshold(self) -> float:
        return math.log(self.beta)

    @property
    def upper_threshold(self) -> float:
        return -math.log(self.alpha)

    def inside(self, llr: float) -> bool:
        return self.lower_threshold < llr < self.upper_threshold


@dataclass(frozen=True)
class TrialResult:
    stopping_time: int
    decision: Hypothesis
    final_llr: float
    path: tuple
    forced_stop: bool
    truth: Hypothesis
    seed: int | None = None
    values: tuple = field(default=(), repr=False)
    llr_trace: tuple = field(default=(), repr=False)
    llr_error: float | None = None

    @property
    def error(self) -> bool:
        return self.decision != self.truth


def llr_update(prev_llr: float, new_node: int, new_value: float, ctx: MeasureContext) -> float:
    """Add the log conditional density ratio of one new measurement."""
    if int(new_node) in ctx.observed_nodes:
        raise InvalidInputError(f"node {new_node} is already observed")
    terms = []
    for ell in (0, 1):
        c = conditional(ctx.pair.model(ell), [new_node], ctx.observed)
        v = float(c.cov[0, 0])
        if v < 1e-12:
            raise SingularityError(f"conditional variance of node {new_node} is {v}")
        r = new_value - float(c.mean[0])
        terms.append(-0.5 * (math.log(2.0 * math.pi * v) + r * r / v))
    return prev_llr + terms[1] - terms[0]


class SamplingState:
    """Mutable per-trial state: tracker, path, values and running LLR."""

    def __init__(self, pair: HypothesisPair, max_subset_size: int | None = 4):
        self.pair = pair
        self.tracker = ConditionalTracker(pair)
        self.path: list[int] = []
        self.values: list[float] = []
        self.llr = 0.0
        self.trace: list[float] = []
        self.max_subset_size = max_subset_size

    @property
    def t(self) -> int:
        return len(self.path)

    def context(self) -> SelectionContext:
        return SelectionContext(None, None, self.llr, self.max_subset_size, tracker=self.tracker)

    def measure_context(self) -> MeasureContext:
        return MeasureContext(self.pair, tuple(zip(self.path, self.values)))

    def observe(self, node: int, value: float) -> float:
        self.llr += self.tracker.log_ratio(node, value)
        self.tracker.condition(node, value)
        self.path.append(int(node))
        self.values.append(float(value))
        self.trace.append(self.llr)
        return self.llr


def _prepare(pair, policy, config, max_subset_size):
    if not isinstance(config, DetectionConfig):
        raise ConfigError("config must be a DetectionConfig")
    if max_subset_size is not None and int(max_subset_size) < 1:
        raise ConfigError(f"max_subset_size must be at least 1, got {max_subset_size}")
    pol = get_policy(policy)
    try:
        pol.check(pair)
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from exc
    return pol


def _walk(pair, policy: Policy, realization, rng, config, max_subset_size):
    """Sample until the LLR leaves the band or every node has been measured."""
    state = SamplingState(pair, max_subset_size)
    n = pair.node_count
    exit_time = None
    while state.t < n:
        node = policy.select(state.context(), rng)
        llr = state.observe(node, float(realization[node]))
        if not config.inside(llr):
            exit_time = state.t
            break
    return state, exit_time


def run_trial(
    pair: HypothesisPair,
    truth,
    policy,
    config: DetectionConfig,
    rng: np.random.Generator,
    check_llr: bool = False,
    max_subset_size: int | None = 4,
    seed: int | None = None,
) -> TrialResult:
    """One sequential test on a single realization drawn from the true model."""
    pol = _prepare(pair, policy, config, max_subset_size)
    truth = Hypothesis(int(truth))
    realization = pair.model(int(truth)).sample(rng)
    state, exit_time = _walk(pair, pol, realization, rng, config, max_subset_size)
    return _result(pair, state, truth, exit_time, seed, check_llr)


def _result(pair, state: SamplingState, truth, exit_time, seed, check_llr) -> TrialResult:
    tau = state.t if exit_time is None else exit_time
    final = state.trace[tau - 1]
    err = None
    if check_llr:
        err = abs(final - joint_llr(state.values[:tau], state.path[:tau], pair))
    return TrialResult(
        stopping_time=tau,
        decision=ml_decision(final),
        final_llr=final,
        path=tuple(state.path[:tau]),
        forced_stop=exit_time is None,
        truth=truth,
        seed=seed,
        values=tuple(state.values[:tau]),
        llr_trace=tuple(state.trace[:tau]),
        llr_error=err,
    )


class UnboundedOutcome(NamedTuple):
    stopping_time: int
    decision: Hypothesis | None


class SPRTComparison(NamedTuple):
    bounded: TrialResult
    unbounded: UnboundedOutcome

    @property
    def agree(self) -> bool:
        return (self.bounded.stopping_time == self.unbounded.stopping_time
                and self.bounded.decision == self.unbounded.decision)


def compare_sprt_variant(
    pair: HypothesisPair,
    truth,
    policy,
    config: DetectionConfig,
    rng: np.random.Generator,
    max_subset_size: int | None = 4,
) -> SPRTComparison:
    """Run one realization under the horizon-bounded rule and the plain SPRT.

    The plain SPRT only decides on a band exit; exhausting every node with
    the LLR still inside the band leaves it without a decision.
    """
    pol = _prepare(pair, policy, config, max_subset_size)
    truth = Hypothesis(int(truth))
    realization = pair.model(int(truth)).sample(rng)
    state, exit_time = _walk(pair, pol, realization, rng, config, max_subset_size)
    bounded = _result(pair, state, truth, exit_time, None, False)
    if exit_time is None:
        unbounded = UnboundedOutcome(state.t, None)
    else:
        unbounded = UnboundedOutcome(exit_time, ml_decision(state.trace[exit_time - 1]))
    return SPRTComparison(bounded, unbounded)

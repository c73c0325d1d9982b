"""
Monte Carlo harness: simulate consumers, run retailer policies against them and
aggregate discounted-cost trajectories.

Every episode owns two Philox streams spawned from SeedSequence([seed, episode]),
one for state transitions and one for cost draws. All policies of a run see the
same draws, and results are reduced in episode order, so the output does not
depend on the number of workers.
"""

import enum
import functools
import math

from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from tqdm import tqdm

from .errors import ConfigurationMismatchError, ValidationError
from .estimation import (
    BeliefFilter,
    BeliefPosterior,
    CostDistributions,
    exact_belief_update,
    map_state_update,
)
from .model import (
    Action,
    Belief,
    ConsumerState,
    CostModel,
    TransitionModel,
    horizon_for,
    stationary_belief,
)
from .solvers.coupon_dependent import CouponDependentModel
from .solvers.value_iteration import MultiStateModel


class PolicyKind(str, enum.Enum):
    THRESHOLD = "threshold"
    GREEDY = "greedy"
    LAZY = "lazy"
    PERFECT_INFO = "perfect_info"


class Estimator(str, enum.Enum):
    EXACT_BELIEF = "exact_belief"
    MAP_STATE = "map_state"
    BAYES_MEAN = "bayes_mean"
    BAYES_MAP = "bayes_map"

    @property
    def is_noisy(self) -> bool:
        return self is not Estimator.EXACT_BELIEF


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    tau: float | None = None
    estimator: Estimator = Estimator.EXACT_BELIEF
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        if self.kind in (PolicyKind.THRESHOLD, PolicyKind.PERFECT_INFO):
            if self.tau is None or not 0 <= self.tau <= 1:
                raise ValidationError(f"{self.kind.value} policy needs tau in [0, 1], got {self.tau}")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind in (PolicyKind.LAZY, PolicyKind.PERFECT_INFO):
            return self.kind.value
        if self.estimator is Estimator.EXACT_BELIEF:
            return self.kind.value
        return f"{self.kind.value}_{self.estimator.value}"


@dataclass(frozen=True)
class SimConfig:
    """
    initial_belief is the true P(Alerted) of the first state; with
    bayes_prior="uniform" the Bayes filters are not told it
    bayes_filter picks the Bayes update, see BeliefFilter
    """

    episodes: int = 1000
    horizon: int | None = None
    seed: int = 0
    initial_belief: Belief | None = None
    bayes_prior: str = "known"
    bayes_filter: str = "belief"
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ValidationError(f"episodes must be >= 1, got {self.episodes}")
        if self.horizon is not None and self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        if self.bayes_prior not in ("known", "uniform"):
            raise ValidationError(f"bayes_prior must be 'known' or 'uniform', got {self.bayes_prior}")
        if self.bayes_filter not in ("belief", "parameter"):
            raise ValidationError(
                f"bayes_filter must be 'belief' or 'parameter', got {self.bayes_filter}"
            )
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    policy: str
    episode: int
    seed: int
    states: np.ndarray
    beliefs: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    discounted: np.ndarray


@dataclass(frozen=True, eq=False)
class AggregateResult:
    labels: tuple[str, ...]
    mean: np.ndarray
    stderr: np.ndarray
    episodes: int
    horizon: int

    def column(self, label: str) -> int:
        return self.labels.index(label)

    def final(self, label: str) -> tuple[float, float]:
        k = self.column(label)
        return float(self.mean[k, -1]), float(self.stderr[k, -1])

    def header(self) -> list[str]:
        out = ["step"]
        for label in self.labels:
            out += [f"{label}_mean_discounted_cost", f"{label}_stderr"]
        return out

    def rows(self):
        for t in range(self.horizon + 1):
            row: list[Any] = [t]
            for k in range(len(self.labels)):
                row += [self.mean[k, t], self.stderr[k, t]]
            yield row


def greedy_action(p: Belief, c: CostModel) -> Action:
    return Action.HP if c.hp_cost(p) <= c.c_l else Action.LP


def _next_state(row: np.ndarray, state: int, u: float) -> int:
    """
    Inverse-CDF draw from one row of a transition matrix
    """
    return min(int(np.searchsorted(np.cumsum(row[state]), u, side="right")), row.shape[1] - 1)


def _matrix(m: TransitionModel | MultiStateModel) -> np.ndarray:
    return m.transition if isinstance(m, MultiStateModel) else m.matrix


def _path(
    m: TransitionModel | CouponDependentModel | MultiStateModel,
    initial_state: int,
    uniforms: np.ndarray,
    actions=None,
) -> np.ndarray:
    path = np.empty(uniforms.size + 1, dtype=np.int64)
    path[0] = initial_state
    if isinstance(m, CouponDependentModel):
        if actions is None or len(actions) < uniforms.size:
            raise ValidationError("a coupon-dependent path needs one action per step")
        matrices = {False: m.lp_chain.matrix, True: m.hp_chain.matrix}
        for t, u in enumerate(uniforms):
            hp = Action(actions[t]) is Action.HP
            path[t + 1] = _next_state(matrices[hp], path[t], u)
        return path
    matrix = _matrix(m)
    for t, u in enumerate(uniforms):
        path[t + 1] = _next_state(matrix, path[t], u)
    return path


def simulate_consumer(
    m: TransitionModel | CouponDependentModel | MultiStateModel,
    initial_state: int,
    horizon: int,
    rng: np.random.Generator,
    actions=None,
) -> np.ndarray:
    """
    State path of length horizon + 1. Coupon-dependent models need the
    action of every step to pick the kernel.
    """
    return _path(m, initial_state, rng.random(horizon), actions)


class BeliefTracker:
    """
    The retailer's running estimate of P(Alerted) for one estimator
    """

    def __init__(
        self,
        estimator: Estimator,
        p0: Belief,
        model: TransitionModel,
        distributions: CostDistributions,
        bayes_prior: str = "known",
        perfect_info: bool = False,
        bayes_filter: str = "belief",
    ):
        self.estimator = estimator
        self.p = p0
        self.model = model
        self.distributions = distributions
        self.perfect_info = perfect_info
        self.filter: BeliefFilter | None = None
        if estimator in (Estimator.BAYES_MEAN, Estimator.BAYES_MAP) and not perfect_info:
            prior = (
                BeliefPosterior.point(p0)
                if bayes_prior == "known"
                else BeliefPosterior.uniform()
            )
            self.filter = BeliefFilter(prior, model, distributions, mode=bayes_filter)
            self.p = self.filter.estimate(self.mode)

    @property
    def mode(self) -> str:
        return "map" if self.estimator is Estimator.BAYES_MAP else "mean"

    def update(self, u: Action, c: float, chain: TransitionModel, state: int) -> Belief:
        d = self.distributions
        if self.perfect_info:
            self.p = chain.row(state) if u is Action.HP else chain.transition(self.p)
        elif self.filter is not None:
            self.filter.step(u, c, chain)
            self.p = self.filter.estimate(self.mode)
        elif self.estimator is Estimator.MAP_STATE:
            self.p = map_state_update(self.p, u, c, chain, d)[1]
        else:
            self.p = exact_belief_update(self.p, u, c, chain, d)
        return self.p


@dataclass(frozen=True, eq=False)
class _Run:
    """
    Everything an episode needs, picklable for the process pool
    """

    policies: tuple[PolicySpec, ...]
    model: TransitionModel | CouponDependentModel
    distributions: CostDistributions
    beta: float
    horizon: int
    seed: int
    p0: Belief
    bayes_prior: str
    bayes_filter: str
    greedy_costs: CostModel = field(repr=False)


def _draws(run: _Run, episode: int):
    state_seq, cost_seq = np.random.SeedSequence([run.seed, episode]).spawn(2)
    state_rng = np.random.Generator(np.random.Philox(state_seq))
    cost_rng = np.random.Generator(np.random.Philox(cost_seq))
    steps = run.horizon + 1
    initial = int(state_rng.random() < run.p0)
    uniforms = state_rng.random(run.horizon)
    d = run.distributions
    costs = {
        (Action.LP, ConsumerState.NORMAL): d.lp.sample(cost_rng, steps),
        (Action.HP, ConsumerState.NORMAL): d.normal_hp.sample(cost_rng, steps),
        (Action.HP, ConsumerState.ALERTED): d.alerted_hp.sample(cost_rng, steps),
    }
    costs[(Action.LP, ConsumerState.ALERTED)] = costs[(Action.LP, ConsumerState.NORMAL)]
    path = None
    if not isinstance(run.model, CouponDependentModel):
        path = _path(run.model, initial, uniforms)
    return initial, uniforms, costs, path


def _decide(policy: PolicySpec, p: Belief, greedy_costs: CostModel) -> Action:
    if policy.kind is PolicyKind.LAZY:
        return Action.LP
    if policy.kind is PolicyKind.GREEDY:
        return greedy_action(p, greedy_costs)
    assert policy.tau is not None
    return Action.HP if p <= policy.tau else Action.LP


def _lp_chain(model: TransitionModel | CouponDependentModel) -> TransitionModel:
    return model.lp_chain if isinstance(model, CouponDependentModel) else model


def _chain(model: TransitionModel | CouponDependentModel, u: Action) -> TransitionModel:
    if isinstance(model, CouponDependentModel):
        return model.chain_for(u is Action.HP)
    return model


def _run_policy_episode(
    run: _Run,
    policy: PolicySpec,
    episode: int,
    draws,
    on_step: Callable[[Action, float, TransitionModel, int], None] | None = None,
) -> EpisodeResult:
    initial, uniforms, costs, shared_path = draws
    steps = run.horizon + 1
    tracker = BeliefTracker(
        policy.estimator,
        run.p0,
        _lp_chain(run.model),
        run.distributions,
        run.bayes_prior,
        perfect_info=policy.kind is PolicyKind.PERFECT_INFO,
        bayes_filter=run.bayes_filter,
    )
    states = np.empty(steps, dtype=np.int64)
    beliefs = np.empty(steps)
    actions = np.empty(steps, dtype=object)
    paid = np.empty(steps)
    state = initial
    for t in range(steps):
        states[t], beliefs[t] = state, tracker.p
        u = _decide(policy, tracker.p, run.greedy_costs)
        c = costs[(u, ConsumerState(min(state, 1)))][t]
        actions[t], paid[t] = u.value, c
        chain = _chain(run.model, u)
        tracker.update(u, c, chain, state)
        if on_step is not None:
            on_step(u, c, chain, state)
        if t == run.horizon:
            break
        if shared_path is not None:
            state = int(shared_path[t + 1])
        else:
            state = _next_state(chain.matrix, state, uniforms[t])
    discounted = np.cumsum(run.beta ** np.arange(steps) * paid)
    return EpisodeResult(policy.name, episode, run.seed, states, beliefs, actions, paid, discounted)


def _run_episode(run: _Run, episode: int) -> np.ndarray:
    """
    Discounted cumulative cost of every policy in one episode, (P, horizon + 1)
    """
    draws = _draws(run, episode)
    return np.stack(
        [_run_policy_episode(run, policy, episode, draws).discounted for policy in run.policies]
    )


def _prepare(
    policies,
    sim: SimConfig,
    model: TransitionModel | CouponDependentModel,
    costs: CostModel | CostDistributions,
    beta: float | None,
) -> _Run:
    if isinstance(costs, CostModel):
        noisy = [p.name for p in policies if p.kind is not PolicyKind.LAZY and p.estimator.is_noisy]
        if noisy:
            raise ConfigurationMismatchError(
                f"noisy estimators need cost distributions, got deterministic costs for {noisy}"
            )
        beta = costs.beta
        distributions = CostDistributions.deterministic(costs)
    else:
        if beta is None:
            raise ValidationError("beta is required with cost distributions")
        distributions = costs
    greedy_costs = CostModel.permissive(
        distributions.lp.mean, distributions.normal_hp.mean, distributions.alerted_hp.mean, beta
    )
    labels = [p.name for p in policies]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"policy labels must be unique, got {labels}")

    p0 = sim.initial_belief
    if p0 is None:
        p0 = stationary_belief(_lp_chain(model))
    c_max = max(
        max(abs(d.support_min), abs(d.support_max))
        for d in (distributions.lp, distributions.normal_hp, distributions.alerted_hp)
    )
    horizon = sim.horizon or horizon_for(beta, c_max)
    return _Run(
        tuple(policies),
        model,
        distributions,
        beta,
        horizon,
        sim.seed,
        p0,
        sim.bayes_prior,
        sim.bayes_filter,
        greedy_costs,
    )


def run_policies(
    policies: list[PolicySpec],
    sim: SimConfig,
    model: TransitionModel | CouponDependentModel,
    costs: CostModel | CostDistributions,
    beta: float | None = None,
    progress: bool = False,
) -> AggregateResult:
    """
    Run several policies on common random numbers and average their
    discounted-cost trajectories
    """
    run = _prepare(policies, sim, model, costs, beta)
    work = functools.partial(_run_episode, run)
    episodes = range(sim.episodes)
    bar = functools.partial(
        tqdm, total=sim.episodes, desc="episodes", disable=not progress, leave=False
    )
    if sim.workers > 1:
        with ProcessPoolExecutor(max_workers=sim.workers) as pool:
            chunk = max(1, sim.episodes // (4 * sim.workers))
            results = list(bar(pool.map(work, episodes, chunksize=chunk)))
    else:
        results = list(bar(map(work, episodes)))

    stacked = np.stack(results)
    mean = stacked.mean(axis=0)
    if sim.episodes > 1:
        stderr = stacked.std(axis=0, ddof=1) / math.sqrt(sim.episodes)
    else:
        stderr = np.zeros_like(mean)
    return AggregateResult(
        tuple(p.name for p in policies), mean, stderr, sim.episodes, run.horizon
    )


def run_policy(
    policy: PolicySpec,
    sim: SimConfig,
    model: TransitionModel | CouponDependentModel,
    costs: CostModel | CostDistributions,
    beta: float | None = None,
    progress: bool = False,
) -> AggregateResult:
    return run_policies([policy], sim, model, costs, beta, progress)


def run_episode(
    policy: PolicySpec,
    sim: SimConfig,
    model: TransitionModel | CouponDependentModel,
    costs: CostModel | CostDistributions,
    beta: float | None = None,
    episode: int = 0,
) -> EpisodeResult:
    run = _prepare([policy], sim, model, costs, beta)
    return _run_policy_episode(run, policy, episode, _draws(run, episode))


TRACE_HEADER = [
    "step",
    "state",
    "action",
    "cost",
    "exact_belief",
    "map_state",
    "bayes_mean",
    "bayes_map",
]


def trace_episode(
    policy: PolicySpec,
    sim: SimConfig,
    model: TransitionModel | CouponDependentModel,
    distributions: CostDistributions,
    beta: float,
    episode: int = 0,
) -> list[list[Any]]:
    """
    One episode driven by `policy`, with every estimator following the same
    observations. Row t holds each estimate before step t's action.
    """
    run = _prepare([policy], sim, model, distributions, beta)
    trackers = [
        BeliefTracker(
            estimator,
            run.p0,
            _lp_chain(model),
            distributions,
            sim.bayes_prior,
            bayes_filter=sim.bayes_filter,
        )
        for estimator in Estimator
    ]
    history: list[list[float]] = [[t.p for t in trackers]]

    def record(u: Action, c: float, chain: TransitionModel, state: int) -> None:
        for tracker in trackers:
            tracker.update(u, c, chain, state)
        history.append([t.p for t in trackers])

    result = _run_policy_episode(run, policy, episode, _draws(run, episode), record)
    return [
        [t, ConsumerState(min(int(result.states[t]), 1)).label, result.actions[t], result.costs[t]]
        + history[t]
        for t in range(run.horizon + 1)
    ]

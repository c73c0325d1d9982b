"""
Noisy cost feedback: the retailer only sees a cost drawn from f(c|state, action).

Holds the cost distributions and their likelihoods, the four threshold
variants built from the feasible cost sets, the MAP state detector, and a
grid Bayes filter over the belief itself.
"""

import enum
import functools
import itertools
import math

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    AssumptionError,
    DegenerateChainError,
    ValidationError,
    ZeroEvidenceError,
    ZeroLikelihoodError,
)
from .model import Action, Belief, ConsumerState, CostModel, TransitionModel, stationary_belief
from .solvers.threshold import evaluate_threshold_policy, solve_threshold

POSTERIOR_GRID = 1001
MASS_ATOL = 1e-9
POINT_ATOL = 1e-12
ROBUST_RTOL = 1e-9


class Family(str, enum.Enum):
    UNIFORM = "uniform"
    DISCRETE = "discrete"


@dataclass(frozen=True, eq=False)
class CostDistribution:
    family: Family
    lo: float = math.nan
    hi: float = math.nan
    points: np.ndarray = field(default_factory=lambda: np.empty(0))
    masses: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.UNIFORM:
            if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
                raise AssumptionError(
                    f"uniform costs need finite lo < hi, got lo={self.lo}, hi={self.hi}"
                )
            return
        points = np.asarray(self.points, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)
        if points.ndim != 1 or not points.size or points.shape != masses.shape:
            raise AssumptionError("discrete costs need matching, nonempty points and masses")
        if not np.all(np.isfinite(points)):
            raise AssumptionError("discrete cost points must be finite")
        if np.any(masses < 0) or abs(masses.sum() - 1) > MASS_ATOL:
            raise AssumptionError(f"discrete masses must be >= 0 and sum to 1, got {masses.sum()}")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "CostDistribution":
        return cls(Family.UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def discrete(cls, points, masses) -> "CostDistribution":
        return cls(Family.DISCRETE, points=points, masses=masses)

    @classmethod
    def point(cls, value: float) -> "CostDistribution":
        return cls.discrete([value], [1.0])

    @classmethod
    def from_config(cls, spec: dict[str, Any]) -> "CostDistribution":
        if spec["family"] == Family.UNIFORM.value:
            if spec["lo"] == spec["hi"]:
                return cls.point(spec["lo"])
            return cls.uniform(spec["lo"], spec["hi"])
        return cls.discrete(spec["points"], spec["masses"])

    @property
    def is_point_mass(self) -> bool:
        return self.family is Family.DISCRETE and self.points.size == 1

    @property
    def support_min(self) -> float:
        return self.lo if self.family is Family.UNIFORM else float(self.points.min())

    @property
    def support_max(self) -> float:
        return self.hi if self.family is Family.UNIFORM else float(self.points.max())

    @property
    def mean(self) -> float:
        if self.family is Family.UNIFORM:
            return (self.lo + self.hi) / 2
        return float(self.points @ self.masses)

    def pdf(self, c):
        """
        Density for uniform costs, point mass for discrete ones
        """
        c = np.asarray(c, dtype=float)
        if self.family is Family.UNIFORM:
            inside = (c >= self.lo) & (c <= self.hi)
            return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)
        hits = np.isclose(c[..., None], self.points, rtol=0.0, atol=POINT_ATOL)
        return (hits * self.masses).sum(axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family is Family.UNIFORM:
            return rng.uniform(self.lo, self.hi, size)
        return rng.choice(self.points, size=size, p=self.masses)

    def as_dict(self) -> dict[str, Any]:
        if self.family is Family.UNIFORM:
            return {"family": self.family.value, "lo": self.lo, "hi": self.hi}
        return {
            "family": self.family.value,
            "points": self.points.tolist(),
            "masses": self.masses.tolist(),
        }


@dataclass(frozen=True, eq=False)
class CostDistributions:
    """
    f(c|LP) (state independent), f(c|Normal, HP), f(c|Alerted, HP)
    """

    lp: CostDistribution
    normal_hp: CostDistribution
    alerted_hp: CostDistribution

    @classmethod
    def deterministic(cls, c: CostModel) -> "CostDistributions":
        return cls(
            CostDistribution.point(c.c_l),
            CostDistribution.point(c.c_hn),
            CostDistribution.point(c.c_ha),
        )

    @classmethod
    def from_config(cls, spec: dict[str, Any]) -> "CostDistributions":
        return cls(
            CostDistribution.from_config(spec["lp"]),
            CostDistribution.from_config(spec["normal_hp"]),
            CostDistribution.from_config(spec["alerted_hp"]),
        )

    @property
    def is_deterministic(self) -> bool:
        return all(d.is_point_mass for d in (self.lp, self.normal_hp, self.alerted_hp))

    @property
    def disjoint_hp(self) -> bool:
        return (
            self.normal_hp.support_max < self.alerted_hp.support_min
            or self.alerted_hp.support_max < self.normal_hp.support_min
        )

    def mean_costs(self, beta: float) -> CostModel:
        return CostModel(self.lp.mean, self.normal_hp.mean, self.alerted_hp.mean, beta)

    def for_state(self, u: Action, state: int) -> CostDistribution:
        if Action(u) is Action.LP:
            return self.lp
        return self.alerted_hp if state == ConsumerState.ALERTED else self.normal_hp


def likelihood(c: float, u: Action, p, d: CostDistributions):
    """
    l(c|u, p): f(c|LP) for LP, the p-mixture of the two HP densities for HP
    """
    if Action(u) is Action.LP:
        return d.lp.pdf(c) + 0.0 * np.asarray(p, dtype=float)
    return (1 - np.asarray(p, dtype=float)) * d.normal_hp.pdf(c) + np.asarray(
        p, dtype=float
    ) * d.alerted_hp.pdf(c)


@dataclass(frozen=True)
class ThresholdVariants:
    """
    tau_max and tau_min come from fixed cost triples; tau_upper and
    tau_lower bracket the thresholds of every admissible support corner.
    """

    tau_avg: float
    tau_max: float
    tau_min: float
    tau_r: float
    tau_upper: float
    tau_lower: float
    p0: float
    corners: tuple[tuple[float, float, float, float], ...] = ()

    def as_dict(self) -> dict[str, Any]:
        return {
            "tau_avg": self.tau_avg,
            "tau_max": self.tau_max,
            "tau_min": self.tau_min,
            "tau_r": self.tau_r,
            "tau_upper": self.tau_upper,
            "tau_lower": self.tau_lower,
            "p0": self.p0,
            "corners": [list(corner) for corner in self.corners],
        }


def _triple_threshold(
    m: TransitionModel, c_l: float, c_hn: float, c_ha: float, beta: float
) -> float:
    # clamp into c_hn <= c_l <= c_ha when the supports overlap
    c_hn = min(c_hn, c_l)
    c_ha = max(c_ha, c_l)
    return solve_threshold(m, CostModel(c_l, c_hn, c_ha, beta)).tau


def _robust_choice(
    taus: list[float], costs: list[CostModel], m: TransitionModel, p0: Belief
) -> float:
    """
    Minimax over the corner thresholds. The worst case at p0 is compared
    first, then the worst anchor sum V(lambda_NA) + V(lambda_AA); remaining
    ties go to the threshold that is optimal for its own worst corner.
    """
    scores = []
    for tau in taus:
        values = [evaluate_threshold_policy(tau, m, c, p=p0) for c in costs]
        at_p0 = np.array([v.value for v in values])
        anchors = np.array([v.v_na + v.v_aa for v in values])
        # last maximum so the all-max corner wins ties
        worst = len(costs) - 1 - int(np.argmax(anchors[::-1]))
        scores.append((at_p0.max(), anchors.max(), worst))

    candidates = list(range(len(taus)))
    for key in (0, 1):
        best = min(scores[k][key] for k in candidates)
        slack = ROBUST_RTOL * max(1.0, abs(best))
        candidates = [k for k in candidates if scores[k][key] <= best + slack]
    return next((taus[k] for k in candidates if scores[k][2] == k), taus[candidates[-1]])


def threshold_variants(
    d: CostDistributions,
    m: TransitionModel,
    beta: float,
    p0: Belief | None = None,
) -> ThresholdVariants:
    """
    Thresholds for noisy costs.

    tau_avg solves the mean costs, tau_max the triple (max C_L, max C_HN,
    max C_HA) and tau_min the triple (min C_L, max C_HN, min C_HA). tau_r is
    the minimax choice among the support-corner thresholds, scored at p0
    (the stationary belief by default).
    """
    if p0 is None:
        try:
            p0 = stationary_belief(m)
        except DegenerateChainError:
            p0 = m.lambda_na

    costs = []
    for c_l, c_hn, c_ha in itertools.product(
        (d.lp.support_min, d.lp.support_max),
        (d.normal_hp.support_min, d.normal_hp.support_max),
        (d.alerted_hp.support_min, d.alerted_hp.support_max),
    ):
        if c_hn <= c_l <= c_ha:
            costs.append(CostModel(c_l, c_hn, c_ha, beta))
    if not costs:
        raise AssumptionError("no support corner satisfies c_hn <= c_l <= c_ha")
    taus = [solve_threshold(m, c).tau for c in costs]

    return ThresholdVariants(
        tau_avg=solve_threshold(m, d.mean_costs(beta)).tau,
        tau_max=_triple_threshold(
            m, d.lp.support_max, d.normal_hp.support_max, d.alerted_hp.support_max, beta
        ),
        tau_min=_triple_threshold(
            m, d.lp.support_min, d.normal_hp.support_max, d.alerted_hp.support_min, beta
        ),
        tau_r=_robust_choice(taus, costs, m, p0),
        tau_upper=max(taus),
        tau_lower=min(taus),
        p0=p0,
        corners=tuple((c.c_l, c.c_hn, c.c_ha, t) for c, t in zip(costs, taus)),
    )


def map_state_update(
    p_hat: Belief,
    u_prev: Action,
    c_prev: float,
    m: TransitionModel,
    d: CostDistributions,
) -> tuple[ConsumerState | None, Belief]:
    """
    Detect the previous state from one HP cost and reset to its chain row.
    Ties go to Alerted.
    """
    if Action(u_prev) is Action.LP:
        return None, m.transition(p_hat)
    normal = float(d.normal_hp.pdf(c_prev)) * (1 - p_hat)
    alerted = float(d.alerted_hp.pdf(c_prev)) * p_hat
    if normal == 0 and alerted == 0:
        raise ZeroLikelihoodError(
            f"cost {c_prev} has zero likelihood under both states at p_hat={p_hat}"
        )
    if normal > alerted:
        return ConsumerState.NORMAL, m.lambda_na
    return ConsumerState.ALERTED, m.lambda_aa


def exact_belief_update(
    p: Belief, u: Action, c: float, m: TransitionModel, d: CostDistributions
) -> Belief:
    """
    Exact posterior of the next state: T(p) after LP, T(f_A p / l) after HP
    """
    if Action(u) is Action.LP:
        return m.transition(p)
    evidence = float(likelihood(c, u, p, d))
    if evidence <= 0:
        raise ZeroEvidenceError(f"cost {c} is impossible at belief {p}")
    return m.transition(float(d.alerted_hp.pdf(c)) * p / evidence)


@dataclass(frozen=True, eq=False)
class BeliefPosterior:
    """
    Discretized density q(p) as node masses on a uniform grid of [0, 1]
    """

    grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        if np.any(weights < 0):
            raise ValidationError("posterior weights must be nonnegative")
        if abs(weights.sum() - 1) > MASS_ATOL:
            raise ValidationError(f"posterior weights sum to {weights.sum()}, not 1")

    @classmethod
    def uniform(cls, size: int = POSTERIOR_GRID) -> "BeliefPosterior":
        grid = np.linspace(0.0, 1.0, size)
        cells = np.full(size, 1.0 / (size - 1))
        cells[[0, -1]] /= 2
        return cls(grid, cells / cells.sum())

    @classmethod
    def point(cls, p0: Belief, size: int = POSTERIOR_GRID) -> "BeliefPosterior":
        grid = np.linspace(0.0, 1.0, size)
        return cls(grid, _split_mass(np.array([p0]), np.array([1.0]), size))

    @property
    def size(self) -> int:
        return int(self.grid.size)

    @functools.cached_property
    def cells(self) -> np.ndarray:
        """
        Trapezoid cell widths
        """
        cells = np.full(self.size, 1.0 / (self.size - 1))
        cells[[0, -1]] /= 2
        return cells

    @functools.cached_property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    @property
    def density(self) -> np.ndarray:
        return self.weights / self.cells

    @property
    def mean(self) -> float:
        return float(self.grid @ self.weights)

    @property
    def map_estimate(self) -> float:
        return float(self.grid[int(np.argmax(self.weights))])

    def moved(self, images: np.ndarray) -> "BeliefPosterior":
        """
        Push every node's mass to its image, split linearly between neighbours
        """
        return BeliefPosterior(self.grid, _split_mass(images, self.weights, self.size))


def _split_mass(images: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    position = np.clip(images, 0.0, 1.0) * (size - 1)
    lower = np.minimum(np.floor(position).astype(np.int64), size - 2)
    upper_share = position - lower
    out = np.bincount(lower, weights * (1 - upper_share), minlength=size)
    out += np.bincount(lower + 1, weights * upper_share, minlength=size)
    return out / out.sum()


def bayes_update(
    q: BeliefPosterior, u_prev: Action, c_prev: float, d: CostDistributions
) -> BeliefPosterior:
    if Action(u_prev) is Action.LP:
        return q
    weights = q.weights * likelihood(c_prev, u_prev, q.grid, d)
    evidence = weights.sum()
    if evidence <= 0:
        raise ZeroEvidenceError(
            f"HP cost {c_prev} has zero evidence under the current posterior"
        )
    return BeliefPosterior(q.grid, weights / evidence)


def condition_on_cost(
    q: BeliefPosterior, u_prev: Action, c_prev: float, d: CostDistributions
) -> BeliefPosterior:
    """
    Replace each belief p by the state posterior f(c|Alerted, HP) p / l(c|HP, p)
    """
    if Action(u_prev) is Action.LP:
        return q
    evidence = likelihood(c_prev, u_prev, q.grid, d)
    alerted = d.alerted_hp.pdf(c_prev) * q.grid
    images = np.divide(alerted, evidence, out=q.grid.copy(), where=evidence > 0)
    return q.moved(images)


def bayes_predict(q: BeliefPosterior, m: TransitionModel) -> BeliefPosterior:
    if m.gap == 0:
        return BeliefPosterior.point(m.lambda_na, q.size)
    return q.moved(m.transition(q.grid))


def point_estimate(q: BeliefPosterior, mode: str = "mean") -> Belief:
    if mode == "mean":
        return q.mean
    if mode == "map":
        return q.map_estimate
    raise ValidationError(f"unknown point estimate mode: {mode}")


class BeliefFilter:
    """
    Per-episode Bayes filter. mode="belief" conditions on the HP cost before
    predicting; mode="parameter" only reweights and predicts.
    """

    def __init__(
        self,
        prior: BeliefPosterior,
        model: TransitionModel,
        distributions: CostDistributions,
        mode: str = "belief",
    ):
        if mode not in ("belief", "parameter"):
            raise ValidationError(f"unknown filter mode: {mode}")
        self.posterior = prior
        self.model = model
        self.distributions = distributions
        self.mode = mode

    def step(
        self, u: Action, c: float, chain: TransitionModel | None = None
    ) -> BeliefPosterior:
        q = bayes_update(self.posterior, u, c, self.distributions)
        if self.mode == "belief":
            q = condition_on_cost(q, u, c, self.distributions)
        self.posterior = bayes_predict(q, chain or self.model)
        return self.posterior

    def reveal(self, p: Belief) -> BeliefPosterior:
        self.posterior = BeliefPosterior.point(p, self.posterior.size)
        return self.posterior

    def estimate(self, mode: str = "mean") -> Belief:
        return point_estimate(self.posterior, mode)

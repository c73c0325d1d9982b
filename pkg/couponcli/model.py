"""
POMDP primitives shared by every solver: the two-state alerted chain, the
deterministic costs, and the one-step Bellman backups.

Values are time-normalized (divided by beta**t), so nothing here carries a
time index.
"""

import enum
import math

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TypeVar

import numpy as np

from .errors import AssumptionError, DegenerateChainError

PROB_ATOL = 1e-12

Belief = float
ArrayOrFloat = TypeVar("ArrayOrFloat", float, np.ndarray)


class Action(str, enum.Enum):
    LP = "LP"
    HP = "HP"


class ConsumerState(enum.IntEnum):
    NORMAL = 0
    ALERTED = 1

    @property
    def label(self) -> str:
        return self.name.capitalize()


def check_probability(value: float, name: str) -> float:
    """
    Validate a probability with a small tolerance at the boundaries and clip it
    """
    value = float(value)
    if math.isnan(value) or value < -PROB_ATOL or value > 1 + PROB_ATOL:
        raise AssumptionError(f"{name} must be a probability in [0, 1], got {value}")
    return min(max(value, 0.0), 1.0)


@dataclass(frozen=True)
class TransitionModel:
    """
    The 2x2 alerted-state chain: lambda_na = P(Alerted | Normal),
    lambda_aa = P(Alerted | Alerted).
    """

    lambda_na: float
    lambda_aa: float
    strict: bool = field(default=True, compare=False, repr=False)
    require_inertia: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "lambda_na", check_probability(self.lambda_na, "lambda_na")
        )
        object.__setattr__(
            self, "lambda_aa", check_probability(self.lambda_aa, "lambda_aa")
        )
        if self.strict and self.lambda_na > self.lambda_aa + PROB_ATOL:
            raise AssumptionError(
                f"Assumption 2 violated: lambda_na={self.lambda_na} must not exceed lambda_aa={self.lambda_aa}"
            )
        if self.require_inertia and not self.satisfies_inertia:
            raise AssumptionError(
                "Assumption 2 violated: need lambda_aa >= 0.5, lambda_na <= 0.5 and "
                f"lambda_na >= 1 - lambda_aa (got lambda_na={self.lambda_na}, lambda_aa={self.lambda_aa})"
            )

    @classmethod
    def permissive(cls, lambda_na: float, lambda_aa: float) -> "TransitionModel":
        """
        Any row-stochastic 2x2 chain, for oracle cross-checks
        """
        return cls(lambda_na, lambda_aa, strict=False)

    @property
    def gap(self) -> float:
        return self.lambda_aa - self.lambda_na

    @property
    def satisfies_inertia(self) -> bool:
        return (
            self.lambda_aa >= 0.5
            and self.lambda_na <= 0.5
            and self.lambda_na >= 1 - self.lambda_aa - PROB_ATOL
        )

    @property
    def is_degenerate(self) -> bool:
        return 1 - self.gap <= 0

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[1 - self.lambda_na, self.lambda_na], [1 - self.lambda_aa, self.lambda_aa]]
        )

    def row(self, state: int) -> float:
        """
        P(Alerted next | state)
        """
        return self.lambda_aa if state == ConsumerState.ALERTED else self.lambda_na

    def transition(self, p: ArrayOrFloat) -> ArrayOrFloat:
        return (1 - p) * self.lambda_na + p * self.lambda_aa

    def transition_n(self, p, n):
        """
        T^n(p), vectorized over p and n. T^0 is the identity.
        """
        n = np.asarray(n, dtype=float)
        if self.is_degenerate:
            return np.asarray(p, dtype=float) + 0.0 * n
        p_f = self.lambda_na / (1 - self.gap)
        return p_f + np.power(self.gap, n) * (np.asarray(p, dtype=float) - p_f)


@dataclass(frozen=True)
class CostModel:
    c_l: float
    c_hn: float
    c_ha: float
    beta: float
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        for name in ("c_l", "c_hn", "c_ha", "beta"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise AssumptionError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not 0 < self.beta < 1:
            raise AssumptionError(f"beta must lie in (0, 1), got {self.beta}")
        if self.strict and not self.c_hn <= self.c_l <= self.c_ha:
            raise AssumptionError(
                f"costs must satisfy c_hn <= c_l <= c_ha, got c_hn={self.c_hn}, c_l={self.c_l}, c_ha={self.c_ha}"
            )

    @classmethod
    def permissive(cls, c_l, c_hn, c_ha, beta) -> "CostModel":
        return cls(c_l, c_hn, c_ha, beta, strict=False)

    @property
    def c_max(self) -> float:
        return max(abs(self.c_l), abs(self.c_hn), abs(self.c_ha))

    @property
    def lp_forever(self) -> float:
        return self.c_l / (1 - self.beta)

    def hp_cost(self, p: ArrayOrFloat) -> ArrayOrFloat:
        return (1 - p) * self.c_hn + p * self.c_ha

    def replace(self, **changes) -> "CostModel":
        values = dict(c_l=self.c_l, c_hn=self.c_hn, c_ha=self.c_ha, beta=self.beta)
        values.update(changes)
        return CostModel(**values, strict=self.strict)


def horizon_for(beta: float, c_max: float, eps: float = 1e-3) -> int:
    """
    Smallest horizon whose discounted tail beta**h * c_max / (1 - beta) is below eps
    """
    if c_max <= 0:
        return 1
    return max(1, math.ceil(math.log(eps * (1 - beta) / c_max) / math.log(beta)))


def one_step_transition(p: Belief, m: TransitionModel) -> Belief:
    return m.transition(p)


def stationary_belief(m: TransitionModel) -> Belief:
    denominator = 1 - m.lambda_aa + m.lambda_na
    if denominator <= 0:
        raise DegenerateChainError(
            "chain with lambda_na=0 and lambda_aa=1 has no unique stationary belief"
        )
    return m.lambda_na / denominator


def instantaneous_cost(p: Belief, u: Action, c: CostModel) -> float:
    if Action(u) is Action.LP:
        return c.c_l
    return c.hp_cost(p)


def bellman_backup(
    p: Belief,
    u: Action,
    v_next: Callable[[float], float],
    m: TransitionModel,
    c: CostModel,
) -> float:
    """
    Normalized one-step backup: HP reveals the state and resets the belief to
    a row of the chain; LP pushes the belief through T.
    """
    if Action(u) is Action.HP:
        return c.hp_cost(p) + c.beta * (
            (1 - p) * v_next(m.lambda_na) + p * v_next(m.lambda_aa)
        )
    return c.c_l + c.beta * v_next(m.transition(p))

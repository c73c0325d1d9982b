"""
Here we create an abstract base class from which all solvers should be derived.

Solvers require a .solve() and a .report() method at the least.

Note that .report() doesn't print anything, but returns a JSON-ready dict that
the command line can dump!

The module also holds the algebra of "LP runs": from a belief x the retailer
offers n LP coupons (the belief follows the LP orbit T^n(x)) and then an HP
coupon, which reveals the state and resets the belief to one of two anchors.
Every closed form and exact evaluator in this package is built on it.
"""

import abc
import math

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import NonConvergenceError
from ..model import CostModel, TransitionModel

EPS_G = 1e-12
MAX_POLICY_ITERATIONS = 500


class Solver(abc.ABC):
    def __init__(self, model: Any, costs: Any, *args, **kwargs):
        super().__init__()
        self.model = model
        self.costs = costs
        self.config = kwargs.get("config", {})
        self.progress = kwargs.get("progress", False)

    @abc.abstractmethod
    def solve(self):
        """
        Run the solver and return its result object
        """
        pass

    @abc.abstractmethod
    def report(self, result) -> dict[str, Any]:
        """
        Turn a result into a JSON-serializable dict
        """
        pass


def n_max_for(beta: float, eps: float = EPS_G) -> int:
    """
    Truncation of LP-run searches: beta**n_max < eps
    """
    return max(1, math.ceil(math.log(eps) / math.log(beta)))


def lp_orbit(x: float, chain: TransitionModel, n_max: int) -> np.ndarray:
    """
    T^n(x) for n = 0..n_max
    """
    return np.asarray(chain.transition_n(x, np.arange(n_max + 1)), dtype=float)


def first_hit(orbit: np.ndarray, tau: float) -> int | None:
    """
    First n with T^n(x) <= tau, or None if the orbit never enters [0, tau]
    """
    hits = np.flatnonzero(orbit <= tau)
    return int(hits[0]) if hits.size else None


def run_values(
    orbit: np.ndarray, c: CostModel, v_na: float, v_aa: float
) -> np.ndarray:
    """
    Value of every run "n LPs then HP" along an orbit, given anchor values
    """
    n = np.arange(orbit.size)
    beta_n = c.beta**n
    hp = (1 - orbit) * (c.c_hn + c.beta * v_na) + orbit * (c.c_ha + c.beta * v_aa)
    return c.c_l * (1 - beta_n) / (1 - c.beta) + beta_n * hp


def best_run(
    orbit: np.ndarray, c: CostModel, v_na: float, v_aa: float
) -> tuple[float, int | None]:
    """
    Minimum over n of run_values, with LP forever as the n = None candidate.
    Ties go to the shortest run.
    """
    values = run_values(orbit, c, v_na, v_aa)
    n = int(np.argmin(values))
    if c.lp_forever < values[n] - EPS_G * max(1.0, abs(c.lp_forever)):
        return c.lp_forever, None
    return float(values[n]), n


def solve_run_policy(
    n_na: int | None,
    n_aa: int | None,
    orbit_na: np.ndarray,
    orbit_aa: np.ndarray,
    c: CostModel,
) -> tuple[float, float]:
    """
    Exact anchor values of the stationary rule playing n_na (resp. n_aa) LPs
    from the Normal (resp. Alerted) anchor before the next HP.
    The two run equations are linear in (V_na, V_aa).
    """
    matrix = np.eye(2)
    rhs = np.zeros(2)
    for row, (n, orbit) in enumerate(((n_na, orbit_na), (n_aa, orbit_aa))):
        if n is None:
            rhs[row] = c.lp_forever
            continue
        q = orbit[n]
        beta_n = c.beta**n
        matrix[row, 0] -= beta_n * c.beta * (1 - q)
        matrix[row, 1] -= beta_n * c.beta * q
        rhs[row] = c.c_l * (1 - beta_n) / (1 - c.beta) + beta_n * c.hp_cost(q)
    v_na, v_aa = np.linalg.solve(matrix, rhs)
    return float(v_na), float(v_aa)


@dataclass(frozen=True)
class AnchorValues:
    """
    Optimal values at the two HP anchors and the LP-run lengths reaching them
    """

    v_na: float
    v_aa: float
    n_na: int | None
    n_aa: int | None
    iterations: int = 0


def optimal_anchor_values(
    lp_chain: TransitionModel,
    hp_chain: TransitionModel,
    c: CostModel,
    n_max: int | None = None,
) -> AnchorValues:
    """
    Policy iteration over the LP-run lengths of both HP anchors. With
    hp_chain == lp_chain this reproduces the coupon-independent anchors; with a
    separate HP chain it gives the coupon-dependent ones.
    """
    n_max = n_max or n_max_for(c.beta)
    orbit_na = lp_orbit(hp_chain.lambda_na, lp_chain, n_max)
    orbit_aa = lp_orbit(hp_chain.lambda_aa, lp_chain, n_max)

    def improve(orbit: np.ndarray, current: int | None) -> int | None:
        best, n = best_run(orbit, c, v_na, v_aa)
        if n == current:
            return n
        values = run_values(orbit, c, v_na, v_aa)
        kept = c.lp_forever if current is None else values[current]
        # switching on float noise can cycle
        if kept <= best + EPS_G * max(1.0, abs(best)):
            return current
        return n

    v_na = v_aa = c.lp_forever
    policy: tuple[int | None, int | None] = (None, None)
    for iteration in range(1, MAX_POLICY_ITERATIONS + 1):
        n_na = improve(orbit_na, policy[0])
        n_aa = improve(orbit_aa, policy[1])
        if (n_na, n_aa) == policy and iteration > 1:
            return AnchorValues(v_na, v_aa, n_na, n_aa, iteration)
        policy = (n_na, n_aa)
        v_na, v_aa = solve_run_policy(n_na, n_aa, orbit_na, orbit_aa, c)
    raise NonConvergenceError(
        f"anchor policy iteration did not settle after {MAX_POLICY_ITERATIONS} rounds"
    )


def optimal_value(
    p: float,
    lp_chain: TransitionModel,
    c: CostModel,
    anchors: AnchorValues,
    n_max: int | None = None,
) -> float:
    """
    Exact optimal value at an arbitrary belief once the anchors are known
    """
    orbit = lp_orbit(p, lp_chain, n_max or n_max_for(c.beta))
    return best_run(orbit, c, anchors.v_na, anchors.v_aa)[0]

"""
Closed-form optimal threshold for the coupon-independent two-state model,
with the kappa bound and the lambda1/lambda2 bounds on it.

The solver enumerates the four (lambda case x T-branch) candidates, keeps the
self-consistent ones and breaks ties by the exact indifference residual of
each candidate's own threshold policy.
"""

import enum
import math
import warnings

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from scipy.optimize import bisect

from ..errors import (
    AmbiguousCaseWarning,
    DegenerateCostsError,
    NoConsistentCaseError,
    NoRootError,
    ValidationError,
)
from ..model import Belief, CostModel, TransitionModel, stationary_belief
from ._solver import (
    Solver,
    first_hit,
    lp_orbit,
    n_max_for,
    solve_run_policy,
)

CONSISTENCY_TOL = 1e-9
RESIDUAL_TOL = 1e-6
BISECT_XTOL = 1e-10
BISECT_MAXITER = 200


class LambdaCase(str, enum.Enum):
    ABOVE = "LambdaNaAboveTau"
    BELOW = "LambdaNaBelowTau"


class Branch(str, enum.Enum):
    GE = "TtauGE"
    LT = "TtauLT"


@dataclass(frozen=True)
class Candidate:
    lambda_case: LambdaCase | None
    branch: Branch
    tau: float
    v_lambda_na: float
    v_lambda_aa: float
    n_star: int | None
    consistent: bool
    conditions: dict[str, float]
    residual: float = math.nan
    policy_cost: float = math.nan
    case: int | None = None

    def __str__(self) -> str:
        label = f"case {self.case}" if self.case else f"{self.lambda_case}/{self.branch}"
        conditions = ", ".join(f"{k}={v:.3g}" for k, v in self.conditions.items())
        return f"{label}: tau={self.tau:.6g} consistent={self.consistent} ({conditions})"


@dataclass(frozen=True)
class ThresholdSolution:
    tau: float
    branch: Branch
    lambda_case: LambdaCase
    v_lambda_na: float
    v_lambda_aa: float
    n_star: int | None
    kappa: float
    p_f: float | None
    case: int | None = None
    tie_break: bool = False
    clipped: bool = False
    candidates: tuple[Candidate, ...] = ()
    printed_candidates: dict[str, Any] = field(default_factory=dict)
    defects: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, Any]:
        out = {
            k: v
            for k, v in asdict(self).items()
            if k not in ("candidates", "printed_candidates")
        }
        out["branch"] = self.branch.value
        out["lambda_case"] = self.lambda_case.value
        out["defects"] = list(self.defects)
        out["candidates"] = [str(c) for c in self.candidates]
        if self.printed_candidates:
            out["printed_candidates"] = self.printed_candidates
        return out


@dataclass(frozen=True)
class MiddleRegimeBounds:
    lambda1: float
    lambda2: float
    closed_form_tau: float | None
    tau_upper: float


@dataclass(frozen=True)
class PolicyValue:
    """
    Exact discounted value of a stationary threshold rule
    """

    tau: float
    v_na: float
    v_aa: float
    n_na: int | None
    n_aa: int | None
    value: float | None = None
    p: float | None = None


def kappa(c: CostModel) -> float:
    if c.c_ha == c.c_hn:
        raise DegenerateCostsError(
            f"kappa undefined: c_ha == c_hn == {c.c_ha}, HP cost carries no state information"
        )
    return min(max((c.c_l - c.c_hn) / (c.c_ha - c.c_hn), 0.0), 1.0)


def _continuation_hn(m: TransitionModel, c: CostModel) -> float:
    """
    C(lambda_na) of the G(n) formula
    """
    return (
        c.beta
        * ((1 - m.lambda_na) * c.c_hn + m.lambda_na * c.c_ha)
        / (1 - (1 - m.lambda_na) * c.beta)
    )


def evaluate_G(n, m: TransitionModel, c: CostModel):
    """
    G(n): value at lambda_aa of "n LPs, then HP", with HP always played at lambda_na.
    Vectorized over n.
    """
    n = np.asarray(n, dtype=float)
    t_n = np.asarray(m.transition_n(m.lambda_aa, n), dtype=float)
    t_bar = 1 - t_n
    beta_n = c.beta**n
    numerator = c.c_l * (1 - beta_n) / (1 - c.beta) + beta_n * (
        t_bar * (c.c_hn + _continuation_hn(m, c)) + t_n * c.c_ha
    )
    reset = m.lambda_na * c.beta / (1 - (1 - m.lambda_na) * c.beta)
    denominator = 1 - beta_n * c.beta * (t_bar * reset + t_n)
    return numerator / denominator


def G_limit(c: CostModel) -> float:
    return c.lp_forever


def value_at_anchors(
    m: TransitionModel,
    c: CostModel,
    tau_hypothesis: Belief | None = None,
    lambda_case: LambdaCase = LambdaCase.BELOW,
) -> tuple[float, float, int | None]:
    """
    Anchor values (V(lambda_na), V(lambda_aa), n_star) under a lambda case
    """
    lambda_case = LambdaCase(lambda_case)
    if tau_hypothesis is not None:
        above = m.lambda_na >= tau_hypothesis
        if above != (lambda_case is LambdaCase.ABOVE):
            raise ValidationError(
                f"{lambda_case.value} is inconsistent with tau={tau_hypothesis}, lambda_na={m.lambda_na}"
            )
    if lambda_case is LambdaCase.ABOVE:
        return c.lp_forever, c.lp_forever, None

    g = evaluate_G(np.arange(n_max_for(c.beta) + 1), m, c)
    n_star: int | None = int(np.argmin(g))
    v_aa = float(g[n_star])
    if G_limit(c) < v_aa:
        v_aa, n_star = G_limit(c), None
    # V(lambda_na) = C(lambda_na, HP) + beta*[(1-lambda_na) V(lambda_na) + lambda_na V(lambda_aa)]
    v_na = (c.hp_cost(m.lambda_na) + c.beta * m.lambda_na * v_aa) / (
        1 - c.beta * (1 - m.lambda_na)
    )
    return v_na, v_aa, n_star


def branch_tau(
    branch: Branch,
    m: TransitionModel,
    c: CostModel,
    v_na: float,
    v_aa: float,
) -> float:
    """
    Root of V_LP(tau) = V_HP(tau) on one T-branch, given the HP anchor values
    """
    a = c.c_hn + c.beta * v_na
    delta = c.c_ha - c.c_hn + c.beta * (v_aa - v_na)
    if delta == 0:
        return math.nan
    if branch is Branch.GE:
        return (c.lp_forever - a) / delta
    return (c.c_l - (1 - c.beta) * a + c.beta * m.lambda_na * delta) / (
        (1 - c.beta * m.gap) * delta
    )


def evaluate_threshold_policy(
    tau: float,
    m: TransitionModel,
    c: CostModel,
    p: Belief | None = None,
    hp_chain: TransitionModel | None = None,
) -> PolicyValue:
    """
    Exact value of "HP iff p <= tau": from any belief the rule plays LPs until
    the LP orbit enters [0, tau] and then HP, which resets to an anchor.
    """
    hp_chain = hp_chain or m
    n_max = n_max_for(c.beta)
    orbit_na = lp_orbit(hp_chain.lambda_na, m, n_max)
    orbit_aa = lp_orbit(hp_chain.lambda_aa, m, n_max)
    n_na, n_aa = first_hit(orbit_na, tau), first_hit(orbit_aa, tau)
    v_na, v_aa = solve_run_policy(n_na, n_aa, orbit_na, orbit_aa, c)
    value = None
    if p is not None:
        orbit = lp_orbit(p, m, n_max)
        n = first_hit(orbit, tau)
        if n is None:
            value = c.lp_forever
        else:
            beta_n = c.beta**n
            q = orbit[n]
            value = c.c_l * (1 - beta_n) / (1 - c.beta) + beta_n * (
                (1 - q) * (c.c_hn + c.beta * v_na) + q * (c.c_ha + c.beta * v_aa)
            )
    return PolicyValue(tau, v_na, v_aa, n_na, n_aa, value, p)


def score_threshold(
    tau: float,
    m: TransitionModel,
    c: CostModel,
    hp_chain: TransitionModel | None = None,
) -> tuple[float, float]:
    """
    (|V_LP(tau) - V_HP(tau)|, V(na anchor) + V(aa anchor)) under the exact values
    of the rule with threshold tau
    """
    hp_chain = hp_chain or m
    policy = evaluate_threshold_policy(tau, m, c, p=m.transition(tau), hp_chain=hp_chain)
    assert policy.value is not None
    q_lp = c.c_l + c.beta * policy.value
    q_hp = c.hp_cost(tau) + c.beta * ((1 - tau) * policy.v_na + tau * policy.v_aa)
    return abs(q_lp - q_hp), policy.v_na + policy.v_aa


def indifference_residual(
    tau: float,
    m: TransitionModel,
    c: CostModel,
    hp_chain: TransitionModel | None = None,
) -> float:
    return score_threshold(tau, m, c, hp_chain)[0]


def _check_candidate(
    lambda_case: LambdaCase, branch: Branch, tau: float, m: TransitionModel
) -> tuple[bool, dict[str, float]]:
    conditions = {
        "lambda_na-tau": m.lambda_na - tau,
        "T(tau)-tau": m.transition(tau) - tau if math.isfinite(tau) else math.nan,
    }
    if not math.isfinite(tau):
        return False, conditions
    ok = -CONSISTENCY_TOL <= tau <= 1 + CONSISTENCY_TOL
    if lambda_case is LambdaCase.ABOVE:
        ok = ok and conditions["lambda_na-tau"] >= -CONSISTENCY_TOL
    else:
        ok = ok and conditions["lambda_na-tau"] < CONSISTENCY_TOL
    if branch is Branch.GE:
        ok = ok and conditions["T(tau)-tau"] >= -CONSISTENCY_TOL
    else:
        ok = ok and conditions["T(tau)-tau"] < CONSISTENCY_TOL
    return ok, conditions


def pick_candidate(
    candidates: list[Candidate], what: str
) -> tuple[Candidate, bool]:
    """
    The unique consistent candidate, or the smallest-residual one with a warning
    """
    consistent = [c for c in candidates if c.consistent]
    if not consistent:
        raise NoConsistentCaseError(f"no self-consistent case for {what}", candidates)
    if len(consistent) == 1:
        return consistent[0], False
    # an exact-residual tie between locally consistent rules goes to the cheaper rule
    best = min(consistent, key=lambda c: (c.residual > RESIDUAL_TOL, c.policy_cost))
    warnings.warn(
        f"{len(consistent)} consistent cases for {what}; kept {best}",
        AmbiguousCaseWarning,
        stacklevel=3,
    )
    return best, True


class ThresholdSolver(Solver):
    """
    Closed-form threshold of the coupon-independent model
    """

    def __init__(self, model: TransitionModel, costs: CostModel, *args, **kwargs):
        super().__init__(model, costs, *args, **kwargs)

    def candidates(self) -> list[Candidate]:
        m, c = self.model, self.costs
        out = []
        for lambda_case in LambdaCase:
            v_na, v_aa, n_star = value_at_anchors(m, c, lambda_case=lambda_case)
            for branch in Branch:
                tau = branch_tau(branch, m, c, v_na, v_aa)
                consistent, conditions = _check_candidate(lambda_case, branch, tau, m)
                if consistent:
                    tau = min(max(tau, 0.0), 1.0)
                residual, policy_cost = (
                    score_threshold(tau, m, c) if consistent else (math.nan, math.nan)
                )
                out.append(
                    Candidate(
                        lambda_case,
                        branch,
                        tau,
                        v_na,
                        v_aa,
                        n_star,
                        consistent,
                        conditions,
                        residual,
                        policy_cost,
                    )
                )
        return out

    def solve(self) -> ThresholdSolution:
        m, c = self.model, self.costs
        k = kappa(c)
        candidates = self.candidates()
        chosen, tie_break = pick_candidate(candidates, f"{m}, {c}")
        return ThresholdSolution(
            tau=chosen.tau,
            branch=chosen.branch,
            lambda_case=chosen.lambda_case or LambdaCase.BELOW,
            v_lambda_na=chosen.v_lambda_na,
            v_lambda_aa=chosen.v_lambda_aa,
            n_star=chosen.n_star,
            kappa=k,
            p_f=None if m.is_degenerate else stationary_belief(m),
            tie_break=tie_break,
            candidates=tuple(candidates) if tie_break else (),
        )

    def report(self, result: ThresholdSolution) -> dict[str, Any]:
        out = result.as_dict()
        try:
            bounds = middle_regime_bounds(self.model, self.costs)
            out["bounds"] = asdict(bounds)
        except NoRootError as err:
            out["bounds"] = {"error": str(err)}
        return out


def solve_threshold(m: TransitionModel, c: CostModel) -> ThresholdSolution:
    return ThresholdSolver(m, c).solve()


def hp_below_kappa(c: CostModel, p: Belief) -> bool:
    return p <= kappa(c)


def _middle_regime_line(x, m: TransitionModel, c: CostModel) -> float:
    denominator = (1 - c.beta) * c.c_ha - c.c_hn + c.beta * c.c_l
    return (c.beta * (c.c_l - c.c_ha) * x + c.c_l - c.c_hn) / denominator


def _stationary_at(x: float, m: TransitionModel) -> float:
    """
    Stationary belief of the chain (x, lambda_aa)
    """
    denominator = 1 - (m.lambda_aa - x)
    return 0.0 if x == 0 else x / denominator


def middle_regime_bounds(m: TransitionModel, c: CostModel) -> MiddleRegimeBounds:
    lambda1 = kappa(c)

    def h(x: float) -> float:
        return _stationary_at(x, m) - _middle_regime_line(x, m, c)

    lo, hi = h(0.0), h(lambda1)
    if lo == 0:
        lambda2 = 0.0
    elif hi == 0:
        lambda2 = lambda1
    elif lo * hi > 0:
        raise NoRootError(
            f"no lambda2 in [0, {lambda1}]: bracket values {lo:.6g}, {hi:.6g} (lambda_aa={m.lambda_aa})"
        )
    else:
        lambda2 = bisect(h, 0.0, lambda1, xtol=BISECT_XTOL, maxiter=BISECT_MAXITER)

    closed_form: float | None = None
    if m.lambda_na > lambda1:
        closed_form = lambda1
    elif lambda2 < m.lambda_na < lambda1:
        closed_form = _middle_regime_line(m.lambda_na, m, c)
    return MiddleRegimeBounds(
        lambda1=lambda1,
        lambda2=lambda2,
        closed_form_tau=closed_form,
        tau_upper=min(max(_stationary_at(lambda2, m), 0.0), 1.0),
    )

"""
Thresholds when the coupon itself moves the consumer: LP offers follow one
chain, HP offers another (lambda'_NA > lambda_NA, lambda'_AA > lambda_AA).

HP resets the belief to a row of the HP chain while LP pushes it through the
LP chain's map T. The anchor values V(lambda'_NA), V(lambda'_AA) are solved
exactly; the four cases (sign of T(tau) - tau, sign of T'(tau) - tau) then
each give a candidate from the matching T-branch indifference equation.
"""

import math
import warnings

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from tqdm import tqdm

from ..errors import (
    AssumptionError,
    ClosedFormDefectWarning,
    DegenerateChainError,
    ResolutionError,
    SolverError,
)
from ..model import CostModel, TransitionModel, stationary_belief
from ._solver import AnchorValues, Solver, optimal_anchor_values, optimal_value
from .threshold import (
    CONSISTENCY_TOL,
    Branch,
    Candidate,
    LambdaCase,
    ThresholdSolution,
    branch_tau,
    kappa,
    pick_candidate,
    score_threshold,
    solve_threshold,
)
from .value_iteration import (
    DEFAULT_GRID,
    DEFAULT_TOL,
    MAX_GRID_POINTS,
    TwoStateValueIteration,
    ValueTable,
)

LP_ONLY_TOL = 1e-9

# (sign of T(tau) - tau, sign of T'(tau) - tau) for cases 1..4
CASE_SIGNS = {1: (1, 1), 2: (-1, 1), 3: (-1, -1), 4: (1, -1)}


@dataclass(frozen=True)
class CouponDependentModel:
    lp_chain: TransitionModel
    hp_chain: TransitionModel
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not self.strict:
            return
        for name, chain in (("lp_chain", self.lp_chain), ("hp_chain", self.hp_chain)):
            if not chain.lambda_aa > chain.lambda_na:
                raise AssumptionError(
                    f"{name} needs lambda_aa > lambda_na, got {chain.lambda_na}, {chain.lambda_aa}"
                )
        if not (
            self.hp_chain.lambda_na > self.lp_chain.lambda_na
            and self.hp_chain.lambda_aa > self.lp_chain.lambda_aa
        ):
            raise AssumptionError(
                "an HP coupon must raise both alert probabilities: need "
                f"lambda'_na > lambda_na and lambda'_aa > lambda_aa, got {self.hp_chain} vs {self.lp_chain}"
            )

    @classmethod
    def permissive(
        cls, lp_chain: TransitionModel, hp_chain: TransitionModel
    ) -> "CouponDependentModel":
        """
        No ordering between the chains, so hp_chain == lp_chain is allowed
        """
        return cls(lp_chain, hp_chain, strict=False)

    @property
    def is_independent(self) -> bool:
        return self.lp_chain == self.hp_chain

    def chain_for(self, hp: bool) -> TransitionModel:
        return self.hp_chain if hp else self.lp_chain


def eta(chain: TransitionModel, beta: float) -> float:
    return beta * chain.gap / (1 - beta * chain.gap)


def _stationary_or_nan(chain: TransitionModel) -> float:
    try:
        return stationary_belief(chain)
    except DegenerateChainError:
        return math.nan


def printed_candidates(m: CouponDependentModel, c: CostModel) -> dict[str, float]:
    """
    The four case thresholds in the closed forms that ignore the HP-chain anchors
    """
    k = kappa(c)
    b = c.beta / (1 - c.beta)
    d = c.c_ha - c.c_hn
    e, e_hp = eta(m.lp_chain, c.beta), eta(m.hp_chain, c.beta)
    p_f, p_f_hp = _stationary_or_nan(m.lp_chain), _stationary_or_nan(m.hp_chain)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau2 = ((c.c_l - c.c_hn) + p_f * d * (b - e) + b * (c.c_hn - c.c_l)) / (
            d * (1 - e)
        )
        tau3 = (c.c_l - c.c_hn + d * (b * (p_f - p_f_hp) - (p_f * e - p_f_hp * e_hp))) / (
            d * (e_hp - e + 1)
        )
        tau4 = ((c.c_l - c.c_hn) * (1 + b) - p_f_hp * d * (e_hp - b)) / (d * (1 + e_hp))
    return {"case1": k, "case2": float(tau2), "case3": float(tau3), "case4": float(tau4)}


def _signs(tau: float, m: CouponDependentModel) -> tuple[int, int]:
    t = m.lp_chain.transition(tau) - tau
    t_hp = m.hp_chain.transition(tau) - tau
    return (1 if t >= -CONSISTENCY_TOL else -1, 1 if t_hp >= -CONSISTENCY_TOL else -1)


def case_of(tau: float, m: CouponDependentModel) -> int:
    signs = _signs(tau, m)
    return next(k for k, s in CASE_SIGNS.items() if s == signs)


class CouponDependentSolver(Solver):
    """
    Exact-anchor four-case threshold of the coupon-dependent model
    """

    def __init__(
        self,
        model: CouponDependentModel,
        costs: CostModel,
        *args,
        grid_size: int = DEFAULT_GRID,
        **kwargs,
    ):
        super().__init__(model, costs, *args, **kwargs)
        self.grid_size = grid_size

    def gap(self, tau: float, anchors: AnchorValues) -> float:
        """
        Q_LP(tau) - Q_HP(tau) under the optimal value function
        """
        m, c = self.model, self.costs
        v_next = optimal_value(m.lp_chain.transition(tau), m.lp_chain, c, anchors)
        q_hp = c.hp_cost(tau) + c.beta * ((1 - tau) * anchors.v_na + tau * anchors.v_aa)
        return c.c_l + c.beta * v_next - q_hp

    def candidates(self, anchors: AnchorValues) -> list[Candidate]:
        m, c = self.model, self.costs
        out = []
        for case, (t_sign, hp_sign) in CASE_SIGNS.items():
            branch = Branch.GE if t_sign > 0 else Branch.LT
            tau = branch_tau(branch, m.lp_chain, c, anchors.v_na, anchors.v_aa)
            conditions = {"T(tau)-tau": math.nan, "T'(tau)-tau": math.nan}
            consistent = math.isfinite(tau) and -CONSISTENCY_TOL <= tau <= 1 + CONSISTENCY_TOL
            if math.isfinite(tau):
                conditions = {
                    "T(tau)-tau": m.lp_chain.transition(tau) - tau,
                    "T'(tau)-tau": m.hp_chain.transition(tau) - tau,
                }
                consistent = consistent and _signs(tau, m) == (t_sign, hp_sign)
            residual = policy_cost = math.nan
            if consistent:
                tau = min(max(tau, 0.0), 1.0)
                residual, policy_cost = score_threshold(tau, m.lp_chain, c, m.hp_chain)
            out.append(
                Candidate(
                    None,
                    branch,
                    tau,
                    anchors.v_na,
                    anchors.v_aa,
                    anchors.n_aa,
                    consistent,
                    conditions,
                    residual,
                    policy_cost,
                    case,
                )
            )
        return out

    def solve(self) -> ThresholdSolution:
        m, c = self.model, self.costs
        k = kappa(c)
        anchors = optimal_anchor_values(m.lp_chain, m.hp_chain, c)
        scale = 1e-9 * max(1.0, abs(c.lp_forever))

        candidates: list[Candidate] = []
        tie_break = False
        if self.gap(0.0, anchors) < -scale:
            tau, branch = 0.0, Branch.GE
        elif self.gap(1.0, anchors) >= -scale:
            tau, branch = 1.0, Branch.LT
        else:
            candidates = self.candidates(anchors)
            chosen, tie_break = pick_candidate(candidates, f"{m}, {c}")
            tau, branch = chosen.tau, chosen.branch
        case = case_of(tau, m)

        printed = printed_candidates(m, c)
        defects = []
        fired = printed[f"case{case}"]
        step = 2.0 / (self.grid_size - 1)
        if math.isfinite(fired) and abs(min(max(fired, 0.0), 1.0) - tau) > step:
            defect = f"case {case} closed form gives {fired:.6g}, exact threshold is {tau:.6g}"
            defects.append(defect)
            warnings.warn(defect, ClosedFormDefectWarning, stacklevel=2)

        return ThresholdSolution(
            tau=tau,
            branch=branch,
            lambda_case=LambdaCase.ABOVE if m.hp_chain.lambda_na >= tau else LambdaCase.BELOW,
            v_lambda_na=anchors.v_na,
            v_lambda_aa=anchors.v_aa,
            n_star=anchors.n_aa,
            kappa=k,
            p_f=_stationary_or_nan(m.lp_chain),
            case=case,
            tie_break=tie_break,
            candidates=tuple(candidates) if tie_break else (),
            printed_candidates=printed,
            defects=tuple(defects),
        )

    def report(self, result: ThresholdSolution) -> dict[str, Any]:
        out = result.as_dict()
        out["p_f_hp"] = _stationary_or_nan(self.model.hp_chain)
        return out


def solve_threshold_cd(
    m: CouponDependentModel, c: CostModel, grid_size: int = DEFAULT_GRID
) -> ThresholdSolution:
    return CouponDependentSolver(m, c, grid_size=grid_size).solve()


def vi_oracle_cd(
    m: CouponDependentModel,
    c: CostModel,
    grid: int = DEFAULT_GRID,
    tol: float = DEFAULT_TOL,
    **kwargs,
) -> ValueTable:
    return TwoStateValueIteration(
        m.lp_chain, c, hp_chain=m.hp_chain, grid_size=grid, tol=tol, **kwargs
    ).solve()


@dataclass(frozen=True, eq=False)
class RegionMask:
    """
    LP-only flags and thresholds over a (C_L, C_HA) grid; rows follow c_l
    """

    c_l: np.ndarray
    c_ha: np.ndarray
    lp_only: np.ndarray
    tau: np.ndarray
    failures: tuple[str, ...] = ()

    def rows(self):
        for i, c_l in enumerate(self.c_l):
            for j, c_ha in enumerate(self.c_ha):
                if math.isnan(self.tau[i, j]):
                    continue
                yield [c_l, c_ha, bool(self.lp_only[i, j]), self.tau[i, j]]


def lp_only_region(
    model: TransitionModel | CouponDependentModel,
    c_hn: float,
    beta: float,
    c_l_values,
    c_ha_values,
    progress: bool = False,
) -> RegionMask:
    """
    Cost pairs with tau = 0. Pairs outside c_hn <= c_l <= c_ha stay NaN.
    """
    c_l_values = np.asarray(c_l_values, dtype=float)
    c_ha_values = np.asarray(c_ha_values, dtype=float)
    if c_l_values.size * c_ha_values.size > MAX_GRID_POINTS:
        raise ResolutionError(
            f"{c_l_values.size} x {c_ha_values.size} cost pairs exceed "
            f"the limit of {MAX_GRID_POINTS}"
        )
    tau = np.full((c_l_values.size, c_ha_values.size), np.nan)
    failures = []
    pairs = [(i, j) for i in range(c_l_values.size) for j in range(c_ha_values.size)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClosedFormDefectWarning)
        for i, j in tqdm(pairs, desc="region", disable=not progress):
            c_l, c_ha = c_l_values[i], c_ha_values[j]
            if not c_hn <= c_l <= c_ha or c_ha == c_hn:
                continue
            c = CostModel(c_l, c_hn, c_ha, beta)
            try:
                if isinstance(model, CouponDependentModel):
                    tau[i, j] = solve_threshold_cd(model, c).tau
                else:
                    tau[i, j] = solve_threshold(model, c).tau
            except SolverError as err:
                failures.append(f"c_l={c_l:g}, c_ha={c_ha:g}: {err}")
    return RegionMask(
        c_l_values,
        c_ha_values,
        np.nan_to_num(tau, nan=1.0) <= LP_ONLY_TOL,
        tau,
        tuple(failures),
    )

"""
Brute-force oracle: value iteration on a discretized belief space.

Two-state beliefs live on a uniform grid of [0, 1] with linear interpolation
for off-grid queries; multi-state beliefs live on a barycentric grid of the
simplex with Freudenthal (Kuhn) interpolation, assembled once as a sparse
matrix so every sweep is two matrix-vector products.
"""

import functools
import itertools
import math

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from scipy import sparse
from tqdm import tqdm

from ..errors import (
    AssumptionError,
    NonConvergenceError,
    NonThresholdStructureError,
    ResolutionError,
    ValidationError,
)
from ..model import Action, CostModel, TransitionModel
from ..utils import write_table
from ._solver import Solver

DEFAULT_GRID = 2001
DEFAULT_TOL = 1e-9
DEFAULT_DIVISIONS = 100
MAX_GRID_POINTS = 1_000_000
MAX_STATES = 4
SWEEP_MARGIN = 100
MAX_MIDPOINT_PAIRS = 40_000_000


def max_sweeps_for(tol: float, beta: float, c_max: float) -> int:
    ratio = tol * (1 - beta) / max(c_max, tol)
    if ratio >= 1:
        return SWEEP_MARGIN
    return math.ceil(math.log(ratio) / math.log(beta)) + SWEEP_MARGIN


def tie_atol(tol: float, beta: float) -> float:
    """
    Q-value gaps below the value error of a tol-converged table count as ties
    """
    return 10 * tol / (1 - beta)


def _compositions(total: int, parts: int) -> np.ndarray:
    """
    All nonnegative integer vectors of length `parts` summing to `total`
    """
    rows = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + bars + (total + parts - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.array(rows, dtype=np.int64)


def _suffix_coords(lattice: np.ndarray) -> np.ndarray:
    """
    Freudenthal coordinates: x_j = sum_{k >= j} a_k for j = 1..S-1
    """
    return np.cumsum(lattice[:, ::-1], axis=1)[:, ::-1][:, 1:]


@dataclass(frozen=True, eq=False)
class BeliefGrid:
    points: np.ndarray
    resolution: float
    lattice: np.ndarray | None = None
    keys: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def uniform(cls, size: int) -> "BeliefGrid":
        if size < 2:
            raise ValidationError(f"grid needs at least 2 points, got {size}")
        if size > MAX_GRID_POINTS:
            raise ResolutionError(f"{size} grid points exceed the limit of {MAX_GRID_POINTS}")
        return cls(np.linspace(0.0, 1.0, size), 1.0 / (size - 1))

    @classmethod
    def simplex(cls, states: int, divisions: int) -> "BeliefGrid":
        if states < 2 or divisions < 1:
            raise ValidationError(
                f"simplex grid needs >= 2 states and >= 1 division, got {states}, {divisions}"
            )
        count = math.comb(divisions + states - 1, states - 1)
        if count > MAX_GRID_POINTS:
            raise ResolutionError(
                f"simplex grid with {count} points exceeds the limit of {MAX_GRID_POINTS}"
            )
        lattice = _compositions(divisions, states)
        radix = (divisions + 1) ** np.arange(states - 1, dtype=np.int64)
        keys = _suffix_coords(lattice) @ radix
        order = np.argsort(keys, kind="stable")
        lattice, keys = lattice[order], keys[order]
        return cls(lattice / divisions, 1.0 / divisions, lattice, keys)

    @property
    def is_simplex(self) -> bool:
        return self.lattice is not None

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def divisions(self) -> int:
        return int(round(1 / self.resolution))

    @property
    def states(self) -> int:
        return 2 if self.lattice is None else int(self.lattice.shape[1])

    def lookup(self, lattice_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Grid indices of integer lattice points, and which of them exist
        """
        assert self.keys is not None
        radix = (self.divisions + 1) ** np.arange(self.states - 1, dtype=np.int64)
        keys = _suffix_coords(lattice_points) @ radix
        idx = np.clip(np.searchsorted(self.keys, keys), 0, self.size - 1)
        valid = (self.keys[idx] == keys) & np.all(lattice_points >= 0, axis=1)
        return idx, valid

    def interpolation_matrix(self, queries: np.ndarray) -> sparse.csr_matrix:
        """
        Sparse (len(queries) x size) matrix of Freudenthal barycentric weights
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        m, s = queries.shape
        n = self.divisions
        y = n * np.cumsum(queries[:, ::-1], axis=1)[:, ::-1][:, 1:]
        base = np.clip(np.floor(y + 1e-9), 0, n)
        frac = np.clip(y - base, 0.0, 1.0)
        order = np.argsort(-frac, axis=1, kind="stable")
        ranked = np.take_along_axis(frac, order, axis=1)

        weights = np.empty((m, s))
        weights[:, 0] = 1 - ranked[:, 0]
        weights[:, 1:-1] = ranked[:, :-1] - ranked[:, 1:]
        weights[:, -1] = ranked[:, -1]

        steps = np.zeros((m, s, s - 1), dtype=np.int64)
        rows = np.arange(m)
        for k in range(1, s):
            steps[:, k] = steps[:, k - 1]
            steps[rows, k, order[:, k - 1]] += 1
        vertices = base.astype(np.int64)[:, None, :] + steps
        radix = (n + 1) ** np.arange(s - 1, dtype=np.int64)
        keys = vertices @ radix
        idx = np.clip(np.searchsorted(self.keys, keys), 0, self.size - 1)
        valid = self.keys[idx] == keys

        lost = np.where(valid, 0.0, weights).sum(axis=1)
        if np.any(lost > 1e-9):
            raise ValidationError("belief query outside the simplex grid")
        weights = np.where(valid, weights, 0.0)
        weights /= weights.sum(axis=1, keepdims=True)
        return sparse.csr_matrix(
            (weights.ravel(), (np.repeat(rows, s), idx.ravel())), shape=(m, self.size)
        )


@dataclass(frozen=True, eq=False)
class ValueTable:
    grid: BeliefGrid
    values: np.ndarray
    hp: np.ndarray
    gap: np.ndarray
    residual: float
    sweeps: int
    tol: float = DEFAULT_TOL
    history: tuple[float, ...] = ()

    @property
    def actions(self) -> list[Action]:
        return [Action.HP if h else Action.LP for h in self.hp]

    def value_at(self, p: float) -> float:
        if self.grid.is_simplex:
            weights = self.grid.interpolation_matrix(np.atleast_2d(p))
            return float((weights @ self.values)[0])
        return float(np.interp(p, self.grid.points, self.values))

    def header(self) -> list[str]:
        if not self.grid.is_simplex:
            return ["p", "value", "action"]
        names = ["p_n"] + [f"p_a{k}" for k in range(1, self.grid.states)]
        return names + ["value", "action"]

    def rows(self):
        points = self.grid.points
        for i in range(self.grid.size):
            coords = list(points[i]) if self.grid.is_simplex else [points[i]]
            yield coords + [self.values[i], "HP" if self.hp[i] else "LP"]

    def to_csv(self, path: str) -> int:
        return write_table(path, self.header(), self.rows())


@dataclass(frozen=True, eq=False)
class MultiStateModel:
    """
    (K+1)-state chain over (Normal, Alerted_1..Alerted_K) with HP costs per state
    """

    transition: np.ndarray
    hp_costs: np.ndarray
    lp_cost: float
    beta: float
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        hp_costs = np.asarray(self.hp_costs, dtype=float)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "hp_costs", hp_costs)
        s = transition.shape[0]
        if transition.ndim != 2 or transition.shape != (s, s):
            raise AssumptionError(f"transition must be square, got shape {transition.shape}")
        if not 2 <= s <= MAX_STATES:
            raise AssumptionError(f"need 2..{MAX_STATES} states, got {s}")
        if np.any(transition < -1e-12) or np.any(transition > 1 + 1e-12):
            raise AssumptionError("transition entries must be probabilities")
        if np.any(np.abs(transition.sum(axis=1) - 1) > 1e-12):
            raise AssumptionError("transition rows must sum to 1")
        if hp_costs.shape != (s,):
            raise AssumptionError(f"need {s} HP costs, got {hp_costs.shape}")
        if not 0 < self.beta < 1:
            raise AssumptionError(f"beta must lie in (0, 1), got {self.beta}")
        ordered = hp_costs[0] <= self.lp_cost <= hp_costs[1] and np.all(
            np.diff(hp_costs[1:]) >= 0
        )
        if self.strict and not ordered:
            raise AssumptionError(
                "costs must satisfy c_hak >= ... >= c_ha1 >= c_l >= c_hn"
            )

    @classmethod
    def from_two_state(cls, m: TransitionModel, c: CostModel) -> "MultiStateModel":
        return cls(m.matrix, np.array([c.c_hn, c.c_ha]), c.c_l, c.beta)

    @property
    def states(self) -> int:
        return int(self.transition.shape[0])

    @property
    def c_max(self) -> float:
        return float(max(abs(self.lp_cost), np.max(np.abs(self.hp_costs))))


def _iterate(
    values: np.ndarray,
    backup,
    tol: float,
    max_sweeps: int,
    progress: bool,
    what: str,
):
    history = []
    bar = tqdm(total=max_sweeps, desc=what, disable=not progress, leave=False)
    try:
        for sweep in range(1, max_sweeps + 1):
            q_lp, q_hp = backup(values)
            new = np.minimum(q_lp, q_hp)
            residual = float(np.max(np.abs(new - values)))
            values = new
            history.append(residual)
            bar.update()
            if residual <= tol:
                return values, q_lp, q_hp, history
    finally:
        bar.close()
    raise NonConvergenceError(
        f"{what}: residual {history[-1]:.3g} > tol {tol:.3g} after {max_sweeps} sweeps"
    )


class TwoStateValueIteration(Solver):
    """
    Value iteration on [0, 1]; HP resets to the anchors of hp_chain (the LP
    chain unless transitions depend on the coupon)
    """

    def __init__(
        self,
        model: TransitionModel,
        costs: CostModel,
        *args,
        hp_chain: TransitionModel | None = None,
        grid_size: int = DEFAULT_GRID,
        tol: float = DEFAULT_TOL,
        max_sweeps: int | None = None,
        **kwargs,
    ):
        super().__init__(model, costs, *args, **kwargs)
        if grid_size < 101:
            raise ValidationError(f"grid_size must be >= 101, got {grid_size}")
        if tol <= 0:
            raise ValidationError(f"tol must be positive, got {tol}")
        self.hp_chain = hp_chain or model
        self.grid_size = grid_size
        self.tol = tol
        self.max_sweeps = max_sweeps or max_sweeps_for(tol, costs.beta, costs.c_max)

    def solve(self) -> ValueTable:
        m, c = self.model, self.costs
        grid = BeliefGrid.uniform(self.grid_size)
        p = grid.points
        t_p = m.transition(p)
        anchors = np.array([self.hp_chain.lambda_na, self.hp_chain.lambda_aa])
        c_hp = c.hp_cost(p)

        def backup(v):
            v_t = np.interp(t_p, p, v)
            v_na, v_aa = np.interp(anchors, p, v)
            return c.c_l + c.beta * v_t, c_hp + c.beta * ((1 - p) * v_na + p * v_aa)

        values, q_lp, q_hp, history = _iterate(
            np.zeros_like(p), backup, self.tol, self.max_sweeps, self.progress, "value iteration"
        )
        gap = q_lp - q_hp
        return ValueTable(
            grid,
            values,
            gap >= -tie_atol(self.tol, c.beta),
            gap,
            history[-1],
            len(history),
            self.tol,
            tuple(history),
        )

    def report(self, result: ValueTable) -> dict[str, Any]:
        out: dict[str, Any] = {
            "grid_size": result.grid.size,
            "sweeps": result.sweeps,
            "residual": result.residual,
        }
        try:
            out["tau_hat"] = extract_threshold(result)
        except NonThresholdStructureError as err:
            out["tau_hat"] = None
            out["error"] = str(err)
        out["structure"] = check_structure(result).as_dict()
        return out


class MultiStateValueIteration(Solver):
    def __init__(
        self,
        model: MultiStateModel,
        costs: Any = None,
        *args,
        divisions: int = DEFAULT_DIVISIONS,
        tol: float = DEFAULT_TOL,
        max_sweeps: int | None = None,
        **kwargs,
    ):
        super().__init__(model, costs, *args, **kwargs)
        self.divisions = divisions
        self.tol = tol
        self.max_sweeps = max_sweeps or max_sweeps_for(tol, model.beta, model.c_max)

    def solve(self) -> ValueTable:
        m = self.model
        grid = BeliefGrid.simplex(m.states, self.divisions)
        points = grid.points
        lp_step = grid.interpolation_matrix(points @ m.transition)
        anchor_rows = grid.interpolation_matrix(m.transition)
        c_hp = points @ m.hp_costs

        def backup(v):
            return (
                m.lp_cost + m.beta * (lp_step @ v),
                c_hp + m.beta * (points @ (anchor_rows @ v)),
            )

        values, q_lp, q_hp, history = _iterate(
            np.zeros(grid.size), backup, self.tol, self.max_sweeps, self.progress, "simplex value iteration"
        )
        gap = q_lp - q_hp
        return ValueTable(
            grid,
            values,
            gap >= -tie_atol(self.tol, m.beta),
            gap,
            history[-1],
            len(history),
            self.tol,
            tuple(history),
        )

    def report(self, result: ValueTable) -> dict[str, Any]:
        return {
            "grid_size": result.grid.size,
            "sweeps": result.sweeps,
            "residual": result.residual,
            "hp_points": int(result.hp.sum()),
            "structure": check_structure(result).as_dict(),
        }


def solve_two_state(
    m: TransitionModel,
    c: CostModel,
    grid_size: int = DEFAULT_GRID,
    tol: float = DEFAULT_TOL,
    **kwargs,
) -> ValueTable:
    return TwoStateValueIteration(m, c, grid_size=grid_size, tol=tol, **kwargs).solve()


def solve_multistate(
    m: MultiStateModel,
    grid_resolution: float = 1 / DEFAULT_DIVISIONS,
    tol: float = DEFAULT_TOL,
    **kwargs,
) -> ValueTable:
    divisions = int(round(1 / grid_resolution))
    return MultiStateValueIteration(m, divisions=divisions, tol=tol, **kwargs).solve()


def extract_threshold(vt: ValueTable) -> float:
    """
    Midpoint between the last HP and the first LP grid point
    """
    if vt.grid.is_simplex:
        raise ValidationError("extract_threshold needs a two-state table")
    hp = vt.hp
    if hp.all():
        return 1.0
    if not hp.any():
        return 0.0
    k = int(np.argmin(hp))
    if k == 0 or hp[k:].any():
        raise NonThresholdStructureError(
            f"HP region is not a prefix interval: {int(hp.sum())} HP points, first LP at index {k}"
        )
    p = vt.grid.points
    return float((p[k - 1] + p[k]) / 2)


@dataclass(frozen=True)
class StructureReport:
    monotone: bool | None
    concave: bool | None
    hp_region: bool
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(x is not False for x in (self.monotone, self.concave, self.hp_region))

    def as_dict(self) -> dict[str, Any]:
        return {
            "monotone": self.monotone,
            "concave": self.concave,
            "hp_region": self.hp_region,
            **self.details,
        }


def check_structure(
    vt: ValueTable, slack: float = 1e-9, gap_slack: float | None = None
) -> StructureReport:
    if not vt.grid.is_simplex:
        first = np.diff(vt.values)
        second = np.diff(vt.values, 2)
        hp = vt.hp
        k = int(np.argmin(hp)) if not hp.all() else hp.size
        prefix = not hp[k:].any()
        return StructureReport(
            monotone=bool(np.all(first >= -slack)),
            concave=bool(np.all(second <= slack)),
            hp_region=bool(prefix),
            details={
                "min_first_difference": float(first.min()),
                "max_second_difference": float(second.max()) if second.size else 0.0,
            },
        )

    if gap_slack is None:
        gap_slack = 1e-6 * max(1.0, float(np.max(np.abs(vt.values))))
    concave, worst = _simplex_concavity(vt, slack)
    convex, violations, checked = _simplex_hp_convexity(vt, gap_slack)
    return StructureReport(
        monotone=None,
        concave=concave,
        hp_region=convex,
        details={
            "max_second_difference": worst,
            "midpoint_violations": violations,
            "midpoints_checked": checked,
        },
    )


def _simplex_concavity(vt: ValueTable, slack: float) -> tuple[bool, float]:
    """
    Second differences along every lattice direction e_i - e_j
    """
    grid = vt.grid
    assert grid.lattice is not None
    worst = -math.inf
    for i, j in itertools.combinations(range(grid.states), 2):
        step = np.zeros(grid.states, dtype=np.int64)
        step[i], step[j] = 1, -1
        inner = (grid.lattice[:, i] >= 1) & (grid.lattice[:, j] >= 1)
        centre = np.flatnonzero(inner)
        if not centre.size:
            continue
        up, _ = grid.lookup(grid.lattice[centre] + step)
        down, _ = grid.lookup(grid.lattice[centre] - step)
        second = vt.values[up] + vt.values[down] - 2 * vt.values[centre]
        worst = max(worst, float(second.max()))
    worst = worst if math.isfinite(worst) else 0.0
    return worst <= slack, worst


def _simplex_hp_convexity(vt: ValueTable, gap_slack: float) -> tuple[bool, int, int]:
    """
    Every lattice midpoint of two HP points must be HP, up to gap_slack
    """
    grid = vt.grid
    assert grid.lattice is not None
    hp_points = grid.lattice[vt.hp]
    h = hp_points.shape[0]
    if h < 2:
        return True, 0, 0
    rows = np.arange(h)
    if h * h > MAX_MIDPOINT_PAIRS:
        rows = np.sort(
            np.random.default_rng(0).choice(h, MAX_MIDPOINT_PAIRS // h, replace=False)
        )
    violations = checked = 0
    for chunk in np.array_split(rows, max(1, rows.size // 64)):
        sums = hp_points[chunk][:, None, :] + hp_points[None, :, :]
        even = np.all(sums % 2 == 0, axis=2)
        mids = (sums[even] // 2).reshape(-1, grid.states)
        if not mids.size:
            continue
        idx, _ = grid.lookup(mids)
        checked += idx.size
        violations += int(np.sum(vt.gap[idx] < -gap_slack))
    return violations == 0, violations, checked


def finite_horizon_check(
    m: TransitionModel, c: CostModel, horizon: int, p0: float, start: int = 0
) -> float:
    """
    Exact time-indexed value V^{start,horizon}(p0) by backward recursion over
    the reachable beliefs T^j(p0), T^j(lambda_na), T^j(lambda_aa)
    """
    if not 1 <= horizon <= 20:
        raise ValidationError(f"horizon must lie in [1, 20], got {horizon}")
    origins = {"p0": p0, "na": m.lambda_na, "aa": m.lambda_aa}

    @functools.lru_cache(maxsize=None)
    def value(origin: str, steps: int, remaining: int) -> float:
        if remaining == 0:
            return 0.0
        p = float(m.transition_n(origins[origin], steps))
        discount = c.beta ** (start + horizon - remaining)
        lp = discount * c.c_l + value(origin, steps + 1, remaining - 1)
        hp = (
            discount * c.hp_cost(p)
            + (1 - p) * value("na", 0, remaining - 1)
            + p * value("aa", 0, remaining - 1)
        )
        return min(lp, hp)

    return value("p0", 0, horizon)

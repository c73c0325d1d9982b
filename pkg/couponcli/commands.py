"""
One function per subcommand. Each takes a validated config, writes its CSV
output if any, and returns a JSON-ready report for stdout.
"""

import itertools
import warnings

from typing import Any

import numpy as np

from tqdm import tqdm

from .errors import (
    ClosedFormDefectWarning,
    ConfigError,
    CouponcliError,
    NonThresholdStructureError,
)
from .estimation import CostDistributions, threshold_variants
from .model import CostModel, TransitionModel, stationary_belief
from .simulation import PolicySpec, SimConfig, run_policies, trace_episode, TRACE_HEADER
from .solvers.coupon_dependent import (
    CouponDependentModel,
    CouponDependentSolver,
    lp_only_region,
    vi_oracle_cd,
)
from .solvers.threshold import ThresholdSolver, kappa, solve_threshold
from .solvers.value_iteration import (
    DEFAULT_GRID,
    DEFAULT_TOL,
    MultiStateModel,
    MultiStateValueIteration,
    extract_threshold,
    solve_two_state,
)
from .utils import axis_values, status, write_table

SWEEP_COLUMNS = ["tau", "kappa", "case", "branch", "lambda_case"]
THRESHOLD_COLUMNS = [
    "tau",
    "kappa",
    "p_f",
    "branch",
    "lambda_case",
    "case",
    "v_lambda_na",
    "v_lambda_aa",
]


def _require(config: dict[str, Any], *sections: str) -> None:
    for section in sections:
        if section not in config:
            raise ConfigError(f"'{section}' section is required for this command")


def _output(config: dict[str, Any]) -> str:
    if not config.get("output"):
        raise ConfigError("no output path: set 'output' or pass --out")
    return config["output"]


def build_model(config: dict[str, Any]) -> TransitionModel:
    spec = config["model"]
    return TransitionModel(
        spec["lambda_na"], spec["lambda_aa"], require_inertia=spec.get("require_inertia", False)
    )


def build_coupon_model(config: dict[str, Any]) -> TransitionModel | CouponDependentModel:
    model = build_model(config)
    if "hp_model" not in config:
        return model
    spec = config["hp_model"]
    return CouponDependentModel(model, TransitionModel(spec["lambda_na"], spec["lambda_aa"]))


def build_costs(config: dict[str, Any]) -> CostModel:
    if "costs" in config:
        return CostModel(**config["costs"])
    if "distributions" in config:
        return build_distributions(config).mean_costs(config["distributions"]["beta"])
    raise ConfigError("'costs' or 'distributions' section is required for this command")


def build_distributions(config: dict[str, Any]) -> CostDistributions:
    return CostDistributions.from_config(config["distributions"])


def _oracle(config: dict[str, Any]) -> tuple[bool, int, float]:
    spec = config.get("oracle", {})
    return (
        spec.get("enabled", False),
        spec.get("grid", DEFAULT_GRID),
        spec.get("tol", DEFAULT_TOL),
    )


def _oracle_tau(model, costs: CostModel, grid: int, tol: float) -> float | None:
    if isinstance(model, CouponDependentModel):
        table = vi_oracle_cd(model, costs, grid=grid, tol=tol)
    else:
        table = solve_two_state(model, costs, grid_size=grid, tol=tol)
    try:
        return extract_threshold(table)
    except NonThresholdStructureError:
        return None


def cmd_threshold(config: dict[str, Any], quiet: bool = False) -> dict[str, Any]:
    _require(config, "model")
    model = build_coupon_model(config)
    costs = build_costs(config)
    status("Solving threshold...", quiet)
    report: dict[str, Any]
    if isinstance(model, CouponDependentModel):
        cd = CouponDependentSolver(model, costs)
        report = cd.report(cd.solve())
    else:
        solver = ThresholdSolver(model, costs)
        report = solver.report(solver.solve())

    use_oracle, grid, tol = _oracle(config)
    if use_oracle:
        status(f"Running value iteration on {grid} grid points...", quiet)
        report["tau_hat"] = _oracle_tau(model, costs, grid, tol)
    if "distributions" in config:
        chain = model.lp_chain if isinstance(model, CouponDependentModel) else model
        variants = threshold_variants(
            build_distributions(config), chain, config["distributions"]["beta"]
        )
        report["variants"] = variants.as_dict()

    if config.get("output"):
        status(f"Writing threshold to {config['output']}", quiet)
        write_table(
            config["output"],
            THRESHOLD_COLUMNS,
            [[report.get(column) for column in THRESHOLD_COLUMNS]],
        )
    return report


def _point(config: dict[str, Any], values: dict[str, float]):
    """
    Model and costs of one sweep grid point
    """
    spec = dict(config["model"])
    costs = dict(config["costs"])
    hp = dict(config["hp_model"]) if "hp_model" in config else None
    for name, value in values.items():
        if name.startswith("hp_"):
            if hp is None:
                raise ConfigError(f"axis '{name}' needs an 'hp_model' section", "sweep.axes")
            hp[name[3:]] = value
        elif name in ("lambda_na", "lambda_aa"):
            spec[name] = value
        else:
            costs[name] = value
    sub = {"model": spec, "costs": costs}
    if hp is not None:
        sub["hp_model"] = hp
    return build_coupon_model(sub), CostModel(**costs)


def cmd_sweep(config: dict[str, Any], quiet: bool = False) -> dict[str, Any]:
    _require(config, "model", "costs", "sweep")
    path = _output(config)
    axes = config["sweep"]["axes"]
    names = [axis["name"] for axis in axes]
    grids = [axis_values(axis) for axis in axes]
    use_oracle, grid, tol = _oracle(config)
    header = names + SWEEP_COLUMNS + (["tau_hat"] if use_oracle else []) + ["status"]

    rows = []
    failures = 0
    points = list(itertools.product(*grids))
    status(f"Sweeping {len(points)} grid points over {', '.join(names)}...", quiet)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClosedFormDefectWarning)
        for values in tqdm(points, disable=quiet, leave=False):
            row: list[Any] = list(values)
            try:
                model, costs = _point(config, dict(zip(names, values)))
                if isinstance(model, CouponDependentModel):
                    solution = CouponDependentSolver(model, costs, grid_size=grid).solve()
                else:
                    solution = solve_threshold(model, costs)
                row += [
                    solution.tau,
                    solution.kappa,
                    solution.case,
                    solution.branch.value,
                    solution.lambda_case.value,
                ]
                if use_oracle:
                    row.append(_oracle_tau(model, costs, grid, tol))
                row.append("ok")
            except ConfigError:
                raise
            except CouponcliError as err:
                failures += 1
                row += [None] * (len(header) - len(row) - 1)
                row.append(f"{type(err).__name__}: {err}".replace("\n", " | "))
            rows.append(row)

    status(f"Writing sweep to {path}", quiet)
    write_table(path, header, rows)
    return {"output": path, "rows": len(rows), "failures": failures, "columns": header}


def resolve_policies(
    config: dict[str, Any],
    model: TransitionModel | CouponDependentModel,
    costs: CostModel,
    distributions: CostDistributions | None,
) -> tuple[list[PolicySpec], dict[str, float]]:
    """
    Turn named thresholds ("optimal", "kappa", "avg", ...) into numbers
    """
    named: dict[str, float] = {}

    def lookup(name: str) -> float:
        if name in named:
            return named[name]
        if name == "optimal":
            if isinstance(model, CouponDependentModel):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ClosedFormDefectWarning)
                    named[name] = CouponDependentSolver(model, costs).solve().tau
            else:
                named[name] = solve_threshold(model, costs).tau
        elif name == "kappa":
            named[name] = kappa(costs)
        else:
            if distributions is None:
                raise ConfigError(f"tau '{name}' needs a 'distributions' section", "simulation.policies")
            chain = model.lp_chain if isinstance(model, CouponDependentModel) else model
            variants = threshold_variants(distributions, chain, costs.beta)
            named.update(
                avg=variants.tau_avg, max=variants.tau_max, min=variants.tau_min, r=variants.tau_r
            )
        return named[name]

    policies = []
    for spec in config["simulation"].get("policies", [{"kind": "threshold", "tau": "optimal"}]):
        tau = spec.get("tau")
        if isinstance(tau, str):
            tau = lookup(tau)
        elif tau is None and spec["kind"] in ("threshold", "perfect_info"):
            tau = lookup("optimal")
        policies.append(
            PolicySpec(
                spec["kind"],
                tau=tau,
                estimator=spec.get("estimator", "exact_belief"),
                label=spec.get("label"),
            )
        )
    return policies, named


def build_sim(config: dict[str, Any]) -> SimConfig:
    spec = config.get("simulation", {})
    initial = spec.get("initial_belief")
    prior = spec.get("bayes_prior", "known")
    if initial == "unknown":
        initial, prior = None, "uniform"
    return SimConfig(
        episodes=spec.get("episodes", 1000),
        horizon=spec.get("horizon"),
        seed=spec.get("seed", 0),
        initial_belief=initial,
        bayes_prior=prior,
        bayes_filter=spec.get("bayes_filter", "belief"),
        workers=spec.get("workers", 1),
    )


def cmd_simulate(config: dict[str, Any], quiet: bool = False) -> dict[str, Any]:
    _require(config, "model", "simulation")
    path = _output(config)
    model = build_coupon_model(config)
    costs = build_costs(config)
    distributions = build_distributions(config) if "distributions" in config else None
    policies, named = resolve_policies(config, model, costs, distributions)
    sim = build_sim(config)

    status(f"Simulating {sim.episodes} episodes of {len(policies)} policies...", quiet)
    result = run_policies(
        policies,
        sim,
        model,
        distributions if distributions is not None else costs,
        beta=costs.beta,
        progress=not quiet,
    )
    status(f"Writing simulation to {path}", quiet)
    write_table(path, result.header(), result.rows())

    final = {}
    for label in result.labels:
        mean, stderr = result.final(label)
        final[label] = {"mean_discounted_cost": mean, "stderr": stderr}
    return {
        "output": path,
        "episodes": result.episodes,
        "horizon": result.horizon,
        "seed": sim.seed,
        "thresholds": named,
        "final": final,
    }


def build_multistate(config: dict[str, Any]) -> MultiStateModel:
    spec = config["multistate"]
    return MultiStateModel(
        np.array(spec["transition"], dtype=float),
        np.array(spec["hp_costs"], dtype=float),
        spec["lp_cost"],
        spec["beta"],
    )


def cmd_region(config: dict[str, Any], quiet: bool = False) -> dict[str, Any]:
    _require(config, "region")
    path = _output(config)
    region = config["region"]
    _, _, tol = _oracle(config)

    if region["mode"] == "simplex":
        _require(config, "multistate")
        model = build_multistate(config)
        divisions = int(round(1 / region.get("resolution", 0.01)))
        status(f"Value iteration on a {model.states}-state simplex grid...", quiet)
        solver = MultiStateValueIteration(model, divisions=divisions, tol=tol, progress=not quiet)
        table = solver.solve()
        status(f"Writing region to {path}", quiet)
        write_table(path, table.header(), table.rows())
        return {"output": path, "mode": "simplex", **solver.report(table)}

    _require(config, "model", "costs")
    for axis in ("c_l", "c_ha"):
        if axis not in region:
            raise ConfigError(f"lp_only mode needs a '{axis}' range", f"region.{axis}")
    costs = build_costs(config)
    c_l, c_ha = axis_values(region["c_l"]), axis_values(region["c_ha"])
    coupon_model = build_coupon_model(config)
    masks = {"independent": lp_only_region(build_model(config), costs.c_hn, costs.beta, c_l, c_ha, not quiet)}
    if isinstance(coupon_model, CouponDependentModel):
        masks["dependent"] = lp_only_region(coupon_model, costs.c_hn, costs.beta, c_l, c_ha, not quiet)

    rows = [[name] + row for name, mask in masks.items() for row in mask.rows()]
    status(f"Writing region to {path}", quiet)
    write_table(path, ["model", "c_l", "c_ha", "lp_only", "tau"], rows)
    report: dict[str, Any] = {
        "output": path,
        "mode": "lp_only",
        "lp_only_points": {name: int(mask.lp_only.sum()) for name, mask in masks.items()},
        "failures": {name: list(mask.failures) for name, mask in masks.items()},
    }
    if "dependent" in masks:
        inside = ~masks["independent"].lp_only | masks["dependent"].lp_only
        report["independent_subset_of_dependent"] = bool(inside.all())
    return report


def cmd_estimate(config: dict[str, Any], quiet: bool = False) -> dict[str, Any]:
    _require(config, "model", "distributions")
    path = _output(config)
    model = build_coupon_model(config)
    distributions = build_distributions(config)
    costs = build_costs(config)
    config.setdefault("simulation", {})
    policies, named = resolve_policies(config, model, costs, distributions)
    sim = build_sim(config)

    status("Tracing one filtered episode...", quiet)
    rows = trace_episode(policies[0], sim, model, distributions, costs.beta)
    status(f"Writing trace to {path}", quiet)
    write_table(path, TRACE_HEADER, rows)
    chain = model.lp_chain if isinstance(model, CouponDependentModel) else model
    return {
        "output": path,
        "policy": policies[0].name,
        "steps": len(rows),
        "thresholds": named,
        "p_f": stationary_belief(chain),
    }


COMMANDS = {
    "threshold": cmd_threshold,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "region": cmd_region,
    "estimate": cmd_estimate,
}

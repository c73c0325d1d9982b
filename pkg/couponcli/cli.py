import argparse

from typing import Any

BOOL_KWARGS: dict[str, Any]

try:
    BOOL_KWARGS = {"action": argparse.BooleanOptionalAction}
except (ImportError, AttributeError):
    BOOL_KWARGS = {"action": "store_true"}

COMMAND_CHOICES = ["threshold", "sweep", "simulate", "region", "estimate"]


def _parse_cmd_line(argv: list[str] | None = None) -> dict[str, Any]:
    """
    Helper for parsing CLI call and displaying help message
    """
    parser = argparse.ArgumentParser(
        description="Optimal coupon thresholds and policy simulation for privacy-sensitive consumers"
    )

    parser.add_argument(
        "command",
        type=str,
        nargs="?",
        choices=COMMAND_CHOICES,
        help="What to run: threshold, sweep, simulate, region or estimate",
    )
    parser.add_argument(
        "-c", "--config", type=str, required=False, help="Experiment config (JSON)"
    )
    parser.add_argument(
        "-o", "--out", type=str, required=False, help="Output CSV path (overrides 'output')"
    )
    parser.add_argument(
        "-s", "--seed", type=int, required=False, help="Simulation seed (overrides config)"
    )
    parser.add_argument(
        "--oracle",
        required=False,
        default=None,
        help="Cross-check closed forms against value iteration",
        **BOOL_KWARGS,
    )
    parser.add_argument(
        "-g", "--grid", type=int, required=False, help="Value iteration grid size"
    )
    parser.add_argument(
        "-t", "--tol", type=float, required=False, help="Value iteration tolerance"
    )
    parser.add_argument(
        "-w", "--workers", type=int, required=False, help="Worker processes for simulations"
    )
    parser.add_argument(
        "-q",
        "--quiet",
        required=False,
        default=False,
        help="Silence status messages and progress bars",
        **BOOL_KWARGS,
    )
    parser.add_argument(
        "-x",
        "--example",
        required=False,
        type=str,
        help="Populates the destination folder with the bundled example configs",
    )

    kwargs = vars(parser.parse_args(argv))
    if not kwargs.get("command") and not kwargs.get("example"):
        parser.error("a command is required unless --example is given")
    if kwargs.get("command") and not kwargs.get("config"):
        parser.error(f"'{kwargs['command']}' needs --config")
    return kwargs

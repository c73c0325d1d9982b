import sys

from collections.abc import Callable
from inspect import signature
from typing import Any

from .cli import _parse_cmd_line
from .commands import COMMANDS
from .errors import CouponcliError
from .utils import copy_examples, dump_json, load_config, status


class Couponcli:

    def __init__(self, *args, **kwargs):
        self.args = args
        self.kwargs = kwargs

    def __new__(cls, *args, **kwargs):
        """
        Just allows us to do Couponcli(**kwargs)
        """
        inst = super().__new__(cls)
        inst.__init__(*args, **kwargs)
        return inst.run()

    def _get_kwargs(self, func: Callable) -> dict[str, Any]:
        """
        Helper to get the arguments for `func` from self.kwargs
        """
        allowed = set(signature(func).parameters)
        return {k: v for k, v in self.kwargs.items() if k in allowed}

    def run(self) -> dict[str, Any] | None:
        quiet = self.kwargs.get("quiet", False)

        if example_destination := self.kwargs.get("example"):
            full_destination = copy_examples(example_destination)
            status(
                f"""Example configs copied to {full_destination}.
Use `couponcli threshold -c {full_destination}/lambda_sweep.json` to solve one threshold,
or `couponcli simulate -c {full_destination}/noisy_estimators.json -o noisy_estimators.csv` to rerun a simulation""",
                quiet,
            )
            return None

        command = self.kwargs["command"]
        overrides = {
            k: self.kwargs.get(k) for k in ("seed", "grid", "tol", "oracle", "out", "workers")
        }
        config = load_config(self.kwargs["config"], overrides)
        func = COMMANDS[command]
        kwargs = self._get_kwargs(func)
        kwargs.pop("config", None)
        report = func(config, **kwargs)
        print(dump_json(report))
        return report


def run(argv: list[str] | None = None) -> None:
    """
    pyproject.toml likes a function callable entrypoint
    """
    try:
        Couponcli(**_parse_cmd_line(argv))
    except CouponcliError as err:
        print(f"error: {err}", file=sys.stderr)
        sys.exit(err.exit_code)


if __name__ == "__main__":
    """
    When the user calls the script directly in command line, this is what we do
    """
    run()

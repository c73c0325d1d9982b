import csv
import json
import math
import os
import shutil
import sys

from typing import Any

import numpy as np

from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from .errors import ConfigError, OutputError

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
SCHEMA_PATH = os.path.join(DATA_DIR, "config_schema.json")
EXAMPLES_DIR = os.path.join(DATA_DIR, "examples")

OVERRIDES = {
    "seed": ("simulation", "seed"),
    "workers": ("simulation", "workers"),
    "grid": ("oracle", "grid"),
    "tol": ("oracle", "tol"),
    "oracle": ("oracle", "enabled"),
}


def status(message: str, quiet: bool = False) -> None:
    """
    Helper to print progress messages without polluting stdout
    """
    if not quiet:
        print(message, file=sys.stderr)


def load_config(path: str, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """
    Read an experiment config, apply command-line overrides and validate it
    """
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            config = json.load(config_file)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON at line {err.lineno}: {err.msg}", path)
    apply_overrides(config, overrides or {})
    validate_config(config)
    return config


def apply_overrides(config: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    for name, value in overrides.items():
        if value is None:
            continue
        if name == "out":
            config["output"] = value
        elif name in OVERRIDES:
            section, key = OVERRIDES[name]
            config.setdefault(section, {})[key] = value
    return config


def validate_config(config: dict[str, Any]) -> None:
    with open(SCHEMA_PATH, "r", encoding="utf-8") as schema_file:
        schema = json.load(schema_file)
    error = best_match(Draft7Validator(schema).iter_errors(config))
    if error is not None:
        path = ".".join(str(p) for p in error.absolute_path) or "<root>"
        raise ConfigError(error.message, path)


def axis_values(spec: dict[str, Any]) -> np.ndarray:
    """
    Grid of one sweep axis: explicit values, or lo..hi in `steps` points
    """
    if "values" in spec:
        values = np.asarray(spec["values"], dtype=float)
    else:
        values = np.linspace(spec["lo"], spec["hi"], spec["steps"])
    if not values.size:
        raise ConfigError("sweep axis is empty", spec.get("name", ""))
    return values


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


class Table:
    """
    CSV writer with a fixed header; every row must match it
    """

    def __init__(self, path: str, header: list[str]):
        self.path = path
        self.header = list(header)
        self.cursor = 0
        try:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            self.file = open(path, "w", encoding="utf-8", newline="")
        except OSError as err:
            raise OutputError(f"cannot write {path}: {err}")
        self.writer = csv.writer(self.file)
        self.writer.writerow(self.header)

    def __enter__(self) -> "Table":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def write(self, row: list[Any]) -> None:
        if len(row) != len(self.header):
            raise OutputError(
                f"{self.path}: row {self.cursor} has {len(row)} cells, header has {len(self.header)}"
            )
        try:
            self.writer.writerow([_cell(x) for x in row])
        except OSError as err:
            raise OutputError(f"cannot write {self.path}: {err}")
        self.cursor += 1

    def write_all(self, rows) -> int:
        for row in rows:
            self.write(list(row))
        return self.cursor

    def close(self) -> None:
        self.file.close()


def write_table(path: str, header: list[str], rows) -> int:
    with Table(path, header) as table:
        return table.write_all(rows)


def jsonable(value: Any) -> Any:
    """
    Helper to turn numpy scalars, enums and NaNs into plain JSON values
    """
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if hasattr(value, "value") and isinstance(value.value, str):
        return value.value
    return value


def dump_json(report: dict[str, Any]) -> str:
    return json.dumps(jsonable(report), indent=4, sort_keys=False)


def copy_examples(destination: str) -> str:
    if not os.path.isdir(destination):
        raise OutputError(f"Path '{destination}' is not a valid folder destination")
    full_destination = os.path.join(destination, "couponcli_examples")
    shutil.copytree(EXAMPLES_DIR, full_destination)
    return full_destination

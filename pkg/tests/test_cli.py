"""
End-to-end runs of the command line: reports on stdout, CSV files, exit codes.
"""

import csv
import json
import os

import pytest

from couponcli.couponcli import run
from couponcli.simulation import TRACE_HEADER

BASE = {
    "model": {"lambda_na": 0.3, "lambda_aa": 0.7},
    "costs": {"c_l": 3, "c_hn": 1, "c_ha": 12, "beta": 0.9},
}


def _config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def _run_ok(capsys, argv):
    run(argv + ["-q"])
    return json.loads(capsys.readouterr().out)


def _exit_code(argv):
    with pytest.raises(SystemExit) as exc:
        run(argv + ["-q"])
    return exc.value.code


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestThreshold:
    def test_report(self, tmp_path, capsys):
        report = _run_ok(capsys, ["threshold", "-c", _config(tmp_path, BASE)])
        assert report["kappa"] == pytest.approx(2 / 11)
        assert report["tau"] == pytest.approx(report["kappa"], abs=1e-9)
        assert "bounds" in report

    def test_oracle_and_csv(self, tmp_path, capsys):
        out = tmp_path / "tau.csv"
        config = dict(BASE, oracle={"enabled": True, "grid": 1001})
        report = _run_ok(capsys, ["threshold", "-c", _config(tmp_path, config), "-o", str(out)])
        assert abs(report["tau_hat"] - report["tau"]) <= 2e-3
        rows = _read_csv(out)
        assert rows[0][:2] == ["tau", "kappa"]
        assert len(rows) == 2

    def test_variants_from_distributions(self, tmp_path, capsys):
        config = {
            "model": {"lambda_na": 0.2, "lambda_aa": 0.8},
            "distributions": {
                "lp": {"family": "uniform", "lo": 6, "hi": 10},
                "normal_hp": {"family": "uniform", "lo": 0.2, "hi": 5.8},
                "alerted_hp": {"family": "uniform", "lo": 12, "hi": 20},
                "beta": 0.95,
            },
        }
        report = _run_ok(capsys, ["threshold", "-c", _config(tmp_path, config)])
        variants = report["variants"]
        assert variants["tau_lower"] <= variants["tau_avg"] <= variants["tau_upper"]
        assert variants["tau_r"] == pytest.approx(variants["tau_max"])

    def test_assumption_violation(self, tmp_path, capsys):
        config = dict(BASE, model={"lambda_na": 0.8, "lambda_aa": 0.2})
        assert _exit_code(["threshold", "-c", _config(tmp_path, config)]) == 2
        assert "Assumption 2" in capsys.readouterr().err

    def test_degenerate_costs(self, tmp_path):
        config = dict(BASE, costs={"c_l": 1, "c_hn": 1, "c_ha": 1, "beta": 0.9})
        assert _exit_code(["threshold", "-c", _config(tmp_path, config)]) == 3

    def test_schema_error_names_the_field(self, tmp_path, capsys):
        config = dict(BASE, model={"lambda_na": 0.3})
        assert _exit_code(["threshold", "-c", _config(tmp_path, config)]) == 2
        assert "model" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert _exit_code(["threshold", "-c", str(tmp_path / "nope.json")]) == 2

    def test_command_needs_config(self):
        assert _exit_code(["threshold"]) == 2


class TestSweep:
    def test_flat_above_kappa(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        config = dict(
            BASE,
            sweep={"axes": [{"name": "lambda_na", "values": [0.25, 0.35, 0.45]}]},
            output=str(out),
        )
        report = _run_ok(capsys, ["sweep", "-c", _config(tmp_path, config)])
        assert report["rows"] == 3 and report["failures"] == 0
        rows = _read_csv(out)
        tau = rows[0].index("tau")
        assert [float(r[tau]) for r in rows[1:]] == pytest.approx([2 / 11] * 3, abs=1e-9)

    def test_monotone_in_c_l(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        config = {
            "model": {"lambda_na": 0.1, "lambda_aa": 0.9},
            "costs": {"c_l": 3, "c_hn": 1, "c_ha": 12, "beta": 0.9},
            "sweep": {
                "axes": [
                    {"name": "beta", "values": [0.5, 0.8, 0.95]},
                    {"name": "c_l", "values": [2, 3, 4, 5, 6]},
                ]
            },
            "output": str(out),
        }
        _run_ok(capsys, ["sweep", "-c", _config(tmp_path, config)])
        rows = _read_csv(out)
        header, body = rows[0], rows[1:]
        beta, tau = header.index("beta"), header.index("tau")
        for value in ("0.5", "0.8", "0.95"):
            taus = [float(r[tau]) for r in body if r[beta] == value]
            assert len(taus) == 5
            assert all(b >= a - 1e-9 for a, b in zip(taus, taus[1:]))

    def test_bad_points_become_status_rows(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        config = dict(
            BASE,
            sweep={"axes": [{"name": "lambda_na", "values": [0.3, 0.9]}]},
            output=str(out),
        )
        report = _run_ok(capsys, ["sweep", "-c", _config(tmp_path, config)])
        assert report["failures"] == 1
        status = [r[-1] for r in _read_csv(out)[1:]]
        assert status[0] == "ok"
        assert status[1].startswith("AssumptionError")

    def test_empty_axis(self, tmp_path):
        config = dict(BASE, sweep={"axes": [{"name": "c_l", "values": []}]}, output="x.csv")
        assert _exit_code(["sweep", "-c", _config(tmp_path, config)]) == 2

    def test_needs_output(self, tmp_path):
        config = dict(BASE, sweep={"axes": [{"name": "c_l", "values": [3]}]})
        assert _exit_code(["sweep", "-c", _config(tmp_path, config)]) == 2


class TestSimulate:
    CONFIG = dict(
        BASE,
        simulation={
            "episodes": 50,
            "horizon": 40,
            "seed": 2,
            "initial_belief": 0.5,
            "policies": [
                {"kind": "threshold", "tau": "optimal"},
                {"kind": "greedy"},
                {"kind": "lazy"},
            ],
        },
    )

    def test_byte_identical_reruns(self, tmp_path, capsys):
        config = _config(tmp_path, self.CONFIG)
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        report = _run_ok(capsys, ["simulate", "-c", config, "-o", str(first)])
        _run_ok(capsys, ["simulate", "-c", config, "-o", str(second)])
        assert first.read_bytes() == second.read_bytes()
        assert set(report["final"]) == {"threshold", "greedy", "lazy"}
        assert report["thresholds"]["optimal"] == pytest.approx(2 / 11, abs=1e-9)

    def test_seed_override(self, tmp_path, capsys):
        # p_F sits below tau here, so HP coupons keep revealing the random state
        config = _config(tmp_path, dict(self.CONFIG, model={"lambda_na": 0.1, "lambda_aa": 0.7}))
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        _run_ok(capsys, ["simulate", "-c", config, "-o", str(first)])
        report = _run_ok(capsys, ["simulate", "-c", config, "-o", str(second), "-s", "7"])
        assert report["seed"] == 7
        assert first.read_bytes() != second.read_bytes()

    def test_lazy_column(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        _run_ok(capsys, ["simulate", "-c", _config(tmp_path, self.CONFIG), "-o", str(out)])
        rows = _read_csv(out)
        column = rows[0].index("lazy_mean_discounted_cost")
        assert len(rows) == 42
        assert float(rows[-1][column]) == pytest.approx(3 * (1 - 0.9**41) / 0.1)

    def test_noisy_estimator_without_distributions(self, tmp_path):
        config = dict(
            BASE,
            simulation={"episodes": 5, "policies": [{"kind": "threshold", "tau": 0.3, "estimator": "map_state"}]},
            output="x.csv",
        )
        assert _exit_code(["simulate", "-c", _config(tmp_path, config)]) == 2


class TestRegion:
    def test_simplex(self, tmp_path, capsys):
        out = tmp_path / "region.csv"
        config = {
            "multistate": {
                "transition": [[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]],
                "hp_costs": [1, 10, 20],
                "lp_cost": 7,
                "beta": 0.9,
            },
            "region": {"mode": "simplex", "resolution": 0.1},
            "output": str(out),
        }
        report = _run_ok(capsys, ["region", "-c", _config(tmp_path, config)])
        rows = _read_csv(out)
        assert rows[0] == ["p_n", "p_a1", "p_a2", "value", "action"]
        assert len(rows) == 67
        assert report["mode"] == "simplex"

    def test_resolution_guard(self, tmp_path):
        config = {
            "multistate": {
                "transition": [[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1], [0.1, 0.1, 0.1, 0.7]],
                "hp_costs": [1, 10, 20, 30],
                "lp_cost": 7,
                "beta": 0.9,
            },
            "region": {"mode": "simplex", "resolution": 0.0005},
            "output": str(tmp_path / "region.csv"),
        }
        assert _exit_code(["region", "-c", _config(tmp_path, config)]) == 2

    def test_lp_only(self, tmp_path, capsys):
        out = tmp_path / "region.csv"
        config = {
            "model": {"lambda_na": 0.2, "lambda_aa": 0.8},
            "hp_model": {"lambda_na": 0.5, "lambda_aa": 0.9},
            "costs": {"c_l": 3, "c_hn": 1, "c_ha": 12, "beta": 0.9},
            "region": {
                "mode": "lp_only",
                "c_l": {"values": [1, 4, 7]},
                "c_ha": {"values": [4, 7, 10]},
            },
            "output": str(out),
        }
        report = _run_ok(capsys, ["region", "-c", _config(tmp_path, config)])
        assert report["independent_subset_of_dependent"] is True
        rows = _read_csv(out)
        assert rows[0] == ["model", "c_l", "c_ha", "lp_only", "tau"]
        assert {r[0] for r in rows[1:]} == {"independent", "dependent"}

    def test_lp_only_resolution_guard(self, tmp_path):
        config = {
            "model": {"lambda_na": 0.2, "lambda_aa": 0.8},
            "costs": {"c_l": 3, "c_hn": 1, "c_ha": 12, "beta": 0.9},
            "region": {
                "mode": "lp_only",
                "c_l": {"lo": 1, "hi": 20, "steps": 1001},
                "c_ha": {"lo": 1, "hi": 20, "steps": 1000},
            },
            "output": str(tmp_path / "region.csv"),
        }
        assert _exit_code(["region", "-c", _config(tmp_path, config)]) == 2


class TestEstimate:
    def test_trace(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        config = {
            "model": {"lambda_na": 0.2, "lambda_aa": 0.8},
            "distributions": {
                "lp": {"family": "uniform", "lo": 3, "hi": 9},
                "normal_hp": {"family": "uniform", "lo": 0.25, "hi": 7.75},
                "alerted_hp": {"family": "uniform", "lo": 6, "hi": 18},
                "beta": 0.9,
            },
            "simulation": {"horizon": 30, "seed": 4, "initial_belief": 0.2},
            "output": str(out),
        }
        report = _run_ok(capsys, ["estimate", "-c", _config(tmp_path, config)])
        rows = _read_csv(out)
        assert rows[0] == TRACE_HEADER
        assert len(rows) == 32
        assert report["steps"] == 31


class TestExamples:
    def test_copy(self, tmp_path, capsys):
        run(["-x", str(tmp_path), "-q"])
        copied = tmp_path / "couponcli_examples"
        assert (copied / "lambda_sweep.json").is_file()
        assert len(os.listdir(copied)) >= 9

    def test_bad_destination(self, tmp_path):
        assert _exit_code(["-x", str(tmp_path / "missing")]) == 4

    def test_bundled_configs_validate(self):
        from couponcli.utils import EXAMPLES_DIR, load_config

        for name in os.listdir(EXAMPLES_DIR):
            load_config(os.path.join(EXAMPLES_DIR, name))

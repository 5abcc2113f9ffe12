"""Command-line interface: exit codes, CSV schemas, JSON determinism and the
self-test mutation hook."""

import csv
import json
import math

import pytest

from rsma_fbl import channel_model as cm, cli


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(cm.default_config().to_json())
    return str(path)


def run(capsys, argv):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestBound:
    def test_csv_schema(self, capsys, config_file, tmp_path):
        out = tmp_path / "bound.csv"
        code, _, _ = run(capsys, ["bound", "--config", config_file,
                                  "--t-grid", "0.3,0.7", "--trials", "200",
                                  "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["t"] for r in rows] == ["0.3", "0.7"]
        for r in rows:
            assert float(r["gap"]) == pytest.approx(
                float(r["saa_sum"]) - float(r["closed_form_sum"]), abs=1e-9)

    def test_bound_is_lower(self, capsys, config_file, tmp_path):
        out = tmp_path / "bound.csv"
        code, _, _ = run(capsys, ["bound", "--config", config_file,
                                  "--t-grid", "0.5", "--trials", "2000",
                                  "--out", str(out)])
        assert code == 0
        row = next(csv.DictReader(out.open()))
        saa = float(row["saa_sum"])
        assert float(row["closed_form_sum"]) <= saa * 1.03

    def test_empty_grid_usage_error(self, config_file):
        with pytest.raises(SystemExit) as exc:
            cli.main(["bound", "--config", config_file, "--t-grid", ""])
        assert exc.value.code == 2

    def test_bad_config_path(self, capsys):
        code, _, err = run(capsys, ["bound", "--config", "/nonexistent.json",
                                    "--t-grid", "0.5"])
        assert code == 2
        assert "error" in err


class TestOptimize:
    def test_deterministic_json(self, capsys, config_file):
        code1, out1, _ = run(capsys, ["optimize", "--config", config_file,
                                      "--trials", "200"])
        code2, out2, _ = run(capsys, ["optimize", "--config", config_file,
                                      "--trials", "200"])
        assert code1 == code2 == 0
        assert out1 == out2
        payload = json.loads(out1)
        assert payload["feasibility"]["simplex_residual"] < 1e-8

    def test_infeasible_exit(self, capsys, tmp_path):
        path = tmp_path / "hard.json"
        path.write_text(cm.default_config(qos_min_rate=10.0).to_json())
        code, out, err = run(capsys, ["optimize", "--config", str(path),
                                      "--trials", "100"])
        assert code == 1
        assert "infeasible" in err.lower()

    def test_random_placement_recorded(self, capsys, tmp_path):
        data = cm.default_config().to_dict()
        data["distances_m"] = []
        path = tmp_path / "placed.json"
        path.write_text(json.dumps(data))
        code, out, _ = run(capsys, ["optimize", "--config", str(path),
                                    "--trials", "100"])
        payload = json.loads(out)
        assert len(payload["placed_distances_m"]) == 4
        assert all(100.0 <= d <= 300.0 for d in payload["placed_distances_m"])


class TestSweep:
    def _spec(self, tmp_path, **overrides):
        spec = {"axis": "tx_power_dBm", "values": [25.0, 35.0],
                "schemes": ["sdma"], "trials": 100, "seed": 3,
                "output_path": str(tmp_path / "sweep.csv")}
        spec.update(overrides)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        return str(path), spec["output_path"]

    def test_csv_schema_and_ordering(self, capsys, tmp_path):
        spec_path, out_path = self._spec(tmp_path, schemes=["sdma", "noma"])
        code, _, _ = run(capsys, ["sweep", spec_path])
        assert code == 0
        rows = list(csv.DictReader(open(out_path)))
        assert [(r["scheme"], r["P_dBm"]) for r in rows] == [
            ("sdma", "25"), ("noma", "25"), ("sdma", "35"), ("noma", "35")]
        expected = {"scheme", "P_dBm", "velocity", "epsilon", "t", "sum_rate",
                    "min_rate", "r_common", "r_private_1", "r_private_2",
                    "r_private_3", "r_private_4", "M", "seed", "error"}
        assert set(rows[0].keys()) == expected

    def test_svg_written(self, capsys, tmp_path):
        spec_path, out_path = self._spec(tmp_path)
        code, _, _ = run(capsys, ["sweep", spec_path, "--svg"])
        assert code == 0
        svg = out_path.rsplit(".", 1)[0] + ".svg"
        assert "<svg" in open(svg).read(2000)

    def test_budget_error_marked_per_row(self, capsys, tmp_path):
        spec_path, out_path = self._spec(
            tmp_path,
            schemes=[{"kind": "sdma_exhaustive",
                      "scheme_params": {"grid_granularity": 0.025,
                                        "point_budget": 10}},
                     "sdma"])
        code, _, _ = run(capsys, ["sweep", spec_path])
        assert code == 0
        rows = list(csv.DictReader(open(out_path)))
        markers = [r["error"] for r in rows]
        assert any("budget" in m for m in markers)
        assert any(m == "" for m in markers)

    def test_invalid_axis(self, capsys, tmp_path):
        spec_path, _ = self._spec(tmp_path, axis="temperature")
        code, _, err = run(capsys, ["sweep", spec_path])
        assert code == 2

    def test_global_t_axis(self, capsys, tmp_path):
        spec_path, out_path = self._spec(
            tmp_path, axis="global_t", values=[0.2, 0.8],
            schemes=["rsma_proposed_equal"])
        code, _, _ = run(capsys, ["sweep", spec_path])
        assert code == 0
        rows = list(csv.DictReader(open(out_path)))
        assert [r["t"] for r in rows] == ["0.2", "0.8"]


class TestSelftest:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, ["selftest"])
        assert code == 0
        assert "PASS" in out and "FAIL" not in out

    def test_mutation_detected(self, capsys):
        # inject a sign bug into the exponential integral used by the checks
        def broken(v, x):
            from rsma_fbl import special_functions as sf
            return -sf.exp_integral_generalized(v, x)

        code = cli.cmd_selftest(expn_fn=broken)
        out = capsys.readouterr().out
        assert code == 1
        assert "FAIL" in out

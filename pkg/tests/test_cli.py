import csv
import io
import json
import math

import numpy as np
import pytest

from qsteer.cli import EXIT_INVALID, EXIT_SOLVER, ConfigError, main, parse_state
from qsteer.qdm import (
    Measurement,
    MeasurementSet,
    build_standard_set,
    computational_basis_measurement,
)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestSolve:
    def test_success_t10(self, capsys):
        code, out, _ = run(capsys, "solve", "-T", "10", "-N", "10")
        assert code == 0
        assert out.splitlines()[0] == "0.996802"

    def test_t_defaults_to_n(self, capsys):
        _, a, _ = run(capsys, "solve", "-T", "6")
        _, b, _ = run(capsys, "solve", "-N", "6")
        assert a == b
        assert float(a.splitlines()[0]) > 0.9

    def test_arrival_table(self, capsys):
        code, out, _ = run(capsys, "solve", "--objective", "arrival", "-T", "5")
        assert code == 0
        assert float(out.splitlines()[0]) == pytest.approx(3.86538, abs=1e-5)
        assert "|psi_1>" in out and "E_5" in out

    def test_zero_horizon(self, capsys):
        code, out, _ = run(capsys, "solve", "-T", "4", "-N", "0")
        assert code == 0 and out.splitlines()[0] == "0"

    def test_fidelity(self, capsys):
        _, fid, _ = run(capsys, "solve", "--objective", "fidelity", "-T", "5", "-N", "3",
                        "--format", "json")
        _, suc, _ = run(capsys, "solve", "-T", "5", "-N", "4", "--format", "json")
        assert json.loads(fid)["value"] == pytest.approx(json.loads(suc)["value"], abs=1e-9)

    def test_json_format(self, capsys):
        _, out, _ = run(capsys, "solve", "-T", "5", "--format", "json")
        doc = json.loads(out)
        assert doc["policy"]["kind"] == "markov"
        assert doc["policy"]["horizon"] == 5
        assert len(doc["policy"]["choices"]) == 5 * 10

    def test_csv_format(self, capsys):
        _, out, _ = run(capsys, "solve", "--objective", "arrival", "-T", "3", "--format", "csv")
        (row,) = rows(out)
        assert row["objective"] == "arrival" and row["N"] == ""
        assert float(row["value"]) > 3

    def test_output_files(self, capsys, tmp_path):
        path = tmp_path / "policy.json"
        code, _, _ = run(capsys, "solve", "-T", "5", "--output", str(path))
        assert code == 0
        doc = json.loads(path.read_text())
        assert doc["objective"] == "success"
        table = path.with_suffix(".txt").read_text()
        assert "|0>" in table and "k=0" in table

    def test_set_file(self, capsys, tmp_path):
        path = tmp_path / "set.json"
        build_standard_set(5).save(path)
        _, a, _ = run(capsys, "solve", "--set-file", str(path), "-N", "5")
        _, b, _ = run(capsys, "solve", "-T", "5")
        assert a.splitlines()[0] == b.splitlines()[0]

    def test_bit_identical_reruns(self, capsys):
        _, a, _ = run(capsys, "solve", "--objective", "arrival", "-T", "7", "--format", "json")
        _, b, _ = run(capsys, "solve", "--objective", "arrival", "-T", "7", "--format", "json")
        assert a == b


class TestErrors:
    def test_arrival_with_n(self, capsys):
        code, _, err = run(capsys, "solve", "--objective", "arrival", "-T", "5", "-N", "3")
        assert code == EXIT_INVALID and "-N" in err

    @pytest.mark.parametrize("T", ["1", "0", "-3"])
    def test_invalid_t(self, capsys, T):
        code, _, err = run(capsys, "solve", "-T", T, "-N", "3")
        assert code == EXIT_INVALID and "error" in err

    def test_missing_size(self, capsys):
        code, _, _ = run(capsys, "solve", "--objective", "arrival")
        assert code == EXIT_INVALID

    def test_bad_state(self, capsys):
        code, _, err = run(capsys, "solve", "-T", "3", "--initial", "0,0")
        assert code == EXIT_INVALID and "degenerate" in err

    def test_missing_set_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "solve", "--set-file", str(tmp_path / "nope.json"), "-N", "2")
        assert code == EXIT_INVALID

    def test_no_proper_policy(self, capsys, tmp_path):
        path = tmp_path / "basis.json"
        MeasurementSet((computational_basis_measurement(),), target_action=0).save(path)
        code, _, err = run(capsys, "solve", "--objective", "arrival", "--set-file", str(path))
        assert code == EXIT_SOLVER and "proper" in err

    def test_state_explosion(self, capsys, tmp_path):
        a, b = math.sqrt(0.9), math.sqrt(0.1)
        h = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
        wz = Measurement("WZ", ("z0", "z1"), (np.diag([a, b]), np.diag([b, a])))
        wx = Measurement("WX", ("x0", "x1"), (h @ np.diag([a, b]) @ h, h @ np.diag([b, a]) @ h))
        path = tmp_path / "weak.json"
        MeasurementSet((wz, wx, computational_basis_measurement()), target_action=2).save(path)
        code, _, err = run(capsys, "solve", "--objective", "arrival", "--set-file", str(path),
                           "--initial", "1,0.3", "--max-states", "300")
        assert code == EXIT_SOLVER and "explosion" in err
        # a finite horizon bounds the graph, so the success objective still works
        code, out, _ = run(capsys, "solve", "--set-file", str(path), "--initial", "1,0.3",
                           "-N", "3", "--max-states", "300")
        assert code == 0 and 0 <= float(out.splitlines()[0]) <= 1

    def test_s1_needs_t3(self, capsys):
        code, _, _ = run(capsys, "evaluate", "--policy", "s1", "-T", "4")
        assert code == EXIT_INVALID


class TestParseState:
    def test_named(self):
        assert parse_state("1", 2).matrix[1, 1] == 1
        assert parse_state("+", 2).matrix[0, 1] == pytest.approx(0.5)
        assert parse_state("mixed", 2).purity() == pytest.approx(0.5)

    def test_amplitudes(self):
        s = parse_state("0.6, 0.8i", 2)
        assert s.matrix[0, 1] == pytest.approx(-0.48j)

    @pytest.mark.parametrize("spec", ["2", "1,2,3", "abc"])
    def test_rejected(self, spec):
        with pytest.raises(ConfigError):
            parse_state(spec, 2)


class TestEvaluateSimulate:
    def test_evaluate_naive(self, capsys):
        _, out, _ = run(capsys, "evaluate", "--policy", "naive", "-T", "3", "--format", "csv")
        (row,) = rows(out)
        assert float(row["exact_value"]) == pytest.approx(0.5625, abs=1e-12)

    def test_evaluate_s1(self, capsys):
        _, out, _ = run(capsys, "evaluate", "--policy", "s1", "-T", "3", "--format", "json")
        assert json.loads(out)["exact_value"] == pytest.approx(0.65625, abs=1e-12)

    def test_simulate_success(self, capsys):
        _, out, _ = run(capsys, "simulate", "-T", "10", "--trials", "20000", "--seed", "3",
                        "--format", "json")
        doc = json.loads(out)
        assert abs(doc["mc_estimate"] - doc["exact_value"]) <= 4 * doc["mc_stderr"]
        assert doc["trials"] == 20000 and doc["seed"] == 3

    def test_simulate_arrival(self, capsys):
        _, out, _ = run(capsys, "simulate", "--objective", "arrival", "-T", "5",
                        "--trials", "20000", "--format", "json")
        doc = json.loads(out)
        assert doc["exact_value"] == pytest.approx(3.86538, abs=1e-5)
        assert abs(doc["mc_estimate"] - doc["exact_value"]) <= 4 * doc["mc_stderr"]
        assert doc["not_arrived"] == 0

    def test_simulate_seeded(self, capsys):
        argv = ["simulate", "--policy", "naive", "-T", "4", "--trials", "3000", "--seed", "11"]
        _, a, _ = run(capsys, *argv)
        _, b, _ = run(capsys, *argv)
        _, c, _ = run(capsys, *argv[:-1], "12")
        assert a == b and a != c


class TestSweep:
    def test_fig1(self, capsys):
        code, out, _ = run(capsys, "sweep", "fig1", "--format", "csv")
        assert code == 0
        data = rows(out)
        assert len(data) == 16
        by = {(r["series"], int(r["N"])): float(r["value"]) for r in data}
        for N in range(3, 11):
            assert by[("optimal", N)] > by[("naive", N)] + 0.01

    def test_fig2(self, capsys):
        _, out, _ = run(capsys, "sweep", "fig2", "--T-values", "10,100", "--format", "csv")
        data = rows(out)
        assert {r["series"] for r in data} == {"T=10", "T=100"}
        for series in ("T=10", "T=100"):
            vals = [float(r["value"]) for r in data if r["series"] == series]
            assert len(vals) == 8 and vals == sorted(vals)

    def test_fig2_limiting_curve(self, capsys):
        _, out, _ = run(capsys, "sweep", "fig2", "--format", "csv")
        data = rows(out)
        curve = {T: [float(r["value"]) for r in data if r["series"] == f"T={T}"]
                 for T in (10, 100, 1000)}
        assert [int(r["N"]) for r in data[:8]] == list(range(3, 11))
        assert max(abs(a - b) for a, b in zip(curve[100], curve[1000])) < 0.01

    def test_fig3(self, capsys, tmp_path):
        path = tmp_path / "fig3.csv"
        _, out, _ = run(capsys, "sweep", "fig3", "--T-values", "2-8", "--output", str(path))
        data = rows(path.read_text())
        assert [int(r["T"]) for r in data] == list(range(2, 9))
        assert all(3.0 <= float(r["value"]) <= 4.5 for r in data)
        assert "fig3" in out

    def test_thread_cap_same_output(self, capsys, monkeypatch):
        monkeypatch.setenv("QSTEER_THREADS", "1")
        _, a, _ = run(capsys, "sweep", "fig3", "--T-values", "2-10", "--format", "csv")
        monkeypatch.setenv("QSTEER_THREADS", "4")
        _, b, _ = run(capsys, "sweep", "fig3", "--T-values", "2-10", "--format", "csv")
        assert a == b


class TestGraph:
    def test_export(self, capsys, tmp_path):
        path = tmp_path / "g.json"
        code, out, _ = run(capsys, "graph", "-T", "5", "--output", str(path))
        assert code == 0
        doc = json.loads(path.read_text())
        assert len(doc["states"]) == 10
        assert out.startswith("10 states")

    def test_stdout_json(self, capsys):
        _, out, _ = run(capsys, "graph", "-T", "3")
        assert json.loads(out)["actions"] == ["E_1", "E_2", "E_3"]

import json
import subprocess
import sys

import numpy as np
import pytest

from svoc.core_types import TimeGrid
from svoc.cli import bundled_config, load_problem, problem_from_dict, read_outputs, run
from svoc.errors import SchemaError
from svoc.expr_dsl import ParseError


def lq_doc(**kw):
    doc = {"alpha": 0.5, "T": 1.0, "N": 40, "state_dim": 1, "control_dim": 1, "x0": [1.0],
           "dynamics": {"kind": "lq", "A1": [[-1.0]], "A2": [[0.2]], "B1": [[2.0]], "B2": [[0.1]]},
           "cost": {"kind": "lq", "Q": [[0.0]], "R": [[1.0]], "M": [[1.0]]}}
    doc.update(kw)
    return doc


def write(tmp_path, doc, name="p.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestConfig:
    def test_bundled_example1(self):
        spec = load_problem(bundled_config("example1"))
        assert (spec.n, spec.d, spec.m) == (1, 1, 1)
        assert spec.terminal.kind == "point"
        assert spec.grid.T == 3.0 and spec.alpha == 0.8

    def test_bundled_example2_is_linear(self):
        spec = load_problem(bundled_config("example2"))
        assert spec.dynamics.linear is not None and spec.cost.lq is not None

    def test_expr_linear_dynamics_detected(self):
        doc = lq_doc(dynamics={"kind": "expr", "f": ["-x1 + 2*u1"], "g": ["0.2*x1 + 0.1*u1"]})
        assert problem_from_dict(doc).dynamics.linear is not None
        doc["dynamics"]["f"] = ["-sin(x1) + 2*u1"]
        assert problem_from_dict(doc).dynamics.linear is None

    def test_missing_alpha_pointer(self):
        doc = lq_doc()
        del doc["alpha"]
        with pytest.raises(SchemaError) as info:
            problem_from_dict(doc)
        assert info.value.pointer == "/alpha"

    def test_bad_matrix_pointer(self):
        doc = lq_doc()
        doc["dynamics"]["B1"] = [[2.0, 1.0]]
        with pytest.raises(SchemaError) as info:
            problem_from_dict(doc)
        assert info.value.pointer == "/dynamics/B1/0"

    def test_alpha_range(self):
        with pytest.raises(SchemaError):
            problem_from_dict(lq_doc(alpha=1.0))

    def test_parse_error_carries_pointer(self):
        doc = lq_doc(dynamics={"kind": "expr", "f": ["x1 + * u1"], "g": ["0"]})
        with pytest.raises(ParseError) as info:
            problem_from_dict(doc)
        assert info.value.pointer == "/dynamics/f/0"
        assert info.value.col == 6

    def test_disallowed_variable(self):
        doc = lq_doc(cost={"kind": "expr", "l": "x1 + s", "h": "x1_T"})
        with pytest.raises(SchemaError) as info:
            problem_from_dict(doc)
        assert info.value.pointer == "/cost/l"


class TestCommands:
    def test_missing_file(self, tmp_path, capsys):
        assert run(["forward", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
        assert "not found" in capsys.readouterr().err

    def test_parse_error_message(self, tmp_path, capsys):
        path = write(tmp_path, lq_doc(dynamics={"kind": "expr", "f": ["x1 + * u1"], "g": ["0"]}))
        assert run(["forward", str(path), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "/dynamics/f/0" in err and "     ^" in err

    def test_solve_writes_outputs(self, tmp_path):
        path = write(tmp_path, lq_doc())
        out = tmp_path / "out"
        assert run(["solve", str(path), "--out", str(out)]) == 0
        table = np.loadtxt(out / "trajectories.csv", delimiter=",", skiprows=1)
        assert table.shape == (41, 1 + 1 + 1 + 1)
        doc = json.loads((out / "report.json").read_text())
        assert doc["converged"] is True
        assert set(doc["multipliers"]) == {"lam", "xi", "theta_T", "Theta"}

    def test_outputs_are_deterministic(self, tmp_path):
        path = write(tmp_path, lq_doc())
        for d in ("a", "b"):
            assert run(["solve-lq", str(path), "--out", str(tmp_path / d)]) == 0
        for f in ("trajectories.csv", "report.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert b"\r\n" not in (tmp_path / "a" / "trajectories.csv").read_bytes()

    def test_constrained_columns_and_check(self, tmp_path):
        cfg = str(bundled_config("example1"))
        out = tmp_path / "sol"
        assert run(["solve-constrained", cfg, "--n", "150", "--out", str(out)]) == 0
        header = (out / "trajectories.csv").read_text().splitlines()[0].split(",")
        assert header == ["t", "x1", "u1", "p1", "theta1"]
        spec = load_problem(cfg).with_(grid=TimeGrid(3.0, 150))
        x, u, p, mult = read_outputs(out, spec)
        assert np.all(np.diff(mult.theta[:, 0]) >= 0.0)
        assert run(["check", cfg, str(out), "--n", "150", "--out", str(tmp_path / "chk")]) == 0
        assert json.loads((tmp_path / "chk" / "check.json").read_text())["converged"] is True

    def test_check_flags_tampered_certificate(self, tmp_path):
        path = write(tmp_path, lq_doc())
        out = tmp_path / "sol"
        assert run(["solve", str(path), "--out", str(out)]) == 0
        lines = (out / "trajectories.csv").read_text().splitlines()
        cols = lines[5].split(",")
        cols[2] = "%.12e" % (float(cols[2]) + 0.5)
        lines[5] = ",".join(cols)
        (out / "trajectories.csv").write_text("\n".join(lines) + "\n")
        assert run(["check", str(path), str(out), "--out", str(tmp_path / "chk")]) == 2

    def test_forward_with_zero_dynamics(self, tmp_path):
        doc = lq_doc(dynamics={"kind": "expr", "f": ["0"], "g": ["0"]},
                     cost={"kind": "expr", "l": "u1^2", "h": "0"})
        path = write(tmp_path, doc)
        assert run(["forward", str(path), "--out", str(tmp_path)]) == 0
        x = np.loadtxt(tmp_path / "trajectories.csv", delimiter=",", skiprows=1)[:, 1]
        np.testing.assert_array_equal(x, 1.0)

    def test_demo_example2(self, tmp_path):
        assert run(["demo", "example2", "--n", "80", "--alpha", "0.3", "--alpha", "0.7",
                    "--out", str(tmp_path)]) == 0
        for a in ("0.3", "0.7"):
            assert (tmp_path / f"alpha{a}" / "report.json").exists()

    def test_demo_figure1(self, tmp_path):
        assert run(["demo", "figure1", "--n", "200", "--alpha", "0.2", "--alpha", "0.8",
                    "--out", str(tmp_path)]) == 0
        assert (tmp_path / "figure1_alpha0.2.csv").exists() and (tmp_path / "figure1_alpha0.8.csv").exists()
        rows = (tmp_path / "figure1_summary.csv").read_text().splitlines()
        assert rows[0] == "alpha,deviation_at_0.01" and len(rows) == 3

    def test_convergence_table(self, tmp_path, capsys):
        assert run(["convergence", "caputo", "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "convergence.csv").read_text().splitlines()
        assert rows[0] == "N,h,error,order" and len(rows) == 4
        errors = [float(r.split(",")[2]) for r in rows[1:]]
        assert errors[0] > errors[1] > errors[2]

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "svoc.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "solve-constrained" in proc.stdout

import json
import subprocess
import sys

import numpy as np
import pytest

from bayesqp.cli import (
    ExperimentSpec,
    UsageError,
    format_cell,
    main,
    oracle,
    parse_seeds,
    quantile_summary,
    read_config_file,
    summarize,
)
from bayesqp.driver import EvalRecord, RunTrace, run, RunConfig
from bayesqp.problems import make_problem


def fake_trace(f, feasible=True, problem="toy", algorithm="bayesqp"):
    t = RunTrace(problem, algorithm, 1, 1, {})
    c = [1.0] if feasible else [-1.0]
    t.evaluations.append(EvalRecord(0, "init", [0.5], float(f), c, float(f), feasible, 0))
    return t


@pytest.fixture(scope="module")
def gramacy_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    argv = ["run", "--problem", "gramacy", "--algo", "bayesqp", "--seeds", "4", "--budget", "80",
            "--jobs", "1", "--out", str(out)]
    code = main(argv)
    return out, argv, code


class TestRun:
    def test_four_traces_and_manifest(self, gramacy_runs):
        out, _, code = gramacy_runs
        assert code == 0
        assert sorted(p.name for p in out.glob("*.csv")) == [f"gramacy_bayesqp_seed{i}.csv" for i in range(4)]
        manifest = json.loads((out / "gramacy_bayesqp_manifest.json").read_text())
        assert [r["status"] for r in manifest["runs"]] == ["ok"] * 4
        assert all(r["n_evaluations"] == 80 for r in manifest["runs"])

    def test_rerun_is_byte_identical(self, gramacy_runs, tmp_path):
        out, argv, _ = gramacy_runs
        argv = argv[:-1] + [str(tmp_path)]
        assert main(argv) == 0
        for p in out.iterdir():
            assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name

    def test_sidecar_echoes_config(self, gramacy_runs):
        out, _, _ = gramacy_runs
        meta = json.loads((out / "gramacy_bayesqp_seed2.json").read_text())
        assert meta["config"]["budget"] == 80 and meta["config"]["seed"] == 2

    def test_unknown_problem_exit_code(self, tmp_path, capsys):
        assert main(["run", "--problem", "nope", "--out", str(tmp_path)]) == 2
        err = capsys.readouterr().err
        assert "gramacy" in err and "speed-reducer" in err

    def test_bad_budget_is_usage_error(self, tmp_path):
        assert main(["run", "--problem", "gramacy", "--budget", "2", "--out", str(tmp_path)]) == 2

    def test_module_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "bayesqp", "run", "--problem", "nope",
                              "--out", str(tmp_path)], capture_output=True, text=True)
        assert res.returncode == 2

    def test_random_algorithm(self, tmp_path):
        assert main(["run", "--problem", "ackley-constrained", "--dim", "2", "--algo", "random",
                     "--seeds", "2", "--budget", "15", "--jobs", "1", "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.csv"))) == 2

    def test_parallel_matches_serial(self, tmp_path):
        args = ["run", "--problem", "gramacy", "--algo", "random", "--seeds", "3", "--budget", "10"]
        main(args + ["--jobs", "1", "--out", str(tmp_path / "a")])
        main(args + ["--jobs", "2", "--out", str(tmp_path / "b")])
        for p in (tmp_path / "a").glob("*.csv"):
            assert (tmp_path / "b" / p.name).read_bytes() == p.read_bytes()


class TestParsing:
    @pytest.mark.parametrize("text,expected", [("3", [0, 1, 2]), ("4,7", [4, 7]), ("2-5", [2, 3, 4, 5])])
    def test_seeds(self, text, expected):
        assert parse_seeds(text) == expected

    @pytest.mark.parametrize("text", ["0", "5-2", "a", "1,1"])
    def test_bad_seeds(self, text):
        with pytest.raises(UsageError):
            parse_seeds(text)

    def test_config_file(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\nbudget = 50\nhyper = frozen\ndelta_f = 0.3\n")
        assert read_config_file(path) == {"budget": 50, "hyper": "frozen", "delta_f": 0.3}

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("budgett = 50\n")
        code = main(["run", "--problem", "gramacy", "--config", str(path), "--out", str(tmp_path)])
        assert code == 2

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("budget = 50\nhyper = frozen\n")
        out = tmp_path / "o"
        main(["run", "--problem", "gramacy", "--algo", "random", "--config", str(path), "--budget", "12",
              "--jobs", "1", "--out", str(out)])
        meta = json.loads((out / "gramacy_random_seed0.json").read_text())
        assert meta["n_evaluations"] == 12

    def test_spec_validation(self, tmp_path):
        with pytest.raises(UsageError):
            ExperimentSpec("gramacy", None, None, "cmaes", [0], {}, tmp_path)


class TestReport:
    def test_hand_quantiles(self):
        med, lo, hi = quantile_summary([1.0, 2.0, 3.0])
        assert (med, lo, hi) == (2.0, pytest.approx(1.1), pytest.approx(2.9))

    def test_single_value(self):
        assert quantile_summary([4.2]) == (4.2, 4.2, 4.2)

    def test_infeasible_run_excluded(self):
        rows = summarize([fake_trace(1), fake_trace(2), fake_trace(-100, feasible=False)])
        assert rows[0]["feasible"] == 2 and rows[0]["runs"] == 3
        assert rows[0]["median"] == 1.5
        assert "feas. 2/3" in rows[0]["cell"] and "*" in rows[0]["cell"]

    def test_no_feasible_run(self):
        assert format_cell(np.nan, np.nan, np.nan, 0, 2) == "n/a (feas. 0/2)"

    def test_cell_format(self):
        assert format_cell(2.0, 1.1, 2.9, 3, 3) == "2.00_{1.10}^{2.90} (feas. 3/3)"

    def test_order_invariant(self):
        a = summarize([fake_trace(v) for v in (3, 1, 2)])
        b = summarize([fake_trace(v) for v in (1, 2, 3)])
        assert a == b

    def test_report_command(self, tmp_path, capsys):
        for i, (f, ok) in enumerate([(1, True), (2, True), (3, False)]):
            fake_trace(f, ok).write(tmp_path / f"toy_bayesqp_seed{i}.csv")
        code = main(["report", str(tmp_path / "*.csv"), "--out", str(tmp_path / "rep")])
        assert code == 0
        text = (tmp_path / "rep.txt").read_text()
        assert "feas. 2/3" in text and "feasible point only" in text
        assert "1.50_{1.05}^{1.95}*" in capsys.readouterr().out

    def test_report_on_real_runs(self, gramacy_runs, tmp_path):
        out, _, _ = gramacy_runs
        assert main(["report", str(out), "--out", str(tmp_path / "r")]) == 0
        assert "(feas. " in (tmp_path / "r.txt").read_text()

    def test_report_without_matches(self, tmp_path):
        assert main(["report", str(tmp_path / "none*.csv"), "--out", str(tmp_path / "r")]) == 2


class TestSweep:
    def test_grid(self, tmp_path):
        out = tmp_path / "sw"
        code = main(["sweep", "--problem", "gramacy", "--seeds", "2", "--budget", "12", "--hyper", "frozen",
                     "--rows", "0.2,0.5", "--cols", "0.2,0.5", "--jobs", "1", "--out", str(out)])
        assert code == 0
        result = json.loads((out / "sweep.json").read_text())
        assert len(result["cells"]) == 4
        assert sum(c["runs"] for c in result["cells"]) == 8
        assert len(list(out.rglob("*_seed*.csv"))) == 8
        assert "expected-value" in (out / "sweep.csv").read_text()

    def test_km_axes_are_integers(self, tmp_path):
        code = main(["sweep", "--problem", "gramacy", "--axes", "km", "--seeds", "1", "--budget", "12",
                     "--hyper", "frozen", "--rows", "2", "--cols", "1,2", "--jobs", "1",
                     "--out", str(tmp_path)])
        assert code == 0
        result = json.loads((tmp_path / "sweep.json").read_text())
        assert result["rows"] == [2] and result["cols"] == [1, 2]

    def test_bad_grid(self, tmp_path):
        code = main(["sweep", "--problem", "gramacy", "--rows", "x", "--cols", "0.2", "--out", str(tmp_path)])
        assert code == 2


class TestOracle:
    def test_gramacy(self):
        best = oracle(make_problem("gramacy"), resolution=2001)["best"]
        assert best["f"] == pytest.approx(0.5998, abs=1e-3)
        assert best["feasible"]

    def test_ackley_origin(self):
        best = oracle(make_problem("ackley-constrained", 2), resolution=301)["best"]
        assert best["f"] == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_allclose(best["x"], [0.0, 0.0], atol=1e-6)

    def test_dominates_traces(self):
        p = make_problem("within-model", 1, seed=4)
        best = oracle(p, resolution=2001)["best"]["f"]
        for s in range(3):
            assert best <= run(p, RunConfig(budget=30, seed=s)).final_value + 1e-12

    def test_command(self, tmp_path):
        out = tmp_path / "o.json"
        assert main(["oracle", "--problem", "within-model", "--dim", "1", "--resolution", "501",
                     "--out", str(out)]) == 0
        assert "best" in json.loads(out.read_text())

    def test_unknown(self):
        assert main(["oracle", "--problem", "nope"]) == 2

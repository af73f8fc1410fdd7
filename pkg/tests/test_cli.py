import csv

import pytest

from quiterank.cli import main

SHAPE = ["--N", "20", "--D", "6", "--alpha", "0.5"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--seed", "4", "--out", str(out), *SHAPE]) == 0
    return out


class TestCli:
    def test_simulate(self, simulated, capsys):
        names = {p.name for p in simulated.iterdir()}
        assert {"graph.txt", "assignment.txt", "answers.txt", "truth_qualities.txt",
                "truth_reliabilities.txt"} <= names

    def test_simulate_deterministic(self, simulated, tmp_path):
        other = tmp_path / "again"
        main(["simulate", "--seed", "4", "--out", str(other), *SHAPE])
        for p in simulated.iterdir():
            assert p.read_bytes() == (other / p.name).read_bytes()

    @pytest.mark.parametrize("method", ["quite", "ag"])
    def test_estimate(self, simulated, tmp_path, method):
        out = tmp_path / method
        args = ["estimate", "--graph", str(simulated / "graph.txt"), "--answers", str(simulated / "answers.txt"),
                "--K", "20", "--method", method, "--out", str(out), "--set", "ag_I_max=20", "--set", "I_max=5"]
        assert main(args) == 0
        assert len(read_csv(out / "qualities.csv")) == 21
        assert len(read_csv(out / "reliabilities.csv")) == 21
        assert (out / "trace.csv").exists() == (method == "quite")

    def test_bcrb_from_files(self, simulated, tmp_path):
        out = tmp_path / "bound"
        args = ["bcrb", "--graph", str(simulated / "graph.txt"), "--assignment", str(simulated / "assignment.txt"),
                "--K", "20", "--out", str(out)]
        assert main(args) == 0
        rows = read_csv(out / "bounds.csv")
        assert rows[0] == ["class", "index", "bound"]
        assert len(rows) == 1 + 20 + 60 + 20

    def test_bcrb_needs_assignment(self, simulated, tmp_path, capsys):
        assert main(["bcrb", "--graph", str(simulated / "graph.txt"), "--out", str(tmp_path)]) == 2
        assert "--assignment" in capsys.readouterr().err

    def test_experiment(self, tmp_path, capsys):
        out = tmp_path / "exp"
        args = ["experiment", "--scenario", "perr_vs_N", "--trials", "2", "--out", str(out), "--seed", "1",
                "--set", "N_grid=[20]", "--set", "alpha_grid=[0.5]", "--set", "D=6", "--set", "ag_I_max=10"]
        assert main(args) == 0
        assert {"results.csv", "config.echo", "perr_vs_N.svg"} <= {p.name for p in out.iterdir()}
        # the echo is itself a valid config
        again = tmp_path / "again"
        assert main(["experiment", "--config", str(out / "config.echo"), "--out", str(again)]) == 0
        assert (out / "results.csv").read_bytes() == (again / "results.csv").read_bytes()

    def test_experiment_failure_exit_code(self, tmp_path, capsys):
        args = ["experiment", "--scenario", "bcrb_only", "--trials", "1", "--out", str(tmp_path),
                "--set", "N_grid=[5]", "--set", "D=6"]
        assert main(args) == 1
        assert "grid point failed" in capsys.readouterr().err

    def test_compare(self, tmp_path, capsys):
        args = ["compare", "--seed", "2", "--out", str(tmp_path), *SHAPE, "--two-stage", "--set", "D1=4",
                "--set", "D2=4", "--set", "ag_I_max=20"]
        assert main(args) == 0
        rows = read_csv(tmp_path / "compare.csv")
        assert [r[0] for r in rows[1:]] == ["quite", "quite_l1", "ag", "two_stage"]
        assert (tmp_path / "stages.csv").exists()
        assert "estimator" in capsys.readouterr().out

    def test_bad_override(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["experiment", "--out", str(tmp_path), "--set", "trials"])

    def test_bad_config_key(self, tmp_path, capsys):
        assert main(["experiment", "--out", str(tmp_path), "--set", "trails=2"]) == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        args = ["estimate", "--graph", str(tmp_path / "none.txt"), "--answers", str(tmp_path / "none.txt"),
                "--out", str(tmp_path)]
        assert main(args) == 1
        assert "none.txt" in capsys.readouterr().err

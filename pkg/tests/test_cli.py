import csv
import io
import json
import subprocess
import sys

import pytest

from raremc import EstimateResult, NoConvergence, cli

SIM = ["simulate", "--preset", "two-state", "--p", "0.5", "--a", "0.166667", "--b", "0.5"]


def run(capsys, argv):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_adaptive_magnitude(capsys):
    code, out, err = run(capsys, SIM + ["--n", "60", "--scheme", "adaptive",
                                        "--samples", "10000", "--seed", "1"])
    assert code == 0 and err == ""
    doc = json.loads(out)
    assert doc["scheme"] == "adaptive" and doc["K"] == 10000
    assert abs(doc["p_hat"] - 0.0327) < 0.004


def test_simulate_horizon_one(capsys):
    code, out, _ = run(capsys, SIM + ["--n", "1", "--scheme", "naive", "--samples", "5"])
    assert code == 0 and json.loads(out)["p_hat"] == 1.0


def test_missing_samples_is_config_error(capsys):
    code, out, err = run(capsys, SIM + ["--n", "60"])
    assert code == 2 and out == ""
    assert err.count("\n") == 1 and "samples" in err


@pytest.mark.parametrize("argv", [
    ["simulate", "--preset", "two-state", "--p", "1.5", "--n", "5", "--samples", "4"],
    ["simulate", "--preset", "nope"],
    ["exact", "--preset", "tandem", "--lambda", "0.5", "--mu1", "0.2", "--mu2", "0.3", "--n", "5"],
    ["exact", "--preset", "two-state"],
    ["exact", "--preset", "two-state", "--n", "0"],
    ["reproduce", "--table", "11"],
    ["frobnicate"],
])
def test_domain_errors_exit_two(capsys, argv):
    code, out, err = run(capsys, argv)
    assert code == 2 and out == "" and err.startswith("raremc: error:")
    assert err.count("\n") == 1


def test_numerical_failure_exits_three(capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise NoConvergence("power iteration hit its cap")
    monkeypatch.setattr(cli, "legendre_with", boom)
    code, out, err = run(capsys, ["rate", "--preset", "two-state", "--beta", "0.5"])
    assert code == 3 and out == "" and "numerical failure" in err


def test_exact_two_state(capsys):
    code, out, _ = run(capsys, ["exact", "--preset", "two-state", "--n", "120"])
    assert code == 0
    assert json.loads(out)["p_n"] == pytest.approx(1.61e-3, rel=0.01)


def test_exact_with_scheme_reports_moments(capsys):
    code, out, _ = run(capsys, ["exact", "--preset", "two-state", "--n", "30", "--scheme", "static"])
    doc = json.loads(out)
    assert code == 0 and doc["policy"] == "static"
    assert doc["policy_mean"] == pytest.approx(doc["p_n"], rel=1e-12)
    assert doc["ratio"] is not None


def test_exact_tandem_conventions(capsys):
    _, out, _ = run(capsys, ["exact", "--preset", "tandem", "--n", "50"])
    assert json.loads(out)["p_n"] > 0
    _, out, _ = run(capsys, ["exact", "--preset", "tandem", "--n", "50", "--convention", "jump"])
    assert json.loads(out)["p_n"] == pytest.approx(4.10e-5, rel=0.01)


def test_exact_horizon_one(capsys):
    _, out, _ = run(capsys, ["exact", "--preset", "two-state", "--n", "1"])
    assert json.loads(out)["p_n"] == 1.0


def test_exact_needs_lattice(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"P": [[0.5, 0.5], [1, 0]], "g": [[0.5], [-1]]},
                               "target": {"halfspaces": [{"v": [1], "c": 0.4}]}, "n": 4}))
    code, _, err = run(capsys, ["exact", "--config", str(cfg)])
    assert code == 2 and "lattice" in err


def test_rate_at_point_and_drift(capsys):
    _, out, _ = run(capsys, ["rate", "--preset", "two-state", "--beta", "0.5"])
    assert json.loads(out)["L"] == pytest.approx(0.042475, abs=1e-6)
    _, out, _ = run(capsys, ["rate", "--preset", "two-state", "--beta", str(1 / 3)])
    assert json.loads(out)["L"] == pytest.approx(0.0, abs=1e-12)


def test_rate_beta_dimension_checked(capsys):
    code, _, _ = run(capsys, ["rate", "--preset", "tandem", "--beta", "0.5"])
    assert code == 2


def test_rate_target(capsys):
    _, out, _ = run(capsys, ["rate", "--preset", "two-state", "--target"])
    doc = json.loads(out)
    assert doc["naive"] == pytest.approx(0.0424747592, abs=1e-9)
    assert doc["optimal"] == pytest.approx(2 * doc["naive"])
    assert doc["static"] == pytest.approx(-0.0656515, abs=1e-6)


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"preset": "two-state", "n": 20, "samples": 200,
                               "scheme": "naive", "seed": 3}))
    _, out, _ = run(capsys, ["simulate", "--config", str(cfg)])
    doc = json.loads(out)
    assert (doc["n"], doc["K"], doc["seed"], doc["scheme"]) == (20, 200, 3, "naive")
    _, out, _ = run(capsys, ["simulate", "--config", str(cfg), "--n", "30", "--scheme", "static"])
    doc = json.loads(out)
    assert (doc["n"], doc["scheme"]) == (30, "static")


def test_config_needs_exactly_one_chain_source(capsys, tmp_path):
    cfg = tmp_path / "both.json"
    cfg.write_text(json.dumps({"preset": "two-state", "chain": {"P": [[1.0]], "g": [[1]]},
                               "n": 5}))
    assert run(capsys, ["exact", "--config", str(cfg)])[0] == 2
    cfg.write_text(json.dumps({"n": 5}))
    assert run(capsys, ["exact", "--config", str(cfg)])[0] == 2


def test_bad_config_file(capsys, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert run(capsys, ["exact", "--config", str(cfg)])[0] == 2
    assert run(capsys, ["exact", "--config", str(tmp_path / "missing.json")])[0] == 2


def test_csv_output_round_trips(capsys):
    _, out, _ = run(capsys, SIM + ["--n", "30", "--scheme", "adaptive", "--samples", "300",
                                   "--format", "csv"])
    row = next(csv.DictReader(io.StringIO(out)))
    res = EstimateResult.from_csv_row(row)
    assert res.scheme == "adaptive" and res.K == 300
    assert res.to_csv() == out


def test_out_file(capsys, tmp_path):
    target = tmp_path / "res.json"
    code, out, _ = run(capsys, SIM + ["--n", "20", "--samples", "50", "--out", str(target)])
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["n"] == 20


def test_same_config_same_bytes(capsys):
    argv = SIM + ["--n", "40", "--scheme", "adaptive", "--samples", "500", "--seed", "7"]
    first = run(capsys, argv)[1]
    second = run(capsys, argv)[1]
    assert first == second


def test_reproduce_four_run_table_shape():
    text = cli.cmd_reproduce(1, seed=0, K=400)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["quantity", "run_1", "run_2", "run_3", "run_4"]
    assert [r[0] for r in rows[1:]] == ["theoretical_p_n_pct", "estimate_pct", "std_err_pct",
                                        "ci_lo_pct", "ci_hi_pct"]
    assert rows[1][1] == "3.27"


def test_reproduce_horizon_table_has_ratio_row():
    text = cli.cmd_reproduce(6, seed=0, K=200)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["quantity", "n_120", "n_180", "n_240"]
    assert rows[-1][0] == "ratio"
    theo = [float(v) for v in rows[1][1:]]
    assert theo == pytest.approx([1.61e-3, 9.66e-5, 6.35e-6], rel=0.01)


def test_reproduce_is_deterministic():
    assert cli.cmd_reproduce(2, seed=5, K=300) == cli.cmd_reproduce(2, seed=5, K=300)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "raremc", "rate", "--preset", "two-state",
                           "--beta", "0.5", "--format", "csv"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    row = next(csv.DictReader(io.StringIO(proc.stdout)))
    assert float(row["L"]) == pytest.approx(0.042475, abs=1e-6)

import csv
import json

import numpy as np
import pytest

from linkadjust.cli import EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, main
from linkadjust.replication import Method, run_replications
from linkadjust.simulate import ScenarioSpec


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def simulate(tmp_path, scenario, name="d.csv", n=1000, seed=7):
    out = tmp_path / name
    assert main(["--command", "simulate", "--scenario", scenario, "--n", str(n), "--seed", str(seed),
                 "--output", str(out)]) == EXIT_OK
    return out


def test_simulate_is_deterministic(tmp_path):
    a = simulate(tmp_path, "motivating", "a.csv")
    b = simulate(tmp_path, "motivating", "b.csv")
    assert a.read_bytes() == b.read_bytes()
    header, body = read_csv(a)
    assert header == ["y", "x", "true_m"] and body.shape == (1000, 3)


def test_simulate_ele_block_column(tmp_path):
    header, body = read_csv(simulate(tmp_path, "ele_blocks"))
    assert set(np.unique(body[:, header.index("block")])) == {1.0, 2.0}


def test_simulate_overlap_correlation(tmp_path):
    header, body = read_csv(simulate(tmp_path, "overlap1"))
    r = np.corrcoef(body[:, header.index("x")], body[:, header.index("z")])[0, 1]
    assert abs(r + 0.8) < 0.05


def test_fit_extended_round_trip(tmp_path):
    data = simulate(tmp_path, "motivating")
    out = tmp_path / "fit.json"
    code = main(["--command", "fit", "--input", str(data), "--response", "y", "--covariates", "x",
                 "--m-covariates", "x", "--method", "extended", "--output", str(out)])
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    assert abs(rep["estimates"]["beta[x]"]["est"] + 1) < 0.05
    assert abs(rep["estimates"]["beta[intercept]"]["est"] - 1) < 0.05
    for key in ("config", "method", "loglik_trace", "converged", "iterations", "timing_ms", "posterior_correct_path"):
        assert key in rep
    assert rep["config"]["method"] == "extended"
    assert len(rep["posterior_correct"]) == 1000


def test_fit_naive_matches_least_squares(tmp_path):
    rng = np.random.default_rng(0)
    x1, x2 = rng.standard_normal(100), rng.standard_normal(100)
    y = 0.5 + 2 * x1 - x2 + rng.standard_normal(100)
    path = tmp_path / "clean.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "a", "b"])
        w.writerows(zip(y.tolist(), x1.tolist(), x2.tolist()))
    out = tmp_path / "naive.json"
    assert main(["--command", "fit", "--input", str(path), "--response", "y", "--covariates", "a,b",
                 "--method", "naive", "--output", str(out)]) == EXIT_OK
    est = json.loads(out.read_text())["estimates"]
    X = np.column_stack([np.ones(100), x1, x2])
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    got = [est["beta[intercept]"]["est"], est["beta[a]"]["est"], est["beta[b]"]["est"]]
    assert np.max(np.abs(np.array(got) - beta)) < 1e-8


def _write(path, text):
    path.write_text(text)
    return str(path)


def test_fit_missing_value_names_row(tmp_path, capsys):
    src = _write(tmp_path / "bad.csv", "y,x\n1,2\n,3\n4,5\n")
    code = main(["--command", "fit", "--input", src, "--response", "y", "--covariates", "x", "--method", "naive",
                 "--output", str(tmp_path / "o.json")])
    assert code == EXIT_INPUT
    assert "(1, 'y')" in capsys.readouterr().err


def test_fit_input_errors(tmp_path, capsys):
    src = _write(tmp_path / "bad.csv", "y,x\n1,2\nabc,3\n4,5\n")
    args = ["--command", "fit", "--input", src, "--response", "y", "--method", "naive",
            "--output", str(tmp_path / "o.json")]
    assert main(args + ["--covariates", "x"]) == EXIT_INPUT
    assert "non-numeric" in capsys.readouterr().err
    assert main(args + ["--covariates", "nope"]) == EXIT_INPUT
    assert "unknown column" in capsys.readouterr().err
    tiny = _write(tmp_path / "tiny.csv", "y,x\n1,2\n3,4\n")
    assert main(["--command", "fit", "--input", tiny, "--response", "y", "--covariates", "x", "--method", "naive",
                 "--output", str(tmp_path / "o.json")]) == EXIT_INPUT
    assert main(["--command", "fit", "--input", str(tmp_path / "absent.csv"), "--response", "y",
                 "--output", str(tmp_path / "o.json")]) == EXIT_INPUT


def test_assumed_rate_only_with_constrained(tmp_path):
    data = simulate(tmp_path, "motivating", n=200)
    base = ["--command", "fit", "--input", str(data), "--response", "y", "--covariates", "x",
            "--output", str(tmp_path / "o.json")]
    assert main(base + ["--method", "plain", "--assumed-rate", "0.2"]) == EXIT_INPUT
    assert main(base + ["--method", "plain-constrained"]) == EXIT_INPUT
    assert main(base + ["--method", "plain-constrained", "--assumed-rate", "0.2"]) == EXIT_OK


def test_non_convergence_exit_code(tmp_path):
    data = simulate(tmp_path, "motivating", n=200)
    out = tmp_path / "o.json"
    code = main(["--command", "fit", "--input", str(data), "--response", "y", "--covariates", "x",
                 "--m-covariates", "x", "--method", "plain", "--max-iter", "1", "--output", str(out)])
    assert code == EXIT_NOT_CONVERGED
    assert json.loads(out.read_text())["converged"] is False


def test_config_file_precedence(tmp_path):
    data = simulate(tmp_path, "motivating", n=200)
    cfg = _write(tmp_path / "cfg.json", json.dumps({"method": "naive", "response": "y", "covariates": ["x"],
                                                     "max_iter": 3}))
    out = tmp_path / "o.json"
    assert main(["--config", cfg, "--command", "fit", "--input", str(data), "--method", "plain",
                 "--output", str(out)]) in (EXIT_OK, EXIT_NOT_CONVERGED)
    rep = json.loads(out.read_text())
    assert rep["method"] == "plain" and rep["config"]["max_iter"] == 3
    bad = _write(tmp_path / "bad.json", json.dumps({"colour": 1}))
    assert main(["--config", bad, "--command", "fit", "--output", str(out)]) == EXIT_INPUT


def test_oracle_needs_flags(tmp_path):
    data = simulate(tmp_path, "motivating", n=300)
    base = ["--command", "fit", "--input", str(data), "--response", "y", "--covariates", "x",
            "--m-covariates", "x", "--method", "oracle", "--output", str(tmp_path / "o.json")]
    assert main(base) == EXIT_INPUT
    assert main(base + ["--true-m-col", "true_m"]) == EXIT_OK


def test_replicate_single_replication(tmp_path):
    out = tmp_path / "rep.json"
    assert main(["--command", "replicate", "--scenario", "motivating", "--n", "200", "--replications", "1",
                 "--methods", "naive,adj1", "--output", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    for method in rep["summary"].values():
        for row in method.values():
            assert row["sd"] is None
            assert row["coverage"] in (0.0, 1.0)
    with open(tmp_path / "rep_replications.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"naive", "adj1"}
    assert all(r["replication"] == "0" for r in rows)


def test_replication_report_zero_noise_sd():
    # each replication regenerates the same data when noise and mismatch are switched off
    from linkadjust.simulate import Truth

    spec = ScenarioSpec("ele_blocks", n=100, seed=3, truth=Truth([1, -1], 1e-9, [800.0, 0.0]))
    rep = run_replications(spec, 2, [Method("naive", "naive")])
    assert rep.params["naive"]["beta[intercept]"].sd == pytest.approx(0.0, abs=1e-8)
    assert rep.mismatch_rate == 0.0


def test_replication_failures_are_counted(monkeypatch):
    from linkadjust import replication
    from linkadjust.errors import NoMismatchMassError

    def broken(*args, **kwargs):
        raise NoMismatchMassError("no mismatches")

    monkeypatch.setattr(replication, "fit_extended", broken)
    spec = ScenarioSpec("motivating", n=50, seed=1)
    rep = run_replications(spec, 3, ["naive", "extended"])
    assert rep.failures == {"naive": 0, "extended": 3}
    assert rep.failure_flag
    assert "extended" not in rep.records[0]["fits"]


def test_naive_coverage_on_clean_data():
    from linkadjust.simulate import Truth

    R, level = 200, 0.95
    spec = ScenarioSpec("motivating", n=200, seed=5, truth=Truth([1, -1], 0.25, [800.0, 0.0]))
    rep = run_replications(spec, R, ["naive"], level)
    bound = 2 * np.sqrt(level * (1 - level) / R)
    for name in ("beta[intercept]", "beta[x]"):
        assert abs(rep.params["naive"][name].coverage - level) <= bound

import csv
import io
import json
import math

import pytest

from tsdae import cli
from tsdae.cli import main


def run(argv, capsys):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


def test_solve_kinetics_defaults(capsys):
    rc, out, _ = run(["solve", "--problem", "kinetics"], capsys)
    assert rc == 0
    res = json.loads(out)
    assert res["termination"] == "ReachedMaxTime"
    assert res["final_t"] >= 20.0
    assert res["error_vs_exact"] < 1e-5


def test_unknown_problem_suggests(capsys):
    rc, _, err = run(["solve", "--problem", "kinetic"], capsys)
    assert rc == 1
    assert "did you mean kinetics" in err


def test_unknown_scheme_and_bad_flags(capsys):
    assert run(["solve", "--problem", "kinetics", "--scheme", "rk:rk5"], capsys)[0] == 1
    assert run(["solve", "--problem", "kinetics", "--atol", "1,2"], capsys)[0] == 1
    assert run(["solve", "--problem", "kinetics", "--seed-params", "q=1"], capsys)[0] == 1
    assert run(["solve", "--problem", "kinetics", "--adapt", "pid"], capsys)[0] == 1
    assert run(["solve"], capsys)[0] == 1


def test_divergence_exit_code(capsys):
    rc, out, err = run(["solve", "--problem", "kinetics", "--scheme", "rk:euler", "--adapt", "none",
                        "--dt", "100", "--max-time", "10000"], capsys)
    assert rc == 2
    assert json.loads(out)["termination"] == "Diverged"
    assert "diverged" in err


def test_check_failure_exit_code(capsys, monkeypatch):
    monkeypatch.setattr(cli, "adjoint_check",
                        lambda *a, **k: {"adjoint_vs_forward": 1.0, "adjoint_vs_fd": 1.0})
    rc, _, _ = run(["adjoint-check", "--problem", "kinetics", "--objective", "u0"], capsys)
    assert rc == 3


def test_solve_reproducible_bytes(tmp_path, capsys):
    outs = []
    for i in range(2):
        mon = tmp_path / f"m{i}.csv"
        res = tmp_path / f"r{i}.json"
        rc = main(["solve", "--problem", "orego", "--max-time", "50", "--monitor", str(mon),
                   "--snapshot", "--output", str(res)])
        assert rc == 0
        outs.append((mon.read_bytes(), res.read_bytes()))
    assert outs[0] == outs[1]
    assert outs[0][0].startswith(b"step,t,dt,accepted,werr")


def test_view_goes_to_stderr(capsys):
    rc, out, err = run(["solve", "--problem", "kinetics", "--view"], capsys)
    assert rc == 0
    assert "maximum steps=1000" in err
    json.loads(out)


def test_sweep_rows_and_dedup(capsys):
    rc, out, _ = run(["sweep", "--problem", "kinetics", "--schemes", "rk:dp5,rk:dp5,rk:bs3",
                      "--tols", "1e-4,1e-6", "--max-time", "1"], capsys)
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["scheme"] for r in rows] == ["rk:dp5", "rk:dp5", "rk:bs3", "rk:bs3"]
    for r in rows:
        # a tolerance-proportional controller lands within a few hundred times tol
        assert float(r["error_vs_reference"]) < 500 * float(r["tolerance"])
        assert int(r["steps"]) > 0


def test_sweep_needs_two_decades(capsys):
    assert run(["sweep", "--problem", "kinetics", "--tols", "1e-4,1e-5"], capsys)[0] == 1
    assert run(["sweep", "--problem", "kinetics", "--tols", "1e-4"], capsys)[0] == 1


@pytest.mark.parametrize("scheme,order", [("rk:rk4", 4), ("rk:euler", 1)])
def test_order_command(capsys, scheme, order):
    rc, out, _ = run(["order", "--problem", "linear-test", "--scheme", scheme,
                      "--dts", "0.1,0.05,0.025,0.0125"], capsys)
    assert rc == 0
    last = out.strip().splitlines()[-1]
    observed = float(last.rsplit(":", 1)[1])
    assert abs(observed - order) < 0.1


def test_order_ladder_too_short(capsys):
    rc, _, err = run(["order", "--problem", "linear-test", "--dts", "0.1"], capsys)
    assert rc == 1
    assert "at least two" in err


def test_adjoint_check_kinetics(capsys):
    rc, out, _ = run(["adjoint-check", "--problem", "kinetics", "--objective", "u0",
                      "--max-time", "1", "--dt", "0.05", "--checkpoints", "4"], capsys)
    assert rc == 0
    rep = json.loads(out)
    assert rep["adjoint_vs_forward"] < 1e-12
    assert rep["adjoint_vs_fd"] < 1e-6
    assert rep["recomputed_steps"] > 0


def test_adjoint_check_errors(capsys):
    assert run(["adjoint-check", "--problem", "kinetics", "--objective", "nope"], capsys)[0] == 1
    assert run(["adjoint-check", "--problem", "kinetics", "--objective", "u0",
                "--scheme", "rosw:rodas3"], capsys)[0] == 1


def test_events_csv(tmp_path, capsys):
    traj, evs = tmp_path / "t.csv", tmp_path / "e.csv"
    rc = main(["events", "--problem", "bouncing-ball", "--max-time", "3",
               "--trajectory", str(traj), "--events-out", str(evs)])
    assert rc == 0
    rows = list(csv.DictReader(evs.open()))
    assert rows[0]["event_id"] == "0"
    assert float(rows[0]["t"]) == pytest.approx(math.sqrt(10 / 4.9), abs=1e-6)
    assert abs(float(rows[0]["h"])) <= 1e-10
    times = [float(r["t"]) for r in csv.DictReader(traj.open())]
    assert times == sorted(times) and times[-1] == 3.0


def test_tableau_command(capsys):
    rc, out, _ = run(["tableau", "rk4", "--check"], capsys)
    assert rc == 0
    d = json.loads(out)
    assert d["b"] == [1 / 6, 1 / 3, 1 / 3, 1 / 6]
    assert max(abs(v) for v in d["order_residuals"].values()) < 1e-14
    rc, out, _ = run(["tableau", "--list"], capsys)
    assert "ra34pw2" in out.split()
    assert run(["tableau", "rk5"], capsys)[0] == 1


def test_problems_listing(capsys):
    rc, out, _ = run(["problems"], capsys)
    assert rc == 0
    names = [line.split(":")[0] for line in out.splitlines()]
    assert names == ["kinetics", "orego", "grayscott", "bouncing-ball", "linear-test"]

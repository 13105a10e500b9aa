from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from mpiv import write_sample
from mpiv.cli import main
from mpiv.pairing import assign_treatment, match_pairs_scalar
from mpiv.simulation import DgpSpec, generate

MICRO = "y,d,a,pair_id,x1\n3,1,1,p1,0.1\n1,0,0,p1,0.2\n2,0,1,p2,0.3\n2,0,0,p2,0.4\n"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_analyze_micro_json(tmp_path, capsys):
    path = _write(tmp_path, "m.csv", MICRO)
    assert main(["analyze", path, "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema_version"] == "1.0"
    assert doc["delta_hat"] == 2.0
    assert doc["variances"]["nu"] == 0.0


def test_analyze_se_all_and_table(tmp_path, capsys):
    path = _write(tmp_path, "m.csv", MICRO)
    out_json = tmp_path / "r.json"
    assert main(["analyze", path, "--se", "all", "--json", str(out_json),
                 "--delta0", "0", "--delta0", "2"]) == 0
    table = capsys.readouterr().out
    assert "Wald estimate" in table and "p<0.10" in table
    doc = json.loads(out_json.read_text())
    assert set(doc["variances"]) == {"nu", "omega", "omega_pfe_hc0", "omega_pfe_hc1"}
    assert [t["delta_null"] for t in doc["tests"]["omega"]] == [0.0, 2.0]


def test_analyze_unbalanced_lists_pair_ids(tmp_path, capsys):
    text = "y,d,a,pair_id\n1,1,1,A\n2,0,1,A\n3,1,1,B\n4,0,0,B\n5,0,0,C\n6,1,0,C\n"
    path = _write(tmp_path, "u.csv", text)
    assert main(["analyze", path]) == 1
    err = capsys.readouterr().err
    assert "A" in err and "C" in err and "B" not in err.split(":")[-1]


def test_analyze_validation_errors_all_reported(tmp_path, capsys):
    text = "y,d,a,pair_id\n1,2,1,A\nx,0,0,A\n3,1,1,B\n4,0,0,B\n"
    path = _write(tmp_path, "bad.csv", text)
    assert main(["analyze", path]) == 1
    err = capsys.readouterr().err
    assert "d not binary at row 1" in err and "y not numeric at row 2" in err


def test_analyze_needs_pairs(tmp_path, capsys):
    path = _write(tmp_path, "np.csv", "y,d,a,x1\n3,1,1,0.1\n1,0,0,0.2\n2,0,1,0.3\n2,0,0,0.4\n")
    assert main(["analyze", path]) == 1
    assert "pair_id" in capsys.readouterr().err
    assert main(["analyze", path, "--match-on", "x1", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["delta_hat"] == 2.0


def test_drop_incomplete_pairs(tmp_path, capsys):
    text = MICRO + "5,,1,p3,0.5\n1,0,0,p3,0.6\n7,1,1,p4,0.7\n"
    path = _write(tmp_path, "inc.csv", text)
    assert main(["analyze", path]) == 1
    capsys.readouterr()
    assert main(["analyze", path, "--drop-incomplete-pairs", "--format", "json"]) == 0
    captured = capsys.readouterr()
    doc = json.loads(captured.out)
    assert doc["n_pairs"] == 2 and doc["delta_hat"] == 2.0
    assert "p3" in captured.err and "p4" in captured.err


def test_match_scalar_four_rows(tmp_path, capsys):
    path = _write(tmp_path, "c.csv", "x1,label\n0.4,a\n0.1,b\n0.3,c\n0.2,d\n")
    out = tmp_path / "o.csv"
    assert main(["match", path, "-o", str(out), "--seed", "5"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["label"] for r in rows] == ["a", "b", "c", "d"]
    by_pair: dict[str, list[int]] = {}
    for r in rows:
        by_pair.setdefault(r["pair_id"], []).append(int(r["a"]))
    assert len(by_pair) == 2 and all(sorted(v) == [0, 1] for v in by_pair.values())
    assert {r["pair_id"] for r in rows if r["x1"] in ("0.1", "0.2")} == {"1"}
    diag = json.loads(capsys.readouterr().out)
    assert diag["n_pairs"] == 2 and diag["seed"] == 5


def test_match_greedy_three_covariates(tmp_path, capsys):
    x = np.random.default_rng(0).random((12, 3))
    text = "x1,x2,x3\n" + "\n".join(",".join(str(float(v)) for v in r) for r in x) + "\n"
    path = _write(tmp_path, "c3.csv", text)
    out = tmp_path / "o.csv"
    assert main(["match", path, "--method", "greedy", "-o", str(out), "--seed", "1"]) == 0
    rows = list(csv.DictReader(out.open()))
    ids = [r["pair_id"] for r in rows]
    assert sorted(ids.count(i) for i in set(ids)) == [2] * 6
    diag = json.loads(capsys.readouterr().out)
    assert diag["order_source"] == "greedy_midpoints"
    assert diag["within_pair_mean_l2"] > 0


def test_match_scalar_rejects_multiple_columns(tmp_path, capsys):
    path = _write(tmp_path, "c.csv", "x1,x2\n1,2\n3,4\n")
    assert main(["match", path, "--seed", "1"]) == 1
    assert "one matching column" in capsys.readouterr().err


def test_unreadable_path(tmp_path, capsys):
    assert main(["match", str(tmp_path / "missing.csv")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_match_then_analyze_keeps_ordering(tmp_path, capsys):
    pot = generate(DgpSpec("s51", 2), 40, 3)
    text = "x1\n" + "\n".join(str(float(v)) for v in pot.x[:, 0]) + "\n"
    path = _write(tmp_path, "c.csv", text)
    out = tmp_path / "m.csv"
    assert main(["match", path, "-o", str(out), "--seed", "2"]) == 0
    rows = list(csv.DictReader(out.open()))
    a = np.array([float(r["a"]) for r in rows])
    sample = pot.observe(a)
    ids = [r["pair_id"] for r in rows]
    data = tmp_path / "d.csv"
    write_sample(sample, data, extra={"pair_id": ids, "pair_rank": ids})
    capsys.readouterr()
    assert main(["analyze", str(data), "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    from mpiv import nu_hat_sq
    expected = nu_hat_sq(sample, match_pairs_scalar(pot.x[:, 0]))[0]
    assert doc["variances"]["nu"] == pytest.approx(expected, rel=1e-12)


def test_reps_zero_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--reps", "0"])
    assert err.value.code == 2


def test_unknown_test_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--tests", "nu,bogus"])
    assert err.value.code == 2


def test_simulate_same_seed_identical(tmp_path, capsys):
    outs = []
    for k, jobs in enumerate(("1", "2")):
        out = tmp_path / f"s{k}.csv"
        assert main(["simulate", "--n", "60", "--reps", "30", "--tests", "nu,omega",
                     "--seed", "8", "--delta0", "0", "--jobs", jobs, "--out", str(out),
                     "--oracle-draws", "10000"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    header = outs[0].decode().splitlines()[0]
    assert header == "model,n,test,metric,value,mc_se"


def test_seed_generated_and_echoed(capsys, monkeypatch):
    monkeypatch.delenv("MPIV_SEED", raising=False)
    assert main(["simulate", "--n", "20", "--reps", "3", "--delta0", "0",
                 "--oracle-draws", "1000"]) == 0
    assert "seed: " in capsys.readouterr().err


def test_env_seed_override(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MPIV_SEED", "77")
    monkeypatch.setenv("MPIV_JOBS", "1")
    assert main(["simulate", "--n", "20", "--reps", "3", "--delta0", "0",
                 "--oracle-draws", "1000"]) == 0
    first = capsys.readouterr()
    assert "seed: 77" in first.err
    assert main(["simulate", "--n", "20", "--reps", "3", "--delta0", "0", "--seed", "77",
                 "--oracle-draws", "1000"]) == 0
    assert capsys.readouterr().out == first.out


def test_power_curve_grid(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["power-curve", "--n", "40", "--reps", "10", "--grid=-1:1:5", "--seed", "1",
                 "--tests", "nu,omega", "--delta0", "0", "--oracle-draws", "1000",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 10
    assert sorted({float(r["mu1"]) for r in rows}) == [-1.0, -0.5, 0.0, 0.5, 1.0]


def test_delta0_command(capsys):
    assert main(["delta0", "--family", "s51", "--model", "1", "--draws", "100000"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["delta0"]) < 5 * doc["mc_se"]


def test_bad_model_is_error(capsys):
    assert main(["delta0", "--family", "s51", "--model", "4", "--draws", "10"]) == 1


def test_adjusted_se_smaller_on_model1(tmp_path, capsys):
    spec = DgpSpec("s52", 1)
    wins = 0
    for k in range(100):
        pot = generate(spec, 800, 1000 + k)
        s = match_pairs_scalar(pot.x[:, 0])
        sample = pot.observe(assign_treatment(s, k))
        ids = [str(i) for i in s.pair_ids()]
        path = tmp_path / f"f{k}.csv"
        write_sample(sample, path, extra={"pair_id": ids})
        assert main(["analyze", str(path), "--se", "nu,nu-adj", "--adjust", "linear",
                     "--zeta", "w1", "--format", "json"]) == 0
        ses = json.loads(capsys.readouterr().out)["standard_errors"]
        wins += ses["nu_adj"] <= ses["nu"]
    assert wins >= 90

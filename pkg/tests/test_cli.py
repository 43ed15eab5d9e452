import json

import numpy as np
import pytest

from dpchange.cli import dumps, main, read_series

SCENARIO = """
seed = 3
plan = [["A", 60], ["B", 60], ["A", 60]]

[classes.A]
coefficients = [0.0, 0.8]
noise_sd = 1.0

[classes.B]
coefficients = [0.0, -0.5]
noise_sd = 1.0
"""


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "scen.toml"
    p.write_text(SCENARIO)
    return p


@pytest.fixture
def simulated(tmp_path, scenario):
    out = tmp_path / "x.csv"
    assert main(["simulate", "--scenario", str(scenario), "--out", str(out)]) == 0
    return out, tmp_path / "x.truth.json"


def test_simulate_writes_series_and_truth(simulated):
    csv_path, truth_path = simulated
    assert len(csv_path.read_text().splitlines()) == 180
    truth = json.loads(truth_path.read_text())
    assert truth["tau"] == [60, 120]
    assert truth["labels"] == [0, 1, 0]
    assert len(truth["sample_labels"]) == 180


def test_simulate_reproducible(tmp_path, scenario):
    outs = []
    for name in ("a.csv", "b.csv"):
        main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / name)])
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_simulate_preview_writes_nothing(tmp_path, scenario, capsys):
    assert main(["simulate", "--scenario", str(scenario), "--preview"]) == 0
    assert "samples: 180" in capsys.readouterr().out
    assert not list(tmp_path.glob("*.csv"))


def test_simulate_unstable_class(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(SCENARIO.replace("-0.5", "-1.5"))
    assert main(["simulate", "--scenario", str(p), "--preview"]) == 3
    assert "'B'" in capsys.readouterr().err


def _segment(csv_path, out, *extra):
    return main(["segment", "--input", str(csv_path), "--iters", "60", "--chains", "2",
                 "--seed", "7", "--out", str(out), *extra])


def test_segment_dp_schema(tmp_path, simulated):
    out = tmp_path / "res.json"
    assert _segment(simulated[0], out, "--deterministic") == 0
    res = json.loads(out.read_text())
    assert res["schema_version"] == 1 and res["mode"] == "dp"
    assert [c["seed"] for c in res["chains"]] == [7, 8]
    for key in ("k", "tau", "labels"):
        assert key in res["chains"][0]["map"]
    assert len(res["cp_marginal"]) == 180
    assert np.asarray(res["co_cluster"]).shape == (180, 180)
    assert sum(res["k_histogram"]) == pytest.approx(1.0)
    assert "timestamp" not in res["diagnostics"]


def test_segment_baseline_omits_co_cluster(tmp_path, simulated):
    out = tmp_path / "res.json"
    assert _segment(simulated[0], out, "--mode", "baseline") == 0
    res = json.loads(out.read_text())
    assert "co_cluster" not in res
    assert "timestamp" in res["diagnostics"]


def test_segment_deterministic_bytes(tmp_path, simulated):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _segment(simulated[0], a, "--deterministic") == 0
    assert _segment(simulated[0], b, "--deterministic") == 0
    assert a.read_bytes() == b.read_bytes()


def test_segment_parallel_matches_serial(tmp_path, simulated):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _segment(simulated[0], a, "--deterministic") == 0
    assert _segment(simulated[0], b, "--deterministic", "--jobs", "2") == 0
    assert a.read_bytes() == b.read_bytes()


def test_segment_traces_and_plot_data(tmp_path, simulated):
    tr, pd = tmp_path / "tr.csv", tmp_path / "plot.csv"
    out = tmp_path / "r.json"
    assert _segment(simulated[0], out, "--traces", str(tr), "--emit-plot-data", str(pd)) == 0
    assert tr.read_text().splitlines()[0] == "chain,seed,sample,k,log_post"
    rows = pd.read_text().splitlines()
    assert rows[0] == "t,x,cp_marginal,label" and len(rows) == 181


def test_segment_config_and_override(tmp_path, simulated):
    cfg = tmp_path / "h.toml"
    cfg.write_text("d_model = 1\ndelta = 5.0\nk_max = 4\n")
    out = tmp_path / "r.json"
    assert _segment(simulated[0], out, "--config", str(cfg), "--delta", "2.5") == 0
    hyper = json.loads(out.read_text())["hyper"]
    assert hyper["d_model"] == 1 and hyper["delta"] == 2.5 and hyper["k_max"] == 4


def test_segment_exit_codes(tmp_path, simulated, capsys):
    out = tmp_path / "r.json"
    assert _segment(tmp_path / "missing.csv", out) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0\n2.0\nabc\n")
    assert _segment(bad, out) == 2
    assert "bad.csv:3" in capsys.readouterr().err
    assert _segment(simulated[0], out, "--delta", "-1") == 3
    cfg = tmp_path / "h.toml"
    cfg.write_text("bogus = 1\n")
    assert _segment(simulated[0], out, "--config", str(cfg)) == 3


def test_segment_numerical_failure(tmp_path, simulated, monkeypatch, capsys):
    from dpchange.errors import NumericalDomainError
    from dpchange.sampler import ChangePointSampler

    def boom(self):
        raise NumericalDomainError("forced failure", payload=np.eye(2))

    monkeypatch.setattr(ChangePointSampler, "gibbs_sweep", boom)
    assert _segment(simulated[0], tmp_path / "r.json") == 4
    err = capsys.readouterr().err
    assert "forced failure" in err and '"state"' in err


def test_read_series_header_and_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("t,value\n1,0.5\n2,1.5\n\n3,-2\n")
    assert read_series(str(p), "value", has_header=True).tolist() == [0.5, 1.5, -2.0]
    assert read_series(str(p), "0", has_header=True).tolist() == [1.0, 2.0, 3.0]


def test_evaluate_perfect_and_empty(tmp_path, simulated, capsys):
    truth = json.loads(simulated[1].read_text())
    perfect = {"schema_version": 1, "n": 180, "estimate": {"tau": truth["tau"]},
               "label_estimate": truth["sample_labels"]}
    rp = tmp_path / "perfect.json"
    rp.write_text(json.dumps(perfect))
    report = tmp_path / "score.json"
    assert main(["evaluate", "--result", str(rp), "--truth", str(simulated[1]),
                 "--out", str(report)]) == 0
    scores = json.loads(report.read_text())
    assert scores["f1"] == 1.0 and scores["ari"] == 1.0
    perfect["estimate"]["tau"] = []
    rp.write_text(json.dumps(perfect))
    assert main(["evaluate", "--result", str(rp), "--truth", str(simulated[1]),
                 "--out", str(report)]) == 0
    assert json.loads(report.read_text())["f1"] == 0.0


def test_evaluate_schema_mismatch(tmp_path, simulated):
    rp = tmp_path / "r.json"
    rp.write_text(json.dumps({"schema_version": 1, "n": 180}))
    assert main(["evaluate", "--result", str(rp), "--truth", str(simulated[1])]) == 3


def test_evaluate_after_segment(tmp_path, simulated):
    out = tmp_path / "r.json"
    assert _segment(simulated[0], out) == 0
    assert main(["evaluate", "--result", str(out), "--truth", str(simulated[1])]) == 0


def test_oracle_check_quadrature(capsys):
    assert main(["oracle-check", "--suite", "quadrature"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 20 and all(line.endswith("PASS") for line in lines)


def test_oracle_check_reports_failure(capsys):
    assert main(["oracle-check", "--suite", "enumeration", "--tv-threshold", "0"]) == 1
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    assert json.loads(captured.err)["failed"][0]["name"].startswith("enumeration")


def test_dumps_seventeen_digits():
    text = dumps({"a": 0.1, "b": [1, 2.5], "c": float("nan")})
    data = json.loads(text)
    assert data["a"] == 0.1 and data["c"] is None
    assert "0.10000000000000001" in text

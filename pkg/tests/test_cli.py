import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from covertflow.cli import main
from covertflow.copula import STUDENT_T, CopulaModel
from covertflow.records import read_jsonl, write_incidents
from covertflow.synth import BaselineSpec, generate_baseline

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TOY = str(CONFIGS / "toy.cfg")
PRICES = str(CONFIGS / "prices.csv")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def payload(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out) if out.strip().startswith("{") else out


@pytest.fixture(scope="module")
def t_incidents(tmp_path_factory):
    r = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
    dep = CopulaModel(STUDENT_T, r, 4, 0, 0, 0, 0)
    path = tmp_path_factory.mktemp("data") / "incidents.jsonl"
    write_incidents(path, generate_baseline(BaselineSpec(4000, dependence=dep, seed=1)))
    return path


def test_simulate_sandwich_then_detect(capsys, tmp_path):
    out = payload(capsys, "simulate", "sandwich", "--config", TOY, "--out", tmp_path / "l.jsonl")
    assert float(out["realized_transfer"]) == pytest.approx(33.33, abs=0.01)
    assert float(out["effectiveness"]) == pytest.approx(0.667, abs=0.001)
    det = payload(capsys, "detect", "--ledger", tmp_path / "l.jsonl", "--prices", PRICES, "--out", tmp_path / "d.jsonl")
    assert det["detected"] == {"Sandwich": 1}
    (rec,) = list(read_jsonl(tmp_path / "d.jsonl"))
    assert (rec["extractor"], rec["extractee"]) == ("R", "S")
    # BTC priced at 10 USD: 33.33 base units lost.
    assert float(rec["loss_usd"]) / 10 == pytest.approx(33.33, abs=0.01)


def test_receiver_without_quote_strands_base(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(Path(TOY).read_text().replace("receiver_quote = 167", "receiver_quote = 0"))
    out = payload(capsys, "simulate", "sandwich", "--config", cfg, "--out", tmp_path / "l.jsonl")
    assert float(out["recovered"]) == pytest.approx(80, abs=0.01)
    assert float(out["stranded"]) == pytest.approx(20, abs=0.01)


def test_simulate_arbitrage(capsys, tmp_path):
    out = payload(capsys, "simulate", "arbitrage", "--config", TOY, "--out", tmp_path / "a.jsonl", "--seed", 3)
    assert out["success"] and out["arb_block"] - out["inflate_block"] == 2
    det = payload(capsys, "detect", "--ledger", tmp_path / "a.jsonl", "--prices", PRICES, "--out", tmp_path / "d.jsonl")
    assert det["detected"] == {"Arbitrage": 1}


def test_timing_sweep(capsys, tmp_path):
    out = payload(capsys, "simulate", "arbitrum-timing", "--config", TOY, "--out", tmp_path / "t.csv",
                  "--seed", 1, "--delays", "300:360:30", "--trials", 50)
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert [float(r["delay_ms"]) for r in rows] == [300, 330, 360]
    assert out["best_success_rate"] >= 0.95


def test_features_and_tail_fit(capsys, tmp_path, t_incidents):
    payload(capsys, "features", "--incidents", t_incidents, "--out", tmp_path / "f.csv")
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    assert len(rows) == 4000 and int(rows[0]["f3_bilateral_freq"]) <= int(rows[0]["f4_extractee_freq"])
    fit = payload(capsys, "fit", "tail", "--incidents", t_incidents, "--feature", "f2", "--out", tmp_path / "t.json",
                  "--ccdf-out", tmp_path / "c.csv")
    assert 1.8 < fit["alpha"] < 3.0
    first = next(csv.DictReader(open(tmp_path / "c.csv")))
    assert float(first["ccdf"]) == 1.0


def test_copula_rank_report_pipeline(capsys, tmp_path, t_incidents, monkeypatch):
    m = payload(capsys, "fit", "copula", "--incidents", t_incidents, "--family", "auto", "--out", tmp_path / "m.json",
                "--seed", 7)
    assert m["family"] == "t"
    model = json.loads((tmp_path / "m.json").read_text())
    assert model["jitter_seed"] == 7 and "precheck" in model and model["qq"]["reference"] == "F4Nu"

    args = ["rank", "--model", tmp_path / "m.json", "--incidents", t_incidents]
    payload(capsys, *args, "--out", tmp_path / "r1.jsonl", "--seed", 7)
    payload(capsys, *args, "--out", tmp_path / "r2.jsonl", "--seed", 7)
    monkeypatch.setenv("COVERTFLOW_SEED", "7")
    payload(capsys, *args, "--out", tmp_path / "r3.jsonl")
    first = (tmp_path / "r1.jsonl").read_bytes()
    assert first == (tmp_path / "r2.jsonl").read_bytes() == (tmp_path / "r3.jsonl").read_bytes()
    recs = list(read_jsonl(tmp_path / "r1.jsonl"))
    assert [r["rank"] for r in recs] == list(range(1, 4001))
    assert all(0 <= v <= 100 for v in recs[0]["percentiles"].values())

    small = tmp_path / "small.jsonl"
    small.write_text("".join(json.dumps(r) + "\n" for r in recs[::400]))
    out = payload(capsys, "report", "--ranked", small, "--top-k", 3, "--out-dir", tmp_path / "rep")
    top = list(csv.DictReader(open(tmp_path / "rep" / "top_k.csv")))
    assert len(top) == 3 and [float(r["p"]) for r in top] == sorted(float(r["p"]) for r in top)
    assert float(next(csv.DictReader(open(tmp_path / "rep" / "p_ccdf.csv")))["ccdf"]) == 1.0
    assert top[0]["id"] in out


def test_eval_triage(capsys, tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("[eval]\nn = 3000\ncount = 2\n[fit]\nfamily = gaussian\n")
    out = payload(capsys, "eval", "triage", "--config", cfg, "--seed", 2, "--out", tmp_path / "e.csv",
                  "--summary", tmp_path / "s.json")
    assert out["n_ground_truth"] >= 2 and out["campaign"] == "JointlyElevated"
    again = tmp_path / "e2.csv"
    payload(capsys, "eval", "triage", "--config", cfg, "--seed", 2, "--out", again)
    assert (tmp_path / "e.csv").read_bytes() == again.read_bytes()


def test_exit_codes(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("COVERTFLOW_SEED", raising=False)
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "simulate", "sandwich")[0] == 1  # --out missing
    assert run(capsys, "simulate", "arbitrage", "--out", tmp_path / "x")[0] == 1  # no seed
    assert run(capsys, "report", "--ranked", tmp_path / "none.jsonl", "--out-dir", tmp_path)[0] == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("[pool]\nfee_bps = -3\n")
    assert run(capsys, "simulate", "sandwich", "--config", bad, "--out", tmp_path / "x")[0] == 1
    # A pool that the plan cannot satisfy is a runtime failure.
    cfg = tmp_path / "r.cfg"
    cfg.write_text("[staging.arbitrage]\nreceiver_capital = 0\n")
    assert run(capsys, "simulate", "arbitrage", "--config", cfg, "--out", tmp_path / "x", "--seed", 1)[0] == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "covertflow", "simulate", "sandwich", "--config", TOY,
                          "--out", str(tmp_path / "l.jsonl")], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["included"] is True
    res = subprocess.run([sys.executable, "-m", "covertflow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "eval" in res.stdout

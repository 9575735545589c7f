"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import chain, staging
from .config import ScenarioConfig, load_config
from .copula import (CopulaModel, fit_copula, precheck_families, qq_validate, rank_incidents,
                     to_uniform_scores, top_k_feature_audit, TriageScore)
from .detection import detect
from .errors import CovertFlowError, MissingFile, ValidationError
from .features import FEATURE_NAMES, feature_matrix, load_price_table
from .records import (detected_to_dict, read_incidents, read_json, read_jsonl, read_ledger, write_csv,
                      write_json, write_jsonl, write_ledger)
from .synth import BaselineSpec, PlantSpec, evaluate_triage, generate_baseline, plant_campaign
from .tails import ccdf, fit_power_law, ratio_tail_transform

SEED_ENV = "COVERTFLOW_SEED"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> ScenarioConfig:
    return load_config(args.config) if getattr(args, "config", None) else ScenarioConfig()


def _seed(args, cfg: ScenarioConfig | None = None) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if cfg is not None and cfg.seed is not None:
        return cfg.seed
    raise ValidationError(f"this command is randomized: pass --seed or set {SEED_ENV}")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --- simulate -------------------------------------------------------------


def cmd_simulate_sandwich(args) -> int:
    cfg = _config(args)
    s = cfg.sandwich
    plan = staging.plan_sandwich(cfg.pool, s.sender_capital, s.receiver_base, s.receiver_quote,
                                 sender=s.sender, receiver=s.receiver)
    ex = staging.execute_sandwich(plan, cfg.pool, cfg.pbs)
    write_ledger(args.out, ex.ledger)
    _emit({
        "predicted_transfer": str(plan.predicted_transfer),
        "realized_transfer": str(ex.realized_transfer),
        "effectiveness": str(plan.effectiveness),
        "recovered": str(plan.recovered),
        "stranded": str(plan.stranded),
        "included": ex.included,
        "adversary_cost": ex.adversary_cost,
        "ledger": str(args.out),
    })
    return 0


def cmd_simulate_arbitrage(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    a = cfg.arbitrage
    seq = replace(cfg.sequencer, seed=seed)
    pools = [cfg.pool, a.pool2]
    plan = staging.plan_arbitrage(pools, a.sender_capital, a.receiver_capital, sender=a.sender,
                                  receiver=a.receiver, block_gap=a.block_gap)
    delay = a.delay_ms if args.delay_ms is None else args.delay_ms
    ex = staging.execute_arbitrage(plan, pools, seq, delay, rng=chain.trial_rng(seed, 0))
    write_ledger(args.out, ex.ledger)
    _emit({
        "predicted_transfer": str(plan.predicted_transfer),
        "realized_transfer": str(ex.realized_transfer),
        "sender_loss": str(plan.sender_loss),
        "cycle_input": str(plan.cycle_input),
        "inflate_block": ex.trial.inflate_block,
        "arb_block": ex.trial.arb_block,
        "success": ex.success,
        "co_included": ex.co_included,
        "delay_ms": delay,
        "seed": seed,
    })
    return 0


def _delays(spec: str) -> list[float]:
    try:
        if ":" in spec:
            lo, hi, step = (float(v) for v in spec.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            return [lo + i * step for i in range(int(round((hi - lo) / step)) + 1)]
        return [float(v) for v in spec.split(",")]
    except ValueError:
        raise ValidationError(f"--delays expects 'start:stop:step' or a comma list, got {spec!r}") from None


def cmd_simulate_timing(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    seq = replace(cfg.sequencer, seed=seed)
    results = chain.sweep_delays(seq, _delays(args.delays), args.trials, cfg.competitor_reaction_ms)
    fields = ("delay_ms", "trials", "success_rate", "adversary_wins_rate", "seed")
    write_csv(args.out, fields, ([r.as_row()[f] for f in fields] for r in results))
    best = max(results, key=lambda r: (r.success_rate, -r.delay_ms))
    _emit({"best_delay_ms": best.delay_ms, "best_success_rate": best.success_rate,
           "adversary_wins_rate_at_best": best.adversary_wins_rate, "rows": len(results), "seed": seed})
    return 0


# --- detection and features -----------------------------------------------


def cmd_detect(args) -> int:
    ledger = read_ledger(args.ledger)
    prices = load_price_table(args.prices)
    excluded: Counter = Counter()
    found = detect(ledger, prices, excluded)
    write_jsonl(args.out, (detected_to_dict(d) for d in found))
    _emit({"detected": dict(Counter(d.mev_type for d in found)), "excluded_unpriced": dict(excluded),
           "out": str(args.out)})
    return 0


def cmd_features(args) -> int:
    incidents = read_incidents(args.incidents)
    ids, x = feature_matrix(incidents)
    write_csv(args.out, ("id",) + FEATURE_NAMES,
              ([iid, float(r[0]), float(r[1]), int(r[2]), int(r[3])] for iid, r in zip(ids, x)))
    _emit({"incidents": len(ids), "out": str(args.out)})
    return 0


FEATURE_INDEX = {"f1": 0, "f2": 1, "f3": 2, "f4": 3}


def cmd_fit_tail(args) -> int:
    cfg = _config(args)
    _, x = feature_matrix(read_incidents(args.incidents))
    values = x[:, FEATURE_INDEX[args.feature]]
    if args.feature == "f2":
        # The ratio's heavy behaviour sits at 1; fit its reciprocal distance.
        values = ratio_tail_transform(values)
    min_tail = args.min_tail if args.min_tail is not None else cfg.fit.min_tail
    fit = fit_power_law(values, min_tail=min_tail)
    out = {"feature": args.feature, **fit.as_dict(), "n": int(values.size)}
    write_json(args.out, out)
    if args.ccdf_out:
        v, p = ccdf(values)
        write_csv(args.ccdf_out, ("x", "ccdf"), zip(v.tolist(), p.tolist()))
    _emit(out)
    return 0


def _scores_for(incidents, jitter_seed: int, jitter_eps: float):
    ids, x = feature_matrix(incidents)
    return to_uniform_scores(x, ids, jitter_seed=jitter_seed, jitter_eps=jitter_eps), x


def cmd_fit_copula(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    family = args.family or cfg.fit.family
    scores, _ = _scores_for(read_incidents(args.incidents), seed, cfg.fit.jitter_eps)
    model = fit_copula(scores, family)
    model.jitter_seed, model.jitter_eps = seed, cfg.fit.jitter_eps
    pre = precheck_families(model.tau, scores)
    out = model.to_dict()
    out["feature_names"] = list(FEATURE_NAMES)
    out["precheck"] = pre
    out["qq"] = qq_validate(model, scores).summary()
    write_json(args.out, out)
    _emit({"family": model.family, "nu": model.nu, "aic": model.aic, "bic": model.bic, "n": model.n,
           "qq": out["qq"], "out": str(args.out)})
    return 0


def _ranked_record(s: TriageScore, row: np.ndarray, pct: np.ndarray) -> dict:
    return {
        "id": s.id, "p": s.p, "mc_std_err": s.mc_std_err, "rank": s.rank,
        "features": {name: (float(v) if j < 2 else int(v)) for j, (name, v) in enumerate(zip(FEATURE_NAMES, row))},
        "percentiles": {name: float(v) for name, v in zip(FEATURE_NAMES, pct)},
    }


def cmd_rank(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    model = CopulaModel.from_dict(read_json(args.model))
    if model.jitter_seed is None:
        raise ValidationError("model file lacks jitter_seed; refit with `fit copula`")
    incidents = read_incidents(args.incidents)
    scores, x = _scores_for(incidents, model.jitter_seed, model.jitter_eps or cfg.fit.jitter_eps)
    t = cfg.triage
    ranking = rank_incidents(model, scores, seed=seed, n_pairs=t.screen_pairs, refine_top=t.refine_top,
                             refine_pairs=t.refine_pairs, threads=args.threads)
    row = {iid: r for r, iid in enumerate(scores.ids)}
    pct = scores.percentiles(x)
    write_jsonl(args.out, (_ranked_record(s, x[row[s.id]], pct[row[s.id]]) for s in ranking))
    k = min(t.top_k, len(ranking))
    _emit({"ranked": len(ranking), "seed": seed, "top_p": ranking[0].p,
           f"top{k}_no_feature_above_q{t.audit_q}": top_k_feature_audit(ranking, scores, k, t.audit_q),
           "out": str(args.out)})
    return 0


# --- evaluation and report ------------------------------------------------


def cmd_eval_triage(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    e, t = cfg.eval, cfg.triage
    baseline = generate_baseline(BaselineSpec(e.n, e.alphas, seed=seed))
    planted = plant_campaign(baseline, PlantSpec(e.campaign, e.percentile, e.count))
    ev = evaluate_triage(planted.dataset, planted.ground_truth, seed=seed, family=cfg.fit.family,
                         jitter_seed=seed, n_pairs=t.screen_pairs, refine_top=t.refine_top,
                         refine_pairs=t.refine_pairs, threads=args.threads)
    rows = [(g, ev.multivariate_ranks[g], ev.single_feature_ranks[g]) for g in planted.ground_truth]
    write_csv(args.out, ("id", "multivariate_rank", "best_single_feature_rank"), rows)
    summary = ev.summary()
    summary.update({"seed": seed, "n_baseline": e.n, "campaign": e.campaign, "percentile": e.percentile,
                    "targets": planted.targets})
    if args.summary:
        write_json(args.summary, summary)
    _emit(summary)
    return 0


def cmd_report(args) -> int:
    path = Path(args.ranked)
    if not path.exists():
        raise MissingFile(f"ranked file not found: {path}")
    recs = sorted(read_jsonl(path), key=lambda r: (r["p"], r["id"]))
    if not recs:
        raise ValidationError("ranked file is empty")
    if args.top_k < 1:
        raise ValidationError("--top-k must be >= 1")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    top = recs[: args.top_k]
    header = ["rank", "id", "p"] + [f"pct_{n}" for n in FEATURE_NAMES]
    rows = [[r["rank"], r["id"], r["p"]] + [r["percentiles"][n] for n in FEATURE_NAMES] for r in top]
    write_csv(out_dir / "top_k.csv", header, rows)
    v, prob = ccdf([r["p"] for r in recs])
    write_csv(out_dir / "p_ccdf.csv", ("p", "ccdf"), zip(v.tolist(), prob.tolist()))
    widths = [6, max(8, max(len(r["id"]) for r in top)), 12] + [8] * 4
    print("  ".join(h[:w].ljust(w) for h, w in zip(["rank", "id", "p", "f1%", "f2%", "f3%", "f4%"], widths)))
    for row in rows:
        cells = [str(row[0]), row[1], f"{row[2]:.4e}"] + [f"{v:.2f}" for v in row[3:]]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="covertflow", description="Staged-MEV transfer simulation and incident triage.")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help=f"RNG seed (fallback: ${SEED_ENV})")

    sim = sub.add_parser("simulate", help="run staged transfers on the simulated chain")
    simsub = sim.add_subparsers(dest="scenario", required=True)
    s = simsub.add_parser("sandwich", help="staged sandwich through a colluding builder")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    seeded(s)
    s.set_defaults(func=cmd_simulate_sandwich)
    s = simsub.add_parser("arbitrage", help="staged two-block arbitrage on the FCFS sequencer")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--delay-ms", type=float, default=None)
    seeded(s)
    s.set_defaults(func=cmd_simulate_arbitrage)
    s = simsub.add_parser("arbitrum-timing", help="success rate of the two-block placement per delay")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--delays", default="250:450:10")
    s.add_argument("--trials", type=int, default=200)
    seeded(s)
    s.set_defaults(func=cmd_simulate_timing)

    s = sub.add_parser("detect", help="flag sandwich and arbitrage patterns in a ledger")
    s.add_argument("--ledger", required=True)
    s.add_argument("--prices", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("features", help="per-incident feature table")
    s.add_argument("--incidents", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    fit = sub.add_parser("fit", help="tail and copula fits")
    fitsub = fit.add_subparsers(dest="what", required=True)
    s = fitsub.add_parser("tail", help="power-law fit of one feature")
    s.add_argument("--config")
    s.add_argument("--incidents", required=True)
    s.add_argument("--feature", choices=sorted(FEATURE_INDEX), required=True)
    s.add_argument("--min-tail", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--ccdf-out")
    s.set_defaults(func=cmd_fit_tail)
    s = fitsub.add_parser("copula", help="Gaussian or t copula on the feature scores")
    s.add_argument("--config")
    s.add_argument("--incidents", required=True)
    s.add_argument("--family", choices=["gaussian", "t", "auto"], default=None)
    s.add_argument("--out", required=True)
    seeded(s)
    s.set_defaults(func=cmd_fit_copula)

    s = sub.add_parser("rank", help="rank incidents by joint survival probability")
    s.add_argument("--config")
    s.add_argument("--model", required=True)
    s.add_argument("--incidents", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    seeded(s)
    s.set_defaults(func=cmd_rank)

    ev = sub.add_parser("eval", help="triage evaluation on synthetic data")
    evsub = ev.add_subparsers(dest="what", required=True)
    s = evsub.add_parser("triage", help="planted campaign versus single-feature review")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.add_argument("--threads", type=int, default=1)
    seeded(s)
    s.set_defaults(func=cmd_eval_triage)

    s = sub.add_parser("report", help="top-k table and CCDF data of p")
    s.add_argument("--ranked", required=True)
    s.add_argument("--top-k", type=int, default=20)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise ValidationError("--threads must be >= 1")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CovertFlowError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())

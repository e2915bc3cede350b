"""Command-line entry point: ``emer {gen,train,eval,ablate,replay,plot,tune} ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from emer import baseline, ranknet
from emer.domain import INTERACTION_OBJECTIVES, OBJECTIVES
from emer.evalsuite import (
    DEFAULT_BUDGET_S,
    EvalReport,
    evaluate,
    read_report_csv,
    replay_request,
    write_replay_csv,
    write_report_csv,
)
from emer.evolve import score_request
from emer.synthlog import GeneratorConfig, iter_log, read_log, write_generated
from emer.trainer import VARIANTS, TrainConfig, load_config, read_trace, train, write_trace
from emer import plotting

log = logging.getLogger("emer")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("EMER_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise StageError("args", f"EMER_SEED is not an integer: {env!r}") from None
    return 0


def _load_scorer(path: str):
    """Scorer from an EMER checkpoint or a fusion-params file (sniffed by header)."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    with open(p, "rb") as fh:
        head = fh.read(len(ranknet.CHECKPOINT_MAGIC))
    if head == ranknet.CHECKPOINT_MAGIC.encode():
        params = ranknet.load_checkpoint(p)
        return (lambda r: score_request(params, r)), "emer"
    return baseline.scorer(baseline.load_params(p)), "fusion"


def _train_config(args) -> TrainConfig:
    overrides = {
        "variant": getattr(args, "variant", None),
        "seed": _seed(args) if (args.seed is not None or "EMER_SEED" in os.environ) else None,
        "steps": getattr(args, "steps", None),
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "learning_rate", None),
    }
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_gen(args) -> None:
    cfg = GeneratorConfig(
        n_users=args.users,
        requests_per_user=args.requests,
        candidates_per_request=args.candidates,
        exposure_k=args.exposure_k,
        seed=_seed(args),
        noise_sigma=args.noise_sigma,
    )
    count = write_generated(cfg, args.out, args.truth_out)
    log.info("wrote %d requests to %s", count, args.out)


def cmd_train(args) -> None:
    cfg = _train_config(args)
    requests = read_log(args.data)
    result = train(cfg, requests)
    ranknet.save_checkpoint(result.params, args.out)
    if args.trace:
        write_trace(result.trace, args.trace)
    log.info("trained %s for %d steps -> %s", cfg.variant, len(result.trace), args.out)


def _report_for(scorer, data, budget_s, meta) -> EvalReport:
    return evaluate(scorer, iter_log(data), budget_s=budget_s, metadata=meta)


def cmd_eval(args) -> None:
    scorer, kind = _load_scorer(args.model)
    meta = {"model": str(args.model), "model_kind": kind, "data": str(args.data), "seed": str(_seed(args))}
    report = _report_for(scorer, args.data, args.budget_s, meta)
    write_report_csv(report, args.out)
    log.info("mean GAUC %.4f -> %s", report.mean_gauc(), args.out)


def cmd_tune(args) -> None:
    params, history = baseline.tune(read_log(args.data))
    baseline.save_params(params, args.out)
    log.info("tuned fusion formula (mean GAUC %.4f) -> %s", history[-1]["mean_gauc"], args.out)


def cmd_replay(args) -> None:
    scorer, _ = _load_scorer(args.model)
    out = {}
    for req in iter_log(args.data):
        out[req.request_id] = replay_request(req, scorer(req), args.budget_s)
    write_replay_csv(out, args.out)
    log.info("replayed %d requests -> %s", len(out), args.out)


ABLATION_ROWS = (
    list(OBJECTIVES)
    + [f"{o}_iput" for o in INTERACTION_OBJECTIVES]
    + ["mean_gauc", "mean_consistent_gauc", "replay_expected_interactions", "loss_var_last500"]
)


def ablation_column(report: EvalReport, loss_var: Optional[float]) -> Dict[str, str]:
    col = {o: f"{report.per_objective_gauc[o]:.6f}" for o in OBJECTIVES}
    col.update({f"{o}_iput": f"{report.per_objective_gauc_iput[o]:.6f}" for o in INTERACTION_OBJECTIVES})
    col["mean_gauc"] = f"{report.mean_gauc():.6f}"
    col["mean_consistent_gauc"] = f"{report.mean_consistent_gauc():.6f}"
    col["replay_expected_interactions"] = f"{report.replay_expected_interactions:.6f}"
    col["loss_var_last500"] = "" if loss_var is None else f"{loss_var:.8f}"
    return col


def write_ablation_table(columns: Dict[str, Dict[str, str]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(columns)
        w.writerow(["metric"] + names)
        for row in ABLATION_ROWS:
            w.writerow([row] + [columns[n].get(row, "") for n in names])


def loss_variance(trace: Sequence[dict], last: int = 500) -> float:
    """Variance across objectives of the mean per-objective loss over the last steps."""
    rows = list(trace)[-last:]
    means = np.array([[r[f"l_{o}"] for o in OBJECTIVES] for r in rows]).mean(axis=0)
    return float(means.var())


def cmd_ablate(args) -> None:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise StageError("ablate", f"invalid variant(s) {bad}; expected a subset of {list(VARIANTS)}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    requests = read_log(args.data)
    columns: Dict[str, Dict[str, str]] = {}
    if args.val_data or args.baseline:
        if args.baseline:
            ff = baseline.load_params(args.baseline)
        else:
            ff, _ = baseline.tune(read_log(args.val_data))
        baseline.save_params(ff, out_dir / "fusion.params")
        rep = evaluate(baseline.scorer(ff), requests, budget_s=args.budget_s, metadata={"model": "fusion"})
        write_report_csv(rep, out_dir / "fusion.report.csv")
        columns["fusion"] = ablation_column(rep, None)
    for variant in variants:
        args.variant = variant
        cfg = _train_config(args)
        result = train(cfg, requests)
        stem = out_dir / variant
        ranknet.save_checkpoint(result.params, f"{stem}.ckpt")
        write_trace(result.trace, f"{stem}.trace.csv")
        params = result.params
        rep = evaluate(
            lambda r: score_request(params, r), requests, budget_s=args.budget_s, metadata={"model": variant}
        )
        write_report_csv(rep, f"{stem}.report.csv")
        columns[variant] = ablation_column(rep, loss_variance(result.trace) if result.trace else None)
        log.info("%s: mean GAUC %.4f", variant, rep.mean_gauc())
    write_ablation_table(columns, out_dir / "ablation.csv")


def cmd_plot(args) -> None:
    plotting.plot_from_files(args.report, args.out, traces=args.trace or [])
    log.info("wrote %s", args.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emer", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic request log")
    g.add_argument("--users", type=int, required=True)
    g.add_argument("--requests", type=int, required=True, help="requests per user")
    g.add_argument("--candidates", type=int, default=500)
    g.add_argument("--exposure-k", type=int, default=6)
    g.add_argument("--noise-sigma", type=float, default=0.15)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--truth-out")
    g.set_defaults(func=cmd_gen)

    def train_flags(p):
        p.add_argument("--config", help="flat key = value TrainConfig file")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--learning-rate", type=float)

    t = sub.add_parser("train", help="train the set scorer")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--trace")
    t.add_argument("--variant", choices=VARIANTS)
    train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="GAUC report for a checkpoint or fusion-params file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--budget-s", type=float, default=DEFAULT_BUDGET_S)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate several variants")
    a.add_argument("--data", required=True)
    a.add_argument("--variants", default=",".join(VARIANTS))
    a.add_argument("--out-dir", required=True)
    a.add_argument("--val-data", help="validation log for tuning the fusion baseline")
    a.add_argument("--baseline", help="fusion-params file to include as a column")
    a.add_argument("--budget-s", type=float, default=DEFAULT_BUDGET_S)
    train_flags(a)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("replay", help="per-request session replay of exposed slates")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--budget-s", type=float, required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="SVG charts from a report or ablation table")
    pl.add_argument("--report", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--trace", action="append", metavar="NAME=PATH", help="trace CSV for the loss histogram")
    pl.set_defaults(func=cmd_plot)

    tu = sub.add_parser("tune", help="grid-tune the fusion baseline on a validation log")
    tu.add_argument("--data", required=True)
    tu.add_argument("--out", required=True)
    tu.set_defaults(func=cmd_tune)
    return ap


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    stage = args.command
    try:
        args.func(args)
    except StageError as exc:
        print(f"emer {exc.stage} failed: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"emer {stage} failed: missing file: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FloatingPointError) as exc:
        print(f"emer {stage} failed: {exc}", file=sys.stderr)
        return 4
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command line entry point: ``tmd <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("tmd")


def _cmd_gen_data(args) -> int:
    from .config import ExperimentConfig
    from .train import gen_data

    cfg = ExperimentConfig.load(args.config)
    path = gen_data(cfg)
    print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    from .config import ExperimentConfig
    from .plotting import plot_metrics, plot_policy
    from .train import action_table_for, evaluate_state, read_metrics, train

    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out) if args.out else cfg.out_dir
    res = train(cfg, resume=args.resume, out_dir=out)
    report = evaluate_state(cfg, res.state)
    report.save(out / "eval.json")
    plot_metrics(read_metrics(out / "metrics.csv"), out / "metrics.png")
    gw = cfg.environment.build()
    tasks = cfg.eval.task_list(gw)
    if tasks:
        plot_policy(gw, action_table_for(cfg, res.state), tasks[0].goal, out / "policy.png")
    print(f"checkpoint {res.checkpoint}")
    print(f"success {report.rate:.3f} over {len(tasks)} tasks")
    return 0


def _cmd_eval(args) -> int:
    from .config import ExperimentConfig
    from .train import evaluate_state, load_state

    cfg = ExperimentConfig.load(args.config)
    gw = cfg.environment.build()
    state = load_state(args.checkpoint, cfg, gw)
    report = evaluate_state(cfg, state, gw)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.json")
    report.save(out)
    for t in report.tasks:
        print(f"task {t['task_id']}: {t['successes']}/{t['episodes']}")
    print(f"success {report.rate:.3f} -> {out}")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_suite

    checks = run_suite(args.suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.ok]
    print(f"{args.suite}: {len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def _cmd_ablate(args) -> int:
    from .config import ExperimentConfig
    from .plotting import plot_success
    from .train import ablate, write_ablation

    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out) if args.out else cfg.out_dir / "ablation"

    def progress(variant, seed, rate):
        print(f"  {variant} seed={seed} success={rate:.3f}", flush=True)

    rows = ablate(cfg, progress=progress)
    path = write_ablation(rows, out)
    plot_success([r.variant for r in rows], [r.mean for r in rows], [r.stderr for r in rows], out / "ablation.png",
                 title="ablation")
    for r in rows:
        print(f"{r.variant:>18s}  {r.mean:.3f} +- {r.stderr:.3f}")
    print(f"wrote {path}")
    return 0


def _cmd_oracle(args) -> int:
    from .distance import is_quasimetric
    from .mdp import TabularMDP, TabularPolicy
    from .oracle import d_sd_pi, d_sd_star
    from .plotting import plot_distance_table

    mdp = TabularMDP.load(args.mdp)
    out = Path(args.out) if args.out else Path(args.mdp).with_suffix("")
    out.mkdir(parents=True, exist_ok=True)
    star = d_sd_star(mdp)
    if args.behavior:
        probs = np.asarray(json.loads(Path(args.behavior).read_text()), dtype=np.float64)
        beta = TabularPolicy(probs)
    else:
        beta = TabularPolicy(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))
    d_beta = d_sd_pi(mdp, beta)
    star.save(out / "d_star")
    d_beta.save(out / "d_beta")
    plot_distance_table(star.values, mdp.n_states, out / "d_star.png", title="optimal successor distance")
    plot_distance_table(d_beta.values, mdp.n_states, out / "d_beta.png", title="behavior successor distance")
    ok = bool(is_quasimetric(star))
    print(f"d_star -> {out / 'd_star.csv'} (quasimetric: {ok})")
    print(f"d_beta -> {out / 'd_beta.csv'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmd", description="Temporal metric distillation on tabular gridworlds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train encoders (and optionally a policy) from a config")
    p.add_argument("config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="output directory (default: train.out_dir)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's tasks")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--out", help="report path (default: next to the checkpoint)")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("suite", choices=["operators", "oracle", "gradients", "divergence", "end-to-end"])
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("ablate", help="train the five loss variants over the config's seeds")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("oracle", help="exact optimal and behavior successor distances of an MDP file")
    p.add_argument("mdp")
    p.add_argument("--behavior", help="JSON array [S][A] of behavior probabilities (default uniform)")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("gen-data", help="generate the offline dataset named in a config")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``advbench <command> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from advbench import __version__, ddpg, env as envs, harness, metrics, sim
from advbench.sim import ConfigurationError


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="experiment config file")
    p.add_argument("--seed", type=int, help="override experiment.base_seed")
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="advbench",
                                 description="Adversarial resilience benchmarks for collision avoidance.")
    ap.add_argument("--version", action="version", version=f"advbench {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("train", help="train and evaluate one adversary run")
    _common(p, True)
    p.add_argument("--run", type=int, default=0, help="run index (seed = base seed + index)")

    p = sub.add_parser("bench", help="run the full repeated experiment")
    _common(p, True)
    p.add_argument("--repetitions", type=int, help="override experiment.repetitions")
    p.add_argument("--workers", type=int, help="parallel worker processes")

    p = sub.add_parser("eval", help="evaluate a saved adversary checkpoint")
    _common(p, True)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--episodes", type=int, help="override experiment.eval_episodes")

    p = sub.add_parser("capacity", help="scan traffic density for the capacity threshold")
    _common(p, True)
    p.add_argument("--min", dest="n_min", type=int, default=0)
    p.add_argument("--max", dest="n_max", type=int, default=10)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--steps", type=int, default=400)

    p = sub.add_parser("compare", help="compare two result directories")
    _common(p)
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--names", nargs=2, metavar=("A", "B"))

    p = sub.add_parser("report", help="write aggregate CSV and optional SVG plots")
    _common(p)
    p.add_argument("results", type=Path)
    p.add_argument("--plots", action="store_true")
    return ap


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    for name in ("repetitions", "workers", "episodes"):
        value = getattr(args, name, None)
        if value is not None:
            changes["eval_episodes" if name == "episodes" else name] = value
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _print_result(r: metrics.BenchmarkResult) -> None:
    print(json.dumps(dataclasses.asdict(r), sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"advbench {args.command}: error: {exc}", file=sys.stderr)
        return 2


def cmd_train(args) -> int:
    cfg = _load(args)
    result = harness.run_one(cfg, args.run)
    _print_result(result)
    return 0 if result.status == "ok" else 1


def cmd_bench(args) -> int:
    cfg = _load(args)
    manifest, results = harness.run_experiment(cfg)
    agg = metrics.aggregate(results, cfg.subject, cfg.objective.kind.value)
    failed = sum(r.status != "ok" for r in results)
    print(f"{len(results)} runs in {cfg.out} ({failed} failed, {agg.non_converged} not converged); "
          f"config {manifest.config_hash[:12]}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    env = harness.make_env(cfg)
    actor = ddpg.load_checkpoint(args.checkpoint, envs.ACTION_LOW, envs.ACTION_HIGH)
    if actor.sizes[0] != env.obs_dim:
        raise ConfigurationError(f"checkpoint expects {actor.sizes[0]} inputs, env provides {env.obs_dim}")
    s = harness.evaluate_actor(env, actor, harness.eval_seeds(cfg.base_seed, cfg.eval_episodes))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        sim.write_trace([rec for tr in s.traces for rec in tr], args.out / "trace_eval.jsonl")
    print(json.dumps({"success_rate": s.success_rate, "time_to_collision": s.time_to_collision,
                      "time_to_collision_hits": s.time_to_collision_hits,
                      "damage_target": s.damage_target, "damage_adversary": s.damage_adversary,
                      "episodes": len(s.traces)}, sort_keys=True))
    return 0


def cmd_capacity(args) -> int:
    cfg = _load(args)
    if args.n_max < args.n_min:
        raise ConfigurationError("--max must be >= --min")
    n = harness.capacity_scan(cfg, range(args.n_min, args.n_max + 1), args.trials, args.steps)
    print(json.dumps({"subject": cfg.subject, "capacity_threshold": n}))
    return 0


def cmd_compare(args) -> int:
    a, b = harness.load_result_set(args.a), harness.load_result_set(args.b)
    rep = harness.compare(a, b, tuple(args.names) if args.names else None)
    text = rep.render()
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "comparison.txt").write_text(text)
        harness.write_aggregate_csv([a, b], args.out / "aggregate.csv")
    return 0


def cmd_report(args) -> int:
    agg, written = harness.report(args.results, args.plots)
    for p in written:
        print(p)
    return 0


COMMANDS = {"train": cmd_train, "bench": cmd_bench, "eval": cmd_eval, "capacity": cmd_capacity,
            "compare": cmd_compare, "report": cmd_report}


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: dataset generation, training, evaluation,
exhaustive search and the experiment driver."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .actor import RunConfig, evaluate_policy, run_training
from .baselines import exhaustive_best
from .dag import load_dag, make_plan
from .harness import ExperimentSpec, run_experiment
from .learner import ApoHyper
from .nn import load_checkpoint
from .scenario import Scenario, load_scenario, save_scenario, scaled_scenario
from .workload import (
    DatasetSpec,
    WeightRanges,
    build_dataset,
    load_manifest,
    select_entries,
)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _resolve_scenario(args) -> Scenario:
    if getattr(args, "scenario", None):
        return load_scenario(args.scenario)
    return scaled_scenario(args.servers, seed=args.seed)


def _load_split(dataset_dir: str, split: str, exclude=None, only=None):
    ddir = Path(dataset_dir)
    manifest = load_manifest(ddir)
    entries = select_entries(manifest, split=split, exclude_lengths=exclude,
                             only_lengths=only)
    return [load_dag(ddir / e["file"]) for e in entries]


def cmd_gen(args) -> int:
    spec = DatasetSpec(
        lengths=args.lengths,
        fats=args.fats,
        densities=args.densities,
        topologies_per_point=args.topologies,
        weightings_per_topology=args.weightings,
        train_fraction=args.train_fraction,
        ranges=WeightRanges(),
        seed=args.seed,
    )
    manifest = build_dataset(spec, args.out)
    n = len(manifest["dags"])
    n_train = sum(e["split"] == "train" for e in manifest["dags"])
    print(f"wrote {n} services ({n_train} train / {n - n_train} eval) to {args.out}")
    return 0


def cmd_train(args) -> int:
    scenario = _resolve_scenario(args)
    exclude = set(args.exclude_length) if args.exclude_length else None
    only_eval = set(args.eval_length) if args.eval_length else None
    train_dags = _load_split(args.dataset, "train", exclude=exclude)
    if only_eval:
        eval_dags = _load_split(args.dataset, None, only=only_eval)
    else:
        eval_dags = _load_split(args.dataset, "eval", exclude=exclude)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out / "scenario.json")
    cfg = RunConfig(
        scenario=scenario,
        train_dags=train_dags,
        eval_dags=eval_dags,
        hyper=ApoHyper(rollout_len=args.rollout),
        num_actors=args.actors,
        total_steps=args.steps,
        seed=args.seed,
        serial=args.serial or args.actors == 1,
        eval_every=args.eval_every,
        metrics_path=out / "metrics.jsonl",
        checkpoint_path=out / "checkpoint.json",
        train_log_path=out / "train_log.jsonl",
        init_checkpoint=args.resume,
    )
    res = run_training(cfg)
    last = res.metrics[-1]
    print(json.dumps({
        "env_steps": res.env_steps,
        "versions": res.learner.version,
        "wall_seconds": res.wall_seconds,
        "final_eval_mean_exec_time_s": last["eval_mean_exec_time_s"],
        "final_deadline_hit_rate": last["deadline_hit_rate"],
        "checkpoint": str(out / "checkpoint.json"),
    }, indent=1))
    return 0


def cmd_eval(args) -> int:
    scenario = _resolve_scenario(args)
    dags = _load_split(args.dataset, args.split,
                       only=set(args.eval_length) if args.eval_length else None)
    policy = load_checkpoint(args.checkpoint)["policy"]
    metrics = evaluate_policy(policy, scenario, dags, greedy=True)
    print(json.dumps(metrics, indent=1))
    return 0


def cmd_oracle(args) -> int:
    scenario = _resolve_scenario(args)
    pool = scenario.pool()
    dag = load_dag(args.dag)
    plan = make_plan(dag, pool)
    result = exhaustive_best(dag, pool, plan, budget=args.budget)
    print(json.dumps({
        "dag": dag.id,
        "objective_s": result.objective,
        "feasible": result.feasible,
        "nodes_explored": result.nodes,
        "assignment": {str(k): v for k, v in sorted(result.assignment.items())},
    }, indent=1))
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_json(args.spec)
    if args.gnuplot:
        spec.gnuplot = True
    result = run_experiment(spec)
    for c in result.checks:
        print(f"[{c['status'].upper():4s}] {c['name']}"
              + (f" — {c['detail']}" if c["detail"] else ""))
    print(f"rows: {len(result.rows)}; files: {', '.join(result.files)}")
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fog-appo",
                                description="DAG service offloading with "
                                            "asynchronous PPO at desk scale")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic service dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--lengths", type=_ints, default=tuple(range(5, 51, 5)))
    g.add_argument("--fats", type=_floats, default=(0.4, 0.5, 0.6, 0.7, 0.8))
    g.add_argument("--densities", type=_floats, default=(0.4, 0.5, 0.6, 0.7, 0.8))
    g.add_argument("--topologies", type=int, default=1,
                   help="topologies per (L, fat, density) grid point")
    g.add_argument("--weightings", type=int, default=100)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the offloading policy")
    t.add_argument("--dataset", required=True)
    t.add_argument("--scenario", help="scenario JSON (default: scaled fleet)")
    t.add_argument("--servers", type=int, default=10,
                   help="fleet size when no scenario file is given")
    t.add_argument("--actors", type=int, default=1)
    t.add_argument("--rollout", type=int, default=64)
    t.add_argument("--steps", type=int, default=65536)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--serial", action="store_true",
                   help="deterministic single-thread mode")
    t.add_argument("--eval-every", type=int, default=10)
    t.add_argument("--exclude-length", type=_ints, default=None,
                   help="service lengths held out of training")
    t.add_argument("--eval-length", type=_ints, default=None,
                   help="evaluate only these lengths (any split)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", default="train_out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--scenario")
    e.add_argument("--servers", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--split", default="eval")
    e.add_argument("--eval-length", type=_ints, default=None)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="exhaustive optimal placement for one service")
    o.add_argument("--dag", required=True)
    o.add_argument("--scenario")
    o.add_argument("--servers", type=int, default=4)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--budget", type=int, default=10_000_000)
    o.set_defaults(func=cmd_oracle)

    x = sub.add_parser("experiment", help="run an experiment spec JSON")
    x.add_argument("spec")
    x.add_argument("--gnuplot", action="store_true")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

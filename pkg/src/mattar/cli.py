"""Experiment front door: train | adapt | transfer | finetune | eval | report.

Every command takes a config file; artifacts land in per-seed run
directories as a checkpoint (JSON manifest + float32 blob), a metrics JSONL,
and a run descriptor capturing the resolved configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arena import Arena, TaskSpec
from .config import ExperimentConfig, load_config
from .metrics import MetricsWriter
from .pipeline import (
    derive_seed,
    fine_tune,
    load_full_checkpoint,
    run_repr_phase,
    run_train_phase,
    run_transfer_phase,
    save_full_checkpoint,
)
from .reporting import generate_report
from .taskrepr import adapt_to_task
from .training import collect_random_transitions, evaluate_policy
from .transfer import transfer_eval_seeds


def _seeds(cfg: ExperimentConfig, args) -> list[int]:
    return [args.seed] if args.seed is not None else list(cfg.seeds)


def _run_dir(cfg: ExperimentConfig, args, seed: int) -> Path:
    base = Path(args.out) if args.out else cfg.output / cfg.name
    return base / f"seed_{seed}"


def _write_descriptor(run_dir: Path, cfg: ExperimentConfig, seed: int, command: str, budget: int | None):
    desc = {
        "command": command,
        "seed": seed,
        "budget_override": budget,
        "version": __version__,
        "config": cfg.to_dict(),
    }
    (run_dir / "run.json").write_text(json.dumps(desc, indent=1, sort_keys=True))


def _apply_budget(cfg: ExperimentConfig, budget: int | None) -> ExperimentConfig:
    if budget is None:
        return cfg
    return dataclasses.replace(cfg, train_cfg=dataclasses.replace(cfg.train_cfg, total_steps=budget))


def _task_by_name(cfg: ExperimentConfig, name: str) -> TaskSpec:
    for spec in cfg.sources + cfg.unseen:
        if spec.name == name:
            return spec
    return TaskSpec.from_string(name, half_width=cfg.half_width, episode_limit=cfg.episode_limit)


def cmd_train(cfg: ExperimentConfig, args) -> int:
    cfg = _apply_budget(cfg, args.budget)
    for seed in _seeds(cfg, args):
        run_dir = _run_dir(cfg, args, seed)
        run_dir.mkdir(parents=True, exist_ok=True)
        with MetricsWriter(run_dir / "metrics.jsonl") as metrics:
            artifacts, _, losses = run_repr_phase(cfg, seed, metrics)
            result = run_train_phase(cfg, seed, artifacts, metrics)
        meta = {
            "series": cfg.name,
            "source_tasks": [s.name for s in cfg.sources],
            "unseen_tasks": [s.name for s in cfg.unseen],
            "episode_limit": cfg.episode_limit,
            "half_width": cfg.half_width,
            "seed": seed,
            "train_cfg": dataclasses.asdict(cfg.train_cfg),
        }
        ckpt_id = save_full_checkpoint(run_dir / "checkpoint", result.net, result.mixer, artifacts, meta=meta)
        _write_descriptor(run_dir, cfg, seed, "train", args.budget)
        final = {e["task"]: e["win_rate"] for e in result.eval_history[-len(cfg.sources):]}
        print(f"seed {seed}: checkpoint {ckpt_id}; final win rates {final}; repr holdout {losses}")
    return 0


def cmd_adapt(cfg: ExperimentConfig, args) -> int:
    net, mixer, artifacts, adapted, manifest = load_full_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else manifest["meta"].get("seed", 0)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "checkpoint_adapted"
    metrics_path = out.parent / "metrics_adapt.jsonl"
    with MetricsWriter(metrics_path) as metrics:
        for k, spec in enumerate(cfg.unseen):
            arena = Arena(spec)
            store = collect_random_transitions(arena, cfg.repr_cfg.sample_budget, seed=derive_seed(seed, 63, k))
            adapted[spec.name] = adapt_to_task(artifacts, store, cfg.repr_cfg, seed=derive_seed(seed, 63, k))
            metrics.write({
                "step": 0,
                "task": spec.name,
                "phase": "adapt",
                "seed": seed,
                "mix_weights": adapted[spec.name].mix.weights.tolist(),
                "source_tasks": list(artifacts.bank.task_names),
            })
            print(f"adapted {spec.name}: mix {np.round(adapted[spec.name].mix.weights, 3)}")
    ckpt_id = save_full_checkpoint(out, net, mixer, artifacts, adapted=adapted, meta=manifest["meta"])
    print(f"adapted checkpoint {ckpt_id} -> {out}")
    return 0


def cmd_transfer(cfg: ExperimentConfig, args) -> int:
    net, mixer, artifacts, _, manifest = load_full_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else manifest["meta"].get("seed", 0)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    suffix = "ablation" if args.ablation else "mattar"
    with MetricsWriter(out / f"metrics_transfer_{suffix}.jsonl") as metrics:
        reports, _ = run_transfer_phase(
            cfg, seed, net, artifacts, metrics,
            ablation=args.ablation, checkpoint_id=manifest["content_id"],
        )
    for r in reports:
        tag = " (ablation)" if r.ablation else ""
        print(f"{r.task}{tag}: win rate {r.win_rate:.3f} over {r.episodes} episodes")
    return 0


def cmd_finetune(cfg: ExperimentConfig, args) -> int:
    cfg = _apply_budget(cfg, args.budget)
    if not args.task:
        print("finetune requires --task", file=sys.stderr)
        return 2
    _, _, _, adapted, manifest = load_full_checkpoint(args.checkpoint)
    if args.task not in adapted:
        print(
            f"checkpoint has no adapted representation for {args.task!r}; run the adapt command first",
            file=sys.stderr,
        )
        return 2
    seed = args.seed if args.seed is not None else manifest["meta"].get("seed", 0)
    spec = _task_by_name(cfg, args.task)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"finetune_{args.task}"
    out.mkdir(parents=True, exist_ok=True)
    with MetricsWriter(out / "metrics.jsonl") as metrics:
        result = fine_tune(args.checkpoint, spec, adapted[args.task].z, cfg.train_cfg, seed=seed, metrics=metrics)
    net, mixer, artifacts, adapted, manifest = load_full_checkpoint(args.checkpoint)
    meta = dict(manifest["meta"])
    meta["finetuned_task"] = args.task
    ckpt_id = save_full_checkpoint(out / "checkpoint", result.net, result.mixer, artifacts, adapted=adapted, meta=meta)
    _write_descriptor(out, cfg, seed, "finetune", args.budget)
    print(f"fine-tuned on {args.task}: final win rate {result.eval_history[-1]['win_rate']:.3f}; checkpoint {ckpt_id}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    net, _, artifacts, adapted, manifest = load_full_checkpoint(args.checkpoint)
    if not args.task:
        print("eval requires --task", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else manifest["meta"].get("seed", 0)
    if args.task in artifacts.bank.task_names:
        z = artifacts.bank.row(args.task)
    elif args.task in adapted:
        z = adapted[args.task].z
    elif args.ablation:
        z = np.zeros(artifacts.bank.dim, dtype=np.float32)
    else:
        print(f"no representation known for task {args.task!r} (source, adapted, or --ablation)", file=sys.stderr)
        return 2
    if args.ablation:
        z = np.zeros(artifacts.bank.dim, dtype=np.float32)
    spec = _task_by_name(cfg, args.task)
    arena = Arena(spec)
    seeds = transfer_eval_seeds(seed, spec.name, cfg.train_cfg.eval_episodes)
    stats = evaluate_policy(arena, net, z, cfg.train_cfg.eval_episodes, seeds)
    print(json.dumps({"task": args.task, "seed": seed, **stats}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    paths: list[Path] = []
    for raw in args.paths:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.rglob("metrics*.jsonl")))
        elif p.suffix == ".jsonl":
            paths.append(p)
        else:
            cfg = load_config(p)
            paths.extend(sorted((cfg.output / cfg.name).rglob("metrics*.jsonl")))
    if not paths:
        print("no metrics", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("report")
    written = generate_report(paths, out)
    for kind, files in written.items():
        for f in files:
            print(f"{kind}: {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mattar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "adapt", "transfer", "finetune", "eval"):
        p = sub.add_parser(name)
        p.add_argument("config", help="experiment config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--budget", type=int, default=None, help="override total training steps")
        p.add_argument("--ablation", action="store_true", help="use the zero representation")
        if name in ("adapt", "transfer", "finetune", "eval"):
            p.add_argument("--checkpoint", required=True)
        if name in ("finetune", "eval"):
            p.add_argument("--task", default=None)
    p = sub.add_parser("report")
    p.add_argument("paths", nargs="+", help="metrics JSONL files, run directories, or config files")
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config)
        handler = {
            "train": cmd_train,
            "adapt": cmd_adapt,
            "transfer": cmd_transfer,
            "finetune": cmd_finetune,
            "eval": cmd_eval,
        }[args.command]
        return handler(cfg, args)
    except (KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

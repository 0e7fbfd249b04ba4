"""End-to-end experiment phases and checkpoint wiring.

The training phase fixes orthonormal representations per source task, fits
the forward-model stack on random-policy samples, then trains the policy on
all sources simultaneously. Transfer adapts a representation per unseen task
and evaluates the frozen policy zero-shot; fine-tuning continues Q-learning
on the unseen task with the adapted representation held fixed.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .arena import Arena, TaskSpec
from .checkpoint import load_entries, save_entries
from .config import ExperimentConfig
from .dims import TASK_REPR_DIM
from .metrics import MetricsWriter
from .numerics import ParamSet
from .policy import AgentNet, Mixer
from .taskrepr import (
    AdaptResult,
    ForwardModelArtifacts,
    MixWeights,
    ReprConfig,
    SourceBank,
    TransitionStore,
    adapt_to_task,
    holdout_loss,
    train_explainer,
)
from .training import (
    TrainConfig,
    TrainResult,
    collect_random_transitions,
    evaluate_policy,
    train_multi_task,
)
from .transfer import (
    TransferReport,
    ablation_zero_representation,
    transfer_eval_seeds,
    zero_shot_transfer,
)


def source_eval_report(
    net: AgentNet,
    artifacts: ForwardModelArtifacts,
    spec: TaskSpec,
    train_cfg: TrainConfig,
    seed: int,
    checkpoint_id: str = "",
) -> TransferReport:
    """Greedy evaluation of a source task under its own bank representation."""
    arena = Arena(spec)
    z = artifacts.bank.row(spec.name)
    seeds = transfer_eval_seeds(seed, spec.name, train_cfg.eval_episodes)
    stats = evaluate_policy(arena, net, z, train_cfg.eval_episodes, seeds)
    return TransferReport(
        task=spec.name,
        win_rate=stats["win_rate"],
        episodes=train_cfg.eval_episodes,
        mix_weights=None,
        z=np.asarray(z),
        checkpoint_id=checkpoint_id,
        seeds=seeds,
        ablation=False,
        stats=stats,
    )


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1)[0])


def collect_source_stores(cfg: ExperimentConfig, seed: int) -> dict[str, TransitionStore]:
    stores = {}
    for k, spec in enumerate(cfg.sources):
        arena = Arena(spec)
        stores[spec.name] = collect_random_transitions(
            arena, cfg.repr_cfg.sample_budget, seed=derive_seed(seed, 61, k)
        )
    return stores


def run_repr_phase(
    cfg: ExperimentConfig,
    seed: int,
    metrics: MetricsWriter | None = None,
    stores: dict[str, TransitionStore] | None = None,
) -> tuple[ForwardModelArtifacts, dict[str, TransitionStore], dict[str, dict]]:
    """Build the source bank and fit the forward-model stack on random rollouts.

    Returns the artifacts, the transition stores, and per-task held-out
    losses before and after training.
    """
    names = [s.name for s in cfg.sources]
    bank = SourceBank.create(names, TASK_REPR_DIM, seed=derive_seed(seed, 60))
    stores = stores if stores is not None else collect_source_stores(cfg, seed)

    probe = train_explainer(stores, bank, dataclasses.replace(cfg.repr_cfg, train_steps=0), seed=seed)
    initial = {name: holdout_loss(probe, stores[name], name, cfg.repr_cfg) for name in names}

    def log_fn(step, losses):
        if metrics is not None:
            for task, value in losses.items():
                metrics.write({"step": step, "task": task, "phase": "repr_update", "pred_loss": value, "seed": seed})

    artifacts = train_explainer(stores, bank, cfg.repr_cfg, seed=seed, log_fn=log_fn)
    final = {name: holdout_loss(artifacts, stores[name], name, cfg.repr_cfg) for name in names}
    losses = {name: {"initial": initial[name], "final": final[name]} for name in names}
    if metrics is not None:
        for name in names:
            metrics.write({
                "step": cfg.repr_cfg.train_steps,
                "task": name,
                "phase": "repr_eval",
                "holdout_initial": initial[name],
                "holdout_final": final[name],
                "seed": seed,
            })
    return artifacts, stores, losses


def run_train_phase(
    cfg: ExperimentConfig,
    seed: int,
    artifacts: ForwardModelArtifacts,
    metrics: MetricsWriter | None = None,
) -> TrainResult:
    z_map = {name: artifacts.bank.row(name) for name in artifacts.bank.task_names}
    return train_multi_task(cfg.sources, z_map, cfg.train_cfg, seed=derive_seed(seed, 62), metrics=metrics)


def run_transfer_phase(
    cfg: ExperimentConfig,
    seed: int,
    net: AgentNet,
    artifacts: ForwardModelArtifacts,
    metrics: MetricsWriter | None = None,
    ablation: bool = False,
    checkpoint_id: str = "",
    include_sources: bool = True,
) -> tuple[list[TransferReport], dict[str, AdaptResult]]:
    """Evaluate the frozen policy on every unseen task (and, for the report's
    source section, on every source task) under the chosen method."""
    reports = []
    adapted: dict[str, AdaptResult] = {}
    source_names = list(artifacts.bank.task_names)

    def emit(report: TransferReport, section: str):
        reports.append(report)
        if metrics is not None:
            entry = report.to_entry(seed)
            entry["section"] = section
            entry["source_tasks"] = source_names
            metrics.write(entry)

    for k, spec in enumerate(cfg.unseen):
        task_seed = derive_seed(seed, 63, k)
        if ablation:
            report = ablation_zero_representation(net, spec, cfg.train_cfg, seed=task_seed, checkpoint_id=checkpoint_id)
        else:
            report, adapt = zero_shot_transfer(
                net, artifacts, spec, cfg.repr_cfg, cfg.train_cfg, seed=task_seed, checkpoint_id=checkpoint_id
            )
            adapted[spec.name] = adapt
        emit(report, "unseen")
    if include_sources:
        for spec in cfg.sources:
            task_seed = derive_seed(seed, 64, source_names.index(spec.name))
            if ablation:
                report = ablation_zero_representation(net, spec, cfg.train_cfg, seed=task_seed, checkpoint_id=checkpoint_id)
            else:
                report = source_eval_report(net, artifacts, spec, cfg.train_cfg, seed=task_seed, checkpoint_id=checkpoint_id)
            emit(report, "source")
    return reports, adapted


# -- checkpoint wiring --------------------------------------------------------------


def _put(entries: dict, prefix: str, params: ParamSet):
    for name, t in params.items():
        entries[f"{prefix}.{name}"] = t.data


def _take(entries: dict, prefix: str) -> ParamSet:
    ps = ParamSet()
    plen = len(prefix) + 1
    for name, arr in entries.items():
        if name.startswith(prefix + "."):
            ps.add(name[plen:], arr)
    if len(ps) == 0:
        raise ValueError(f"checkpoint has no entries under {prefix!r}")
    return ps


def save_full_checkpoint(
    out_dir: str | Path,
    net: AgentNet,
    mixer: Mixer,
    artifacts: ForwardModelArtifacts,
    adapted: dict[str, AdaptResult] | None = None,
    meta: dict | None = None,
) -> str:
    entries: dict[str, np.ndarray] = {}
    _put(entries, "agent", net.params)
    _put(entries, "mixer", mixer.params)
    _put(entries, "explainer", artifacts.explainer)
    _put(entries, "encoder", artifacts.encoder)
    for task, dec in artifacts.decoders.items():
        _put(entries, f"decoder/{task}", dec)
    entries["bank"] = artifacts.bank.vectors
    for task, adapt in (adapted or {}).items():
        entries[f"adapted/{task}.logits"] = adapt.mix.logits
        entries[f"adapted/{task}.z"] = adapt.z
    meta = dict(meta or {})
    meta.setdefault("bank_tasks", list(artifacts.bank.task_names))
    meta.setdefault("repr_cfg", dataclasses.asdict(artifacts.cfg))
    return save_entries(out_dir, entries, meta)


def load_full_checkpoint(ckpt_dir: str | Path):
    """Rebuild (net, mixer, artifacts, adapted, manifest) from disk."""
    entries, manifest = load_entries(ckpt_dir)
    meta = manifest["meta"]
    net = AgentNet(np.random.default_rng(0))
    net.params.load_state_dict({k[len("agent."):]: v for k, v in entries.items() if k.startswith("agent.")})
    mixer = Mixer(np.random.default_rng(0))
    mixer.params.load_state_dict({k[len("mixer."):]: v for k, v in entries.items() if k.startswith("mixer.")})
    explainer = _take(entries, "explainer")
    encoder = _take(entries, "encoder")
    bank = SourceBank(meta["bank_tasks"], entries["bank"])
    decoders = {}
    for name in meta["bank_tasks"]:
        if any(k.startswith(f"decoder/{name}.") for k in entries):
            decoders[name] = _take(entries, f"decoder/{name}")
    layouts = {}
    for name in meta.get("source_tasks", meta["bank_tasks"]):
        spec = TaskSpec.from_string(
            name,
            half_width=meta.get("half_width", 8.0),
            episode_limit=meta.get("episode_limit", 40),
        )
        layouts[name] = Arena(spec).layout
    repr_cfg = ReprConfig(**meta["repr_cfg"]) if "repr_cfg" in meta else ReprConfig()
    artifacts = ForwardModelArtifacts(bank, explainer, encoder, decoders, layouts, repr_cfg)
    adapted: dict[str, AdaptResult] = {}
    for key in entries:
        if key.startswith("adapted/") and key.endswith(".logits"):
            task = key[len("adapted/"):-len(".logits")]
            adapted[task] = AdaptResult(
                mix=MixWeights(entries[key].copy()),
                z=entries[f"adapted/{task}.z"].copy(),
                decoder=ParamSet(),
            )
    return net, mixer, artifacts, adapted, manifest


def fine_tune(
    ckpt_dir: str | Path,
    unseen: TaskSpec,
    z: np.ndarray,
    cfg: TrainConfig,
    seed: int = 0,
    metrics: MetricsWriter | None = None,
) -> TrainResult:
    """Continue Q-learning on one unseen task from a checkpoint, representation frozen."""
    net, mixer, artifacts, _, manifest = load_full_checkpoint(ckpt_dir)
    z = np.asarray(z, dtype=np.float32).copy()
    z.setflags(write=False)
    return train_multi_task(
        [unseen], {unseen.name: z}, cfg, seed=seed, net=net, mixer=mixer, metrics=metrics, phase="finetune"
    )

"""Zero-shot transfer, the zero-representation ablation, and greedy evaluation.

Transferring to an unseen task never updates the policy: the protocol
collects transitions with a uniform-random legal policy, learns the task's
representation as a convex mix of the source bank, inserts that vector into
the agent network, and evaluates decentralized greedy episodes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .arena import Arena, TaskSpec
from .dims import TASK_REPR_DIM
from .policy import AgentNet
from .taskrepr import (
    AdaptResult,
    ForwardModelArtifacts,
    MixWeights,
    ReprConfig,
    adapt_to_task,
    compose_representation,
)
from .training import TrainConfig, collect_random_transitions, evaluate_policy


@dataclass
class TransferReport:
    task: str
    win_rate: float
    episodes: int
    mix_weights: list[float] | None
    z: np.ndarray
    checkpoint_id: str
    seeds: list[int]
    ablation: bool = False
    mix_logits: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.win_rate <= 1.0:
            raise ValueError("win rate must lie in [0, 1]")

    def to_entry(self, seed: int, phase: str = "transfer") -> dict:
        entry = {
            "step": 0,
            "task": self.task,
            "phase": phase,
            "win_rate": self.win_rate,
            "episodes": self.episodes,
            "ablation": self.ablation,
            "checkpoint": self.checkpoint_id,
            "seed": seed,
            **{k: v for k, v in self.stats.items() if k != "win_rate"},
        }
        if self.mix_weights is not None:
            entry["mix_weights"] = [float(w) for w in self.mix_weights]
        return entry


def policy_content_hash(net: AgentNet, *param_sets) -> str:
    h = hashlib.sha256()
    h.update(net.params.content_hash().encode())
    for ps in param_sets:
        h.update(ps.content_hash().encode())
    return h.hexdigest()[:16]


def transfer_eval_seeds(seed: int, task: str, episodes: int) -> list[int]:
    key = int(hashlib.sha256(task.encode()).hexdigest()[:8], 16)
    ss = np.random.SeedSequence(seed, spawn_key=(51, key))
    return [int(s) for s in ss.generate_state(episodes)]


def evaluate(net: AgentNet, z: np.ndarray, arena: Arena, episodes: int = 32, seeds: list[int] | None = None) -> float:
    """Win rate over greedy episodes with a fixed seed list (epsilon forced to 0)."""
    if seeds is None:
        seeds = transfer_eval_seeds(0, arena.spec.name, episodes)
    return evaluate_policy(arena, net, z, episodes, seeds)["win_rate"]


def zero_shot_transfer(
    net: AgentNet,
    artifacts: ForwardModelArtifacts,
    unseen: TaskSpec,
    repr_cfg: ReprConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
    checkpoint_id: str = "",
) -> tuple[TransferReport, AdaptResult]:
    """Adapt the representation on random-policy samples, insert it, evaluate.

    The policy and the explainer stack are read-only throughout; a content
    hash guards the no-update contract.
    """
    before = policy_content_hash(net, artifacts.explainer, artifacts.encoder)
    arena = Arena(unseen)
    store = collect_random_transitions(arena, repr_cfg.sample_budget, seed=seed)
    adapt = adapt_to_task(artifacts, store, repr_cfg, seed=seed, fine_tune_decoder=True)
    seeds = transfer_eval_seeds(seed, unseen.name, train_cfg.eval_episodes)
    stats = evaluate_policy(arena, net, adapt.z, train_cfg.eval_episodes, seeds)
    after = policy_content_hash(net, artifacts.explainer, artifacts.encoder)
    if before != after:
        raise RuntimeError("transfer mutated read-only parameters")
    report = TransferReport(
        task=unseen.name,
        win_rate=stats["win_rate"],
        episodes=train_cfg.eval_episodes,
        mix_weights=[float(w) for w in adapt.mix.weights],
        z=adapt.z,
        checkpoint_id=checkpoint_id or before,
        seeds=seeds,
        ablation=False,
        mix_logits=adapt.mix.logits.copy(),
        stats=stats,
    )
    return report, adapt


def ablation_zero_representation(
    net: AgentNet,
    unseen: TaskSpec,
    train_cfg: TrainConfig,
    seed: int = 0,
    checkpoint_id: str = "",
) -> TransferReport:
    """Zero-shot evaluation with an all-zero representation and no adaptation phase."""
    arena = Arena(unseen)
    z = np.zeros(TASK_REPR_DIM, dtype=np.float32)
    seeds = transfer_eval_seeds(seed, unseen.name, train_cfg.eval_episodes)
    stats = evaluate_policy(arena, net, z, train_cfg.eval_episodes, seeds)
    return TransferReport(
        task=unseen.name,
        win_rate=stats["win_rate"],
        episodes=train_cfg.eval_episodes,
        mix_weights=None,
        z=z,
        checkpoint_id=checkpoint_id,
        seeds=seeds,
        ablation=True,
        stats=stats,
    )


def self_transfer_check(
    net: AgentNet,
    artifacts: ForwardModelArtifacts,
    source: TaskSpec,
    repr_cfg: ReprConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
) -> tuple[TransferReport, float]:
    """Zero-shot transfer onto an exact copy of a source task.

    Returns the transfer report and the source task's evaluation under its
    own bank row with the same seeds, for direct comparison.
    """
    copy_spec = TaskSpec(
        name=source.name, allies=source.allies, enemies=source.enemies,
        half_width=source.half_width, episode_limit=source.episode_limit,
    )
    report, _ = zero_shot_transfer(net, artifacts, copy_spec, repr_cfg, train_cfg, seed=seed)
    arena = Arena(source)
    stats = evaluate_policy(arena, net, artifacts.bank.row(source.name), train_cfg.eval_episodes, report.seeds)
    return report, stats["win_rate"]


def report_consistency_ok(report: TransferReport, artifacts: ForwardModelArtifacts) -> bool:
    """The report's mix must sit on the simplex and reproduce its z exactly."""
    if report.ablation:
        return bool(np.all(report.z == 0.0))
    mw = np.asarray(report.mix_weights, dtype=np.float32)
    if abs(float(mw.sum()) - 1.0) > 1e-6 or np.any(mw < 0):
        return False
    recomposed = compose_representation(MixWeights(report.mix_logits), artifacts.bank)
    return bool(np.array_equal(recomposed, report.z))

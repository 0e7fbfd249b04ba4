"""Replay storage, TD learning with target networks, and the multi-task loop.

Training interleaves the source tasks round-robin: each cycle collects one
episode per task and takes one gradient step per task on that task's buffer,
always with the task's fixed representation vector. Evaluation pauses
training on a fixed cadence and runs greedy episodes on every task.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .arena import Arena, TaskLayout, TaskSpec
from .numerics import ParamSet, Tensor, clip_grad_norm, optimizer_step
from .policy import AgentNet, Mixer, epsilon_at, select_actions
from .taskrepr import TransitionStore


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr: float = 5e-4
    batch_size: int = 32  # episodes per gradient step
    buffer_capacity: int = 5000  # episodes per task
    target_update_interval: int = 200  # gradient steps
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    total_steps: int = 200_000
    eval_interval: int = 10_000
    eval_episodes: int = 32
    grad_clip: float = 10.0
    train_log_interval: int = 50  # gradient steps between train metric lines

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("batch_size", "buffer_capacity", "target_update_interval", "total_steps", "eval_interval", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def epsilon(self, step: int) -> float:
        return epsilon_at(step, self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)


@dataclass
class EpisodeRecord:
    """One episode: step arrays plus the pre-step snapshots needed for TD targets."""

    task: str
    states: np.ndarray  # (T+1, state_dim)
    obs: np.ndarray  # (T+1, n, obs_dim)
    avail: np.ndarray  # (T+1, n, max_action_dim) bool
    actions: np.ndarray  # (T, n) int
    rewards: np.ndarray  # (T,)
    terminated: np.ndarray  # (T,) float, exactly one 1.0 at the end
    win: bool

    def __post_init__(self):
        t = self.actions.shape[0]
        if self.states.shape[0] != t + 1 or self.obs.shape[0] != t + 1 or self.avail.shape[0] != t + 1:
            raise ValueError("episode arrays misaligned")
        if not (self.terminated[-1] == 1.0 and np.all(self.terminated[:-1] == 0.0)):
            raise ValueError("exactly the last step must be terminal")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


class ReplayBuffer:
    """Per-task ring buffer of episodes; oldest records are evicted first."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._episodes: list[EpisodeRecord] = []

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: EpisodeRecord):
        self._episodes.append(episode)
        if len(self._episodes) > self.capacity:
            self._episodes.pop(0)

    def sample(self, rng: np.random.Generator, k: int) -> list[EpisodeRecord]:
        """Uniform sample without replacement within the batch."""
        if k > len(self._episodes):
            raise ValueError("not enough episodes in buffer")
        idx = rng.choice(len(self._episodes), size=k, replace=False)
        return [self._episodes[i] for i in idx]

    @property
    def episodes(self) -> tuple[EpisodeRecord, ...]:
        return tuple(self._episodes)


# -- rollouts -------------------------------------------------------------------------


def q_for_all_agents(net: AgentNet, obs: np.ndarray, layout: TaskLayout, z: np.ndarray) -> list[np.ndarray]:
    """Raw per-agent action values for one timestep; attacker slots share one batch."""
    out: list[np.ndarray | None] = [None] * layout.n_allies
    attackers = [i for i in range(layout.n_allies) if not layout.is_healer(i)]
    if attackers:
        q = net.q_values_np(obs[attackers], layout, attackers[0], z)
        for row, i in enumerate(attackers):
            out[i] = q[row]
    for i in range(layout.n_allies):
        if layout.is_healer(i):
            out[i] = net.q_values_np(obs[i : i + 1], layout, i, z)[0]
    return out


def collect_episode(
    arena: Arena,
    net: AgentNet,
    z: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    reset_seed: int,
) -> EpisodeRecord:
    """Roll one epsilon-greedy episode to termination and record every step."""
    lay = arena.layout
    state, obs, avail = arena.reset(reset_seed)
    states = [arena.flat_state(state)]
    obs_list = [obs]
    avail_list = [arena.avail_padded(state)]
    actions, rewards, terms = [], [], []
    terminated = False
    win = False
    while not terminated:
        q_rows = q_for_all_agents(net, obs, lay, z)
        joint = select_actions(q_rows, epsilon, rng, avail)
        outcome = arena.step(joint)
        actions.append(joint)
        rewards.append(outcome.reward)
        terms.append(1.0 if outcome.terminated else 0.0)
        states.append(arena.flat_state(outcome.state))
        obs_list.append(outcome.obs)
        avail_list.append(arena.avail_padded(outcome.state))
        obs, avail = outcome.obs, outcome.avail
        terminated = outcome.terminated
        win = outcome.win
    return EpisodeRecord(
        task=arena.spec.name,
        states=np.stack(states),
        obs=np.stack(obs_list),
        avail=np.stack(avail_list),
        actions=np.array(actions, dtype=np.int64),
        rewards=np.array(rewards, dtype=np.float32),
        terminated=np.array(terms, dtype=np.float32),
        win=win,
    )


def collect_random_transitions(arena: Arena, n_transitions: int, seed: int) -> TransitionStore:
    """Gather transitions under a uniform-random legal policy (no task knowledge)."""
    store = TransitionStore(arena.layout)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(31,)))
    episode = 0
    state, obs, avail = arena.reset(seed * 100_003 + episode)
    while len(store) < n_transitions:
        joint = [int(rng.choice(np.flatnonzero(m))) for m in avail]
        flat = arena.flat_state(state)
        outcome = arena.step(joint)
        store.append(flat, obs, joint, outcome.reward, arena.flat_state(outcome.state), outcome.obs)
        state, obs, avail = outcome.state, outcome.obs, outcome.avail
        if outcome.terminated:
            episode += 1
            state, obs, avail = arena.reset(seed * 100_003 + episode)
    return store


# -- TD learning ------------------------------------------------------------------------


def td_loss(
    episodes: list[EpisodeRecord],
    net: AgentNet,
    mixer: Mixer,
    target_net: AgentNet,
    target_mixer: Mixer,
    z: np.ndarray,
    layout: TaskLayout,
    cfg: TrainConfig,
) -> tuple[Tensor, dict]:
    """Squared TD error of the mixed value against double-Q targets.

    Greedy next actions come from the online network over legal actions; the
    target network scores them, and no gradient flows through the targets.
    Episodes are concatenated along time (no padding), so the mean runs over
    exactly the real steps.
    """
    tasks = {ep.task for ep in episodes}
    if len(tasks) != 1:
        raise ValueError(f"td_loss needs a single-task batch, got {sorted(tasks)}")
    n = layout.n_allies

    # row r of the concatenated arrays is snapshot t of some episode; each real
    # step pairs row idx_now with its successor idx_now + 1
    obs_cat = np.concatenate([ep.obs for ep in episodes], axis=0)
    states_cat = np.concatenate([ep.states for ep in episodes], axis=0)
    avail_cat = np.concatenate([ep.avail for ep in episodes], axis=0)
    actions_cat = np.concatenate([ep.actions for ep in episodes], axis=0)
    rewards_cat = np.concatenate([ep.rewards for ep in episodes], axis=0)
    done_cat = np.concatenate([ep.terminated for ep in episodes], axis=0)
    idx_now = []
    base = 0
    for ep in episodes:
        idx_now.append(base + np.arange(ep.length))
        base += ep.length + 1
    idx_now = np.concatenate(idx_now)
    idx_next = idx_now + 1

    steps = idx_now.size
    v_rows = obs_cat.shape[0]
    chosen_by_agent: list = [None] * n
    target_by_agent: list = [None] * n
    attackers = [i for i in range(n) if not layout.is_healer(i)]
    groups = [attackers] if attackers else []
    groups += [[i] for i in range(n) if layout.is_healer(i)]
    for group in groups:
        a_i = layout.action_dim(group[0])
        g = len(group)
        # one stacked forward per group: attacker slots share their target slicing
        rows = obs_cat[:, group].swapaxes(0, 1).reshape(g * v_rows, layout.obs_dim)
        q_all = net.q_values(rows, layout, group[0], z)  # (g*V, a_i)
        flat_now = (np.arange(g)[:, None] * v_rows + idx_now[None, :]).reshape(-1)
        onehot = np.zeros((g * steps, a_i), dtype=np.float32)
        acts = actions_cat[:, group].swapaxes(0, 1).reshape(-1)
        onehot[np.arange(g * steps), acts] = 1.0
        chosen_flat = (q_all[flat_now] * Tensor(onehot)).sum(axis=-1).reshape((g, steps))
        with nm.no_grad():
            flat_next = (np.arange(g)[:, None] * v_rows + idx_next[None, :]).reshape(-1)
            mask_next = avail_cat[idx_next][:, group, :a_i].swapaxes(0, 1).reshape(g * steps, a_i)
            online_next = np.where(mask_next, q_all.data[flat_next], -np.inf)
            a_star = online_next.argmax(axis=-1)
            tq = target_net.q_values(rows[flat_next], layout, group[0], z).data
            tgt = np.take_along_axis(tq, a_star[:, None], axis=-1).reshape(g, steps)
        for j, agent in enumerate(group):
            chosen_by_agent[agent] = chosen_flat[j].reshape((steps, 1))
            target_by_agent[agent] = tgt[j][:, None]
    chosen_cols = chosen_by_agent
    target_cols = target_by_agent

    chosen = nm.concat(chosen_cols, axis=-1)
    parts_now = states_cat[idx_now, :-1].reshape(steps, layout.n_entities, layout.part_dim)
    q_tot = mixer.mix(chosen, parts_now, z)
    with nm.no_grad():
        target_chosen = np.concatenate(target_cols, axis=-1).astype(np.float32)
        parts_next = states_cat[idx_next, :-1].reshape(steps, layout.n_entities, layout.part_dim)
        target_tot = target_mixer.mix(target_chosen, parts_next, z).data
    y = rewards_cat + cfg.gamma * (1.0 - done_cat) * target_tot
    err = q_tot - Tensor(y.astype(np.float32))
    loss = (err * err).mean()
    stats = {
        "td_loss": float(loss.data),
        "q_tot_mean": float(q_tot.data.mean()),
        "target_mean": float(y.mean()),
    }
    return loss, stats


class Learner:
    """Owns online and target networks plus the optimizer bookkeeping."""

    def __init__(self, net: AgentNet, mixer: Mixer, cfg: TrainConfig):
        self.net = net
        self.mixer = mixer
        self.cfg = cfg
        rng = np.random.default_rng(0)
        self.target_net = AgentNet(rng)
        self.target_mixer = Mixer(rng)
        self.sync_targets()
        self.train_steps = 0

    def sync_targets(self):
        self.target_net.params.load_state_dict(self.net.params.state_dict())
        self.target_mixer.params.load_state_dict(self.mixer.params.state_dict())

    def train_step(self, episodes: list[EpisodeRecord], z: np.ndarray, layout: TaskLayout) -> dict:
        self.net.params.zero_grad()
        self.mixer.params.zero_grad()
        loss, stats = td_loss(
            episodes, self.net, self.mixer, self.target_net, self.target_mixer, z, layout, self.cfg
        )
        loss.backward()
        stats["grad_norm"] = clip_grad_norm([self.net.params, self.mixer.params], self.cfg.grad_clip)
        optimizer_step(self.net.params, self.cfg.lr, "adaptive")
        optimizer_step(self.mixer.params, self.cfg.lr, "adaptive")
        self.train_steps += 1
        if self.train_steps % self.cfg.target_update_interval == 0:
            self.sync_targets()
        return stats


def evaluate_policy(
    arena: Arena,
    net: AgentNet,
    z: np.ndarray,
    episodes: int,
    seeds: list[int],
) -> dict:
    """Greedy (epsilon = 0) evaluation; deterministic given the seed list."""
    if len(seeds) < episodes:
        raise ValueError("need one reset seed per evaluation episode")
    rng = np.random.default_rng(0)  # unused at epsilon 0, kept for signature symmetry
    wins = 0
    returns = []
    lengths = []
    for j in range(episodes):
        ep = collect_episode(arena, net, z, 0.0, rng, seeds[j])
        wins += 1 if ep.win else 0
        returns.append(ep.episode_return)
        lengths.append(ep.length)
    return {
        "win_rate": wins / episodes,
        "return_mean": float(np.mean(returns)),
        "length_mean": float(np.mean(lengths)),
        "episodes": episodes,
    }


def eval_seed_list(seed: int, eval_round: int, episodes: int) -> list[int]:
    ss = np.random.SeedSequence(seed, spawn_key=(41, eval_round))
    return [int(s) for s in ss.generate_state(episodes)]


@dataclass
class TrainResult:
    net: AgentNet
    mixer: Mixer
    z_map: dict[str, np.ndarray]
    total_steps: int
    eval_history: list[dict] = field(default_factory=list)


def train_multi_task(
    specs: list[TaskSpec],
    z_map: dict[str, np.ndarray],
    cfg: TrainConfig,
    seed: int = 0,
    net: AgentNet | None = None,
    mixer: Mixer | None = None,
    metrics=None,
    phase: str = "train",
) -> TrainResult:
    """Round-robin Q-learning over tasks with fixed per-task representations.

    Every cycle collects one episode per task and takes one gradient step per
    task; evaluation runs every `eval_interval` environment steps on all
    tasks with greedy action selection. Pass `net`/`mixer` to continue from
    existing parameters (fine-tuning keeps the same loop with one task).
    """
    for spec in specs:
        if spec.name not in z_map:
            raise ValueError(f"no representation for task {spec.name}")
    arenas = {spec.name: Arena(spec) for spec in specs}
    init_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    net = net if net is not None else AgentNet(init_rng)
    mixer = mixer if mixer is not None else Mixer(init_rng)
    learner = Learner(net, mixer, cfg)
    buffers = {spec.name: ReplayBuffer(cfg.buffer_capacity) for spec in specs}
    explore_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    sample_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    reset_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))

    result = TrainResult(net, mixer, dict(z_map), 0)
    t_env = 0
    eval_round = 0
    next_eval = 0

    def run_eval(at_step: int):
        nonlocal eval_round
        for spec in specs:
            seeds = eval_seed_list(seed, eval_round, cfg.eval_episodes)
            stats = evaluate_policy(arenas[spec.name], net, z_map[spec.name], cfg.eval_episodes, seeds)
            entry = {
                "step": at_step,
                "task": spec.name,
                "phase": f"{phase}_eval",
                "epsilon": 0.0,
                "seed": seed,
                **stats,
            }
            result.eval_history.append(entry)
            if metrics is not None:
                metrics.write(entry)
        eval_round += 1

    while t_env < cfg.total_steps:
        if t_env >= next_eval:
            run_eval(next_eval)
            next_eval += cfg.eval_interval
        for spec in specs:
            name = spec.name
            eps = cfg.epsilon(t_env)
            episode = collect_episode(
                arenas[name], net, z_map[name], eps, explore_rng, int(reset_rng.integers(2**31 - 1))
            )
            buffers[name].add(episode)
            t_env += episode.length
            if len(buffers[name]) >= cfg.batch_size:
                batch = buffers[name].sample(sample_rng, cfg.batch_size)
                stats = learner.train_step(batch, z_map[name], arenas[name].layout)
                if metrics is not None and learner.train_steps % cfg.train_log_interval == 0:
                    metrics.write({
                        "step": t_env,
                        "task": name,
                        "phase": f"{phase}_update",
                        "epsilon": eps,
                        "seed": seed,
                        **stats,
                    })
    run_eval(t_env)
    result.total_steps = t_env
    return result

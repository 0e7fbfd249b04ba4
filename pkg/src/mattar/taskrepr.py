"""Task-representation learning: source bank, representation explainer, forward model.

Source tasks carry fixed, mutually orthonormal representation vectors. A
shared hypernetwork (the representation explainer) maps a representation to
the parameters of a forward model that predicts next state, next
observations, and reward. Training fits the explainer against all source
tasks with the representations frozen; adapting to an unseen task freezes
the explainer instead and fits a convex combination of the source
representations through the same prediction loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .arena import N_FIXED_ACTIONS, TaskLayout
from .dims import ENTITY_EMBED_DIM, HYPERNET_EMBED, STATE_LATENT_DIM, TASK_REPR_DIM
from .numerics import ParamSet, Tensor, gram_schmidt, optimizer_step, uniform_init
from .policy import BLOCK_DIM, ENV_DIM, OWN_DIM, PART_DIM, synth_self_block

OWN_TOKEN_DIM = ENV_DIM + OWN_DIM + N_FIXED_ACTIONS + 1  # + self-interaction flag
OTHER_TOKEN_DIM = BLOCK_DIM + 1  # + targeted-by-me flag
GEN_IN_DIM = 2 * ENTITY_EMBED_DIM
GEN_PARAM_COUNT = GEN_IN_DIM * STATE_LATENT_DIM + STATE_LATENT_DIM


@dataclass
class ReprConfig:
    """Coefficients and budgets for forward-model training and adaptation."""

    obs_coef: float = 1.0
    reward_coef: float = 10.0
    entropy_coef: float = 0.1
    entropy_bonus: bool = False  # flip the sign of the entropy term when True
    lr: float = 1e-3
    logits_lr: float = 0.005
    train_steps: int = 3000
    adapt_steps: int = 1800
    adapt_warmup_steps: int | None = None  # decoder-only steps; defaults to a third
    adapt_decoder_lr: float | None = None  # defaults to 3x the base rate
    batch_size: int = 128
    sample_budget: int = 50_000
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.obs_coef < 0 or self.reward_coef < 0 or self.entropy_coef < 0:
            raise ValueError("loss coefficients must be nonnegative")

    @property
    def warmup_steps(self) -> int:
        return self.adapt_steps // 3 if self.adapt_warmup_steps is None else self.adapt_warmup_steps

    @property
    def decoder_lr(self) -> float:
        return 3.0 * self.lr if self.adapt_decoder_lr is None else self.adapt_decoder_lr


class SourceBank:
    """Immutable matrix of mutually orthonormal source-task representations."""

    def __init__(self, task_names: list[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.shape[0] != len(task_names):
            raise ValueError("one representation row per task name")
        self.task_names = tuple(task_names)
        self.vectors = vectors
        self.vectors.setflags(write=False)

    @property
    def n_source(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, task: str | int) -> np.ndarray:
        if isinstance(task, str):
            task = self.task_names.index(task)
        return self.vectors[task]

    @staticmethod
    def create(task_names: list[str], dim: int, seed: int) -> "SourceBank":
        return SourceBank(task_names, init_source_representations(len(task_names), dim, seed))


def init_source_representations(n_src: int, dim: int = TASK_REPR_DIM, seed: int = 0) -> np.ndarray:
    """Draw random vectors and orthonormalize them; deterministic per seed."""
    if n_src > dim:
        raise ValueError("cannot orthogonalize: more source tasks than dimensions")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_src, dim)).astype(np.float32)
    return gram_schmidt(raw)


@dataclass
class MixWeights:
    """Unconstrained logits whose softmax gives simplex combination weights."""

    logits: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        e = np.exp(self.logits - np.max(self.logits))
        return (e / e.sum()).astype(np.float32)


def compose_representation(mix: MixWeights, bank: SourceBank) -> np.ndarray:
    """Convex combination of bank rows: on-simplex by construction."""
    if not np.all(np.isfinite(mix.logits)):
        raise ValueError("mix logits must be finite")
    return (mix.weights @ bank.vectors).astype(np.float32)


# -- forward model ----------------------------------------------------------------


def make_explainer(rng: np.random.Generator) -> ParamSet:
    """Two-layer hypernetwork from a task representation to generated-layer weights."""
    p = ParamSet()
    p.add("h.w", uniform_init(rng, TASK_REPR_DIM, (TASK_REPR_DIM, HYPERNET_EMBED)))
    p.add("h.b", uniform_init(rng, TASK_REPR_DIM, (HYPERNET_EMBED,)))
    p.add("out.w", uniform_init(rng, HYPERNET_EMBED, (HYPERNET_EMBED, GEN_PARAM_COUNT)))
    p.add("out.b", uniform_init(rng, HYPERNET_EMBED, (GEN_PARAM_COUNT,)))
    return p


def make_encoder(rng: np.random.Generator) -> ParamSet:
    """Population-invariant entity embedders shared by every task."""
    p = ParamSet()
    p.add("own.w", uniform_init(rng, OWN_TOKEN_DIM, (OWN_TOKEN_DIM, ENTITY_EMBED_DIM)))
    p.add("own.b", uniform_init(rng, OWN_TOKEN_DIM, (ENTITY_EMBED_DIM,)))
    p.add("other.w", uniform_init(rng, OTHER_TOKEN_DIM, (OTHER_TOKEN_DIM, ENTITY_EMBED_DIM)))
    p.add("other.b", uniform_init(rng, OTHER_TOKEN_DIM, (ENTITY_EMBED_DIM,)))
    p.add("state.w", uniform_init(rng, PART_DIM, (PART_DIM, ENTITY_EMBED_DIM)))
    p.add("state.b", uniform_init(rng, PART_DIM, (ENTITY_EMBED_DIM,)))
    return p


def make_decoder(rng: np.random.Generator, state_dim: int, obs_dim: int) -> ParamSet:
    """Task-specific affine heads decoding the latent into state, observation, reward.

    Heads are deliberately shallow: with high-capacity decoders the per-task
    signal drains into them and the generated layer stops discriminating
    between representations, which breaks adaptation.
    """
    p = ParamSet()
    for head, out in (("state", state_dim), ("obs", obs_dim), ("reward", 1)):
        p.add(f"{head}.w", uniform_init(rng, STATE_LATENT_DIM, (STATE_LATENT_DIM, out)))
        p.add(f"{head}.b", uniform_init(rng, STATE_LATENT_DIM, (out,)))
    return p


def explain(explainer: ParamSet, z) -> tuple[Tensor, Tensor]:
    """Generate the forward model's middle layer (weight, bias) from a representation."""
    z = nm.as_tensor(z)
    if z.shape[-1] != TASK_REPR_DIM:
        raise ValueError(f"representation must have dimension {TASK_REPR_DIM}")
    h = nm.linear(z, explainer["h.w"], explainer["h.b"]).relu()
    gen = nm.linear(h, explainer["out.w"], explainer["out.b"])
    w = gen[: GEN_IN_DIM * STATE_LATENT_DIM].reshape((GEN_IN_DIM, STATE_LATENT_DIM))
    b = gen[GEN_IN_DIM * STATE_LATENT_DIM :]
    return w, b


def _head(decoder: ParamSet, name: str, x: Tensor) -> Tensor:
    return nm.linear(x, decoder[f"{name}.w"], decoder[f"{name}.b"])


def assemble_tokens(
    layout: TaskLayout,
    state: np.ndarray,
    obs: np.ndarray,
    actions_onehot: np.ndarray,
):
    """Fold actions into per-entity tokens (pure numpy; inputs carry no gradient).

    Non-interaction action bits join the agent's own token; the interaction
    bit lands on the targeted entity's token (or the own token for a
    self-directed interaction). Returns per-agent own tokens (B, n, own_tok),
    per-agent other tokens (B, n, E-1, other_tok), and state part tokens
    (B, E, part_dim).
    """
    n = layout.n_allies
    b = obs.shape[0]
    env, own, blocks, _ = layout.split_obs(obs)
    own_tokens = np.zeros((b, n, OWN_TOKEN_DIM), dtype=np.float32)
    other_tokens = np.zeros((b, n, layout.n_entities - 1, OTHER_TOKEN_DIM), dtype=np.float32)
    own_tokens[..., :ENV_DIM] = env
    own_tokens[..., ENV_DIM : ENV_DIM + OWN_DIM] = own
    own_tokens[..., ENV_DIM + OWN_DIM : ENV_DIM + OWN_DIM + N_FIXED_ACTIONS] = actions_onehot[..., :N_FIXED_ACTIONS]
    other_tokens[..., :BLOCK_DIM] = blocks
    for i in range(n):
        targets = layout.interaction_entities(i)
        for slot, ent in enumerate(targets):
            flag = actions_onehot[:, i, N_FIXED_ACTIONS + slot]
            if ent == i:
                own_tokens[:, i, -1] = flag
            else:
                other_tokens[:, i, layout.block_index(i, ent), -1] = flag
    parts = state[..., :-1].reshape(b, layout.n_entities, PART_DIM)
    return own_tokens, other_tokens, parts


def forward_predict(
    explainer: ParamSet,
    encoder: ParamSet,
    decoder: ParamSet,
    z,
    layout: TaskLayout,
    state: np.ndarray,
    obs: np.ndarray,
    actions_onehot: np.ndarray,
):
    """Predict (next state, next observations, reward) for a batch of transitions.

    Entity tokens are embedded and mean-pooled (per agent and over the state
    parts), pushed through the explainer-generated layer, and decoded by the
    task's heads. Returns Tensors of shapes (B, state_dim), (B, n, obs_dim),
    and (B,).
    """
    state = np.asarray(state, dtype=np.float32)
    obs = np.asarray(obs, dtype=np.float32)
    if obs.ndim == 2:
        state, obs, actions_onehot = state[None], obs[None], np.asarray(actions_onehot)[None]
    b, n = obs.shape[0], obs.shape[1]
    if obs.shape[-1] != layout.obs_dim or state.shape[-1] != layout.state_dim:
        raise ValueError("inputs do not match the task layout")
    own_tok, other_tok, parts = assemble_tokens(layout, state, obs, np.asarray(actions_onehot, dtype=np.float32))

    u_own = nm.linear(Tensor(own_tok), encoder["own.w"], encoder["own.b"]).relu()
    u_other = nm.linear(Tensor(other_tok), encoder["other.w"], encoder["other.b"]).relu()
    # sum pooling (not mean): entity counts are a task's signature and must
    # survive into the pooled embedding for representations to separate tasks
    scale = 1.0 / 8.0
    u_agent = (u_own + u_other.sum(axis=-2)) * scale
    u_state = nm.linear(Tensor(parts), encoder["state.w"], encoder["state.b"]).relu().sum(axis=-2) * scale
    gen_w, gen_b = explain(explainer, z)
    u_team = u_agent.sum(axis=-2) * scale
    g_global = nm.concat([u_team, u_state], axis=-1)
    latent_global = nm.linear(g_global, gen_w, gen_b).relu()
    u_state_rep = u_state.reshape((b, 1, ENTITY_EMBED_DIM)) + Tensor(
        np.zeros((b, n, ENTITY_EMBED_DIM), dtype=np.float32)
    )
    g_agent = nm.concat([u_agent, u_state_rep], axis=-1)
    latent_agent = nm.linear(g_agent, gen_w, gen_b).relu()

    state_pred = _head(decoder, "state", latent_global)
    reward_pred = _head(decoder, "reward", latent_global).reshape((b,))
    obs_pred = _head(decoder, "obs", latent_agent)
    return state_pred, obs_pred, reward_pred


def prediction_loss(
    explainer: ParamSet,
    encoder: ParamSet,
    decoder: ParamSet,
    z,
    layout: TaskLayout,
    batch: "TransitionBatch",
    cfg: ReprConfig,
) -> Tensor:
    """Mean squared prediction error with the configured observation/reward weights."""
    if batch.size == 0:
        raise ValueError("empty batch")
    s_pred, o_pred, r_pred = forward_predict(
        explainer, encoder, decoder, z, layout, batch.state, batch.obs, batch.actions_onehot
    )
    ds = s_pred - Tensor(batch.next_state)
    do = o_pred - Tensor(batch.next_obs)
    dr = r_pred - Tensor(batch.reward)
    per_sample = (
        (ds * ds).sum(axis=-1)
        + cfg.obs_coef * (do * do).sum(axis=-1).sum(axis=-1)
        + cfg.reward_coef * (dr * dr)
    )
    return per_sample.mean()


# -- transition storage -------------------------------------------------------------


class TransitionStore:
    """Flat per-task transition arrays feeding forward-model learning.

    Rewards are standardized by the store's own scale when batches are
    gathered: raw returns span two orders of magnitude across tasks (win
    bonuses), and without rescaling the largest task's prediction loss
    dominates the summed objective and warps the representation space.
    """

    def __init__(self, layout: TaskLayout):
        self.layout = layout
        self.state: list[np.ndarray] = []
        self.obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.reward: list[float] = []
        self.next_state: list[np.ndarray] = []
        self.next_obs: list[np.ndarray] = []
        self._reward_scale: float | None = None

    def __len__(self) -> int:
        return len(self.reward)

    @property
    def reward_scale(self) -> float:
        if self._reward_scale is None:
            self._reward_scale = max(1.0, float(np.std(np.asarray(self.reward, dtype=np.float64))))
        return self._reward_scale

    def append(self, state, obs, actions, reward, next_state, next_obs):
        if self._reward_scale is not None:
            raise RuntimeError("store is frozen once batches have been gathered")
        self.state.append(np.asarray(state, dtype=np.float32))
        self.obs.append(np.asarray(obs, dtype=np.float32))
        self.actions.append(np.asarray(actions, dtype=np.int64))
        self.reward.append(float(reward))
        self.next_state.append(np.asarray(next_state, dtype=np.float32))
        self.next_obs.append(np.asarray(next_obs, dtype=np.float32))

    def onehot_actions(self, idx: np.ndarray) -> np.ndarray:
        lay = self.layout
        acts = np.stack([self.actions[i] for i in idx])
        out = np.zeros((len(idx), lay.n_allies, lay.max_action_dim), dtype=np.float32)
        for agent in range(lay.n_allies):
            out[np.arange(len(idx)), agent, acts[:, agent]] = 1.0
        return out

    def gather(self, idx: np.ndarray) -> "TransitionBatch":
        scale = self.reward_scale
        return TransitionBatch(
            state=np.stack([self.state[i] for i in idx]),
            obs=np.stack([self.obs[i] for i in idx]),
            actions_onehot=self.onehot_actions(idx),
            reward=np.array([self.reward[i] / scale for i in idx], dtype=np.float32),
            next_state=np.stack([self.next_state[i] for i in idx]),
            next_obs=np.stack([self.next_obs[i] for i in idx]),
        )

    def sample(self, rng: np.random.Generator, batch_size: int, lo: int = 0, hi: int | None = None) -> "TransitionBatch":
        hi = len(self) if hi is None else hi
        idx = rng.integers(lo, hi, size=batch_size)
        return self.gather(idx)


@dataclass
class TransitionBatch:
    state: np.ndarray
    obs: np.ndarray
    actions_onehot: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    next_obs: np.ndarray

    def __post_init__(self):
        lens = {arr.shape[0] for arr in (self.state, self.obs, self.actions_onehot, self.reward, self.next_state, self.next_obs)}
        if len(lens) != 1:
            raise ValueError("misaligned batch arrays")

    @property
    def size(self) -> int:
        return self.state.shape[0]


# -- training and adaptation ----------------------------------------------------------


@dataclass
class ForwardModelArtifacts:
    """Everything the representation phase produces, shared read-only afterwards."""

    bank: SourceBank
    explainer: ParamSet
    encoder: ParamSet
    decoders: dict[str, ParamSet]
    layouts: dict[str, TaskLayout]
    cfg: ReprConfig
    history: list[dict] = field(default_factory=list)


def train_explainer(
    stores: dict[str, TransitionStore],
    bank: SourceBank,
    cfg: ReprConfig,
    seed: int = 0,
    log_fn=None,
) -> ForwardModelArtifacts:
    """Fit explainer, encoder, and per-task decoders on the source-task buffers.

    The bank is never mutated; each gradient step sums the per-task
    prediction losses over one minibatch per source task. The leading
    `holdout_fraction` of every store is reserved for evaluation and never
    sampled during training.
    """
    if set(stores) != set(bank.task_names):
        raise ValueError("need exactly one transition store per bank task")
    for name, store in stores.items():
        if len(store) == 0:
            raise ValueError(f"empty buffer for task {name}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    init_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(12,)))
    explainer = make_explainer(init_rng)
    encoder = make_encoder(init_rng)
    decoders = {
        name: make_decoder(init_rng, store.layout.state_dim, store.layout.obs_dim)
        for name, store in stores.items()
    }
    layouts = {name: store.layout for name, store in stores.items()}
    artifacts = ForwardModelArtifacts(bank, explainer, encoder, decoders, layouts, cfg)

    holdout = {name: max(1, int(len(store) * cfg.holdout_fraction)) for name, store in stores.items()}
    for step in range(cfg.train_steps):
        explainer.zero_grad()
        encoder.zero_grad()
        total = None
        losses = {}
        for name, store in stores.items():
            decoders[name].zero_grad()
            batch = store.sample(rng, cfg.batch_size, lo=holdout[name])
            loss = prediction_loss(explainer, encoder, decoders[name], bank.row(name), store.layout, batch, cfg)
            losses[name] = float(loss.data)
            total = loss if total is None else total + loss
        total.backward()
        optimizer_step(explainer, cfg.lr, "adaptive")
        optimizer_step(encoder, cfg.lr, "adaptive")
        for name in stores:
            optimizer_step(decoders[name], cfg.lr, "adaptive")
        if log_fn is not None and (step % 200 == 0 or step == cfg.train_steps - 1):
            log_fn(step, losses)
        artifacts.history.append({"step": step, **losses})
    return artifacts


def holdout_loss(artifacts: ForwardModelArtifacts, store: TransitionStore, task: str, cfg: ReprConfig, max_samples: int = 512) -> float:
    """Prediction loss on the reserved leading slice of a task's store."""
    n = min(max(1, int(len(store) * cfg.holdout_fraction)), max_samples)
    batch = store.gather(np.arange(n))
    with nm.no_grad():
        loss = prediction_loss(
            artifacts.explainer, artifacts.encoder, artifacts.decoders[task],
            artifacts.bank.row(task), store.layout, batch, cfg,
        )
    return float(loss.data)


@dataclass
class AdaptResult:
    mix: MixWeights
    z: np.ndarray
    decoder: ParamSet
    history: list[dict] = field(default_factory=list)


def adapt_to_task(
    artifacts: ForwardModelArtifacts,
    store: TransitionStore,
    cfg: ReprConfig,
    seed: int = 0,
    fine_tune_decoder: bool = True,
) -> AdaptResult:
    """Learn an unseen task's representation as a convex mix of bank rows.

    The explainer and encoder stay frozen; only the mixing logits (and a
    fresh task decoder, when `fine_tune_decoder`) receive updates. Logits
    start at zero, i.e. at the uniform mixture, and are held there for a
    decoder warm-up: the logits gradient only reflects which source's
    generated layer genuinely predicts the data once the decoder is close
    to fitted, so the decoder trains ahead of (warm-up) and faster than
    (higher rate) the mixing weights.
    """
    if len(store) == 0:
        raise ValueError("empty buffer for adaptation")
    bank = artifacts.bank
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(21,)))
    init_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(22,)))
    logit_params = ParamSet()
    logit_params.add("logits", np.zeros(bank.n_source, dtype=np.float32))
    decoder = make_decoder(init_rng, store.layout.state_dim, store.layout.obs_dim)
    bank_t = Tensor(bank.vectors)
    entropy_sign = -1.0 if cfg.entropy_bonus else 1.0
    result = AdaptResult(MixWeights(np.zeros(bank.n_source, dtype=np.float32)), np.zeros(bank.dim, np.float32), decoder)

    for step in range(cfg.adapt_steps):
        logit_params.zero_grad()
        decoder.zero_grad()
        artifacts.explainer.zero_grad()
        artifacts.encoder.zero_grad()
        mu = nm.softmax(logit_params["logits"])
        assert abs(float(mu.data.sum()) - 1.0) <= 1e-6, "mix weights left the simplex"
        z = mu @ bank_t
        batch = store.sample(rng, cfg.batch_size)
        loss = prediction_loss(artifacts.explainer, artifacts.encoder, decoder, z, store.layout, batch, cfg)
        loss = loss + entropy_sign * cfg.entropy_coef * nm.entropy(mu)
        loss.backward()
        warmup = cfg.warmup_steps if fine_tune_decoder else 0
        if step >= warmup:
            optimizer_step(logit_params, cfg.logits_lr, "adaptive")
        else:
            logit_params.zero_grad()
        if fine_tune_decoder:
            optimizer_step(decoder, cfg.decoder_lr, "adaptive")
        if step % 100 == 0 or step == cfg.adapt_steps - 1:
            result.history.append({"step": step, "loss": float(loss.data), "mu": MixWeights(logit_params["logits"].data.copy()).weights.tolist()})

    mix = MixWeights(logit_params["logits"].data.copy())
    result.mix = mix
    result.z = compose_representation(mix, bank)
    return result

"""Population-invariant individual Q-network and monotonic mixing network.

Both networks consume entity-decomposed features, pool them through
attention, and condition on a task-representation vector, so one parameter
set evaluates every task in a family regardless of team sizes or action
counts. Interaction actions (attack/heal a specific entity) get their
Q-values from a weight-shared head applied per target entity.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .arena import N_CLASSES, N_FIXED_ACTIONS, TaskLayout
from .dims import (
    ATTN_EMBED_DIM,
    ENTITY_EMBED_DIM,
    HYPERNET_EMBED,
    MIXING_EMBED_DIM,
    TASK_REPR_DIM,
)
from .numerics import ParamSet, Tensor, uniform_init

ENV_DIM = 2
OWN_DIM = 3 + N_CLASSES + 4  # hp, x, y, class one-hot, agent-id bits
BLOCK_DIM = 5 + N_CLASSES
PART_DIM = 4 + N_CLASSES


def _expand(t: Tensor, shape: tuple) -> Tensor:
    """Broadcast a tensor up to `shape` (differentiable)."""
    return t + Tensor(np.zeros(shape, dtype=t.dtype))


def _add_linear(params: ParamSet, rng, name: str, n_in: int, n_out: int, bias: bool = True):
    params.add(f"{name}.w", uniform_init(rng, n_in, (n_in, n_out)))
    if bias:
        # key projections stay bias-free: a shared key offset cancels in softmax
        params.add(f"{name}.b", uniform_init(rng, n_in, (n_out,)))


def _lin(params: ParamSet, name: str, x) -> Tensor:
    return nm.linear(x, params[f"{name}.w"], params[f"{name}.b"])


def synth_self_block(own: np.ndarray) -> np.ndarray:
    """Build the observer's own entity block (zero offsets, own hp and class)."""
    out = np.zeros(own.shape[:-1] + (BLOCK_DIM,), dtype=np.float32)
    out[..., 0] = 1.0
    out[..., 4] = own[..., 0]
    out[..., 5:] = own[..., 3 : 3 + N_CLASSES]
    return out


class AgentNet:
    """Shared individual Q-network; independent of team size and action count."""

    def __init__(self, rng: np.random.Generator):
        p = ParamSet()
        _add_linear(p, rng, "query", ENV_DIM + OWN_DIM, ATTN_EMBED_DIM)
        _add_linear(p, rng, "key", BLOCK_DIM, ATTN_EMBED_DIM, bias=False)
        _add_linear(p, rng, "value", BLOCK_DIM, ENTITY_EMBED_DIM)
        _add_linear(p, rng, "own_embed", OWN_DIM, ENTITY_EMBED_DIM)
        trunk_in = 2 * ENTITY_EMBED_DIM + TASK_REPR_DIM
        _add_linear(p, rng, "trunk", trunk_in, ENTITY_EMBED_DIM)
        _add_linear(p, rng, "head_fixed", ENTITY_EMBED_DIM, N_FIXED_ACTIONS)
        _add_linear(p, rng, "target_embed", BLOCK_DIM, ENTITY_EMBED_DIM)
        _add_linear(p, rng, "interact", trunk_in, ENTITY_EMBED_DIM)
        _add_linear(p, rng, "head_interact", ENTITY_EMBED_DIM, 1)
        self.params = p

    # -- feature assembly (plain numpy: observations carry no gradient) ----------

    @staticmethod
    def split_rows(obs: np.ndarray, layout: TaskLayout):
        env, own, blocks, vis = layout.split_obs(obs)
        return (
            np.concatenate([env, own], axis=-1).astype(np.float32),
            own.astype(np.float32),
            blocks.astype(np.float32),
            vis.astype(np.float32),
        )

    @staticmethod
    def target_blocks(obs: np.ndarray, layout: TaskLayout, agent: int) -> np.ndarray:
        """Interaction-target blocks in slot order for one agent slot."""
        _, own, blocks, _ = layout.split_obs(obs)
        if not layout.is_healer(agent):
            return blocks[..., layout.n_allies - 1 :, :].astype(np.float32)
        cols = []
        for ally in range(layout.n_allies):
            if ally == agent:
                cols.append(synth_self_block(own)[..., None, :])
            else:
                cols.append(blocks[..., layout.block_index(agent, ally), :][..., None, :])
        return np.concatenate(cols, axis=-2).astype(np.float32)

    # -- forward -----------------------------------------------------------------

    def attended(self, env_own: np.ndarray, blocks: np.ndarray, vis: np.ndarray) -> Tensor:
        """Attention-pooled other-entity embedding; zero vector when nothing is visible."""
        p = self.params
        q = _lin(p, "query", Tensor(env_own))
        keys = nm.linear(Tensor(blocks), p["key.w"])
        values = _lin(p, "value", Tensor(blocks))
        any_vis = vis.any(axis=-1)
        safe_mask = np.where(any_vis[..., None], vis, 1.0)
        h = nm.attention(q, keys, values, mask=safe_mask)
        return h * Tensor(any_vis.astype(np.float32)[..., None])

    def q_values(
        self,
        obs: np.ndarray,
        layout: TaskLayout,
        agent: int,
        z: np.ndarray,
        avail: np.ndarray | None = None,
    ) -> Tensor:
        """Per-action values for one agent slot; rows are batch entries.

        Output length is ``6 + number of interaction targets`` for this agent's
        class. When `avail` is given, unavailable actions are pushed to the
        mask fill value so greedy selection can never pick them.
        """
        p = self.params
        env_own, own, blocks, vis = self.split_rows(obs, layout)
        tblocks = self.target_blocks(obs, layout, agent)
        h = self.attended(env_own, blocks, vis)
        e_own = _lin(p, "own_embed", Tensor(own)).relu()
        z_rows = np.broadcast_to(np.asarray(z, dtype=np.float32), own.shape[:-1] + (TASK_REPR_DIM,))
        trunk_in = nm.concat([h, e_own, Tensor(z_rows.copy())], axis=-1)
        trunk = _lin(p, "trunk", trunk_in).relu()
        q_fixed = _lin(p, "head_fixed", trunk)

        n_targets = tblocks.shape[-2]
        be = _lin(p, "target_embed", Tensor(tblocks)).relu()
        h_rep = _expand(h.reshape(h.shape[:-1] + (1, ENTITY_EMBED_DIM)), be.shape)
        z_rep = Tensor(np.broadcast_to(z_rows[..., None, :], be.shape[:-1] + (TASK_REPR_DIM,)).copy())
        inter = _lin(p, "interact", nm.concat([be, h_rep, z_rep], axis=-1)).relu()
        q_inter = _lin(p, "head_interact", inter).reshape(q_fixed.shape[:-1] + (n_targets,))
        q_all = nm.concat([q_fixed, q_inter], axis=-1)
        if avail is not None:
            fill = (1.0 - np.asarray(avail, dtype=np.float32)) * nm.MASK_FILL
            q_all = q_all + Tensor(fill)
        return q_all

    def q_values_np(self, obs: np.ndarray, layout: TaskLayout, agent: int, z: np.ndarray) -> np.ndarray:
        """Inference-only twin of :meth:`q_values` in raw numpy (no graph).

        Used in rollout hot loops; a unit test pins it to the differentiable
        path output element for element.
        """
        p = self.params

        def w(name):
            return p[f"{name}.w"].data

        def bvec(name):
            return p[f"{name}.b"].data

        env_own, own, blocks, vis = self.split_rows(obs, layout)
        tblocks = self.target_blocks(obs, layout, agent)
        q = env_own @ w("query") + bvec("query")
        keys = blocks @ w("key")
        logits = (keys * q[..., None, :]).sum(-1) * (1.0 / np.sqrt(ATTN_EMBED_DIM))
        logits = logits + (1.0 - vis) * nm.MASK_FILL
        any_vis = vis.any(axis=-1)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        weights = e / e.sum(axis=-1, keepdims=True)
        values = blocks @ w("value") + bvec("value")
        h = (weights[..., None] * values).sum(axis=-2) * any_vis[..., None]
        e_own = np.maximum(own @ w("own_embed") + bvec("own_embed"), 0.0)
        z_rows = np.broadcast_to(np.asarray(z, dtype=np.float32), own.shape[:-1] + (TASK_REPR_DIM,))
        trunk = np.maximum(
            np.concatenate([h, e_own, z_rows], axis=-1) @ w("trunk") + bvec("trunk"), 0.0
        )
        q_fixed = trunk @ w("head_fixed") + bvec("head_fixed")
        n_targets = tblocks.shape[-2]
        be = np.maximum(tblocks @ w("target_embed") + bvec("target_embed"), 0.0)
        h_rep = np.broadcast_to(h[..., None, :], be.shape)
        z_rep = np.broadcast_to(z_rows[..., None, :], be.shape[:-1] + (TASK_REPR_DIM,))
        inter_in = np.concatenate([be, h_rep, z_rep], axis=-1)
        inter = np.maximum(inter_in @ w("interact") + bvec("interact"), 0.0)
        q_inter = (inter @ w("head_interact") + bvec("head_interact"))[..., 0]
        return np.concatenate([q_fixed, q_inter.reshape(q_fixed.shape[:-1] + (n_targets,))], axis=-1)

    def interaction_q(self, entity_block: np.ndarray, h, z: np.ndarray) -> Tensor:
        """Scalar Q for the interaction action aimed at one entity block.

        The same function is applied to every entity, which is what makes the
        action space stretch with the population.
        """
        p = self.params
        h = nm.as_tensor(h)
        be = _lin(p, "target_embed", Tensor(np.asarray(entity_block, dtype=np.float32))).relu()
        zt = Tensor(np.asarray(z, dtype=np.float32))
        inter = _lin(p, "interact", nm.concat([be, h, zt], axis=-1)).relu()
        return _lin(p, "head_interact", inter).reshape(())


class Mixer:
    """Monotonic combiner of local Q-values into a global value.

    State parts go through self-attention and mean pooling; the pooled
    embedding plus the task representation feed hypernetworks whose outputs
    (absolute values) weight a two-layer combination of the local Q sum, so
    the result is non-decreasing in every local Q and indifferent to the
    ordering of state parts.
    """

    def __init__(self, rng: np.random.Generator):
        p = ParamSet()
        _add_linear(p, rng, "part_query", PART_DIM, ATTN_EMBED_DIM)
        _add_linear(p, rng, "part_key", PART_DIM, ATTN_EMBED_DIM, bias=False)
        _add_linear(p, rng, "part_value", PART_DIM, ENTITY_EMBED_DIM)
        cond = ENTITY_EMBED_DIM + TASK_REPR_DIM
        _add_linear(p, rng, "hyper_w1_a", cond, HYPERNET_EMBED)
        _add_linear(p, rng, "hyper_w1_b", HYPERNET_EMBED, MIXING_EMBED_DIM)
        _add_linear(p, rng, "hyper_b1", cond, MIXING_EMBED_DIM)
        _add_linear(p, rng, "hyper_w2_a", cond, HYPERNET_EMBED)
        _add_linear(p, rng, "hyper_w2_b", HYPERNET_EMBED, MIXING_EMBED_DIM)
        _add_linear(p, rng, "hyper_v_a", cond, MIXING_EMBED_DIM)
        _add_linear(p, rng, "hyper_v_b", MIXING_EMBED_DIM, 1)
        self.params = p

    def mix(self, q_locals, parts: np.ndarray, z: np.ndarray) -> Tensor:
        """Combine local Qs (..., n) with state parts (..., E, part_dim) into (...,)."""
        p = self.params
        q_locals = nm.as_tensor(q_locals)
        parts = np.asarray(parts, dtype=np.float32)
        tokens = Tensor(parts)
        att = nm.self_attention(
            tokens,
            p["part_query.w"],
            p["part_key.w"],
            p["part_value.w"],
            ATTN_EMBED_DIM,
            b_q=p["part_query.b"],
            b_v=p["part_value.b"],
        )
        h_state = att.mean(axis=-2)
        z_rows = np.broadcast_to(np.asarray(z, dtype=np.float32), h_state.shape[:-1] + (TASK_REPR_DIM,))
        cond = nm.concat([h_state, Tensor(z_rows.copy())], axis=-1)
        w1 = _lin(p, "hyper_w1_b", _lin(p, "hyper_w1_a", cond).relu()).abs()
        b1 = _lin(p, "hyper_b1", cond)
        w2 = _lin(p, "hyper_w2_b", _lin(p, "hyper_w2_a", cond).relu()).abs()
        v = _lin(p, "hyper_v_b", _lin(p, "hyper_v_a", cond).relu())
        total = q_locals.sum(axis=-1, keepdims=True)
        hidden = (total * w1 + b1).elu()
        return (hidden * w2).sum(axis=-1) + v.reshape(v.shape[:-1])


def epsilon_at(step: int, start: float = 1.0, end: float = 0.05, duration: int = 50_000) -> float:
    """Linear exploration schedule from `start` to `end` over `duration` steps."""
    if step >= duration:
        return end
    return start + (end - start) * (step / duration)


def select_actions(
    q_rows: list[np.ndarray],
    epsilon: float,
    rng: np.random.Generator,
    masks: list[np.ndarray],
) -> list[int]:
    """Per-agent epsilon-greedy choice over legal actions; ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    joint = []
    for q, m in zip(q_rows, masks):
        legal = np.flatnonzero(m)
        if legal.size == 0:
            raise ValueError("no legal action for an agent")
        if epsilon > 0 and rng.random() < epsilon:
            joint.append(int(rng.choice(legal)))
        else:
            masked = np.where(m, q, -np.inf)
            joint.append(int(np.argmax(masked)))
    return joint

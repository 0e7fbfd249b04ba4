"""Deterministic cooperative combat arena with entity-decomposed features.

A task pits a team of learning allies against scripted enemies on a square
continuous map. Units move, attack (healers heal), and share one reward
signal: hp removed from enemies, plus a bonus per kill and a larger bonus
for wiping the enemy team. Observations and states decompose per entity so
networks built on attention pooling stay independent of the population size.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

ID_LENGTH = 4
DEFAULT_SIGHT = 9.0
MAP_SCALE_REF = 16.0

NOOP, STOP, MOVE_N, MOVE_S, MOVE_E, MOVE_W = range(6)
N_FIXED_ACTIONS = 6
MOVE_DIRS = {
    MOVE_N: (0.0, 1.0),
    MOVE_S: (0.0, -1.0),
    MOVE_E: (1.0, 0.0),
    MOVE_W: (-1.0, 0.0),
}

KILL_BONUS = 10.0
WIN_BONUS = 200.0


@dataclass(frozen=True)
class UnitClass:
    name: str
    max_hp: float
    damage: float
    attack_range: float
    move_speed: float
    heal_amount: float = 0.0
    sight_range: float = DEFAULT_SIGHT

    def __post_init__(self):
        if self.max_hp <= 0:
            raise ValueError("max_hp must be positive")
        if self.damage < 0 or self.heal_amount < 0:
            raise ValueError("damage and heal_amount must be nonnegative")
        if self.damage > 0 and self.heal_amount > 0:
            raise ValueError("a class may deal damage or heal, not both")
        if self.sight_range < self.attack_range:
            raise ValueError("sight_range must cover attack_range")

    @property
    def is_healer(self) -> bool:
        return self.heal_amount > 0


# Registry order fixes the class one-hot layout for every task. Kills resolve
# in two hits for soldiers so the side that concentrates fire and shoots first
# keeps a lasting tempo edge over the reactive scripted opponent.
UNIT_CLASSES: tuple[UnitClass, ...] = (
    UnitClass("soldier", max_hp=40.0, damage=20.0, attack_range=5.0, move_speed=1.0),
    UnitClass("tank", max_hp=110.0, damage=24.0, attack_range=5.0, move_speed=0.8),
    UnitClass("healer", max_hp=60.0, damage=0.0, attack_range=5.0, move_speed=1.0, heal_amount=15.0),
)
CLASS_LETTERS = {"s": 0, "t": 1, "h": 2}
N_CLASSES = len(UNIT_CLASSES)

_COMP_RE = re.compile(r"(\d+)([a-z])")


def parse_composition(text: str) -> tuple[tuple[int, int], ...]:
    """Parse a composition string like ``"1h2t7s"`` into (class index, count) pairs."""
    matches = _COMP_RE.findall(text)
    if not matches or "".join(f"{n}{c}" for n, c in matches) != text:
        raise ValueError(f"cannot parse composition {text!r}")
    comp = []
    for count, letter in matches:
        if letter not in CLASS_LETTERS:
            raise ValueError(f"unknown unit letter {letter!r} in {text!r}")
        comp.append((CLASS_LETTERS[letter], int(count)))
    return tuple(comp)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    allies: tuple[tuple[int, int], ...]
    enemies: tuple[tuple[int, int], ...]
    half_width: float = 8.0
    episode_limit: int = 40

    def __post_init__(self):
        if not self.allies or sum(c for _, c in self.allies) < 1:
            raise ValueError("need at least one ally")
        if not self.enemies or sum(c for _, c in self.enemies) < 1:
            raise ValueError("need at least one enemy")
        if self.episode_limit <= 0:
            raise ValueError("episode limit must be positive")

    @property
    def n_allies(self) -> int:
        return sum(c for _, c in self.allies)

    @property
    def n_enemies(self) -> int:
        return sum(c for _, c in self.enemies)

    @staticmethod
    def from_string(name: str, half_width: float = 8.0, episode_limit: int = 40) -> "TaskSpec":
        """Build a spec from a task name such as ``"3s_vs_4s"`` or ``"1h2t7s_vs_1h2t8s"``."""
        if "_vs_" not in name:
            raise ValueError(f"task name {name!r} must look like '<allies>_vs_<enemies>'")
        ally_part, enemy_part = name.split("_vs_", 1)
        return TaskSpec(
            name=name,
            allies=parse_composition(ally_part),
            enemies=parse_composition(enemy_part),
            half_width=half_width,
            episode_limit=episode_limit,
        )


def _expand_classes(comp: tuple[tuple[int, int], ...]) -> list[int]:
    out: list[int] = []
    for cls_idx, count in comp:
        out.extend([cls_idx] * count)
    return out


@dataclass(frozen=True)
class TaskLayout:
    """Feature geometry derived purely from a TaskSpec.

    Two tasks with equal compositions share an identical layout, and every
    per-entity block has the same width regardless of population, which is
    what lets one parameter set evaluate the whole task family.
    """

    n_allies: int
    n_enemies: int
    class_of_entity: tuple[int, ...]
    episode_limit: int
    half_width: float

    env_dim: int = 2
    own_dim: int = 3 + N_CLASSES + ID_LENGTH
    block_dim: int = 5 + N_CLASSES
    part_dim: int = 4 + N_CLASSES

    @property
    def n_entities(self) -> int:
        return self.n_allies + self.n_enemies

    @property
    def obs_dim(self) -> int:
        return self.env_dim + self.own_dim + (self.n_entities - 1) * self.block_dim

    @property
    def state_dim(self) -> int:
        return self.n_entities * self.part_dim + 1

    def is_healer(self, agent: int) -> bool:
        return UNIT_CLASSES[self.class_of_entity[agent]].is_healer

    def interaction_entities(self, agent: int) -> list[int]:
        """Entity indices targeted by the agent's interaction actions, in slot order."""
        if self.is_healer(agent):
            return list(range(self.n_allies))
        return list(range(self.n_allies, self.n_entities))

    def action_dim(self, agent: int) -> int:
        return N_FIXED_ACTIONS + len(self.interaction_entities(agent))

    @property
    def max_action_dim(self) -> int:
        return max(self.action_dim(i) for i in range(self.n_allies))

    def block_index(self, observer: int, entity: int) -> int:
        """Position of `entity`'s block inside `observer`'s other-entity stack."""
        if entity == observer:
            raise ValueError("an entity has no block in its own observation")
        return entity if entity < observer else entity - 1

    def split_obs(self, obs: np.ndarray):
        """Split flat observation(s) into (env, own, blocks, visibility mask)."""
        env = obs[..., : self.env_dim]
        own = obs[..., self.env_dim : self.env_dim + self.own_dim]
        blocks = obs[..., self.env_dim + self.own_dim :].reshape(
            obs.shape[:-1] + (self.n_entities - 1, self.block_dim)
        )
        return env, own, blocks, blocks[..., 0]


@dataclass
class WorldState:
    pos: np.ndarray  # (E, 2)
    hp: np.ndarray  # (E,)
    alive: np.ndarray  # (E,) bool
    cooldown: np.ndarray  # (E,) int
    t: int

    def copy(self) -> "WorldState":
        return WorldState(self.pos.copy(), self.hp.copy(), self.alive.copy(), self.cooldown.copy(), self.t)


@dataclass
class StepOutcome:
    reward: float
    terminated: bool
    win: bool
    state: WorldState
    obs: np.ndarray  # (n_allies, obs_dim) float32
    avail: list[np.ndarray]  # per-agent boolean masks
    info: dict = field(default_factory=dict)


class Arena:
    """Single-writer simulation of one task; step/reset mutate, queries do not."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        classes = _expand_classes(spec.allies) + _expand_classes(spec.enemies)
        self.layout = TaskLayout(
            n_allies=spec.n_allies,
            n_enemies=spec.n_enemies,
            class_of_entity=tuple(classes),
            episode_limit=spec.episode_limit,
            half_width=spec.half_width,
        )
        lay = self.layout
        self.max_hp = np.array([UNIT_CLASSES[c].max_hp for c in classes])
        self.damage = np.array([UNIT_CLASSES[c].damage for c in classes])
        self.heal = np.array([UNIT_CLASSES[c].heal_amount for c in classes])
        self.attack_range = np.array([UNIT_CLASSES[c].attack_range for c in classes])
        self.speed = np.array([UNIT_CLASSES[c].move_speed for c in classes])
        self.sight = np.array([UNIT_CLASSES[c].sight_range for c in classes])
        self.class_onehot = np.zeros((lay.n_entities, N_CLASSES), dtype=np.float32)
        self.class_onehot[np.arange(lay.n_entities), classes] = 1.0
        # block position of every entity in every ally's observation
        self._others = np.array(
            [[e for e in range(lay.n_entities) if e != i] for i in range(lay.n_allies)]
        )
        self._id_bits = np.array(
            [[(i >> (ID_LENGTH - 1 - b)) & 1 for b in range(ID_LENGTH)] for i in range(lay.n_allies)],
            dtype=np.float32,
        )
        w = spec.half_width
        # deep spawn bands keep the teams apart at reset, so early steps play out
        # under fog of war unless the map is small
        self.ally_zone = (-0.85 * w, -0.3 * w, -0.5 * w, 0.5 * w)  # x_lo, x_hi, y_lo, y_hi
        self.enemy_zone = (0.3 * w, 0.85 * w, -0.5 * w, 0.5 * w)
        self.state: WorldState | None = None
        self._avail: list[np.ndarray] | None = None
        self._targets = [np.array(lay.interaction_entities(i)) for i in range(lay.n_allies)]
        self._act_dims = [lay.action_dim(i) for i in range(lay.n_allies)]

    # -- lifecycle --------------------------------------------------------------

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        lay = self.layout
        pos = np.empty((lay.n_entities, 2))
        for zone, lo, hi in ((self.ally_zone, 0, lay.n_allies), (self.enemy_zone, lay.n_allies, lay.n_entities)):
            x_lo, x_hi, y_lo, y_hi = zone
            pos[lo:hi, 0] = rng.uniform(x_lo, x_hi, size=hi - lo)
            pos[lo:hi, 1] = rng.uniform(y_lo, y_hi, size=hi - lo)
        self.state = WorldState(
            pos=pos,
            hp=self.max_hp.copy(),
            alive=np.ones(lay.n_entities, dtype=bool),
            cooldown=np.zeros(lay.n_entities, dtype=np.int64),
            t=0,
        )
        self._avail = self.all_avail(self.state)
        return self.state, self.all_obs(self.state), self._avail

    def step(self, joint: list[int] | np.ndarray) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        lay = self.layout
        joint = list(joint)
        if len(joint) != lay.n_allies:
            raise ValueError(f"expected {lay.n_allies} actions, got {len(joint)}")
        avail = self._avail if self._avail is not None else self.all_avail(self.state)
        for i, a in enumerate(joint):
            if a < 0 or a >= lay.action_dim(i) or not avail[i][a]:
                raise ValueError(f"illegal action {a} for agent {i}")

        st = self.state
        reward = 0.0
        # phase 1: ally moves
        for i, a in enumerate(joint):
            if a in MOVE_DIRS and st.alive[i]:
                dx, dy = MOVE_DIRS[a]
                st.pos[i, 0] += dx * self.speed[i]
                st.pos[i, 1] += dy * self.speed[i]
        # phase 2: ally interactions, in agent-index order, damage capped at remaining hp
        for i, a in enumerate(joint):
            if a < N_FIXED_ACTIONS or not st.alive[i]:
                continue
            target = lay.interaction_entities(i)[a - N_FIXED_ACTIONS]
            if lay.is_healer(i):
                if st.alive[target]:
                    st.hp[target] = min(self.max_hp[target], st.hp[target] + self.heal[i])
            else:
                dealt = min(self.damage[i], st.hp[target])
                st.hp[target] -= dealt
                reward += dealt
                if st.alive[target] and st.hp[target] <= 0:
                    st.alive[target] = False
                    st.hp[target] = 0.0
                    reward += KILL_BONUS
            st.cooldown[i] = 2  # ticks to 1 at end of step: unavailable next step only
        # phase 3: scripted enemies act on the post-ally state
        for e, action in enumerate(self.scripted_opponent(st)):
            ent = lay.n_allies + e
            kind = action[0]
            if kind == "attack":
                target = action[1]
                st.hp[target] -= min(self.damage[ent], st.hp[target])
                if st.alive[target] and st.hp[target] <= 0:
                    st.alive[target] = False
                    st.hp[target] = 0.0
                st.cooldown[ent] = 2
            elif kind == "heal":
                target = action[1]
                if st.alive[target]:
                    st.hp[target] = min(self.max_hp[target], st.hp[target] + self.heal[ent])
                st.cooldown[ent] = 2
            elif kind == "move":
                w = self.spec.half_width
                st.pos[ent, 0] = np.clip(st.pos[ent, 0] + action[1], -w, w)
                st.pos[ent, 1] = np.clip(st.pos[ent, 1] + action[2], -w, w)
        st.cooldown = np.maximum(st.cooldown - 1, 0)
        st.t += 1

        win = not st.alive[lay.n_allies :].any()
        wiped = not st.alive[: lay.n_allies].any()
        terminated = win or wiped or st.t >= self.spec.episode_limit
        if win:
            reward += WIN_BONUS
        self._avail = self.all_avail(st)
        return StepOutcome(
            reward=float(reward),
            terminated=bool(terminated),
            win=bool(win),
            state=st,
            obs=self.all_obs(st),
            avail=self._avail,
            info={"ally_wipe": bool(wiped), "timeout": bool(st.t >= self.spec.episode_limit and not win and not wiped)},
        )

    # -- scripted opponent --------------------------------------------------------

    def scripted_opponent(self, state: WorldState) -> list[tuple]:
        """Per-enemy intent: attack the nearest visible living ally in range, else
        close in on the nearest visible ally, else stop.

        Ties break toward the lowest ally index; output is a pure function of
        the state. Enemy healers substitute their interaction for the attack:
        they heal the most-damaged living teammate in range (tie toward the
        lowest entity index) and fall back to the same movement rule.
        """
        lay = self.layout
        intents: list[tuple] = []
        ally_pos = state.pos[: lay.n_allies]
        ally_alive = state.alive[: lay.n_allies]
        for e in range(lay.n_enemies):
            ent = lay.n_allies + e
            if not state.alive[ent]:
                intents.append(("stop",))
                continue
            delta = ally_pos - state.pos[ent]
            dist = np.hypot(delta[:, 0], delta[:, 1])
            visible = ally_alive & (dist <= self.sight[ent])
            interact = None
            if state.cooldown[ent] == 0:
                if UNIT_CLASSES[self.layout.class_of_entity[ent]].is_healer:
                    interact = self._healer_target(state, ent)
                else:
                    masked = np.where(visible, dist, np.inf)
                    nearest = int(np.argmin(masked))
                    if visible.any() and masked[nearest] <= self.attack_range[ent]:
                        interact = ("attack", nearest)
            if interact is not None:
                intents.append(interact)
            elif visible.any():
                masked = np.where(visible, dist, np.inf)
                nearest = int(np.argmin(masked))
                d = masked[nearest]
                if d == 0.0:
                    intents.append(("stop",))
                else:
                    step_len = min(self.speed[ent], d)
                    intents.append(("move", delta[nearest, 0] / d * step_len, delta[nearest, 1] / d * step_len))
            else:
                intents.append(("stop",))
        return intents

    def _healer_target(self, state: WorldState, ent: int) -> tuple | None:
        """Most-damaged living teammate (absolute entity index) in heal range, if any."""
        lay = self.layout
        best = None
        best_frac = 1.0
        for other in range(lay.n_allies, lay.n_entities):
            if other == ent or not state.alive[other]:
                continue
            frac = state.hp[other] / self.max_hp[other]
            if frac >= 1.0:
                continue
            d = float(np.hypot(*(state.pos[other] - state.pos[ent])))
            if d <= self.attack_range[ent] and frac < best_frac:
                best, best_frac = other, frac
        return ("heal", best) if best is not None else None

    # -- observations ---------------------------------------------------------------

    def all_obs(self, state: WorldState) -> np.ndarray:
        """Flat observations of every ally, shape (n_allies, obs_dim) float32."""
        lay = self.layout
        n, e_all = lay.n_allies, lay.n_entities
        w = self.spec.half_width
        obs = np.zeros((n, lay.obs_dim), dtype=np.float32)
        alive_agents = state.alive[:n]
        if not alive_agents.any():
            return obs
        env = np.array([state.t / self.spec.episode_limit, w / MAP_SCALE_REF], dtype=np.float32)
        delta = state.pos[None, :, :] - state.pos[:n, None, :]  # (n, E, 2)
        dist = np.hypot(delta[..., 0], delta[..., 1])
        others = self._others
        rows = np.arange(n)[:, None]
        o_delta = delta[rows, others]  # (n, E-1, 2)
        o_dist = dist[rows, others]
        sight = self.sight[:n, None]
        vis = state.alive[others] & (o_dist <= sight) & alive_agents[:, None]
        blocks = np.zeros((n, e_all - 1, lay.block_dim), dtype=np.float32)
        blocks[..., 0] = vis
        blocks[..., 1] = np.where(vis, o_delta[..., 0] / sight, 0.0)
        blocks[..., 2] = np.where(vis, o_delta[..., 1] / sight, 0.0)
        blocks[..., 3] = np.where(vis, o_dist / sight, 0.0)
        blocks[..., 4] = np.where(vis, (state.hp[others] / self.max_hp[others]), 0.0)
        blocks[..., 5:] = np.where(vis[..., None], self.class_onehot[others], 0.0)
        own = np.zeros((n, lay.own_dim), dtype=np.float32)
        own[:, 0] = state.hp[:n] / self.max_hp[:n]
        own[:, 1] = state.pos[:n, 0] / w
        own[:, 2] = state.pos[:n, 1] / w
        own[:, 3 : 3 + N_CLASSES] = self.class_onehot[:n]
        own[:, 3 + N_CLASSES :] = self._id_bits
        obs[:, : lay.env_dim] = env
        obs[:, lay.env_dim : lay.env_dim + lay.own_dim] = own
        obs[:, lay.env_dim + lay.own_dim :] = blocks.reshape(n, -1)
        obs[~alive_agents] = 0.0  # dead observers see nothing
        return obs

    def observe(self, state: WorldState, agent: int) -> np.ndarray:
        if agent < 0 or agent >= self.layout.n_allies:
            raise ValueError(f"invalid agent index {agent}")
        return self.all_obs(state)[agent]

    def all_avail(self, state: WorldState) -> list[np.ndarray]:
        """Per-agent availability masks over that agent's action space."""
        lay = self.layout
        n = lay.n_allies
        w = self.spec.half_width
        delta = state.pos[None, :, :] - state.pos[:n, None, :]
        dist = np.hypot(delta[..., 0], delta[..., 1])
        moved = state.pos[:n, None, :] + np.array(
            [MOVE_DIRS[a] for a in (MOVE_N, MOVE_S, MOVE_E, MOVE_W)]
        )[None, :, :] * self.speed[:n, None, None]
        move_ok = np.all((moved >= -w) & (moved <= w), axis=-1)  # (n, 4)
        masks = []
        for i in range(n):
            m = np.zeros(self._act_dims[i], dtype=bool)
            if not state.alive[i]:
                m[NOOP] = True
                masks.append(m)
                continue
            m[STOP] = True
            m[MOVE_N : MOVE_W + 1] = move_ok[i]
            if state.cooldown[i] == 0:
                targets = self._targets[i]
                ok = state.alive[targets] & (dist[i, targets] <= self.attack_range[i]) & (targets != i)
                m[N_FIXED_ACTIONS:] = ok
            masks.append(m)
        return masks

    def avail_padded(self, state: WorldState) -> np.ndarray:
        """Masks stacked into (n_allies, max_action_dim); padding slots are False."""
        lay = self.layout
        masks = self._avail if (state is self.state and self._avail is not None) else self.all_avail(state)
        out = np.zeros((lay.n_allies, lay.max_action_dim), dtype=bool)
        for i, m in enumerate(masks):
            out[i, : m.size] = m
        return out

    # -- state features -----------------------------------------------------------

    def state_parts(self, state: WorldState) -> np.ndarray:
        """Per-entity state parts, shape (n_entities, part_dim), allies first."""
        lay = self.layout
        w = self.spec.half_width
        parts = np.zeros((lay.n_entities, lay.part_dim), dtype=np.float32)
        parts[:, 0] = state.hp / self.max_hp
        parts[:, 1] = state.pos[:, 0] / w
        parts[:, 2] = state.pos[:, 1] / w
        parts[:, 3 : 3 + N_CLASSES] = self.class_onehot
        parts[:, 3 + N_CLASSES] = state.alive
        return parts

    def flat_state(self, state: WorldState) -> np.ndarray:
        """Concatenated state parts plus the episode-time fraction."""
        t_frac = np.array([state.t / self.spec.episode_limit], dtype=np.float32)
        return np.concatenate([self.state_parts(state).reshape(-1), t_frac])


def build_task(spec: TaskSpec) -> Arena:
    return Arena(spec)

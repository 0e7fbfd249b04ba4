import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mattar.arena import (
    KILL_BONUS,
    MOVE_E,
    N_FIXED_ACTIONS,
    NOOP,
    STOP,
    WIN_BONUS,
    Arena,
    TaskSpec,
    build_task,
    parse_composition,
)


def make(name, **kw):
    return build_task(TaskSpec.from_string(name, **kw))


def stack_positions(arena, positions):
    """Place entities at given coordinates and refresh the cached masks."""
    st_ = arena.state
    for idx, xy in positions.items():
        st_.pos[idx] = xy
    arena._avail = arena.all_avail(st_)
    return st_


# -- construction -------------------------------------------------------------------


def test_composition_parsing():
    assert parse_composition("3s") == ((0, 3),)
    assert parse_composition("1h2t7s") == ((2, 1), (1, 2), (0, 7))
    with pytest.raises(ValueError):
        parse_composition("3x")
    with pytest.raises(ValueError):
        parse_composition("s3")


def test_action_space_counts_soldiers():
    ar = make("3s_vs_3s")
    assert ar.layout.n_allies == 3
    assert ar.layout.action_dim(0) == N_FIXED_ACTIONS + 3


def test_mmm_analog_composition():
    ar = make("1h2t7s_vs_1h2t7s")
    lay = ar.layout
    assert lay.n_allies == 10 and lay.n_enemies == 10
    assert lay.is_healer(0)
    assert lay.action_dim(0) == N_FIXED_ACTIONS + 10  # healer targets allies
    assert lay.action_dim(1) == N_FIXED_ACTIONS + 10  # attacker targets enemies


def test_observation_length_arithmetic():
    ar = make("4s_vs_5s")
    lay = ar.layout
    assert lay.n_entities - 1 == 8
    st_, obs, _ = ar.reset(seed=0)
    assert obs.shape == (4, lay.env_dim + lay.own_dim + 8 * lay.block_dim)


def test_layout_is_pure_function_of_spec():
    a = make("4s_vs_5s", episode_limit=33)
    b = make("4s_vs_5s", episode_limit=33)
    assert a.layout == b.layout


def test_empty_composition_rejected():
    with pytest.raises(ValueError):
        TaskSpec(name="bad", allies=((0, 0),), enemies=((0, 1),))


# -- reset -----------------------------------------------------------------------------


def test_reset_full_health_and_time_zero():
    ar = make("3s_vs_3s")
    st_, obs, avail = ar.reset(seed=11)
    assert st_.t == 0
    assert np.all(st_.hp == ar.max_hp)
    env, own, blocks, _ = ar.layout.split_obs(obs)
    assert np.all(own[:, 0] == 1.0)


def test_reset_deterministic_per_seed():
    a, b = make("5s_vs_6s"), make("5s_vs_6s")
    sa, oa, _ = a.reset(seed=123)
    sb, ob, _ = b.reset(seed=123)
    assert np.array_equal(sa.pos, sb.pos) and np.array_equal(oa, ob)
    sc, oc, _ = b.reset(seed=124)
    assert not np.array_equal(sa.pos, sc.pos)


def test_spawn_zones_hold_for_100_seeds():
    ar = make("4s_vs_4s")
    x_lo, x_hi, y_lo, y_hi = ar.ally_zone
    ex_lo, ex_hi, ey_lo, ey_hi = ar.enemy_zone
    n = ar.layout.n_allies
    for seed in range(100):
        st_, _, _ = ar.reset(seed=seed)
        allies, enemies = st_.pos[:n], st_.pos[n:]
        assert np.all((allies[:, 0] >= x_lo) & (allies[:, 0] <= x_hi))
        assert np.all((allies[:, 1] >= y_lo) & (allies[:, 1] <= y_hi))
        assert np.all((enemies[:, 0] >= ex_lo) & (enemies[:, 0] <= ex_hi))
        assert np.all((enemies[:, 1] >= ey_lo) & (enemies[:, 1] <= ey_hi))


# -- stepping ----------------------------------------------------------------------------


def test_capped_damage_and_kill_bonus():
    ar = make("3s_vs_3s")
    ar.reset(seed=1)
    st_ = stack_positions(ar, {i: (0.0, 0.0) for i in range(6)})
    st_.hp[3] = 5.0
    out = ar.step([N_FIXED_ACTIONS + 0, STOP, STOP])
    # 5 hp removed (capped) + kill bonus; no other ally attacked
    assert out.reward == 5.0 + KILL_BONUS
    assert not out.state.alive[3]
    assert out.state.hp[3] == 0.0


def test_win_bonus_and_flags():
    ar = make("1s_vs_1s")
    ar.reset(seed=2)
    st_ = stack_positions(ar, {0: (0.0, 0.0), 1: (1.0, 0.0)})
    st_.hp[1] = 3.0
    out = ar.step([N_FIXED_ACTIONS + 0])
    assert out.win and out.terminated
    assert out.reward == 3.0 + KILL_BONUS + WIN_BONUS


def test_idle_out_of_sight_is_uneventful():
    ar = make("1s_vs_1s", half_width=14.0)
    ar.reset(seed=3)
    stack_positions(ar, {0: (-12.0, 0.0), 1: (12.0, 0.0)})
    out = ar.step([STOP])
    assert out.reward == 0.0
    assert not out.terminated
    assert out.state.t == 1
    assert np.array_equal(out.state.pos, np.array([[-12.0, 0.0], [12.0, 0.0]]))


def test_illegal_action_names_agent_and_action():
    ar = make("3s_vs_3s")
    ar.reset(seed=4)
    stack_positions(ar, {i: ((-6.0 + i, 0.0) if i < 3 else (6.0, 0.0)) for i in range(6)})
    with pytest.raises(ValueError, match=r"illegal action 6 for agent 1"):
        ar.step([STOP, N_FIXED_ACTIONS + 0, STOP])  # enemy far out of range


def test_dead_agents_must_noop():
    ar = make("2s_vs_2s")
    ar.reset(seed=5)
    ar.state.alive[0] = False
    ar.state.hp[0] = 0.0
    ar._avail = ar.all_avail(ar.state)
    assert ar._avail[0][NOOP] and ar._avail[0].sum() == 1
    with pytest.raises(ValueError, match="agent 0"):
        ar.step([STOP, STOP])
    out = ar.step([NOOP, STOP])
    assert out.state.t == 1


def test_attack_cooldown_blocks_next_step_only():
    ar = make("1s_vs_1s")
    ar.reset(seed=6)
    stack_positions(ar, {0: (0.0, 0.0), 1: (2.0, 0.0)})
    out = ar.step([N_FIXED_ACTIONS + 0])
    assert not out.avail[0][N_FIXED_ACTIONS]  # on cooldown
    out = ar.step([STOP])
    assert out.avail[0][N_FIXED_ACTIONS]  # available again


# -- observation ---------------------------------------------------------------------------


def test_observe_relative_normalization():
    ar = make("3s_vs_3s")
    st_, _, _ = ar.reset(seed=7)
    st_.pos[0] = (0.0, 0.0)
    st_.pos[3] = (3.0, -4.5)
    obs = ar.observe(st_, 0)
    _, _, blocks, mask = ar.layout.split_obs(obs)
    b = blocks[ar.layout.block_index(0, 3)]
    assert b[0] == 1.0
    assert np.allclose(b[1:4], [3 / 9, -4.5 / 9, np.hypot(3, 4.5) / 9], atol=1e-6)
    assert np.allclose(b[1:4], [0.3333, -0.5, 0.6009], atol=5e-5)


def test_observe_out_of_sight_zeroed():
    ar = make("3s_vs_3s", half_width=14.0)
    st_, _, _ = ar.reset(seed=8)
    st_.pos[0] = (0.0, 0.0)
    st_.pos[4] = (10.0, 0.0)
    obs = ar.observe(st_, 0)
    _, _, blocks, mask = ar.layout.split_obs(obs)
    idx = ar.layout.block_index(0, 4)
    assert np.all(blocks[idx] == 0.0) and mask[idx] == 0.0


def test_dead_observer_sees_nothing_and_can_only_noop():
    ar = make("3s_vs_3s")
    st_, _, _ = ar.reset(seed=9)
    st_.alive[0] = False
    st_.hp[0] = 0.0
    obs = ar.observe(st_, 0)
    assert np.all(obs == 0.0)
    masks = ar.all_avail(st_)
    assert masks[0][NOOP] and masks[0].sum() == 1


def test_features_bounded():
    ar = make("1h2t7s_vs_1h2t8s")
    rng = np.random.default_rng(0)
    st_, obs, avail = ar.reset(seed=10)
    done = False
    while not done:
        joint = [int(rng.choice(np.flatnonzero(m))) for m in avail]
        out = ar.step(joint)
        assert np.all(np.abs(out.obs) <= 1.0 + 1e-6)
        obs, avail, done = out.obs, out.avail, out.terminated


# -- state features ---------------------------------------------------------------------------


def test_state_parts_reconstruct_flat_state():
    ar = make("2s_vs_3s")
    st_, _, _ = ar.reset(seed=11)
    parts = ar.state_parts(st_)
    assert parts.shape == (5, ar.layout.part_dim)
    flat = ar.flat_state(st_)
    recon = np.concatenate([parts.reshape(-1), [st_.t / ar.spec.episode_limit]]).astype(np.float32)
    assert np.array_equal(flat, recon)
    assert np.all(parts[:, 0] == 1.0)


# -- scripted opponent ---------------------------------------------------------------------------


def test_scripted_stops_without_visible_target():
    ar = make("1s_vs_1s", half_width=14.0)
    st_, _, _ = ar.reset(seed=12)
    stack_positions(ar, {0: (-12.0, 0.0), 1: (12.0, 0.0)})
    assert ar.scripted_opponent(st_) == [("stop",)]


def test_scripted_attacks_nearest_in_range():
    ar = make("2s_vs_1s")
    st_, _, _ = ar.reset(seed=13)
    stack_positions(ar, {0: (-2.0, 0.0), 1: (-5.0, 0.0), 2: (0.0, 0.0)})
    assert ar.scripted_opponent(st_) == [("attack", 0)]


def test_scripted_tie_breaks_to_lowest_ally_index():
    ar = make("2s_vs_1s")
    st_, _, _ = ar.reset(seed=14)
    stack_positions(ar, {0: (0.0, 2.0), 1: (0.0, -2.0), 2: (0.0, 0.0)})
    assert ar.scripted_opponent(st_) == [("attack", 0)]


def test_scripted_moves_toward_visible_ally():
    ar = make("1s_vs_1s")
    st_, _, _ = ar.reset(seed=15)
    stack_positions(ar, {0: (-4.0, 0.0), 1: (4.0, 0.0)})
    (intent,) = ar.scripted_opponent(st_)
    assert intent[0] == "move"
    assert intent[1] < 0  # westward, toward the ally


def test_scripted_deterministic():
    ar = make("3s_vs_4s")
    st_, _, _ = ar.reset(seed=16)
    assert ar.scripted_opponent(st_) == ar.scripted_opponent(st_)


def test_enemy_healer_heals_most_damaged_teammate():
    ar = make("1s_vs_1h1t")
    st_, _, _ = ar.reset(seed=17)
    stack_positions(ar, {0: (-8.0, 0.0), 1: (5.0, 0.0), 2: (6.0, 0.0)})
    st_.hp[2] = 40.0
    intents = ar.scripted_opponent(st_)
    assert intents[0] == ("heal", 2)


# -- invariants -------------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_random_rollout_invariants(seed):
    ar = make("3s_vs_4s")
    rng = np.random.default_rng(seed)
    st_, obs, avail = ar.reset(seed=seed)
    reward_cap = ar.max_hp[ar.layout.n_allies:].sum() + KILL_BONUS * ar.layout.n_enemies + WIN_BONUS
    steps = 0
    done = False
    while not done:
        joint = [int(rng.choice(np.flatnonzero(m))) for m in avail]
        out = ar.step(joint)
        steps += 1
        assert np.all(out.state.hp >= 0.0)
        assert np.all(out.state.hp <= ar.max_hp)
        assert np.all(out.state.alive == (out.state.hp > 0))
        assert 0.0 <= out.reward <= reward_cap
        avail, done = out.avail, out.terminated
    assert steps <= ar.spec.episode_limit


def test_replay_reproduces_bit_identical_trajectory():
    ar1, ar2 = make("3s_vs_3s"), make("3s_vs_3s")
    rng = np.random.default_rng(77)
    _, _, avail = ar1.reset(seed=77)
    actions, rewards, states = [], [], []
    done = False
    while not done:
        joint = [int(rng.choice(np.flatnonzero(m))) for m in avail]
        out = ar1.step(joint)
        actions.append(joint)
        rewards.append(out.reward)
        states.append(ar1.flat_state(out.state))
        avail, done = out.avail, out.terminated
    ar2.reset(seed=77)
    for t, joint in enumerate(actions):
        out = ar2.step(joint)
        assert out.reward == rewards[t]
        assert np.array_equal(ar2.flat_state(out.state), states[t])


def test_healer_slot_semantics():
    ar = make("1h1s_vs_2s")
    st_, _, _ = ar.reset(seed=20)
    # healer is agent 0; its interaction slots index allies; own slot unavailable
    stack_positions(ar, {0: (0.0, 0.0), 1: (1.0, 0.0), 2: (8.0, 8.0), 3: (-8.0, -8.0)})
    masks = ar.all_avail(st_)
    lay = ar.layout
    assert lay.is_healer(0)
    assert lay.action_dim(0) == N_FIXED_ACTIONS + 2  # heal slots = ally count
    assert not masks[0][N_FIXED_ACTIONS + 0]  # own slot stays unavailable
    assert masks[0][N_FIXED_ACTIONS + 1]  # teammate in range
    st_.hp[1] = 10.0
    ar._avail = ar.all_avail(st_)
    out = ar.step([N_FIXED_ACTIONS + 1, STOP])
    healed = out.state.hp[1]
    assert healed == 10.0 + ar.heal[0]
    # healing grants no reward
    assert out.reward == 0.0


def test_heal_capped_at_max_hp():
    ar = make("1h1s_vs_2s")
    st_, _, _ = ar.reset(seed=21)
    stack_positions(ar, {0: (0.0, 0.0), 1: (1.0, 0.0), 2: (8.0, 8.0), 3: (-8.0, -8.0)})
    st_.hp[1] = ar.max_hp[1] - 1.0
    ar._avail = ar.all_avail(st_)
    out = ar.step([N_FIXED_ACTIONS + 1, STOP])
    assert out.state.hp[1] == ar.max_hp[1]

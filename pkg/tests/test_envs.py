import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_ope.envs import (Dataset, DatasetError, MDPError, TabularMDP, TabularPolicy, augment_mdp_with_time,
                             augment_next_actions, collect_transitions, derive_reward, exact_value,
                             finite_horizon_value, iterate_value, make_synthetic_env, mixture, mixture_schedule,
                             random_mdp, random_softmax_policy, time_augment)
from kernel_ope.kernels import KernelSpec, RkhsFunction, rkhs_norm
from oracles import mc_rollout_value


def chain_mdp(gamma=0.5):
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    return TabularMDP(P, np.array([[0.0], [1.0]]), gamma, np.array([1.0, 0.0]))


def test_exact_value_one_state():
    mdp = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), 0.95, np.ones(1))
    assert exact_value(mdp, TabularPolicy(np.zeros((1, 1)))) == pytest.approx(20.0, abs=1e-12)


def test_exact_value_chain():
    assert exact_value(chain_mdp(), TabularPolicy(np.zeros((2, 1)))) == pytest.approx(1.0, abs=1e-14)


def test_exact_value_matches_monte_carlo():
    mdp = random_mdp(5, 3, 0.9, seed=4)
    pi = random_softmax_policy(5, 3, seed=5)
    mean, se = mc_rollout_value(mdp, pi, 100_000, 400, seed=6)
    assert abs(exact_value(mdp, pi) - mean) < 3 * se


def test_noisy_rewards_clipped_mean():
    """Clipping the reward noise moves the mean; ground truth follows the clipped mean."""
    from kernel_ope.envs import rollout_value

    mdp = random_mdp(4, 2, 0.8, seed=2, reward_noise_std=0.8)
    rng = np.random.default_rng(0)
    s, a = np.repeat(np.arange(4), 2), np.tile(np.arange(2), 4)
    draws = np.stack([mdp.step(s, a, rng)[0] for _ in range(50_000)])
    tol = 4 * draws.std(0).max() / math.sqrt(50_000)
    np.testing.assert_allclose(draws.mean(0), mdp.expected_reward[s, a], atol=tol)
    assert np.all(np.abs(draws) <= mdp.r_max)
    pi = random_softmax_policy(4, 2, seed=1)
    mean, se = rollout_value(mdp, pi, 100_000, 100, seed=3)
    assert abs(exact_value(mdp, pi) - mean) < 3 * se


@given(seed=st.integers(0, 10**6), gamma=st.floats(0.1, 0.95))
def test_exact_value_is_bellman_fixed_point(seed, gamma):
    mdp = random_mdp(4, 2, gamma, seed=seed)
    pi = random_softmax_policy(4, 2, seed=seed + 1)
    assert abs(exact_value(mdp, pi) - iterate_value(mdp, pi, tol=1e-13)) < 1e-10


def test_mdp_validation():
    P = np.full((2, 1, 2), 0.5)
    with pytest.raises(MDPError):
        TabularMDP(P * 1.1, np.zeros((2, 1)), 0.5, np.array([0.5, 0.5]))
    with pytest.raises(MDPError):
        TabularMDP(P, np.zeros((2, 1)), 0.5, np.array([0.6, 0.6]))
    with pytest.raises(MDPError):
        TabularMDP(P, np.full((2, 1), 2.0), 0.5, np.array([0.5, 0.5]), r_max=1.0)
    with pytest.raises(MDPError):
        TabularMDP(P, np.zeros((2, 1)), 1.0, np.array([0.5, 0.5]))


def test_collect_counts():
    mdp = random_mdp(3, 2, 0.9, seed=0)
    d = collect_transitions(mdp, random_softmax_policy(3, 2), 100, 50, seed=1)
    assert len(d) == 100
    assert len(d.trajectory_slices()) == 2
    d = collect_transitions(mdp, random_softmax_policy(3, 2), 101, 50, seed=1)
    assert len(d) == 101 and len(d.trajectory_slices()) == 3
    with pytest.raises(DatasetError):
        collect_transitions(mdp, random_softmax_policy(3, 2), 0, 50)


def test_collect_deterministic_env():
    d = collect_transitions(chain_mdp(), TabularPolicy(np.zeros((2, 1))), 30, 10, seed=0)
    np.testing.assert_array_equal(d.next_states, 1)
    np.testing.assert_array_equal(d.rewards, np.where(d.states == 0, 0.0, 1.0))
    # trajectories chain: s'_t = s_{t+1}
    for sl in d.trajectory_slices():
        np.testing.assert_array_equal(d.next_states[sl][:-1], d.states[sl][1:])


def test_collect_transition_frequencies():
    mdp = random_mdp(4, 2, 0.9, seed=3)
    d = collect_transitions(mdp, random_softmax_policy(4, 2, seed=1), 100_000, 100, seed=2)
    for s in range(4):
        for a in range(2):
            sel = (d.states == s) & (d.actions == a)
            cnt = sel.sum()
            if cnt < 100:
                continue
            freq = np.bincount(d.next_states[sel], minlength=4) / cnt
            assert np.all(np.abs(freq - mdp.transition[s, a]) <= 4 / math.sqrt(cnt))


def test_collect_bit_identical():
    mdp = random_mdp(4, 2, 0.9, seed=3)
    pi = random_softmax_policy(4, 2)
    a = collect_transitions(mdp, pi, 500, 20, seed=9)
    b = collect_transitions(mdp, pi, 500, 20, seed=9)
    assert a.to_json() == b.to_json()


def test_collect_undefined_policy():
    mdp = random_mdp(4, 2, 0.9, seed=3)
    with pytest.raises(DatasetError):
        collect_transitions(mdp, random_softmax_policy(2, 2), 200, 20, seed=0)


def test_next_actions_deterministic_policy():
    mdp = random_mdp(3, 3, 0.9, seed=0)
    det = TabularPolicy.deterministic([2, 0, 1], 3)
    d = augment_next_actions(collect_transitions(mdp, random_softmax_policy(3, 3), 200, 20, seed=0), det, m=3)
    assert d.next_actions.shape == (200, 3)
    np.testing.assert_array_equal(d.next_actions, np.array([2, 0, 1])[d.next_states][:, None].repeat(3, 1))
    assert all(len(r.next_actions) == 3 for r in d.records)


def test_next_actions_idempotent_and_invalid():
    mdp = random_mdp(3, 3, 0.9, seed=0)
    pi = random_softmax_policy(3, 3)
    d = collect_transitions(mdp, pi, 50, 10, seed=0)
    np.testing.assert_array_equal(augment_next_actions(d, pi, 4, seed=3).next_actions,
                                  augment_next_actions(d, pi, 4, seed=3).next_actions)
    with pytest.raises(DatasetError):
        augment_next_actions(d, pi, 0)


def test_next_action_frequencies():
    mdp = random_mdp(3, 3, 0.9, seed=0)
    pi = random_softmax_policy(3, 3, seed=7)
    d = augment_next_actions(collect_transitions(mdp, pi, 10_000, 50, seed=0), pi, 2, seed=1)
    for s in range(3):
        acts = d.next_actions[d.next_states == s].ravel()
        freq = np.bincount(acts, minlength=3) / len(acts)
        assert np.all(np.abs(freq - pi.action_probs()[s]) <= 4 / math.sqrt(len(acts)))


def test_mixture_alpha_one_is_target():
    tgt, base = random_softmax_policy(4, 3, seed=0), random_softmax_policy(4, 3, seed=1)
    np.testing.assert_allclose(mixture(tgt, base, 1.0).action_probs(), tgt.action_probs(), atol=1e-15)
    sched = mixture_schedule(tgt, base, [0.0, 0.5])
    np.testing.assert_allclose(sched[0].action_probs(), base.action_probs(), atol=1e-15)


@given(seed=st.integers(0, 10**6), tau=st.floats(0.05, 10.0))
def test_policy_probs_sum_to_one(seed, tau):
    pi = random_softmax_policy(5, 4, temperature=tau, seed=seed)
    np.testing.assert_allclose(pi.action_probs().sum(axis=1), 1.0, atol=1e-12)


def test_synthetic_rho_star_matches_norm():
    env = make_synthetic_env(seed=3)
    assert env.rho_star == rkhs_norm(env.q_star)


def test_synthetic_zero_q_gives_zero_reward(rng):
    env = make_synthetic_env(seed=0)
    zero = RkhsFunction(KernelSpec(0.7), anchors=env.q_star.anchors, coeffs=np.zeros(len(env.q_star.coeffs)))
    from dataclasses import replace
    env0 = replace(env, q_star=zero)
    np.testing.assert_array_equal(derive_reward(env0, rng.standard_normal((10, 2))), 0.0)


def test_synthetic_reward_inverts_bellman(rng):
    """Independent MC estimate of E[q*(x')|x] recovers q*(x) - r(x)."""
    env = make_synthetic_env(seed=1, gamma=0.8)
    X = rng.standard_normal((5, 2))
    r = derive_reward(env, X)
    mc = 200_000
    for i in range(5):
        s, a = X[i:i + 1, :1], X[i:i + 1, 1:]
        mean = s @ env.F.T + a @ env.G.T + env.offset
        s1 = mean + env.noise_std * rng.standard_normal((mc, 1))
        vals = env.q_star(env.features(s1, env.target.sample(s1, rng)))
        resid = env.q_star(X[i:i + 1])[0] - env.gamma * vals.mean() - r[i]
        assert abs(resid) <= 3 * env.gamma * vals.std() / math.sqrt(mc)


def test_synthetic_mc_reward_pure_and_close(rng):
    env = make_synthetic_env(seed=2, expectation_mc=4000)
    exact = make_synthetic_env(seed=2)
    X = rng.standard_normal((6, 2))
    np.testing.assert_array_equal(derive_reward(env, X), derive_reward(env, X))
    np.testing.assert_allclose(derive_reward(env, X), derive_reward(exact, X), atol=0.05)


def test_synthetic_true_value_matches_rollout():
    from kernel_ope.envs import rollout_value

    env = make_synthetic_env(seed=0, gamma=0.5, target_temperature=0.5)
    mean, se = rollout_value(env, env.target, 40_000, 40, seed=1)
    assert abs(env.true_value() - mean) < 3 * se + 1e-9


def test_time_augment_fields():
    mdp = random_mdp(3, 2, 0.9, seed=0)
    d = collect_transitions(mdp, random_softmax_policy(3, 2), 40, 10, seed=0)
    aug = time_augment(d, 10)
    i = int(np.nonzero(d.timesteps == 3)[0][0])
    assert aug.states[i, 1] == 3 and aug.next_states[i, 1] == 4
    with pytest.raises(DatasetError):
        time_augment(aug, 10)
    from dataclasses import replace
    with pytest.raises(DatasetError):
        time_augment(replace(d, timesteps=None), 10)


def test_truncated_kernel_zero_at_horizon(rng):
    H = 5
    k = KernelSpec(1.0, time_horizon=H)
    f = RkhsFunction(k, anchors=np.column_stack([rng.standard_normal((4, 2)), np.arange(4)]),
                     coeffs=rng.standard_normal(4))
    assert np.all(f(np.column_stack([rng.standard_normal((3, 2)), np.full(3, H)])) == 0.0)


def test_time_augmented_chain_value():
    mdp = chain_mdp(0.9)
    pi = TabularPolicy(np.zeros((2, 1)))
    for H in (1, 2, 7, 30):
        aug, pi_aug = augment_mdp_with_time(mdp, pi, H)
        assert abs(exact_value(aug, pi_aug) - finite_horizon_value(mdp, pi, H)) < 1e-10
    mdp = random_mdp(4, 3, 0.95, seed=1)
    pi = random_softmax_policy(4, 3, seed=2)
    aug, pi_aug = augment_mdp_with_time(mdp, pi, 12)
    assert abs(exact_value(aug, pi_aug) - finite_horizon_value(mdp, pi, 12)) < 1e-10


def test_dataset_json_roundtrip(tmp_path):
    mdp = random_mdp(3, 2, 0.9, seed=0)
    pi = random_softmax_policy(3, 2)
    d = augment_next_actions(collect_transitions(mdp, pi, 25, 10, seed=0), pi, 2, seed=0)
    d.save(tmp_path / "d.json")
    e = Dataset.load(tmp_path / "d.json")
    for name in ("states", "actions", "rewards", "next_states", "next_actions", "timesteps"):
        np.testing.assert_array_equal(getattr(d, name), getattr(e, name))
    assert e.trajectory_boundaries == [0, 10, 20]
    env = make_synthetic_env(seed=0)
    c = augment_next_actions(collect_transitions(env, env.target, 12, 6, seed=0), env.target, 2)
    f = Dataset.from_json(c.to_json())
    np.testing.assert_array_equal(c.next_actions, f.next_actions)
    np.testing.assert_array_equal(c.states, f.states)


def test_prefix_subset_keeps_order():
    mdp = random_mdp(3, 2, 0.9, seed=0)
    d = collect_transitions(mdp, random_softmax_policy(3, 2), 100, 30, seed=0)
    s = d.subset(45)
    assert len(s) == 45 and s.trajectory_boundaries == [0, 30]
    np.testing.assert_array_equal(s.states, d.states[:45])

"""Small builders shared by the test modules."""

import numpy as np

from kernel_ope.bounds import BellmanDesign, make_problem
from kernel_ope.envs import TabularQ, augment_next_actions, collect_transitions, random_mdp, random_softmax_policy


def tabular_case(seed, n, n_states=4, n_actions=2, gamma=0.9, m=5, traj_len=20, noise=0.0, temperature=1.0,
                 data_seed=None):
    """(mdp, target, behavior, dataset, design, q*) for a random tabular instance."""
    mdp = random_mdp(n_states, n_actions, gamma, seed=seed, reward_noise_std=noise)
    target = random_softmax_policy(n_states, n_actions, temperature=temperature, seed=seed + 1)
    behavior = random_softmax_policy(n_states, n_actions, seed=seed + 2)
    ss = np.random.SeedSequence(seed if data_seed is None else [seed, data_seed]).generate_state(2)
    data = collect_transitions(mdp, behavior, n, traj_len, seed=int(ss[0]))
    data = augment_next_actions(data, target, m, seed=int(ss[1]))
    design = BellmanDesign(data, make_problem(mdp, target, data))
    return mdp, target, behavior, data, design, TabularQ(mdp, mdp.q_values(target))

"""Monte Carlo ground truth by truncated rollouts."""

import numpy as np


def rollout_value(env, pi, n_rollouts: int, horizon: int, seed: int = 0, batch: int = 20_000):
    """Mean and standard error of sum_{t<horizon} gamma^t r_t under ``pi``."""
    rng = np.random.default_rng(seed)
    returns = []
    for start in range(0, n_rollouts, batch):
        k = min(batch, n_rollouts - start)
        s = env.reset(k, rng)
        g = np.zeros(k)
        disc = 1.0
        for _ in range(horizon):
            a = pi.sample(s, rng)
            r, s = env.step(s, a, rng)
            g += disc * r
            disc *= env.gamma
        returns.append(g)
    g = np.concatenate(returns)
    return float(g.mean()), float(g.std(ddof=1) / np.sqrt(len(g)))

"""Small model constructors shared by the test modules."""
import itertools

import numpy as np

from mfrl.core.families import ConvexMixture, DensityFree, RewardFamily
from mfrl.core.model import MeanFieldModel


def zero_reward(H, S, A):
    return RewardFamily(np.zeros((H, S, A)), np.zeros((H, S, A, S)))


def random_reward(rng, H, S, A, scale=0.3):
    R0 = rng.uniform(0, 1.0 / H, size=(H, S, A))
    R1 = rng.uniform(-scale, scale, size=(H, S, A, S)) / H
    return RewardFamily(R0, R1)


def random_mixture_model(rng, S, A, H, reward=None, mu1=None):
    K = rng.dirichlet(np.ones(S), size=(H, S, A, S))
    mu1 = rng.dirichlet(np.ones(S)) if mu1 is None else mu1
    reward = random_reward(rng, H, S, A) if reward is None else reward
    return MeanFieldModel(mu1, ConvexMixture(K), reward)


def random_density_free(rng, S, A, H, reward=None, mu1=None):
    T = rng.dirichlet(np.ones(S), size=(H, S, A))
    mu1 = rng.dirichlet(np.ones(S)) if mu1 is None else mu1
    reward = random_reward(rng, H, S, A) if reward is None else reward
    return MeanFieldModel(mu1, DensityFree(T), reward)


def swap_model(H, reward=None):
    T = np.zeros((H, 2, 1, 2))
    T[:, 0, 0, 1] = 1
    T[:, 1, 0, 0] = 1
    return MeanFieldModel([1.0, 0.0], DensityFree(T), reward or zero_reward(H, 2, 1))


def enumerate_value(m, pi):
    """Expected return by summing over every trajectory, population fixed to the flow."""
    from mfrl.core.dynamics import density_flow

    flow = density_flow(m, pi, cache=None)
    S, A, H = m.S, m.A, m.H
    total = 0.0
    for traj in itertools.product(range(S), range(A), repeat=H):
        # traj alternates s_h, a_h for h = 0..H-1
        prob, ret = 1.0, 0.0
        states = traj[0::2]
        actions = traj[1::2]
        prob *= m.mu1[states[0]]
        for h in range(H):
            s, a = states[h], actions[h]
            prob *= pi[h, s, a]
            ret += m.reward.evaluate(h, flow[h])[s, a]
            if h + 1 < H:
                prob *= m.transition.kernel(h, flow[h])[s, a, states[h + 1]]
            if prob == 0.0:
                break
        total += prob * ret
    return total

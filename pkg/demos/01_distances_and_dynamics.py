"""
Distances, density flows and policy values
==========================================

A tour of the model layer: distribution distances, a small mean-field
model, the population flow induced by a policy and the value of that policy.
"""

import numpy as np

from mfrl.core.distances import hellinger_distance, tv_distance
from mfrl.core.dynamics import density_flow, lipschitz_constants, policy_value, sample_trajectories
from mfrl.classes import ClassGenSpec, generate_class
from mfrl.core.model import uniform_policy
from mfrl import rng as rngmod

# TV is half the L1 distance; Hellinger sandwiches it from both sides
p = np.array([0.7, 0.2, 0.1])
q = np.array([0.1, 0.3, 0.6])
tv, hel = tv_distance(p, q), hellinger_distance(p, q)
print(f"TV={tv:.4f}  H={hel:.4f}  H^2 <= TV <= sqrt(2) H: {hel**2:.4f} <= {tv:.4f} <= {np.sqrt(2) * hel:.4f}")

# a generated class; its first member plays the true environment
c = generate_class(ClassGenSpec(S=3, A=2, H=4, size=4, contraction=True, seed=0))
m = c.truth
pi = uniform_policy(m.H, m.S, m.A)

# the population flow: every step the density is pushed through the kernel it induces
flow = density_flow(m, pi)
for h, mu in enumerate(flow):
    print(f"h={h}  mu={np.round(mu, 4)}")

# exact value by backward induction against the frozen flow, checked by simulation
J = policy_value(pi, m)[0]
ret = sample_trajectories(pi, pi, m, rngmod.stream(0, rngmod.TRAJECTORY), 50_000).returns
print(f"exact J={J:.5f}  Monte Carlo {ret.mean():.5f} +- {ret.std(ddof=1) / np.sqrt(len(ret)):.5f}")

# how strongly the kernel reacts to the population, and whether the flow map contracts
rep = lipschitz_constants(m)
print(f"L_T={rep.L_T:.4f}  certified population Lipschitz bound={rep.gamma_upper:.4f}")

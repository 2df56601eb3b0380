"""
Eluder dimension of small model classes
=======================================

Longest sequences of probes on which every new probe is still surprising.
The greedy estimate is a lower bound; for tiny problems the exhaustive
oracle gives the exact value.
"""

import numpy as np

from mfrl.classes import ClassGenSpec, generate_class
from mfrl.eluder import (EluderProblem, ProbeSpec, brute_force_dim, greedy_dim, greedy_sweep,
                         linear_dim_bound, mf_mbed)

r = np.random.default_rng(0)
vals = r.dirichlet(np.full(3, 0.5), size=(5, 7))  # 5 functions, 7 probe points
p = EluderProblem.from_distributions(vals, "tv", 1.0, 0.1)

seq = greedy_dim(p)
print("greedy sequence of probes:", list(seq.points), " threshold", round(seq.eps_prime, 4))
print("greedy length", len(seq), " exact", brute_force_dim(p))

# shrinking the scale can only lengthen the sequence
eps = [0.05, 0.1, 0.2, 0.4]
print("epsilon sweep:", dict(zip(eps, greedy_sweep(p, eps))))

# a low-rank class: the estimate sits well under the analytic bound for linear classes
c = generate_class(ClassGenSpec(S=3, A=2, H=2, size=8, family="low_rank", rank=3, seed=1))
est = mf_mbed(c, 1.0, 0.1, ProbeSpec(8, seed=1))
print(f"low-rank class estimate {est.estimate}  linear bound {linear_dim_bound(3, 1.0, np.sqrt(3), 0.1)}")

"""
Learning a mean-field control policy and an equilibrium from samples
====================================================================

Optimistic model selection: keep the models whose likelihood is close to the
best, plan in the most optimistic one, collect trajectories, repeat.
"""

from mfrl.classes import ClassGenSpec, generate_class
from mfrl.learner import run_mfc, run_mfg
from mfrl.planning import exploitability, ne_solve

c = generate_class(ClassGenSpec(S=3, A=2, H=3, size=8, perturbation=0.8, contraction=True, seed=3))

res = run_mfc(c, 60, 0.1, 0.1, seed=3)
sizes = res.trace.column("conf_set_size")
print("MFC: confidence set size every 10 iterations", sizes[::10])
print(f"MFC: optimality gap of the returned policy {res.final_metric:.2e}")

res = run_mfg(c, 60, 0.1, seed=3)
print(f"MFG: returned iterate k={res.returned_k}, exploitability {res.final_metric:.2e}")

# the true model solved directly, for comparison
sol = ne_solve(c.truth, prox_weight=0.1)
print(f"direct solve: converged={sol.converged} after {sol.iterations} iterations, "
      f"exploitability {exploitability(c.truth, sol.policy):.2e}")

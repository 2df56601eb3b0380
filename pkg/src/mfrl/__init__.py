"""Mean-field reinforcement learning laboratory.

Finite-horizon mean-field MDP dynamics, exact planning and Nash-equilibrium
computation, maximum-likelihood confidence-set learning for mean-field
control and games, and model-based eluder-dimension estimation.
"""
__version__ = "0.1.0"

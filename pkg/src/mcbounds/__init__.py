"""Convergence-rate bounds for Markov chain Monte Carlo samplers.

Drift-and-minorization and Wasserstein contraction bounds, coupled
simulation, and experiments for a Gaussian autoregression, the Albert and
Chib probit sampler and a random-effects Gibbs sampler.
"""

from .chains import ProbitData, REData, ArChain, AcChain, ReChain, simulate_coupled, estimate_w_to_pi
from .dm_bounds import InfeasibleError

__version__ = "0.1.0"

__all__ = [
    "ProbitData", "REData", "ArChain", "AcChain", "ReChain",
    "simulate_coupled", "estimate_w_to_pi", "InfeasibleError",
]

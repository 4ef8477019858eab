"""Risk-sensitive policy search for tabular MDPs with stochastic rewards."""
from .mdp import (DeterministicPolicy, MarkovRewardProcess, Mdp, enumerate_policies,
                  induce_chain, validate_mdp)
from .risk import RiskSpec, optimize, policy_moments, return_stats, var_function
from .sat import sat_chain, sat_transform_mdp

__version__ = "0.1.0"

__all__ = [
    "DeterministicPolicy", "MarkovRewardProcess", "Mdp", "RiskSpec", "enumerate_policies",
    "induce_chain", "optimize", "policy_moments", "return_stats", "sat_chain",
    "sat_transform_mdp", "validate_mdp", "var_function",
]

"""Offline imitation learning with behavioral cloning plus dynamic programming.

Desk-scale maze benchmarks, a from-scratch dense-network stack, discriminator
reward labeling, BC/UDS baselines, and an exact tabular oracle that checks the
method's return lower bounds on randomly generated MDP instances.
"""

__version__ = "0.1.0"

from .errors import NoPathError, ParseError, ValidationError
from .mdp import TabularMDP, TabularPolicy

__all__ = [
    "NoPathError",
    "ParseError",
    "ValidationError",
    "TabularMDP",
    "TabularPolicy",
    "__version__",
]

"""Bayesian sequential design for two-arm clinical trials.

Backward induction for Beta-Binomial and Normal outcome models, comparator
monitoring designs, Polya-Gamma tools for logistic models, and a seeded
simulation harness for operating characteristics.
"""

from .binary import Action, BinaryDesignSpec, BinaryPolicyTable, solve, stopping_region
from .dist import BetaParams, RngStream, prob_superior_exact, prob_superior_mc
from .normal import NormalDesignSpec, solve_normal

__all__ = [
    "Action",
    "BetaParams",
    "BinaryDesignSpec",
    "BinaryPolicyTable",
    "NormalDesignSpec",
    "RngStream",
    "prob_superior_exact",
    "prob_superior_mc",
    "solve",
    "solve_normal",
    "stopping_region",
]

__version__ = "0.1.0"

"""Strategy-proof mechanisms for public projects: cost sharing, release
delays, VCG redistribution and an exploit market, with the dynamic programs
and evolutionary searches that tune them."""

from .core import BinaryOutcome, PropertyReport, check_budget, check_ir, check_sp
from .priors import Prior, parse_prior

__all__ = [
    "BinaryOutcome",
    "PropertyReport",
    "Prior",
    "check_budget",
    "check_ir",
    "check_sp",
    "parse_prior",
]
__version__ = "0.1.0"

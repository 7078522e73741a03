"""Fast evaluation of nonlocal diffusion operators with finite horizon.

The kernel is split into a part that is smooth across the horizon
(compressible by hierarchical low-rank methods) and a truncated polynomial
part evaluated by a tree-based panel summation.
"""

from .geometry import Grid
from .kernel import (HorizonField, HorizonKind, KernelSpec, RadialProfile, eval_omega,
                     eval_profile, match_polynomial, second_moment, split)
from .operator import Form, Rule, SplitOperator, TruncatedOperator
from .tree import build_tree, decompose_all, decompose_region

__all__ = [
    "Grid",
    "HorizonField",
    "HorizonKind",
    "KernelSpec",
    "RadialProfile",
    "eval_omega",
    "eval_profile",
    "match_polynomial",
    "second_moment",
    "split",
    "Form",
    "Rule",
    "SplitOperator",
    "TruncatedOperator",
    "build_tree",
    "decompose_all",
    "decompose_region",
]

__version__ = "0.1.0"

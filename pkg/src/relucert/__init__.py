"""Offline stability certification of ReLU approximations of linear MPC.

Given a constrained LTI system, an MPC design, and a trained ReLU
network mimicking the MPC law, this package computes the exact
worst-case approximation error and Lipschitz constants via
mixed-integer linear programs and checks sufficient conditions for
closed-loop stability of the network controller.
"""

from .model import (CondensedQp, LtiSystem, ModelError, MpcDesign, Polytope,
                    augment_for_input_constraints, condense, load_problem,
                    make_design, save_problem, solve_dare)

__all__ = [
    "CondensedQp", "LtiSystem", "ModelError", "MpcDesign", "Polytope",
    "augment_for_input_constraints", "condense", "load_problem",
    "make_design", "save_problem", "solve_dare",
]

__version__ = "0.1.0"

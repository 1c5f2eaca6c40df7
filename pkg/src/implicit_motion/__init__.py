"""Second-order motion on implicitly defined manifolds.

``M = g^{-1}(0)`` with ``g: R^m x R^s -> R^s`` and invertible ``d2 g``.
The package computes the constraint reaction in closed form, lifts
semi-explicit second-order DAEs to ODEs on M, computes degrees of tangent
fields through augmented maps on boxes, and follows branches of forced
periodic solutions.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .expr import ExprAst, VectorExpr, eval2, parse  # noqa: F401
from .manifold import ImplicitManifold, JacobianSplit, PhaseState, canonical_names  # noqa: F401
from .dynamics import (ForceField, Motion, Trajectory, compare_dae_ode, dae_lift,  # noqa: F401
                       integrate, reactive_force, reactive_force_lstsq, second_order_field)
from .degree import (AugmentedMap, DegreeReport, MeanField, degree_sign_sum,  # noqa: F401
                     degree_winding2d, find_zeros, index_at, mean_field, tangent_field_degree)
from .continuation import (BranchCurve, BranchPoint, PeriodicProblem,  # noqa: F401
                           newton_correct, shoot_residual, trace_branch)
from .problem import Problem, builtin, load_problem, parse_problem  # noqa: F401

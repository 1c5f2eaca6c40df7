"""
Counting equilibria with signs
==============================

An equilibrium of a tangent field on M = {g = 0} is a zero of the augmented
map F(x, y) = (first block of the field, g). The degree of F on a box is the
signed count of its zeros. Multiplying by the sign of det d2 g gives the
degree of the field on M. A nonzero degree guarantees branches of forced
periodic motions.
"""

import numpy as np

from implicit_motion import VectorExpr, builtin, degree_sign_sum, degree_winding2d
from implicit_motion.cli import run_degree

# A spring on the parabola y = x^2/2 - 2 has three rest points: the vertex
# (index -1) and two symmetric points (index +1).
rep = run_degree(builtin("parabolamolla"), winding=True)
print(rep.to_text())

# A bead on a cubic curve under gravity, in the left half-plane.
rep = run_degree(builtin("gravita"))
print("gravita: degree", rep.degree, "zero", rep.zeros[0].point)

# The mean of x + sin(t) y over a period is x, so the averaged map is
# (x, x^2/2 - y^3 - y) with one zero of index -1.
rep = run_degree(builtin("sindae"), kind="Phi")
print("mean-field degree", rep.degree)

# Degenerate zeros get no index; in the plane the winding number still counts
# them. The complex square z^2 has one double zero.
square = VectorExpr.parse(["x^2 - y^2", "2*x*y"], ["x", "y"])
box = [[-1, 1], [-1, 1]]
print("z^2: winding", degree_winding2d(square, box), "| sign sum falls back to",
      degree_sign_sum(square, box).method)

# The 3-D DAE map vanishes at the origin (index -1) and at a second point
# (index +1), so its degree on [-2, 2]^3 is 0.
rep = run_degree(builtin("dae3d"))
for z in rep.zeros:
    print("3-D zero", np.round(z.point, 6), "index", z.index)
print("3-D degree", rep.degree)

"""
Following forced oscillations
=============================

Shake the spring on the parabola with the tangential part of cos(t) (1, 0),
scaled by lam. At lam = 0 the rest point (sqrt 2, -1) is a 2 pi-periodic
solution. Since the augmented map has nonzero degree there, a branch of
periodic solutions leaves it. The branch is followed by shooting over one
period and pseudo-arclength continuation in lam.
"""

import numpy as np

from implicit_motion import PeriodicProblem, builtin, trace_branch

prob = builtin("parabolamolla")
origin = np.array([np.sqrt(2.0), -1.0])
P = PeriodicProblem(prob.manifold, prob.force, prob.perturbation, 2 * np.pi, origin,
                    n_steps=256)
curve = trace_branch(P, origin, max_points=20, ds=0.05, degree=1)

print("  lambda        x0          u0       residual   amplitude")
for p in curve.points:
    print(f"{p.lam:9.5f}  {p.chart_ic[0]:10.6f}  {p.chart_ic[1]:10.6f}  "
          f"{p.residual:9.2e}  {p.amplitude:9.5f}")
print("stopped:", curve.termination)

# For small lam the response is linear: amplitude / lam settles to a constant.
print("amplitude / lambda:", curve.amplitudes[1:6] / curve.lambdas[1:6])

"""
The constraint reaction
=======================

A bead moving freely on a curve or surface M = {g = 0} feels a reaction
force that keeps it on M. The reaction is normal to M and quadratic in the
velocity. Here it is computed in closed form and compared with a plain
least-squares solve of the twice differentiated constraint.
"""

import numpy as np

from implicit_motion import PhaseState, builtin, reactive_force, reactive_force_lstsq

# The parabola y = x^2/2 - 2. At x with horizontal speed u the velocity is
# (u, x u), and the reaction works out to u^2/(1 + x^2) * (-x, 1).
M = builtin("parabola1").manifold
for x, u in [(0.0, 1.0), (1.0, 1.0), (2.0, 0.5)]:
    st = PhaseState(np.array([x, x * x / 2 - 2]), np.array([u, x * u]))
    r = reactive_force(M, st)
    print(f"parabola x={x:4.1f} u={u:3.1f}  r={r}  "
          f"closed form={u * u / (1 + x * x) * np.array([-x, 1.0])}")

# On the paraboloid z = x^2 + y^2 the reaction points along the normal
# (-2x, -2y, 1), scaled by (2u^2 + 2v^2)/(1 + 4x^2 + 4y^2).
M = builtin("paraboloid").manifold
x, y, u, v = 1.0, 0.0, 1.0, 0.0
st = PhaseState(np.array([x, y, x * x + y * y]), np.array([u, v, 2 * x * u + 2 * y * v]))
print("paraboloid r =", reactive_force(M, st))

# The space curve z^3 + z = x, y = z + x^2 has codimension two. Random
# states on it are drawn by a chart solve, and the two computations agree.
M = builtin("mostro").manifold
rng = np.random.default_rng(0)
worst = 0.0
for st in M.random_states(500, rng, x_box=[[-2.0, 2.0]]):
    r, oracle = reactive_force(M, st), reactive_force_lstsq(M, st)
    worst = max(worst, np.abs(r - oracle).max() / np.abs(oracle).max())
print(f"space curve: largest relative gap over 500 states = {worst:.2e}")

# Scaling the velocity by a scales the reaction by a^2.
st = M.random_states(1, rng, x_box=[[-1.0, 1.0]])[0]
r1 = reactive_force(M, st)
r3 = reactive_force(M, PhaseState(st.xi, 3 * st.eta))
print("r(3 eta) / r(eta) =", r3 / r1)

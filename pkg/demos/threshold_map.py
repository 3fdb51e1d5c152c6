#!/usr/bin/env python
# The truncated second-order map just below d*lambda^2 = 1.  Between the two
# roots of the quadratic coefficient the state decays like (d lambda^2)^n.
# Outside them the cross statistic Z gets a positive quadratic kick, so the
# state holds a plateau or leaves the small-state regime altogether.

import numpy as np

from treecast.channel import ChannelParams
from treecast.dynsys import (
    DynState,
    initial_state,
    iterate,
    quadratic_coefficient,
    threshold_roots,
    verify_zbound,
    zbound_params,
)

lo, hi = threshold_roots()
print(f"roots of the quadratic coefficient: {lo:.10f}  {hi:.10f}\n")

print(" theta   coef     x_500 (dl2=0.995)  x_500 / 0.995^500 x_0")
for theta in (0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9):
    params = ChannelParams.from_dlambda2(theta, 0.995, 2)
    s0 = DynState(*(1e-3 * initial_state(theta).as_array()))
    traj = iterate(s0, params, 500)
    x = max(traj[-1].x_th, traj[-1].x_1mth)
    linear = max(s0.x_th, s0.x_1mth) * 0.995 ** (len(traj) - 1)
    tag = "  (left the small-state regime)" if traj.diverged else ""
    print(f" {theta:4.2f}  {quadratic_coefficient(theta):7.3f}   {x:.3e}  {x / linear:8.2f}{tag}")

theta = 0.9
params = ChannelParams.from_dlambda2(theta, 0.995, 2)
traj = iterate(DynState(*(1e-3 * initial_state(theta).as_array())), params, 500)
arr = traj.as_array()
print(f"\ntheta={theta}: Z_th runs from {arr[0, 1]:.2e} to {arr[-1, 1]:.2e}, min {arr[:, 1].min():.2e}")
for block, t in (("th", theta), ("1mth", 1 - theta)):
    rep = verify_zbound(traj, params, zbound_params(t, 0.99), block)
    print(f"  lower bounds on Z_{block}: {'hold' if rep.passed else 'violated'} over {rep.steps_checked} steps")
print("  final state:", np.array2string(arr[-1], precision=3))

#!/usr/bin/env python
# Population dynamics for the posterior law, one level at a time.
# Below the Kesten-Stigum line x_n dies out geometrically; above it settles
# on a plateau.

from treecast.channel import ChannelParams
from treecast.popdyn import classify_reconstruction, run_trajectory

theta, size = 0.3, 50_000

for dl2 in (0.6, 1.3):
    params = ChannelParams.from_dlambda2(theta, dl2, 2)
    traj = run_trajectory(params, 30, size, seed=1)
    print(f"d*lambda^2 = {dl2}: {classify_reconstruction(traj)}")
    print("  level      x_th    se(x_th)     x_1mth")
    for level in (0, 1, 2, 5, 10, 20, 30):
        est = traj[level]
        print(f"  {level:5d}  {est.value.x_th:9.2e}  {est.std_err.x_th:9.1e}  {est.value.x_1mth:9.2e}")
    if dl2 < 1:
        ratios = [traj[k + 1].value.x_th / traj[k].value.x_th for k in range(3, 8)]
        print("  per-level ratio (levels 3-8):", " ".join(f"{r:.3f}" for r in ratios))
    print()

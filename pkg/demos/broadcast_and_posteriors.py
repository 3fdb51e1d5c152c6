#!/usr/bin/env python
# Broadcast a state down a binary tree, then ask how well the leaves
# remember it.  Accuracy of the MAP guess drops with depth; how fast depends
# on d * lambda^2.

import numpy as np

from treecast.channel import ChannelParams
from treecast.treesim import TreeConfig, broadcast_batch, posterior_batch

theta = 0.3
n = 4000
rng = np.random.default_rng(0)

for dl2 in (0.6, 1.4):
    params = ChannelParams.from_dlambda2(theta, dl2, 2)
    print(f"d*lambda^2 = {dl2}  (lambda = {params.lam:.3f})")
    for depth in (1, 3, 6, 9):
        cfg = TreeConfig(2, depth)
        roots = rng.choice(4, size=n, p=params.pi) + 1
        leaves = broadcast_batch(cfg, params, roots, seed=depth)
        post = posterior_batch(cfg, params, leaves)
        hit = np.mean(post.argmax(axis=1) + 1 == roots)
        # always guessing the likeliest prior state
        base = params.pi.max()
        print(f"  depth {depth:2d}: MAP accuracy {hit:.3f}  (prior guess {base:.3f})")

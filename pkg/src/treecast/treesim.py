"""Broadcast process on finite d-ary trees and exact root posteriors.

Leaves are stored in breadth-first order: the children of the node with
level-local index j are j*d .. j*d + d - 1 one level down.  Leaf states are
1-based (1..4 = A, T, G, C) in public interfaces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, ParameterError, make_transition
from .popdyn import MomentVector, Population, _stream

MAX_EXHAUSTIVE_LEAVES = 10


class SizeError(ValueError):
    """Exhaustive enumeration requested on too large a tree."""


class ShapeError(ValueError):
    """Leaf array does not match the tree."""


@dataclass(frozen=True)
class TreeConfig:
    d: int
    depth: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ParameterError(f"d must be an integer >= 2, got {self.d}")
        if int(self.depth) != self.depth or self.depth < 0:
            raise ParameterError(f"depth must be an integer >= 0, got {self.depth}")
        if self.depth * math.log2(self.d) > 62:
            raise ParameterError("leaf count does not fit in a 64-bit integer")

    @property
    def n_leaves(self) -> int:
        return self.d**self.depth


def _check_params(cfg: TreeConfig, params: ChannelParams):
    if cfg.d != params.d:
        raise ParameterError(f"tree arity {cfg.d} differs from channel arity {params.d}")


def broadcast_batch(
    cfg: TreeConfig, params: ChannelParams, root_states: np.ndarray, seed: int
) -> np.ndarray:
    """Leaf configurations for a batch of roots; shape (len(root_states), d^n).

    Row b depends only on (cfg, params, root_states[b], seed, b).
    """
    _check_params(cfg, params)
    roots = np.asarray(root_states, dtype=np.int64)
    if np.any((roots < 1) | (roots > 4)):
        raise ParameterError("root states must lie in 1..4")
    if not params.is_stochastic:
        raise ParameterError("transition matrix has negative entries for these parameters")
    cum = np.cumsum(make_transition(params), axis=1)
    cum[:, -1] = 1.0
    cur = (roots - 1)[:, None]
    for level in range(cfg.depth):
        rng = _stream(seed, 0xB0, level)
        parents = np.repeat(cur, cfg.d, axis=1)
        u = rng.random(parents.shape)
        cur = np.minimum((u[..., None] > cum[parents]).sum(axis=-1), 3)
    return cur + 1


def broadcast_sample(cfg: TreeConfig, params: ChannelParams, root_state: int, seed: int) -> np.ndarray:
    """One leaf configuration (1-based states, breadth-first order)."""
    if root_state not in (1, 2, 3, 4):
        raise ParameterError(f"root state must be in 1..4, got {root_state}")
    return broadcast_batch(cfg, params, np.array([root_state]), seed)[0]


def _leaf_likelihoods(
    cfg: TreeConfig, params: ChannelParams, leaves: np.ndarray, normalize: bool
) -> np.ndarray:
    """P(leaves | root = i) for each i, up to a per-row factor if normalize.

    ``leaves`` has shape (batch, d^n); the result has shape (batch, 4).
    """
    leaves = np.asarray(leaves)
    if leaves.ndim != 2 or leaves.shape[1] != cfg.n_leaves:
        raise ShapeError(f"expected {cfg.n_leaves} leaves per configuration, got shape {leaves.shape}")
    if np.any((leaves < 1) | (leaves > 4)):
        raise ParameterError("leaf states must lie in 1..4")
    p = make_transition(params)
    lik = np.eye(4)[leaves - 1]
    for _ in range(cfg.depth):
        b, k, _ = lik.shape
        msg = lik @ p.T  # parent state i: sum_j P[i, j] L(child = j)
        lik = msg.reshape(b, k // cfg.d, cfg.d, 4).prod(axis=2)
        if normalize:
            lik /= lik.sum(axis=-1, keepdims=True)
    return lik[:, 0, :]


def posterior_batch(cfg: TreeConfig, params: ChannelParams, leaves: np.ndarray) -> np.ndarray:
    """Root posteriors for a batch of leaf configurations; shape (batch, 4)."""
    _check_params(cfg, params)
    lik = _leaf_likelihoods(cfg, params, leaves, normalize=True)
    post = params.pi * lik
    s = post.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("leaf configuration has zero probability under every root state")
    return post / s


def posterior_root(cfg: TreeConfig, params: ChannelParams, leaves) -> np.ndarray:
    """Exact Bayes posterior of the root state given one leaf configuration."""
    leaves = np.asarray(leaves)
    if leaves.ndim != 1:
        raise ShapeError("expected a 1-d leaf array")
    return posterior_batch(cfg, params, leaves[None, :])[0]


def _check_enumerable(cfg: TreeConfig):
    if cfg.n_leaves > MAX_EXHAUSTIVE_LEAVES:
        raise SizeError(
            f"exhaustive enumeration needs d^n <= {MAX_EXHAUSTIVE_LEAVES}, got {cfg.n_leaves}"
        )


def enumerate_configurations(cfg: TreeConfig) -> np.ndarray:
    """All 4^(d^n) leaf configurations, shape (4^(d^n), d^n), 1-based."""
    _check_enumerable(cfg)
    k = cfg.n_leaves
    return np.indices((4,) * k).reshape(k, -1).T + 1


def exact_law_bruteforce(cfg: TreeConfig, params: ChannelParams) -> Population:
    """Exact per-root-state law of the root posterior, one atom per configuration.

    Configurations of zero probability are dropped.
    """
    _check_params(cfg, params)
    configs = enumerate_configurations(cfg)
    lik = _leaf_likelihoods(cfg, params, configs, normalize=False)
    joint = params.pi * lik
    total = joint.sum(axis=1)
    keep = total > 0
    atoms = joint[keep] / total[keep, None]
    weights = tuple(lik[keep, c] / lik[keep, c].sum() for c in range(4))
    return Population(cfg.depth, params.theta, (atoms,) * 4, weights)


def exact_moments_bruteforce(cfg: TreeConfig, params: ChannelParams) -> MomentVector:
    """The twelve moment statistics evaluated by exhaustive enumeration."""
    _check_params(cfg, params)
    configs = enumerate_configurations(cfg)
    lik = _leaf_likelihoods(cfg, params, configs, normalize=False)
    joint = params.pi * lik
    total = joint.sum(axis=1)
    keep = total > 0
    f = joint[keep] / total[keep, None]
    p1, p3 = lik[keep, 0], lik[keep, 2]  # P(configuration | root = A), (| root = G)
    h, g = params.theta / 2, (1 - params.theta) / 2
    values = [
        p1 @ (f[:, 0] - h),
        p1 @ (f[:, 1] - h),
        p3 @ (f[:, 0] - h),
        p1 @ (f[:, 0] - h) ** 2,
        p1 @ (f[:, 1] - h) ** 2,
        p3 @ (f[:, 0] - h) ** 2,
        p3 @ (f[:, 2] - g),
        p3 @ (f[:, 3] - g),
        p1 @ (f[:, 2] - g),
        p3 @ (f[:, 2] - g) ** 2,
        p3 @ (f[:, 3] - g) ** 2,
        p1 @ (f[:, 2] - g) ** 2,
    ]
    return MomentVector.from_array(values, params.theta)

import itertools

import numpy as np
import pytest

from treecast.channel import ChannelParams, ParameterError
from treecast.moments import check_lemma1
from treecast.popdyn import estimate_moments
from treecast.treesim import (
    ShapeError,
    SizeError,
    TreeConfig,
    broadcast_batch,
    broadcast_sample,
    enumerate_configurations,
    exact_law_bruteforce,
    exact_moments_bruteforce,
    posterior_batch,
    posterior_root,
)


def test_depth_zero_sample_is_root():
    params = ChannelParams(0.3, 0.5)
    for r in (1, 2, 3, 4):
        assert broadcast_sample(TreeConfig(2, 0), params, r, seed=1).tolist() == [r]


def test_identity_channel_copies_root():
    leaves = broadcast_sample(TreeConfig(3, 4), ChannelParams(0.3, 1.0, 3), 3, seed=5)
    assert len(leaves) == 81 and np.all(leaves == 3)


def test_mixing_channel_gives_stationary_leaves():
    params = ChannelParams(0.3, 0.0)
    n = 100_000
    leaves = broadcast_batch(TreeConfig(2, 1), params, np.full(n, 1), seed=11)[:, 0]
    freq = np.bincount(leaves - 1, minlength=4) / n
    se = np.sqrt(params.pi * (1 - params.pi) / n)
    assert np.all(np.abs(freq - params.pi) <= 4 * se)


def test_broadcast_is_seed_deterministic():
    cfg, params = TreeConfig(2, 5), ChannelParams(0.3, 0.6)
    a = broadcast_sample(cfg, params, 2, seed=123)
    b = broadcast_sample(cfg, params, 2, seed=123)
    c = broadcast_sample(cfg, params, 2, seed=124)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_broadcast_rejects_bad_root():
    with pytest.raises(ParameterError):
        broadcast_sample(TreeConfig(2, 1), ChannelParams(0.3, 0.5), 5, seed=0)


def test_posterior_observed_root():
    assert posterior_root(TreeConfig(2, 0), ChannelParams(0.3, 0.5), [3]).tolist() == [0, 0, 1, 0]


def test_posterior_worked_example():
    post = posterior_root(TreeConfig(2, 1), ChannelParams(0.5, 0.6), [1, 1])
    expected = np.array([0.49, 0.01, 0.01, 0.01]) / 0.52
    assert np.allclose(post, expected, rtol=0, atol=1e-12)


def test_posterior_shape_error():
    with pytest.raises(ShapeError):
        posterior_root(TreeConfig(2, 2), ChannelParams(0.3, 0.5), [1, 2, 3])


def test_posterior_on_simplex_and_deep_tree_stable():
    cfg, params = TreeConfig(2, 14), ChannelParams(0.3, 0.9)
    leaves = broadcast_batch(cfg, params, np.array([1, 4]), seed=3)
    post = posterior_batch(cfg, params, leaves)
    assert np.all(post >= 0)
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.isfinite(post))


def test_posterior_invariant_under_sibling_swap():
    cfg, params = TreeConfig(2, 3), ChannelParams(0.3, 0.6)
    leaves = broadcast_sample(cfg, params, 1, seed=9)
    swapped = np.concatenate([leaves[4:], leaves[:4]])
    inner = leaves.copy()
    inner[[0, 1]] = inner[[1, 0]]
    base = posterior_root(cfg, params, leaves)
    assert np.allclose(posterior_root(cfg, params, swapped), base, atol=1e-14)
    assert np.allclose(posterior_root(cfg, params, inner), base, atol=1e-14)


def _likelihood_by_enumeration(cfg, params, leaves):
    """P(leaves | root) summing over every internal-node assignment."""
    from treecast.channel import make_transition

    p = make_transition(params)
    n_internal = sum(cfg.d**k for k in range(1, cfg.depth))
    out = np.zeros(4)
    for root in range(4):
        for inner in itertools.product(range(4), repeat=n_internal):
            levels = [[root]]
            pos = 0
            for k in range(1, cfg.depth):
                levels.append(list(inner[pos:pos + cfg.d**k]))
                pos += cfg.d**k
            levels.append([v - 1 for v in leaves])
            prob = 1.0
            for k in range(1, len(levels)):
                for j, s in enumerate(levels[k]):
                    prob *= p[levels[k - 1][j // cfg.d], s]
            out[root] += prob
    return out


def test_posterior_matches_full_enumeration():
    cfg, params = TreeConfig(2, 2), ChannelParams(0.3, 0.5)
    for leaves in ([1, 2, 3, 4], [3, 3, 1, 3], [2, 2, 2, 2]):
        lik = _likelihood_by_enumeration(cfg, params, leaves)
        expected = params.pi * lik / (params.pi @ lik)
        assert np.allclose(posterior_root(cfg, params, leaves), expected, atol=1e-12)


def test_bayes_consistency():
    cfg, params = TreeConfig(2, 2), ChannelParams(0.3, 0.5)
    law = exact_law_bruteforce(cfg, params)
    pi = params.pi
    uncond = sum(pi[c] * law.weights[c] for c in range(4))
    assert np.allclose(uncond @ law.samples[0], pi, atol=1e-12)


def test_enumeration_guard():
    assert enumerate_configurations(TreeConfig(2, 1)).shape == (16, 2)
    with pytest.raises(SizeError):
        exact_moments_bruteforce(TreeConfig(2, 4), ChannelParams(0.3, 0.5))


@pytest.mark.parametrize("theta", [0.15, 0.3, 0.7])
def test_level_zero_oracle(theta):
    mv = exact_moments_bruteforce(TreeConfig(2, 0), ChannelParams(theta, 0.5))
    assert mv.x_th == pytest.approx(1 - theta / 2, abs=1e-15)
    assert mv.z_1mth == pytest.approx(-(1 - theta) / 2, abs=1e-15)
    assert mv.y_th == pytest.approx(-theta / 2, abs=1e-15)
    assert mv.u_th == pytest.approx((1 - theta / 2) ** 2, abs=1e-15)


@pytest.mark.parametrize("d,n", [(2, 1), (2, 2), (3, 1), (3, 2)])
@pytest.mark.parametrize("theta", [0.15, 0.85])
def test_oracle_satisfies_lemma1(d, n, theta):
    mv = exact_moments_bruteforce(TreeConfig(d, n), ChannelParams(theta, 0.6, d))
    reports = check_lemma1(mv)
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]


def test_exact_law_and_oracle_agree():
    cfg, params = TreeConfig(3, 1), ChannelParams(0.3, 0.5, 3)
    a = estimate_moments(exact_law_bruteforce(cfg, params)).value.as_array()
    b = exact_moments_bruteforce(cfg, params).as_array()
    assert np.allclose(a, b, atol=1e-14)


def test_monte_carlo_posterior_mean_matches_oracle():
    cfg, params = TreeConfig(2, 2), ChannelParams(0.3, 0.5)
    mv = exact_moments_bruteforce(cfg, params)
    n = 100_000
    post = posterior_batch(cfg, params, broadcast_batch(cfg, params, np.full(n, 1), seed=21))
    dev = post[:, 0] - 0.15
    for value, target in ((dev, mv.x_th), (dev**2, mv.u_th), (post[:, 2] - 0.35, mv.z_1mth)):
        se = value.std(ddof=1) / np.sqrt(n)
        assert abs(value.mean() - target) <= 4 * se

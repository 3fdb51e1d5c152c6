import json

import numpy as np
import pytest

from treecast.channel import ChannelParams
from treecast.moments import (
    all_passed,
    check_lemma1,
    check_lemma2,
    check_lemma3,
    check_u_recursion,
    check_z_products,
    compute_pi,
    fit_remainder_constant,
    reports_to_json,
    u_recursion_residual,
)
from treecast.popdyn import (
    MomentVector,
    estimate_moments,
    evolve_one_level,
    exact_next_moments,
    init_population,
    symmetrized_law,
    unconditional_atoms,
)
from treecast.treesim import TreeConfig, exact_law_bruteforce, exact_moments_bruteforce

ORACLE_GRID = [(2, 1), (2, 2), (3, 1), (3, 2)]


@pytest.mark.parametrize("theta", [0.15, 0.3, 0.5, 0.85])
def test_lemma1_level_zero(theta):
    reports = check_lemma1(estimate_moments(init_population(3, theta)).value)
    assert len(reports) == 11 and all_passed(reports)


@pytest.mark.parametrize("d,n", ORACLE_GRID)
def test_lemma1_on_oracle(d, n):
    mv = exact_moments_bruteforce(TreeConfig(d, n), ChannelParams(0.3, 0.55, d))
    assert all_passed(check_lemma1(mv))


def test_lemma1_detects_perturbation():
    mv = exact_moments_bruteforce(TreeConfig(2, 2), ChannelParams(0.3, 0.55))
    bad = mv.replace(y_th=mv.y_th + 1e-6)
    assert not all_passed(check_lemma1(bad))


def test_lemma1_statistical_mode():
    params = ChannelParams(0.3, 0.6)
    pop = evolve_one_level(init_population(50_000, 0.3), params, 50_000, 3)
    reports = check_lemma1(estimate_moments(pop))
    assert all(r.mode == "statistical" for r in reports)
    assert sum(not r.passed for r in reports) <= 1


@pytest.mark.parametrize("d,n", ORACLE_GRID)
@pytest.mark.parametrize("theta", [0.2, 0.7])
def test_lemma2_exact(d, n, theta):
    law = exact_law_bruteforce(TreeConfig(d, n), ChannelParams(theta, 0.6, d))
    reports = check_lemma2(law)
    assert len(reports) == 5 and all_passed(reports)


def test_lemma2_wrong_theta_fails():
    law = exact_law_bruteforce(TreeConfig(2, 2), ChannelParams(0.3, 0.6))
    assert not all_passed(check_lemma2(law, theta=0.4))


def test_lemma2_statistical():
    params = ChannelParams(0.3, 0.6)
    pop = init_population(100_000, 0.3)
    for _ in range(2):
        pop = evolve_one_level(pop, params, 100_000, 4)
    assert sum(not r.passed for r in check_lemma2(pop)) <= 1


def test_lemma3_level_zero():
    params = ChannelParams(0.3, 0.5)
    law = exact_law_bruteforce(TreeConfig(2, 0), params)
    reports = check_lemma3(law, params)
    assert len(reports) == 14 and all_passed(reports)


@pytest.mark.parametrize("d,n", ORACLE_GRID)
def test_lemma3_exact(d, n):
    params = ChannelParams(0.7, 0.45, d)
    assert all_passed(check_lemma3(exact_law_bruteforce(TreeConfig(d, n), params), params))


def test_lemma3_statistical():
    params = ChannelParams(0.3, 0.6)
    pop = evolve_one_level(init_population(100_000, 0.3), params, 100_000, 8)
    reports = check_lemma3(pop, params, size=200_000, seed=2)
    assert sum(not r.passed for r in reports) <= 1


def test_compute_pi_at_zero_state():
    params = ChannelParams(0.3, 0.5, 3)
    zero = MomentVector.from_array(np.zeros(12), 0.3)
    exp = compute_pi(zero, params)
    for k in ("pi1", "pi2", "pi3", "pi4", "pi5", "pi6"):
        assert getattr(exp, k) == 0.0
    assert all(v == 1.0 for v in exp.predictions().values())


def test_compute_pi_potts_level_zero():
    mv = estimate_moments(init_population(2, 0.5)).value
    exp = compute_pi(mv, ChannelParams(0.5, 0.5))
    # 6 (1/4) / (1/2) * 3/4 + 4 (1/8) / (1/4) * 3/8
    assert exp.pi1 == pytest.approx(3.0, abs=1e-15)


def test_compute_pi_linear_in_moments():
    params = ChannelParams(0.3, 0.4)
    mv = exact_moments_bruteforce(TreeConfig(2, 1), params)
    a = compute_pi(mv, params)
    b = compute_pi(MomentVector.from_array(2 * mv.as_array(), 0.3), params)
    for k in ("pi1", "pi2", "pi3", "pi4", "pi5", "pi6"):
        assert getattr(b, k) == pytest.approx(2 * getattr(a, k), rel=1e-13)


def test_z_products_mixing_channel():
    params = ChannelParams(0.3, 0.0)
    law = exact_law_bruteforce(TreeConfig(2, 1), params)
    reports = check_z_products(law, params)
    assert all_passed(reports)
    assert all(r.lhs == pytest.approx(1.0, abs=1e-14) for r in reports)


@pytest.mark.parametrize("n", [0, 1, 2])
@pytest.mark.parametrize("theta", [0.3, 0.8])
def test_z_predictions_exact_for_binary_trees(n, theta):
    # for d = 2 the second-order expansion of the product is the whole product
    params = ChannelParams(theta, 0.6)
    reports = check_z_products(exact_law_bruteforce(TreeConfig(2, n), params), params)
    assert len(reports) == 15 and all_passed(reports), [r.name for r in reports if not r.passed]


def test_z_predictions_ternary_remainder_is_cubic():
    params = ChannelParams(0.3, 0.5, 3)
    law = exact_law_bruteforce(TreeConfig(3, 1), params)
    atoms = law.samples[0]
    w = sum(params.pi[c] * law.weights[c] for c in range(4))
    pi = params.pi
    s_max = float(np.min(pi / np.maximum(np.abs(atoms - pi), 1e-300)))
    xs, errs, laws = [], [], []
    for f in (0.4, 0.2, 0.1):
        small = symmetrized_law(atoms, w, params.theta, f * s_max)
        mv = estimate_moments(small).value
        reports = check_z_products(small, params)
        assert reports[0].passed
        xs.append(max(abs(mv.x_th), abs(mv.x_1mth)))
        errs.append(max(abs(r.lhs - r.rhs) for r in reports[1:]))
        laws.append(small)
    assert errs[2] > 1e-12
    # x shrinks fourfold per halving of the spread, so x^3 by 64
    assert 40 < errs[1] / errs[2] < 100
    c = fit_remainder_constant(xs[:2], errs[:2], 3)
    assert all_passed(check_z_products(laws[2], params, remainder=2 * c))
    assert not all_passed(check_z_products(laws[2], params))


def test_z_products_statistical():
    params = ChannelParams(0.3, 0.6)
    pop = evolve_one_level(init_population(100_000, 0.3), params, 100_000, 6)
    reports = check_z_products(pop, params, size=200_000, seed=1)
    assert reports[0].passed
    assert sum(not r.passed for r in reports) <= 1


def test_reports_to_json():
    reports = check_lemma1(estimate_moments(init_population(1, 0.3)).value)
    data = json.loads(reports_to_json(reports))
    assert len(data) == 11 and set(data[0]) >= {"name", "lhs", "rhs", "tolerance", "passed", "mode"}


def test_u_recursion_zero_state():
    zero = MomentVector.from_array(np.zeros(12), 0.3)
    assert u_recursion_residual(zero, zero, ChannelParams(0.3, 0.5)) == 0.0
    assert check_u_recursion(zero, zero, ChannelParams(0.3, 0.5)).passed


def _symmetrized_deep_law(params, levels=8, size=120):
    pop = init_population(size, params.theta)
    for _ in range(levels):
        pop = evolve_one_level(pop, params, size, 3)
    return unconditional_atoms(pop)


def test_u_recursion_remainder_is_quadratic():
    params = ChannelParams.from_dlambda2(0.3, 0.8, 2)
    atoms, w = _symmetrized_deep_law(params)
    pi = params.pi
    s_max = float(np.min(pi / np.maximum(np.abs(atoms - pi), 1e-300)))
    xs, rs, pairs = [], [], []
    for f in (0.4, 0.2, 0.1):
        law = symmetrized_law(atoms, w, params.theta, f * s_max)
        prev = estimate_moments(law).value
        nxt = exact_next_moments(law, params)
        xs.append(prev.x_th)
        rs.append(u_recursion_residual(prev, nxt, params))
        pairs.append((prev, nxt))
    c = fit_remainder_constant(xs[:2], rs[:2], 2)
    assert abs(rs[2]) <= 2 * c * xs[2] ** 2
    assert check_u_recursion(*pairs[2], params, constant=2 * c).passed
    assert not check_u_recursion(*pairs[2], params, constant=0.0).passed


def test_fit_remainder_constant():
    assert fit_remainder_constant([0.1, 0.2], [2e-3, 8e-3], 2) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        fit_remainder_constant([0.0], [1.0], 2)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast.channel import (
    ChannelParams,
    ParameterError,
    ValidationError,
    branch_length_to_lambda,
    ks_threshold_lambda,
    make_rate_matrix,
    make_transition,
    matrix_from_json,
    matrix_to_json,
    multi_step_closed_form,
    spectral_check,
    stationary_distribution,
)

thetas = st.floats(0.01, 0.99)
lambdas = st.floats(-1.0, 1.0)
arities = st.integers(2, 6)


def test_rate_matrix_at_half():
    q = make_rate_matrix(0.5)
    assert np.allclose(np.diag(q), -0.75, atol=1e-15)
    off = q[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 0.25, atol=1e-15)


def test_rate_matrix_entry():
    # row A, column G: (1 - theta)/2
    assert make_rate_matrix(0.3)[0][2] == pytest.approx(0.35, abs=1e-15)


@given(thetas)
def test_rate_matrix_rows_sum_to_zero(theta):
    assert np.allclose(make_rate_matrix(theta).sum(axis=1), 0.0, atol=1e-14)


@pytest.mark.parametrize("theta", [0.0, 1.0, -0.2, 1.5])
def test_rate_matrix_rejects_theta(theta):
    with pytest.raises(ParameterError):
        make_rate_matrix(theta)


def test_transition_potts_case():
    p = make_transition(ChannelParams(0.5, 0.6))
    assert np.allclose(np.diag(p), 0.7, atol=1e-15)
    assert np.allclose(p[~np.eye(4, dtype=bool)], 0.1, atol=1e-15)


def test_transition_extremes():
    assert np.allclose(make_transition(ChannelParams(0.3, 1.0)), np.eye(4), atol=1e-15)
    p0 = make_transition(ChannelParams(0.3, 0.0))
    assert np.allclose(p0, np.tile(stationary_distribution(0.3), (4, 1)), atol=1e-15)


@given(thetas, lambdas)
def test_transition_structure(theta, lam):
    params = ChannelParams(theta, lam)
    p = make_transition(params)
    pi = params.pi
    assert np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.allclose(pi @ p, pi, rtol=0, atol=1e-12)
    assert np.allclose(p, lam * np.eye(4) + (1 - lam) * np.outer(np.ones(4), pi), rtol=0, atol=1e-14)
    if lam >= 0:
        assert np.all(p >= 0) and np.all(p <= 1)


def test_negative_lambda_can_be_non_stochastic():
    assert not ChannelParams(0.1, -0.5).is_stochastic
    assert ChannelParams(0.5, -0.3).is_stochastic


def test_branch_length():
    assert branch_length_to_lambda(0.0, 0.3) == 1.0
    assert branch_length_to_lambda(0.75, 0.5) == pytest.approx(math.exp(-1), rel=1e-15)
    vals = [branch_length_to_lambda(v, 0.3) for v in (0, 0.1, 1, 10, 100)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-60
    with pytest.raises(ParameterError):
        branch_length_to_lambda(-0.1, 0.3)


def test_stationary_distribution():
    assert np.allclose(stationary_distribution(0.3), [0.15, 0.15, 0.35, 0.35], atol=1e-16)
    assert np.allclose(stationary_distribution(0.5), 0.25)


@given(thetas)
def test_stationary_sums_to_one(theta):
    assert stationary_distribution(theta).sum() == pytest.approx(1.0, abs=1e-15)


def test_spectral_check_example():
    leading, second, mult = spectral_check(make_transition(ChannelParams(0.3, 0.4)))
    assert leading == pytest.approx(1.0, abs=1e-10)
    assert second == pytest.approx(0.4, abs=1e-10)
    assert mult == 3


def test_spectral_check_extremes():
    _, second, mult = spectral_check(make_transition(ChannelParams(0.3, 0.0)))
    assert abs(second) < 1e-10 and mult == 3
    leading, second, mult = spectral_check(make_transition(ChannelParams(0.3, 1.0)))
    assert leading == pytest.approx(1.0) and second == pytest.approx(1.0) and mult == 3


def test_spectral_check_rejects_non_stochastic():
    with pytest.raises(ValidationError):
        spectral_check(np.eye(4) * 2)
    with pytest.raises(ValidationError):
        spectral_check(np.eye(3))


def test_multi_step_examples():
    params = ChannelParams(0.3, 0.5)
    assert np.allclose(multi_step_closed_form(params, 1), make_transition(params), atol=1e-15)
    m2 = multi_step_closed_form(params, 2)
    assert m2[0][0] == pytest.approx(0.3625, abs=1e-15)
    assert np.allclose(m2, make_transition(params) @ make_transition(params), atol=1e-15)


def test_multi_step_named_entries():
    t, lam, s = 0.3, 0.6, 4
    m = multi_step_closed_form(ChannelParams(t, lam), s)
    assert m[0][0] == pytest.approx(t / 2 + (1 - t / 2) * lam**s, abs=1e-15)
    assert m[2][0] == pytest.approx(t / 2 - t / 2 * lam**s, abs=1e-15)
    assert m[0][2] == pytest.approx((1 - t) / 2 - (1 - t) / 2 * lam**s, abs=1e-15)


@given(thetas, lambdas, st.integers(1, 30))
def test_multi_step_matches_matrix_power(theta, lam, s):
    params = ChannelParams(theta, lam)
    expected = np.linalg.matrix_power(make_transition(params), s)
    assert np.allclose(multi_step_closed_form(params, s), expected, rtol=0, atol=1e-12)


@settings(max_examples=200)
@given(thetas, st.floats(0.0, 1.0), arities, st.integers(1, 30))
def test_multi_step_deviation_bound_below_ks(theta, frac, d, s):
    lam = frac / math.sqrt(d)
    params = ChannelParams(theta, lam, d)
    dev = multi_step_closed_form(params, s) - np.tile(params.pi, (4, 1))
    assert np.max(np.abs(dev)) <= d ** (-s / 2) + 1e-15


def test_multi_step_rejects_bad_s():
    with pytest.raises(ParameterError):
        multi_step_closed_form(ChannelParams(0.3, 0.5), 0)


@pytest.mark.parametrize("d,expected", [(4, 0.5), (2, 1 / math.sqrt(2)), (100, 0.1)])
def test_ks_threshold(d, expected):
    assert ks_threshold_lambda(d) == pytest.approx(expected, rel=1e-15)


def test_params_validation_and_dlambda2():
    with pytest.raises(ParameterError):
        ChannelParams(0.3, 1.2)
    with pytest.raises(ParameterError):
        ChannelParams(0.3, 0.5, 1)
    p = ChannelParams.from_dlambda2(0.3, 1.2, 2)
    assert p.dlambda2 == pytest.approx(1.2) and not p.sub_ks
    assert ChannelParams.from_dlambda2(0.3, 0.5, 3).sub_ks


def test_matrix_json_round_trip():
    p = make_transition(ChannelParams(0.3, 0.4))
    assert np.array_equal(matrix_from_json(matrix_to_json(p)), p)
    with pytest.raises(ValidationError):
        matrix_from_json("[[1, 0], [0, 1]]")

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lwnn.errors import InvalidParameterError, NoFitError
from lwnn.filters import (
    FilterPair,
    WaveletParams,
    check_qmf,
    filter_gradients,
    fit_params_to_filter,
    lowpass_taps,
    make_filters,
    qmf_residuals,
)

INV_SQRT2 = 1 / math.sqrt(2)
HAAR6 = np.array([0, 0, INV_SQRT2, INV_SQRT2, 0, 0])

# Daubechies 6-tap (db3) scaling filter, standard published values, sum = sqrt(2).
DB6 = np.array(
    [
        0.3326705529500826,
        0.8068915093110925,
        0.4598775021184915,
        -0.1350110200102546,
        -0.0854412738820267,
        0.0352262918857095,
    ]
)

angles = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


def test_haar_at_origin():
    pair = make_filters(WaveletParams(0.0, 0.0))
    np.testing.assert_allclose(pair.lowpass, HAAR6, atol=1e-12, rtol=0)


@pytest.mark.parametrize("t", [0.3, -1.7, 2.5, 10.0])
def test_equal_angles_collapse_to_haar(t):
    np.testing.assert_allclose(make_filters((t, t)).lowpass, HAAR6, atol=1e-12, rtol=0)


def test_random_angles_satisfy_conditions():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 2 * np.pi, size=(2, 10_000))
    h = lowpass_taps(a, b)
    assert np.abs(h.sum(axis=0) - math.sqrt(2)).max() < 1e-10
    assert np.abs((h * h).sum(axis=0) - 1).max() < 1e-10
    assert np.abs(h[0] * h[2] + h[2] * h[4] + h[1] * h[3] + h[3] * h[5]).max() < 1e-10


def test_highpass_is_alternating_flip():
    pair = make_filters((0.4, 1.9))
    expected = [(-1) ** n * pair.lowpass[5 - n] for n in range(6)]
    np.testing.assert_array_equal(pair.highpass, expected)
    assert abs(pair.highpass.sum()) < 1e-10


@given(angles, angles)
def test_qmf_orthogonality_at_even_shifts(a, b):
    pair = make_filters((a, b))
    h, g = pair.lowpass, pair.highpass
    for k in range(-2, 3):
        # sum_n h(n) g(n - 2k) over the overlapping support
        s = sum(h[n] * g[n - 2 * k] for n in range(6) if 0 <= n - 2 * k < 6)
        assert abs(s) < 1e-10


@given(angles, angles)
def test_periodic_in_both_angles(a, b):
    base = make_filters((a, b)).lowpass
    np.testing.assert_allclose(make_filters((a + 2 * np.pi, b)).lowpass, base, atol=1e-12, rtol=0)
    np.testing.assert_allclose(make_filters((a, b + 2 * np.pi)).lowpass, base, atol=1e-12, rtol=0)


@pytest.mark.parametrize("bad", [(math.nan, 0.0), (0.0, math.inf), (-math.inf, 1.0)])
def test_non_finite_angles_rejected(bad):
    with pytest.raises(InvalidParameterError):
        make_filters(bad)
    with pytest.raises(InvalidParameterError):
        filter_gradients(bad)


def test_gradient_of_h2_at_origin():
    g = filter_gradients((0.0, 0.0))
    assert g.d_lowpass_d_alpha[2] == pytest.approx(1 / (2 * math.sqrt(2)), abs=1e-15)
    assert g.d_lowpass_d_beta[2] == pytest.approx(-1 / (2 * math.sqrt(2)), abs=1e-15)


@given(angles, angles)
def test_gradients_sum_to_zero(a, b):
    g = filter_gradients((a, b))
    assert abs(g.d_lowpass_d_alpha.sum()) < 1e-10
    assert abs(g.d_lowpass_d_beta.sum()) < 1e-10


def test_gradients_match_central_differences():
    rng = np.random.default_rng(7)
    step = 1e-6
    for a, b in rng.uniform(-np.pi, 3 * np.pi, size=(100, 2)):
        g = filter_gradients((a, b))
        fd_a = (make_filters((a + step, b)).lowpass - make_filters((a - step, b)).lowpass) / (2 * step)
        fd_b = (make_filters((a, b + step)).lowpass - make_filters((a, b - step)).lowpass) / (2 * step)
        for analytic, fd in ((g.d_lowpass_d_alpha, fd_a), (g.d_lowpass_d_beta, fd_b)):
            # relative to the gradient's overall scale so that near-zero taps are not amplified
            scale = max(np.abs(analytic).max(), 1e-12)
            assert np.abs(analytic - fd).max() / scale < 1e-6


def test_check_qmf_haar_exact():
    report = check_qmf(make_filters((0, 0)), tol=1e-10)
    assert report.passed
    np.testing.assert_allclose(report.residuals, (0, 0, 0), atol=1e-15)


def test_check_qmf_detects_perturbation():
    h = make_filters((0, 0)).lowpass.copy()
    h[2] += 0.01
    report = check_qmf(FilterPair(h, h), tol=1e-10)
    assert not report.passed
    assert report.sum_residual == pytest.approx(0.01, abs=1e-12)


def test_check_qmf_generic_angles():
    assert check_qmf(make_filters((1.0, 2.0)), tol=1e-10).passed


def test_check_qmf_requires_positive_tol():
    with pytest.raises(ValueError):
        check_qmf(make_filters((0, 0)), tol=0)


def test_fit_haar_lands_on_equal_angles():
    params, residual = fit_params_to_filter(HAAR6, restarts=8)
    assert residual < 1e-10
    diff = (params.alpha - params.beta) % (2 * math.pi)
    assert min(diff, 2 * math.pi - diff) < 1e-6


@pytest.mark.parametrize("target", [DB6, DB6[::-1]], ids=["db6", "db6-reversed"])
def test_fit_daubechies6(target):
    assert max(abs(r) for r in qmf_residuals(target)) < 1e-6
    params, residual = fit_params_to_filter(target, restarts=16)
    assert residual < 1e-6
    np.testing.assert_allclose(make_filters(params).lowpass, target, atol=1e-6)


def test_fit_rejects_impossible_target():
    with pytest.raises(NoFitError) as info:
        fit_params_to_filter(np.zeros(6), restarts=4)
    assert info.value.residual > 1e-4

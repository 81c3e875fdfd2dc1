import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import cholesky
from scipy.special import j0 as scipy_j0

from hyperce.correlation import (ChannelParams, bessel_j0, build_wiener_matrices, correlation_between,
                                 freq_correlation, re_correlation, sinc, time_correlation)
from hyperce.numerology import default_numerology

from helpers import j0_series

NUM = default_numerology()


def params(tmu=1e-6, tw=0.5e-6, fd=100.0, snr=10.0):
    return ChannelParams(tmu, tw, fd, snr)


def first_j0_zero():
    lo, hi = 2.0, 3.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if j0_series(lo) * j0_series(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_j0_values():
    assert bessel_j0(0.0) == 1.0
    assert abs(bessel_j0(2.404826)) < 1e-5
    assert abs(first_j0_zero() - 2.404826) < 1e-6
    assert bessel_j0(1.0) == pytest.approx(j0_series(1.0, 30), abs=1e-6)
    assert bessel_j0(1.0) == pytest.approx(0.7651977, abs=1e-6)


def test_j0_agrees_with_reference_across_switch_point():
    x = np.linspace(0.0, 20.0, 4001)
    assert np.max(np.abs(bessel_j0(x) - scipy_j0(x))) < 1e-8
    small = np.linspace(0.0, 6.0, 61)
    assert np.max(np.abs(bessel_j0(small) - [j0_series(v, 80) for v in small])) < 1e-12


def test_j0_is_even():
    x = np.linspace(0, 30, 97)
    assert np.array_equal(bessel_j0(-x), bessel_j0(x))


def test_sinc_values():
    assert sinc(0.0) == 1.0
    assert abs(sinc(np.pi)) < 1e-15
    assert sinc(np.pi / 2) == pytest.approx(2 / np.pi, abs=1e-6)


def test_freq_correlation_examples():
    p = params()
    assert freq_correlation(0, p, NUM) == 1 + 0j
    assert np.all(np.imag(freq_correlation(np.arange(-9, 10), params(tmu=0.0), NUM)) == 0)
    dk = 7
    tw = 1.0 / (dk * NUM.subcarrier_spacing_hz)
    assert abs(freq_correlation(dk, params(tw=tw), NUM)) < 1e-12


def test_time_correlation_examples():
    assert time_correlation(0, params(), NUM) == 1.0
    assert np.all(time_correlation(np.arange(30), params(fd=0.0), NUM) == 1.0)
    assert time_correlation(14, params(fd=300.0), NUM) == pytest.approx(j0_series(2 * np.pi * 0.3), abs=1e-6)


def test_re_correlation_separable():
    p = params()
    assert re_correlation(0, 0, p, NUM) == 1 + 0j
    assert re_correlation(5, 0, p, NUM) == freq_correlation(5, p, NUM)
    assert re_correlation(3, 5, p, NUM) == freq_correlation(3, p, NUM) * time_correlation(5, p, NUM)


def test_single_re_wiener_matrices():
    cross, auto = build_wiener_matrices([[3, 2]], [[3, 2]], params(), NUM)
    assert cross.shape == (1, 1) and auto.shape == (1, 1)
    assert cross[0, 0] == 1 and auto[0, 0] == 1


def test_auto_is_kronecker_on_sub_lattice():
    p = params(fd=250.0)
    freq, time = (2, 9), (1, 6)
    pos = np.array([[k, n] for k in freq for n in time])
    _, auto = build_wiener_matrices(pos, pos, p, NUM)
    rf = np.array([[freq_correlation(a - b, p, NUM) for b in freq] for a in freq])
    rt = np.array([[time_correlation(a - b, p, NUM) for b in time] for a in time])
    assert np.max(np.abs(auto - np.kron(rf, rt))) < 1e-12


def test_empty_pilots_rejected():
    with pytest.raises(ValueError):
        build_wiener_matrices([[0, 0]], np.zeros((0, 2)), params(), NUM)


@pytest.mark.parametrize("kw", [dict(tw=-1e-9), dict(fd=-1.0), dict(snr=0.0), dict(snr=-1.0)])
def test_channel_params_rejects_invalid(kw):
    with pytest.raises(ValueError):
        params(**kw)


param_strategy = st.builds(
    ChannelParams,
    st.floats(-3e-6, 3e-6),
    st.floats(0, 5e-6),
    st.floats(0, 500),
    st.floats(10 ** -0.5, 1e4),
)


@settings(max_examples=40, deadline=None)
@given(param_strategy, st.integers(0, 2**31 - 1))
def test_loaded_auto_is_hermitian_positive_definite(p, seed):
    rng = np.random.default_rng(seed)
    pos = np.stack([rng.choice(48, 6, replace=False).repeat(2), np.tile([0, 9], 6)], axis=1)
    _, auto = build_wiener_matrices(pos, pos, p, NUM)
    assert np.max(np.abs(auto - auto.conj().T)) < 1e-12
    cholesky(auto + np.eye(len(auto)) / p.snr_linear, lower=True)


@given(param_strategy, st.integers(-200, 200), st.integers(-40, 40))
def test_correlation_bounded_and_symmetric(p, dk, dn):
    assert abs(re_correlation(dk, dn, p, NUM)) <= 1 + 1e-12
    assert freq_correlation(-dk, p, NUM) == pytest.approx(np.conj(freq_correlation(dk, p, NUM)), abs=1e-15)
    assert time_correlation(-dn, p, NUM) == time_correlation(dn, p, NUM)


def test_correlation_between_matches_scalar_calls():
    p = params()
    a = np.array([[0, 0], [5, 3], [11, 9]])
    b = np.array([[2, 1], [7, 7]])
    m = correlation_between(a, b, p, NUM)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            assert m[i, j] == pytest.approx(re_correlation(x[0] - y[0], x[1] - y[1], p, NUM), abs=1e-15)

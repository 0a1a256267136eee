import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tddsimo.channel import ChannelRealization, RngStream, complex_normal, sample_channel
from tddsimo.errors import InvalidParameterError
from tddsimo.training import (
    CsirEstimate,
    forward_train,
    power_controlled_train,
    reverse_train,
    reverse_train_orthogonal,
    reverse_train_threeway,
)

N = 1_000_000


def _channel(seed, n=N, r=3):
    return sample_channel(r, RngStream(seed), size=n)


def test_forward_noiseless_high_power_recovers_channel():
    ch = _channel(1, n=100)
    est = forward_train(ch, 1e12, 1, None)
    assert np.allclose(est.h_hat, ch.h, rtol=1e-11)
    assert est.error_var < 1e-11
    assert np.allclose(np.linalg.norm(est.v_hat, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(est.h_hat_norm, np.linalg.norm(est.h_hat, axis=-1), rtol=1e-12)


def test_forward_error_variance_formula():
    assert forward_train(_channel(2, n=4), 10.0, 1, None).error_var == 1 / 11


def test_forward_error_variance_monte_carlo():
    ch = _channel(3)
    est = forward_train(ch, 100.0, 1, np.random.default_rng(4))
    err = np.abs(ch.h - est.h_hat) ** 2
    assert np.allclose(err.mean(axis=0), 1 / 101, rtol=0.01)
    assert est.symbols == 1


def test_forward_rejects_bad_arguments():
    ch = _channel(5, n=2)
    with pytest.raises(InvalidParameterError):
        forward_train(ch, 0.0, 1, None)
    with pytest.raises(InvalidParameterError):
        forward_train(ch, 10.0, 0, None)


def test_reverse_noiseless_exact():
    ch = _channel(6, n=100)
    assert np.array_equal(reverse_train(ch, None, 100.0, 1, None).sigma_hat, ch.sigma)
    assert np.allclose(reverse_train(ch, ch.v, 100.0, 1, None).sigma_hat, ch.sigma, rtol=1e-13)


def test_reverse_orthogonal_direction_gives_zero():
    h = np.array([1.0 + 1j, 2.0, 0.5j])
    ch = ChannelRealization.from_vector(h)
    u = np.array([2.0, -(1.0 - 1j), 0.0])
    u = u / np.linalg.norm(u)
    assert abs(np.vdot(ch.v, u)) < 1e-15
    assert abs(reverse_train(ch, u, 100.0, 1, None).sigma_hat) < 1e-15


def test_reverse_unbiased_with_expected_variance():
    ch = _channel(7)
    est = reverse_train(ch, ch.v, 100.0, 1, np.random.default_rng(8))
    err = est.sigma_hat - ch.sigma
    assert abs(err.mean()) <= 3 * err.std() / math.sqrt(N)
    assert err.var() == pytest.approx(1 / 200, rel=0.02)
    assert est.noise_var == 1 / 200


def test_reverse_grand_mean_ten_million():
    total = total_sq = 0.0
    for block in range(10):
        ch = sample_channel(3, RngStream(9, block), size=N)
        err = reverse_train(ch, None, 100.0, 1, RngStream(10, block).generator()).sigma_hat - ch.sigma
        total += err.sum()
        total_sq += (err**2).sum()
    n = 10 * N
    mean = total / n
    se = math.sqrt((total_sq / n - mean**2) / n)
    assert abs(mean) <= 4 * se


def test_reverse_requires_unit_direction():
    ch = _channel(11, n=3)
    with pytest.raises(InvalidParameterError):
        reverse_train(ch, 2 * ch.v, 100.0, 1, None)


@settings(max_examples=200, deadline=None)
@given(
    re=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    im=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    w=st.floats(-1e3, 1e3),
)
def test_estimate_magnitude_bound_per_trial(re, im, w):
    h = np.array(re) + 1j * np.array(im)
    assume(np.sum(np.abs(h) ** 2) > 0)
    ch = ChannelRealization.from_vector(h)
    est = reverse_train(ch, None, 10.0, 1, None, w_bar=np.float64(w))
    assert abs(est.sigma_hat) <= ch.sigma + abs(est.w_bar)


def test_threeway_noiseless_perfect_csir_reduction():
    ch = _channel(12, n=100)
    csir = CsirEstimate(h_hat=ch.h, error_var=0.0, v_hat=ch.v, h_hat_norm=ch.sigma, symbols=1)
    est = reverse_train_threeway(csir, ch, 100.0, 1, None)
    assert np.allclose(est.sigma_hat, ch.sigma, rtol=1e-13)


def test_threeway_effective_noise_variance():
    ch = _channel(13)
    rng = np.random.default_rng(14)
    csir = forward_train(ch, 100.0, 1, rng)
    est = reverse_train_threeway(csir, ch, 100.0, 1, rng)
    expected = 1 / (2 * 101) + 1 / 200
    assert est.noise_var == pytest.approx(expected, rel=1e-12)
    assert est.w_eff.var() == pytest.approx(expected, rel=0.02)


def test_threeway_noise_halves_when_power_doubles():
    variances = []
    for pbar in (100.0, 200.0):
        ch = _channel(15)
        rng = np.random.default_rng(16)
        csir = forward_train(ch, pbar, 1, rng)
        variances.append(reverse_train_threeway(csir, ch, pbar, 1, rng).w_eff.var())
    assert variances[1] / variances[0] == pytest.approx(0.5, rel=0.05)


def test_orthogonal_noiseless_is_shrunk_gain():
    ch = _channel(17, n=100)
    for pbar in (10.0, 1e8):
        est = reverse_train_orthogonal(ch, pbar, 1, None)
        assert np.allclose(est.sigma_hat, ch.sigma * pbar / (1 + pbar), rtol=1e-13)
    assert np.allclose(reverse_train_orthogonal(ch, 1e14, 1, None).sigma_hat, ch.sigma, rtol=1e-12)


def test_orthogonal_second_moment():
    ch = _channel(18)
    est = reverse_train_orthogonal(ch, 100.0, 1, np.random.default_rng(19))
    r, snr = 3, 100.0
    expected = r * snr**2 / (1 + snr) ** 2 + r * snr / (1 + snr) ** 2
    assert np.mean(est.sigma_hat**2) == pytest.approx(expected, rel=0.02)
    assert np.all(est.sigma_hat >= 0)


def test_orthogonal_single_antenna_is_scalar_mmse():
    ch = _channel(20, n=1000, r=1)
    rng_a, rng_b = np.random.default_rng(21), np.random.default_rng(21)
    est = reverse_train_orthogonal(ch, 10.0, 2, rng_a)
    snr = 20.0
    y = np.conj(ch.h[:, 0]) * math.sqrt(snr) + complex_normal(rng_b, (1000, 1))[:, 0]
    assert np.allclose(est.sigma_hat, np.abs(y * math.sqrt(snr) / (1 + snr)), rtol=1e-13)


def test_training_durations():
    ch = _channel(22, n=4, r=5)
    assert reverse_train(ch, None, 10.0, 2, None).symbols == 2
    assert reverse_train_orthogonal(ch, 10.0, 2, None).symbols == 10
    csir = forward_train(ch, 10.0, 3, None)
    assert csir.symbols == 3
    assert reverse_train_threeway(csir, ch, 10.0, 2, None).symbols == 2
    assert power_controlled_train(ch.h, 10.0, 4, None).symbols == 4


def test_composite_noiseless_exact():
    p = complex_normal(np.random.default_rng(23), (10, 3))
    est = power_controlled_train(p, 100.0, 1, None)
    assert np.array_equal(est.p_hat, p)
    assert est.cond_error_var == 3 / 100


def test_composite_error_energy():
    p = complex_normal(np.random.default_rng(24), (N, 3))
    est = power_controlled_train(p, 100.0, 1, np.random.default_rng(25))
    assert np.allclose(p - est.p_hat, est.error, atol=1e-15)
    assert np.mean(np.sum(np.abs(est.error) ** 2, axis=-1)) == pytest.approx(3 / 100, rel=0.02)


def test_composite_error_uncorrelated_with_estimate():
    # for the least-squares estimate the error is independent of the channel,
    # so correlation is checked against the estimate's channel component
    rng = np.random.default_rng(26)
    p = complex_normal(rng, (N, 3))
    est = power_controlled_train(p, 100.0, 1, rng)
    a = np.sum(np.abs(p) ** 2, axis=-1)
    b = np.sum(np.abs(est.error) ** 2, axis=-1)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) <= 4 / math.sqrt(N)


def test_composite_moment_scaling_quick():
    grid = np.array([1e2, 1e3, 1e4, 1e5])
    for z in (1, 2, 3):
        moments = []
        for pbar in grid:
            err = power_controlled_train(np.zeros((200_000, 3), complex), pbar, 1, np.random.default_rng(27)).error
            moments.append(np.mean(np.sum(np.abs(err) ** 2, axis=-1) ** z))
        slope = np.polyfit(np.log(grid), np.log(moments), 1)[0]
        assert slope == pytest.approx(-z, abs=0.05)

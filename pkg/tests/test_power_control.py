import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tddsimo.channel import RngStream
from tddsimo.config import SystemConfig
from tddsimo.errors import CalibrationInfeasibleError
from tddsimo.power_control import (
    GainDistribution,
    PowerPolicy,
    SigmaHatModel,
    calibrate,
    check_average_power,
    data_power,
    phi,
    sigma_hat_distribution,
    simulate_sigma_hat,
)
from tddsimo.verify import kappa_slope


def _policy(pbar=100.0, kappa=5.0, s=1.0, l=2.0, rate=1.0, alpha=1.0):
    return PowerPolicy(kappa=kappa, theta=pbar**-0.5, s=s, l=l, rate_nats=rate, alpha=alpha, pbar=pbar)


def test_phi_examples():
    assert phi(2.5, 0.0, 0.9) == 0.0
    assert phi(1.0, 1.0, 0.5) == pytest.approx(math.e**2 - 1, rel=1e-15)
    assert phi(4.0, 1.3, 0.7) == pytest.approx(phi(2.0, 1.3, 0.7) / 2, rel=1e-15)


def test_phi_zero_gain():
    with pytest.raises(ZeroDivisionError):
        phi(0.0, 1.0, 0.5)


def test_data_power_examples():
    pol = _policy()
    assert data_power(-0.3, pol) == 1e4
    assert data_power(pol.theta, pol) == 1e4
    assert data_power(2.0, pol) == pytest.approx(5 * (math.e - 1) / 4, rel=1e-15)
    assert data_power(2.0, pol, 100.0) == data_power(2.0, pol)


def test_data_power_vectorized():
    pol = _policy()
    x = np.array([-1.0, 0.0, 0.1, 0.1000001, 2.0])
    out = data_power(x, pol)
    assert out.shape == x.shape
    assert np.all(out[:3] == 1e4)
    assert out[4] == pytest.approx(5 * (math.e - 1) / 4)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(allow_nan=False, allow_infinity=False), s=st.floats(1, 4.9))
def test_data_power_total(x, s):
    p = data_power(x, _policy(s=s))
    assert math.isfinite(p) and p >= 0


def test_noiseless_inverse_moment_limit():
    for r in (2, 3, 5):
        dist = GainDistribution(r)
        assert dist.inverse_moment_above(1e-9, 1.0) == pytest.approx(1 / (r - 1), rel=1e-9)


def test_noiseless_calibration_closed_form():
    # theta -> 0 with exact gain knowledge: kappa = pbar / (expm1(R/alpha) E[1/sigma^2])
    r, pbar, gain = 3, 1e8, math.expm1(2.0)
    dist = GainDistribution(r)
    kappa = (pbar - pbar**2 * dist.prob_below(pbar**-0.5)) / (gain * dist.inverse_moment_above(pbar**-0.5, 1.0))
    assert kappa == pytest.approx(pbar * (r - 1) / gain, rel=1e-6)


@pytest.mark.parametrize("r,b,v", [(1, 1.0, 0.05), (3, 1.0, 0.005), (2, 1.01, 0.01), (5, 1.0, 0.5)])
def test_density_matches_numerical_convolution(r, b, v):
    dist = GainDistribution(r, b, v)
    sd = math.sqrt(v)
    mpmath.mp.dps = 30
    for x in (-0.2, 0.05, 0.5, 1.3, 2.5):

        def f(y):
            gain = 2 * mpmath.mpf(b) ** r / mpmath.gamma(r) * y ** (2 * r - 1) * mpmath.exp(-b * y * y)
            return gain * mpmath.npdf(x, y, mpmath.sqrt(v))

        direct = float(mpmath.quad(f, [0, 0.05, 0.2, 1, 3, 12]))
        assert dist.pdf(x) == pytest.approx(direct, rel=1e-9)
    total, _ = integrate.quad(lambda x: float(dist.pdf(x)), -12 * sd, 12, limit=400)
    assert total == pytest.approx(1.0, abs=1e-7)


def test_probability_below_threshold_closed_form_and_noisy():
    assert GainDistribution(3, 2.0).prob_below(0.5) == pytest.approx(0.01438767796, rel=1e-9)
    dist = GainDistribution(2, 1.0, 0.02)
    exact, _ = integrate.quad(lambda x: float(dist.pdf(x)), -3, 0.3, limit=200)
    assert dist.prob_below(0.3) == pytest.approx(exact, rel=1e-7)


def test_inverse_moment_closed_form_matches_quadrature():
    dist = GainDistribution(3, 1.3)
    exact, _ = integrate.quad(lambda x: x**-2 * float(dist.pdf_z(x)), 0.2, 20, limit=200)
    assert dist.inverse_moment_above(0.2, 1.0) == pytest.approx(exact, rel=1e-9)


def test_inverse_moment_quadrature_matches_monte_carlo():
    dist = GainDistribution(3, 1.0, 1 / 200)
    theta = 0.1
    quad = dist.inverse_moment_above(theta, 1.0)
    total = 0.0
    for block in range(10):
        x = dist.sample(RngStream(31, block).generator(), 1_000_000)
        total += np.sum(np.where(x > theta, 1.0 / np.maximum(x, theta) ** 2, 0.0))
    assert total / 1e7 == pytest.approx(quad, rel=0.005)


def test_distribution_parameters_follow_training():
    cfg = SystemConfig(r=3, lb_tau=2, la_tau1=3)
    perfect = sigma_hat_distribution(SigmaHatModel.PERFECT_CSIR, cfg, 10.0)
    assert (perfect.b, perfect.noise_var) == (1.0, 1 / 40)
    three = sigma_hat_distribution(SigmaHatModel.THREE_WAY, cfg, 10.0)
    assert three.b == pytest.approx(31 / 30)
    assert three.noise_var == pytest.approx(1 / 62 + 1 / 40)
    orth = sigma_hat_distribution(SigmaHatModel.ORTHOGONAL, cfg, 10.0)
    assert orth.b == pytest.approx(21 / 20) and orth.noise_var == 0.0


@pytest.mark.parametrize("model", list(SigmaHatModel))
def test_distribution_matches_simulated_estimates(model):
    cfg = SystemConfig(r=3)
    dist = sigma_hat_distribution(model, cfg, 20.0)
    x = simulate_sigma_hat(model, cfg, 20.0, np.random.default_rng(32), 400_000)
    for t in (0.3, 1.0, 2.0):
        p = dist.prob_below(t)
        assert np.mean(x <= t) == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / x.size) + 1e-4)


def test_calibration_average_power_at_reference_point():
    cfg = SystemConfig(r=3, s=1, l=2, g_m=0.5)
    pol = calibrate(cfg, 1e4, seed=5)
    assert 0.98 <= pol.mc_ratio <= 1.02
    assert pol.theta == 1e-2 and pol.target == 1e4
    assert pol.kappa > 0


def test_importance_check_agrees_with_plain_sampling():
    cfg = SystemConfig(r=3, s=1, l=2, g_m=0.3)
    pol = calibrate(cfg, 100.0, mc_samples=0)
    ratio, stderr = check_average_power(pol, cfg, 400_000, 6)
    x = simulate_sigma_hat(SigmaHatModel.PERFECT_CSIR, cfg, 100.0, np.random.default_rng(7), 2_000_000)
    plain = data_power(x, pol) / pol.target
    plain_se = plain.std() / math.sqrt(plain.size)
    assert abs(ratio - plain.mean()) <= 4 * math.hypot(stderr, plain_se)


def test_three_way_normalizes_to_unit_mean():
    cfg = SystemConfig(r=3, s=1, l=2, g_m=0.5)
    pol = calibrate(cfg, 1e3, SigmaHatModel.THREE_WAY, seed=8)
    assert pol.target == 1.0
    assert abs(pol.mc_ratio - 1) <= 0.02


def test_orthogonal_uses_unit_exponent():
    cfg = SystemConfig(r=3, s=2, l=2, g_m=0.5)
    pol = calibrate(cfg, 1e3, SigmaHatModel.ORTHOGONAL, seed=9)
    assert pol.s == 1.0 and pol.alpha == 37 / 40
    assert abs(pol.mc_ratio - 1) <= 0.02


def test_kappa_exponent():
    slope, expected, _ = kappa_slope()
    assert expected == pytest.approx(1 - 0.5 * 40 / 39)
    assert slope == pytest.approx(expected, abs=0.03)


def test_kappa_increases_with_power():
    for g_m in (0.0, 0.5, 0.9):
        cfg = SystemConfig(r=3, s=1, l=2, g_m=g_m, rate_offset_bits=1)
        k = [calibrate(cfg, p, mc_samples=0).kappa for p in np.logspace(1, 6, 11)]
        assert all(b > a for a, b in zip(k, k[1:]))


@pytest.mark.parametrize(
    "changes,model",
    [
        ({"s": 3.0}, SigmaHatModel.PERFECT_CSIR),
        ({"g_m": 0.98}, SigmaHatModel.PERFECT_CSIR),
        ({"l": 5.0}, SigmaHatModel.PERFECT_CSIR),
        ({"l": 4.0}, SigmaHatModel.THREE_WAY),
        ({"g_m": 0.0, "rate_offset_bits": 0.0}, SigmaHatModel.PERFECT_CSIR),
    ],
)
def test_infeasible_parameters(changes, model):
    cfg = SystemConfig(r=3, s=1, l=2, g_m=0.5).replace(**changes)
    with pytest.raises(CalibrationInfeasibleError):
        calibrate(cfg, 100.0, model, mc_samples=0)


def test_floor_budget_overrun_below_boundary_exponent_is_infeasible():
    cfg = SystemConfig(r=2, s=1, l=2.9, g_m=0.0, rate_offset_bits=1)
    with pytest.raises(CalibrationInfeasibleError, match="floor branch"):
        calibrate(cfg, 10.0, mc_samples=0)


def test_boundary_exponent_shrinks_floor_by_power_of_two():
    cfg = SystemConfig(r=2, s=1, l=3, g_m=0.0, rate_offset_bits=1)
    pol = calibrate(cfg, 10.0, seed=10)
    k = -math.log2(pol.low_power_scale)
    assert k == int(k) and k >= 1
    full = pol.floor_power_mass / pol.low_power_scale
    assert full * pol.low_power_scale < pol.target <= full * pol.low_power_scale * 2
    assert abs(pol.mc_ratio - 1) <= 0.02

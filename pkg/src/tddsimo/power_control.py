"""Truncated channel inversion with a floor branch, and calibration of the
inversion gain so the long-run average data power meets its budget."""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .channel import ChannelRealization, RngStream, chi_square_cdf, chi_square_sf, complex_normal, sample_channel
from .config import Scheme, SystemConfig
from .errors import CalibrationInfeasibleError, InvalidParameterError
from .training import forward_train, reverse_train, reverse_train_orthogonal, reverse_train_threeway

log = logging.getLogger(__name__)

QUAD_RTOL = 1e-9
_MC_CHUNK = 1 << 17
# stream ids at and above this value are reserved for calibration checks
CALIBRATION_STREAM_BASE = 1 << 62


class SigmaHatModel(str, enum.Enum):
    PERFECT_CSIR = "perfect_csir"
    THREE_WAY = "three_way"
    ORTHOGONAL = "orthogonal"


SCHEME_MODEL = {
    Scheme.PERFECT_CSIR_GENIE: SigmaHatModel.PERFECT_CSIR,
    Scheme.THREE_WAY: SigmaHatModel.THREE_WAY,
    Scheme.ORTHOGONAL_BASELINE: SigmaHatModel.ORTHOGONAL,
}

_MODEL_SCHEME = {v: k for k, v in SCHEME_MODEL.items()}


def phi(sigma_sq, rate_nats: float, alpha: float):
    """Channel inversion power that just supports ``rate_nats`` at gain ``sigma_sq``."""
    if not 0 < alpha <= 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1], got {alpha}")
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if np.any(sigma_sq == 0.0):
        raise ZeroDivisionError("phi is undefined at sigma_sq == 0")
    out = math.expm1(rate_nats / alpha) / sigma_sq
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GainDistribution:
    """Law of ``sigma_hat = Z + N(0, noise_var)`` with ``Z**2 ~ Gamma(r, 1/b)``.

    ``b = 1`` is the true channel gain; the MMSE-shrunk estimate norm has
    ``b = (1 + snr)/snr``.  ``noise_var = 0`` drops the Gaussian term.
    """

    r: int
    b: float = 1.0
    noise_var: float = 0.0

    def _z_max(self) -> float:
        return math.sqrt((self.r + 40.0 + 8.0 * math.sqrt(self.r)) / self.b)

    def pdf_z(self, y):
        y = np.asarray(y, dtype=float)
        log_c = math.log(2.0) + self.r * math.log(self.b) - math.lgamma(self.r)
        with np.errstate(divide="ignore"):
            out = np.exp(log_c + (2 * self.r - 1) * np.log(y) - self.b * y * y)
        return np.where(y > 0, out, 0.0)

    def pdf(self, x):
        """Density of ``sigma_hat`` at ``x > 0``."""
        x = np.asarray(x, dtype=float)
        v = self.noise_var
        if v == 0.0:
            return self.pdf_z(x)
        # completing the square turns the convolution into a truncated
        # Gaussian moment of order 2r - 1, evaluated by recursion
        k = 1.0 + 2.0 * self.b * v
        mu = x / k
        tau2 = v / k
        tau = math.sqrt(tau2)
        m_prev = tau * math.sqrt(2.0 * math.pi) * ndtr(mu / tau)
        m_cur = mu * m_prev + tau2 * np.exp(-0.5 * (mu / tau) ** 2)
        for order in range(2, 2 * self.r):
            m_prev, m_cur = m_cur, mu * m_cur + (order - 1) * tau2 * m_prev
        log_c = math.log(2.0) + self.r * math.log(self.b) - math.lgamma(self.r) - 0.5 * math.log(2.0 * math.pi * v)
        return np.exp(log_c - self.b * x * x / k) * m_cur

    def prob_below(self, theta: float) -> float:
        """``Pr{sigma_hat <= theta}``."""
        if self.noise_var == 0.0:
            return chi_square_cdf(self.r, self.b * theta * theta) if theta > 0 else 0.0
        sd = math.sqrt(self.noise_var)
        hi = min(self._z_max(), max(theta, 0.0) + 40.0 * sd)

        def integrand(y):
            return self.pdf_z(y) * ndtr((theta - y) / sd)

        edges = np.linspace(0.0, hi, 65)
        return _adaptive_gauss_legendre(integrand, edges)

    def inverse_moment_above(self, theta: float, s: float) -> float:
        """``E[sigma_hat**(-2s); sigma_hat > theta]`` for ``theta > 0``."""
        if theta <= 0:
            raise InvalidParameterError("threshold must be positive")
        if self.noise_var == 0.0:
            a = self.r - s
            scale = math.exp(s * math.log(self.b) + math.lgamma(a) - math.lgamma(self.r))
            return scale * chi_square_sf(a, self.b * theta * theta)
        x_hi = self._z_max() + 12.0 * math.sqrt(self.noise_var)
        if theta >= x_hi:
            return 0.0
        lo, hi = math.log(theta), math.log(x_hi)
        # geometric panels resolve the steep x**(-2s) factor near the threshold
        n_panels = max(16, int(math.ceil((hi - lo) / math.log(10.0) * 12)))
        edges = np.linspace(lo, hi, n_panels + 1)

        def integrand(u):
            x = np.exp(u)
            return x ** (1.0 - 2.0 * s) * self.pdf(x)

        return _adaptive_gauss_legendre(integrand, edges)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = np.sqrt(rng.standard_gamma(self.r, size=n) / self.b)
        if self.noise_var:
            z = z + rng.standard_normal(n) * math.sqrt(self.noise_var)
        return z


def _adaptive_gauss_legendre(f, edges, n_start: int = 8, n_max: int = 512, rtol: float = QUAD_RTOL) -> float:
    """Composite Gauss-Legendre over ``edges``; nodes per panel double until
    successive totals agree to ``rtol``."""
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1, None], edges[1:, None]
    half, mid = 0.5 * (b - a), 0.5 * (b + a)
    prev = None
    n = n_start
    while n <= n_max:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        total = float(np.sum(half * weights * f(mid + half * nodes)))
        if prev is not None and abs(total - prev) <= rtol * abs(total):
            return total
        prev = total
        n *= 2
    log.warning("quadrature stopped at %d nodes per panel without reaching rtol=%g", n_max, rtol)
    return prev


def sigma_hat_distribution(model: SigmaHatModel, config: SystemConfig, pbar: float) -> GainDistribution:
    model = SigmaHatModel(model)
    if model is SigmaHatModel.PERFECT_CSIR:
        return GainDistribution(config.r, 1.0, 1.0 / (2.0 * pbar * config.lb_tau))
    if model is SigmaHatModel.THREE_WAY:
        snr = pbar * config.la_tau1
        return GainDistribution(
            config.r,
            (1.0 + snr) / snr,
            1.0 / (2.0 * (1.0 + snr)) + 1.0 / (2.0 * pbar * config.lb_tau),
        )
    snr = pbar * config.lb_tau
    return GainDistribution(config.r, (1.0 + snr) / snr, 0.0)


@dataclass(frozen=True)
class PowerPolicy:
    """A calibrated two-branch power law for one operating point.

    Above the threshold the power is ``kappa * phi(sigma_hat**(2s))``; at or
    below it the floor ``pbar**l * low_power_scale`` is used.  In three-way
    mode powers are normalized to unit mean (``target == 1``).
    """

    kappa: float
    theta: float
    s: float
    l: float
    rate_nats: float
    alpha: float
    pbar: float
    target: float = 1.0
    low_power_scale: float = 1.0
    model: SigmaHatModel = SigmaHatModel.PERFECT_CSIR
    inverse_moment: float = math.nan
    floor_power_mass: float = math.nan
    mc_ratio: float = math.nan
    mc_stderr: float = math.nan

    @property
    def low_power(self) -> float:
        return self.pbar**self.l * self.low_power_scale

    @property
    def residual(self) -> float:
        return abs(self.mc_ratio - 1.0)


def data_power(sigma_hat, policy: PowerPolicy, pbar: float | None = None):
    """Transmit power chosen for the gain estimate ``sigma_hat``.

    Total over the reals: negative estimates fall in the floor branch.
    """
    if pbar is not None and not math.isclose(pbar, policy.pbar, rel_tol=1e-12):
        raise InvalidParameterError(f"policy was calibrated for pbar={policy.pbar}, not {pbar}")
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    above = sigma_hat > policy.theta
    safe = np.where(above, sigma_hat, 1.0)
    gain = policy.kappa * math.expm1(policy.rate_nats / policy.alpha)
    with np.errstate(over="ignore"):
        out = np.where(above, gain / safe ** (2.0 * policy.s), policy.low_power)
    return float(out) if out.ndim == 0 else out


def simulate_sigma_hat(model: SigmaHatModel, config: SystemConfig, pbar: float, rng, n: int) -> np.ndarray:
    """Draw ``n`` gain estimates through the actual training phases."""
    model = SigmaHatModel(model)
    ch = sample_channel(config.r, rng, size=n)
    if model is SigmaHatModel.PERFECT_CSIR:
        return reverse_train(ch, None, pbar, config.lb_tau, rng).sigma_hat
    if model is SigmaHatModel.THREE_WAY:
        csir = forward_train(ch, pbar, config.la_tau1, rng)
        return reverse_train_threeway(csir, ch, pbar, config.lb_tau, rng).sigma_hat
    return reverse_train_orthogonal(ch, pbar, config.lb_tau, rng).sigma_hat


def _weighted_sigma_hat(model: SigmaHatModel, config: SystemConfig, pbar: float, rng, n: int):
    """Importance-sampled gain estimates and their likelihood-ratio weights.

    Plain sampling almost never reaches the region that dominates the power
    average (tiny channel gain, or training noise pulling the estimate just
    above the threshold), so the channel is drawn from a defensive mixture
    of ``CN(0, c I)`` laws with ``c`` log-spaced down to ``1/pbar`` and the
    scalar reverse-training noise is shifted toward negative values.  The
    nominal law keeps weight ``_IS_NOMINAL`` so every weight is bounded by
    ``1/_IS_NOMINAL``.  The estimates still come out of the training phases.
    """
    r = config.r
    scales = np.logspace(0.0, -math.log10(pbar), _IS_SCALES) if pbar > 1 else np.ones(1)
    shifts = np.array(_IS_SHIFTS if model is not SigmaHatModel.ORTHOGONAL else (0.0,))
    comp_scale = np.repeat(scales, len(shifts))
    comp_shift = np.tile(shifts, len(scales))
    probs = np.full(comp_scale.size, (1.0 - _IS_NOMINAL) / max(comp_scale.size - 1, 1))
    probs[0] = _IS_NOMINAL if comp_scale.size > 1 else 1.0

    pick = rng.choice(comp_scale.size, size=n, p=probs)
    h = complex_normal(rng, (n, r)) * np.sqrt(comp_scale[pick])[:, None]
    ch = ChannelRealization.from_vector(h)
    sd = math.sqrt(1.0 / (2.0 * pbar * config.lb_tau))
    z = rng.standard_normal(n) + comp_shift[pick]

    if model is SigmaHatModel.PERFECT_CSIR:
        sigma_hat = reverse_train(ch, None, pbar, config.lb_tau, None, w_bar=z * sd).sigma_hat
    elif model is SigmaHatModel.THREE_WAY:
        csir = forward_train(ch, pbar, config.la_tau1, rng)
        sigma_hat = reverse_train_threeway(csir, ch, pbar, config.lb_tau, None, w_bar=z * sd).sigma_hat
    else:
        sigma_hat = reverse_train_orthogonal(ch, pbar, config.lb_tau, rng).sigma_hat

    g2 = ch.sigma_sq[:, None]
    log_q_over_f = (
        np.log(probs)[None, :]
        - r * np.log(comp_scale)[None, :]
        - g2 / comp_scale[None, :]
        + g2
        - 0.5 * (z[:, None] - comp_shift[None, :]) ** 2
        + 0.5 * z[:, None] ** 2
    )
    top = log_q_over_f.max(axis=1)
    weights = np.exp(-top) / np.exp(log_q_over_f - top[:, None]).sum(axis=1)
    return sigma_hat, weights


_IS_SCALES = 7
_IS_SHIFTS = (0.0, -1.5, -3.0)
_IS_NOMINAL = 0.3


def check_average_power(policy: PowerPolicy, config: SystemConfig, samples: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate of ``E[P(sigma_hat)] / target`` and its standard error.

    Independent of the quadrature: estimates are produced by the training
    phases under an importance-sampled channel, never from the calibration
    density.
    """
    stream = CALIBRATION_STREAM_BASE + (int(round(100.0 * math.log10(policy.pbar))) % (1 << 32))
    rng = RngStream(seed, stream).generator()
    total = total_sq = 0.0
    done = 0
    while done < samples:
        n = min(_MC_CHUNK, samples - done)
        sigma_hat, weights = _weighted_sigma_hat(policy.model, config, policy.pbar, rng, n)
        p = data_power(sigma_hat, policy) * weights / policy.target
        total += float(np.sum(p))
        total_sq += float(np.sum(p * p))
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)


def _check_feasible(config: SystemConfig, model: SigmaHatModel, s: float, l: float, alpha: float):
    r = config.r
    if not 1 <= s < r:
        raise CalibrationInfeasibleError(f"inversion exponent s = {s} violates 1 <= s < r = {r}")
    l_max = r if model is SigmaHatModel.THREE_WAY else r + 1
    if not 0 <= l <= l_max:
        raise CalibrationInfeasibleError(f"floor exponent l = {l} violates 0 <= l <= {l_max}")
    if config.g_m >= alpha:
        raise CalibrationInfeasibleError(
            f"multiplexing gain g_m = {config.g_m} violates g_m < alpha = {alpha:.6g}"
        )
    return l_max


def calibrate(
    config: SystemConfig,
    pbar: float,
    sigma_hat_model: SigmaHatModel = SigmaHatModel.PERFECT_CSIR,
    *,
    mc_samples: int | None = None,
    seed: int | None = None,
) -> PowerPolicy:
    """Solve for the inversion gain that meets the average power budget.

    The floor mass ``I = pbar**l Pr{sigma_hat <= theta}`` and the truncated
    inverse moment ``F = E[sigma_hat**(-2s); sigma_hat > theta]`` are computed
    by quadrature, then ``kappa = (target - I) / (expm1(R/alpha) F)``.  The
    result is checked by an independent Monte-Carlo run of ``mc_samples``
    draws (``0`` skips the check).
    """
    if not pbar > 0:
        raise InvalidParameterError(f"pbar must be positive, got {pbar}")
    model = SigmaHatModel(sigma_hat_model)
    scheme = _MODEL_SCHEME[model]
    s, l = config.policy_exponents(scheme)
    alpha = config.alpha(scheme)
    l_max = _check_feasible(config, model, s, l, alpha)

    rate = config.rate_nats(pbar)
    if rate <= 0:
        raise CalibrationInfeasibleError(f"target rate {rate} nats must be positive")
    gain = math.expm1(rate / alpha)
    theta = pbar**-0.5
    target = 1.0 if model is SigmaHatModel.THREE_WAY else pbar

    dist = sigma_hat_distribution(model, config, pbar)
    inv_moment = dist.inverse_moment_above(theta, s)
    floor_mass = pbar**l * dist.prob_below(theta)

    scale = 1.0
    if floor_mass >= target:
        if l != l_max:
            raise CalibrationInfeasibleError(
                f"floor branch alone uses {floor_mass:.6g} >= budget {target:.6g} (pbar={pbar:g}, l={l})"
            )
        # boundary exponent: shrink the floor power by the smallest power of two
        k = math.floor(math.log2(floor_mass / target)) + 1
        scale = 2.0**-k
        floor_mass *= scale
    if inv_moment <= 0:
        raise CalibrationInfeasibleError(f"no probability mass above threshold {theta:g}")
    kappa = (target - floor_mass) / (gain * inv_moment)

    policy = PowerPolicy(
        kappa=kappa,
        theta=theta,
        s=s,
        l=l,
        rate_nats=rate,
        alpha=alpha,
        pbar=pbar,
        target=target,
        low_power_scale=scale,
        model=model,
        inverse_moment=inv_moment,
        floor_power_mass=floor_mass,
    )
    samples = config.calibration_samples if mc_samples is None else mc_samples
    if samples:
        ratio, stderr = check_average_power(policy, config, samples, config.seed if seed is None else seed)
        policy = dataclasses.replace(policy, mc_ratio=ratio, mc_stderr=stderr)
        if abs(ratio - 1.0) > 0.02:
            log.warning("calibration check at pbar=%g: E[P]/target = %.4f (stderr %.4f)", pbar, ratio, stderr)
    return policy

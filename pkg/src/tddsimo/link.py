"""One coherence block of each scheme: training, power, capacity, outage.

Data symbols are never drawn.  The outage event depends only on the block's
achievable rate, which is a function of the channel, the estimates and the
transmit power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import as_generator, sample_channel
from .config import Scheme, SystemConfig
from .errors import InvalidParameterError
from .power_control import PowerPolicy, data_power, phi
from .training import (
    forward_train,
    power_controlled_train,
    reverse_train,
    reverse_train_orthogonal,
    reverse_train_threeway,
)

# rates within this relative distance below the target count as met, so that
# exact inversion is not declared an outage by the last bit of rounding
RATE_RTOL = 1e-12

SURROGATE_LABEL = "surrogate bound"


def _check_alpha(alpha):
    if not 0 < alpha <= 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1], got {alpha}")


def capacity_perfect_csir(sigma_sq, tx_power, alpha: float):
    """Genie-aided block rate ``alpha * log(1 + sigma^2 P)`` in nats."""
    _check_alpha(alpha)
    return alpha * np.log1p(np.asarray(sigma_sq) * np.asarray(tx_power))


def capacity_threeway(p_hat_norm_sq, cond_error_var, pbar: float, r: int, alpha: float):
    """Worst-case-noise lower bound on the rate with an estimated composite channel."""
    _check_alpha(alpha)
    snr = pbar * np.asarray(p_hat_norm_sq) / ((pbar / r) * np.asarray(cond_error_var) + 1.0)
    return alpha * np.log1p(snr)


def is_outage(rate, target_nats: float):
    return np.asarray(rate) < target_nats * (1.0 - RATE_RTOL)


@dataclass(frozen=True)
class TrialOutcome:
    scheme: Scheme
    sigma_sq: float
    sigma_hat: float
    tx_power: float
    achievable_rate_nats: float
    outage: bool


@dataclass(frozen=True)
class TrialBatch:
    """Vectorized trial outcomes.  ``w_bar`` is the scalar reverse-training noise."""

    scheme: Scheme
    sigma: np.ndarray
    sigma_sq: np.ndarray
    sigma_hat: np.ndarray
    tx_power: np.ndarray
    achievable_rate_nats: np.ndarray
    outage: np.ndarray
    w_bar: np.ndarray
    alpha: float
    rate_nats: float

    def __len__(self):
        return self.outage.size

    def outcome(self, i: int) -> TrialOutcome:
        return TrialOutcome(
            scheme=self.scheme,
            sigma_sq=float(self.sigma_sq[i]),
            sigma_hat=float(self.sigma_hat[i]),
            tx_power=float(self.tx_power[i]),
            achievable_rate_nats=float(self.achievable_rate_nats[i]),
            outage=bool(self.outage[i]),
        )


def simulate_trials(
    scheme: Scheme,
    config: SystemConfig,
    policy: PowerPolicy | None,
    pbar: float,
    rng,
    n: int,
    *,
    noiseless: bool = False,
) -> TrialBatch:
    """Run ``n`` independent coherence blocks of ``scheme``.

    ``policy`` must be calibrated for this scheme and ``pbar``; it is ignored
    (and may be None) for perfect CSIT.  ``noiseless`` switches off every
    training noise term.
    """
    scheme = Scheme(scheme)
    gen = as_generator(rng)
    noise_rng = None if noiseless else gen
    if scheme is not Scheme.PERFECT_CSIT:
        if policy is None:
            raise InvalidParameterError(f"{scheme.value} needs a calibrated power policy")
        if not math.isclose(policy.pbar, pbar, rel_tol=1e-12):
            raise InvalidParameterError(f"policy calibrated at pbar={policy.pbar:g}, used at {pbar:g}")
    rate = config.rate_nats(pbar)
    ch = sample_channel(config.r, gen, size=int(n))
    sigma_sq = ch.sigma_sq

    if scheme is Scheme.PERFECT_CSIT:
        symbols = config.lb_tau
        alpha = (config.coherence - symbols) / config.coherence
        sigma_hat = ch.sigma
        w_bar = np.zeros_like(sigma_hat)
        power = phi(sigma_sq, rate, alpha)
        capacity = capacity_perfect_csir(sigma_sq, power, alpha)
    elif scheme is Scheme.THREE_WAY:
        csir = forward_train(ch, pbar, config.la_tau1, noise_rng)
        est = reverse_train_threeway(csir, ch, pbar, config.lb_tau, noise_rng)
        rel_power = data_power(est.sigma_hat, policy)
        phase3 = power_controlled_train(np.sqrt(rel_power)[:, None] * ch.h, pbar, config.la_tau2, noise_rng)
        symbols = csir.symbols + est.symbols + phase3.symbols
        alpha = (config.coherence - symbols) / config.coherence
        # with training noise switched off the receiver knows its estimate is exact
        cond_var = 0.0 if noiseless else phase3.cond_error_var
        p_norm_sq = np.sum(phase3.p_hat.real**2 + phase3.p_hat.imag**2, axis=-1)
        capacity = capacity_threeway(p_norm_sq, cond_var, pbar, config.r, alpha)
        sigma_hat, w_bar = est.sigma_hat, est.w_bar
        power = pbar * rel_power
    else:
        if scheme is Scheme.PERFECT_CSIR_GENIE:
            est = reverse_train(ch, None, pbar, config.lb_tau, noise_rng)
        else:
            est = reverse_train_orthogonal(ch, pbar, config.lb_tau, noise_rng)
        symbols = est.symbols
        alpha = (config.coherence - symbols) / config.coherence
        sigma_hat, w_bar = est.sigma_hat, est.w_bar
        # the genie receiver decodes with the same P(sigma_hat) the transmitter used
        power = data_power(sigma_hat, policy)
        capacity = capacity_perfect_csir(sigma_sq, power, alpha)

    assert alpha == config.alpha(scheme), "training bookkeeping disagrees with the configured prelog"
    if scheme is not Scheme.PERFECT_CSIT:
        assert alpha == policy.alpha, "policy was calibrated for a different prelog"
    if np.any(capacity < 0) or np.any(power < 0):
        raise AssertionError("negative capacity or transmit power")
    return TrialBatch(
        scheme=scheme,
        sigma=ch.sigma,
        sigma_sq=sigma_sq,
        sigma_hat=np.asarray(sigma_hat, dtype=float),
        tx_power=np.asarray(power, dtype=float),
        achievable_rate_nats=capacity,
        outage=is_outage(capacity, rate),
        w_bar=w_bar,
        alpha=alpha,
        rate_nats=rate,
    )


def run_trial(scheme: Scheme, config: SystemConfig, policy: PowerPolicy | None, pbar: float, rng) -> TrialOutcome:
    """A single coherence block; see ``simulate_trials``."""
    return simulate_trials(scheme, config, policy, pbar, rng, 1).outcome(0)

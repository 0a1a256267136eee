"""Training phases of the TDD-SIMO protocol.

Every function works on a single realization or on a batch (leading axes of
``ch.h``).  Passing ``rng=None`` switches every noise term off, which is the
analysis limit the unit tests use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, complex_normal
from .errors import DegenerateEstimateError, InvalidParameterError


@dataclass(frozen=True)
class CsirEstimate:
    """Node B's MMSE estimate of ``h`` after forward-link training."""

    h_hat: np.ndarray
    error_var: float
    v_hat: np.ndarray
    h_hat_norm: np.ndarray
    symbols: int


@dataclass(frozen=True)
class SingularValueEstimate:
    """Node A's estimate of the channel gain after reverse training.

    ``w_bar`` is the realized scalar training noise ``Re{w}/sqrt(P L)`` and
    ``w_eff`` the total perturbation around the reference gain (``sigma``
    with perfect CSIR, ``||h_hat||`` in three-way training).
    """

    sigma_hat: np.ndarray
    noise_var: float
    w_bar: np.ndarray
    w_eff: np.ndarray
    symbols: int


@dataclass(frozen=True)
class CompositeChannelEstimate:
    """Node B's estimate of the power-scaled channel ``sqrt(P) h``."""

    p_hat: np.ndarray
    cond_error_var: float
    error: np.ndarray
    symbols: int


def _check_power(pbar, length, name):
    if not pbar > 0:
        raise InvalidParameterError(f"pbar must be positive, got {pbar}")
    if int(length) != length or length < 1:
        raise InvalidParameterError(f"{name} must be a positive integer, got {length}")


def _real_noise(rng, shape, var):
    if rng is None:
        return np.zeros(shape)
    return rng.standard_normal(shape) * math.sqrt(var)


def forward_train(ch: ChannelRealization, pbar: float, l_a_tau1: int, rng) -> CsirEstimate:
    """Phase I: pilot ``sqrt(pbar*L)`` from node A, scalar MMSE per antenna."""
    _check_power(pbar, l_a_tau1, "l_a_tau1")
    snr = pbar * l_a_tau1
    y = ch.h * math.sqrt(snr)
    if rng is not None:
        y = y + complex_normal(rng, ch.h.shape)
    h_hat = y * (math.sqrt(snr) / (1.0 + snr))
    norm = np.sqrt(np.sum(h_hat.real**2 + h_hat.imag**2, axis=-1))
    if np.any(norm == 0.0):
        raise DegenerateEstimateError("forward training produced an all-zero channel estimate")
    return CsirEstimate(
        h_hat=h_hat,
        error_var=1.0 / (1.0 + snr),
        v_hat=h_hat / norm[..., None],
        h_hat_norm=norm,
        symbols=int(l_a_tau1),
    )


def reverse_train(
    ch: ChannelRealization,
    v_hat: np.ndarray | None,
    pbar: float,
    l_b_tau: int,
    rng,
    *,
    w_bar: np.ndarray | None = None,
) -> SingularValueEstimate:
    """Phase II: node B beamforms its pilot along ``v_hat``.

    Node A forms ``Re{y}/sqrt(pbar*L) = sigma*Re{v^H v_hat} + w_bar``.  With
    ``v_hat=None`` node B is assumed to know ``v`` exactly and the estimate
    is computed as ``sigma + w_bar`` without the inner product.  A given
    ``w_bar`` replaces the scalar noise draw.
    """
    _check_power(pbar, l_b_tau, "l_b_tau")
    noise_var = 1.0 / (2.0 * pbar * l_b_tau)
    if w_bar is None:
        w_bar = _real_noise(rng, ch.sigma.shape, noise_var)
    if v_hat is None:
        sigma_hat = ch.sigma + w_bar
    else:
        v_hat = np.asarray(v_hat)
        norms = np.sqrt(np.sum(np.abs(v_hat) ** 2, axis=-1))
        if not np.allclose(norms, 1.0, rtol=0.0, atol=1e-9):
            raise InvalidParameterError("v_hat must have unit norm")
        gain = np.sum(np.conj(ch.h) * v_hat, axis=-1).real
        sigma_hat = gain + w_bar
    return SingularValueEstimate(
        sigma_hat=sigma_hat,
        noise_var=noise_var,
        w_bar=w_bar,
        w_eff=sigma_hat - ch.sigma,
        symbols=int(l_b_tau),
    )


def reverse_train_threeway(
    csir: CsirEstimate,
    ch: ChannelRealization,
    pbar: float,
    l_b_tau: int,
    rng,
    *,
    w_bar: np.ndarray | None = None,
) -> SingularValueEstimate:
    """Phase II with imperfect CSIR; the estimate is ``||h_hat|| + w_eff``."""
    _check_power(pbar, l_b_tau, "l_b_tau")
    scalar_var = 1.0 / (2.0 * pbar * l_b_tau)
    if w_bar is None:
        w_bar = _real_noise(rng, ch.sigma.shape, scalar_var)
    gain = np.sum(np.conj(ch.h) * csir.v_hat, axis=-1).real
    sigma_hat = gain + w_bar
    return SingularValueEstimate(
        sigma_hat=sigma_hat,
        noise_var=csir.error_var / 2.0 + scalar_var,
        w_bar=w_bar,
        w_eff=sigma_hat - csir.h_hat_norm,
        symbols=int(l_b_tau),
    )


def reverse_train_orthogonal(ch: ChannelRealization, pbar: float, l_b_tau: int, rng) -> SingularValueEstimate:
    """Channel-agnostic baseline: one pilot slot per receive antenna.

    Node A observes ``conj(h_i) sqrt(pbar*L) + w_i`` in slot ``i``, shrinks
    each observation to its MMSE estimate and reports the estimate's norm,
    so ``sigma_hat`` is never negative.  Occupies ``r * l_b_tau`` symbols.
    """
    _check_power(pbar, l_b_tau, "l_b_tau")
    snr = pbar * l_b_tau
    y = np.conj(ch.h) * math.sqrt(snr)
    if rng is not None:
        y = y + complex_normal(rng, ch.h.shape)
    g_hat = y * (math.sqrt(snr) / (1.0 + snr))
    sigma_hat = np.sqrt(np.sum(g_hat.real**2 + g_hat.imag**2, axis=-1))
    return SingularValueEstimate(
        sigma_hat=sigma_hat,
        noise_var=1.0 / (1.0 + snr),
        w_bar=np.zeros_like(sigma_hat),
        w_eff=sigma_hat - ch.sigma,
        symbols=ch.r * int(l_b_tau),
    )


def power_controlled_train(p_c: np.ndarray, pbar: float, l_a_tau2: int, rng) -> CompositeChannelEstimate:
    """Phase III: least-squares estimate of the composite channel.

    The normalized observation ``p_c + w/sqrt(pbar*L)`` is used directly as
    the estimate, so the error is the scaled noise itself and its
    conditional second moment is the constant ``r/(pbar*L)``.
    """
    _check_power(pbar, l_a_tau2, "l_a_tau2")
    p_c = np.asarray(p_c, dtype=np.complex128)
    snr = pbar * l_a_tau2
    if rng is None:
        noise = np.zeros_like(p_c)
    else:
        noise = complex_normal(rng, p_c.shape) / math.sqrt(snr)
    p_hat = p_c + noise
    return CompositeChannelEstimate(
        p_hat=p_hat,
        cond_error_var=p_c.shape[-1] / snr,
        error=-noise,
        symbols=int(l_a_tau2),
    )

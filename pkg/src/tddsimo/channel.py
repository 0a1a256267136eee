"""Rayleigh SIMO channel draws, reproducible random streams and the
chi-square helpers used for oracles and policy calibration."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEstimateError, InvalidParameterError

_U64 = 1 << 64
_EPS = sys.float_info.epsilon
_TINY = sys.float_info.min / _EPS


@dataclass(frozen=True)
class RngStream:
    """Key of one counter-based random stream.

    The pair ``(seed, stream_id)`` is packed into the 128-bit Philox key, so
    streams with different ids never overlap and any block of trials can be
    regenerated on any worker without replaying the ones before it.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= value < _U64:
                raise InvalidParameterError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.stream_id << 64) | self.seed))

    def substream(self, offset: int) -> "RngStream":
        return RngStream(self.seed, (self.stream_id + offset) % _U64)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """CN(0, var) samples; real and imaginary parts each carry var/2."""
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    pairs = rng.standard_normal(shape + (2,))
    pairs *= math.sqrt(var / 2.0)
    return pairs.view(np.complex128)[..., 0]


@dataclass(frozen=True)
class ChannelRealization:
    """Fading vector ``h = sigma * v``; arrays may carry leading batch axes."""

    h: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @classmethod
    def from_vector(cls, h) -> "ChannelRealization":
        h = np.asarray(h, dtype=np.complex128)
        sigma = np.sqrt(np.sum(h.real**2 + h.imag**2, axis=-1))
        if np.any(sigma == 0.0):
            raise DegenerateEstimateError("channel vector is exactly zero")
        return cls(h=h, sigma=sigma, v=h / sigma[..., None])

    @property
    def r(self) -> int:
        return self.h.shape[-1]

    @property
    def sigma_sq(self) -> np.ndarray:
        return self.sigma**2


def sample_channel(r: int, rng, size: int | tuple | None = None) -> ChannelRealization:
    """Draw ``h`` with i.i.d. CN(0, 1) entries.

    With ``size`` given, returns a batch of shape ``size + (r,)``.
    """
    if int(r) != r or r < 1:
        raise InvalidParameterError(f"antenna count must be a positive integer, got {r}")
    gen = as_generator(rng)
    if size is None:
        shape = (int(r),)
    elif isinstance(size, tuple):
        shape = size + (int(r),)
    else:
        shape = (int(size), int(r))
    return ChannelRealization.from_vector(complex_normal(gen, shape))


def _gamma_series(a: float, z: float, tol: float, max_iter: int) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(max_iter):
        ap += 1.0
        term *= z / ap
        total += term
        if abs(term) < abs(total) * tol:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, z={z})")
    return total * math.exp(-z + a * math.log(z) - math.lgamma(a))


def _gamma_cont_frac(a: float, z: float, tol: float, max_iter: int) -> float:
    # modified Lentz evaluation of the upper tail Q(a, z)
    b = z + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    else:
        raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, z={z})")
    return math.exp(-z + a * math.log(z) - math.lgamma(a)) * h


def chi_square_cdf(r: float, z: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    """``Pr{sigma^2 < z}`` for ``sigma^2`` the squared norm of r CN(0,1) entries.

    This is the regularized lower incomplete gamma function P(r, z).
    """
    if r <= 0:
        raise InvalidParameterError(f"r must be positive, got {r}")
    if not z >= 0.0:
        raise InvalidParameterError(f"z must be nonnegative, got {z}")
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return 1.0
    if z < r + 1.0:
        return min(1.0, _gamma_series(float(r), float(z), tol, max_iter))
    return max(0.0, 1.0 - _gamma_cont_frac(float(r), float(z), tol, max_iter))


def chi_square_sf(r: float, z: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    """Upper tail Q(r, z) = 1 - P(r, z), accurate when it is small."""
    if r <= 0:
        raise InvalidParameterError(f"r must be positive, got {r}")
    if not z >= 0.0:
        raise InvalidParameterError(f"z must be nonnegative, got {z}")
    if z == 0.0:
        return 1.0
    if math.isinf(z):
        return 0.0
    if z < r + 1.0:
        return max(0.0, 1.0 - _gamma_series(float(r), float(z), tol, max_iter))
    return min(1.0, _gamma_cont_frac(float(r), float(z), tol, max_iter))


def chi_square_tail_bound(r: int, z: float) -> float:
    """Polynomial small-ball bound ``z**r / r!`` on ``Pr{sigma^2 < z}``."""
    if int(r) != r or r < 1:
        raise InvalidParameterError(f"r must be a positive integer, got {r}")
    if not z >= 0.0:
        raise InvalidParameterError(f"z must be nonnegative, got {z}")
    return z**r / math.factorial(int(r))

"""Closed-form diversity-multiplexing curves and empirical slope fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .errors import DomainError, EstimationError

MAX_REL_CI_WIDTH = 0.3


def _check_s(r, s):
    if not 1 <= s < r:
        raise DomainError(f"s = {s}: need 1 <= s < r = {r}")


def _check_g(g_m, alpha):
    if alpha <= 0:
        raise DomainError(f"training leaves no data symbols (alpha = {alpha})")
    if not 0 <= g_m < alpha:
        raise DomainError(f"g_m = {g_m}: need 0 <= g_m < alpha = {alpha:.6g}")


def _nonnegative(d, what):
    if d < 0:
        raise DomainError(f"{what} gives negative diversity {d:.6g}")
    return d


def dmt_perfect_csir(r: int, L_c: int, L_B_tau: int, s: float, l: float, g_m: float) -> float:
    """Diversity of channel-dependent training with a genie-aided receiver."""
    if not 0 <= l <= r + 1:
        raise DomainError(f"l = {l}: need 0 <= l <= r + 1 = {r + 1}")
    _check_s(r, s)
    alpha = (L_c - L_B_tau) / L_c
    _check_g(g_m, alpha)
    return _nonnegative(r * (min(l, s + 1) - g_m * L_c / (L_c - L_B_tau)), f"l = {l}, g_m = {g_m}")


def dmt_threeway(
    r: int, L_c: int, L_B_tau: int, L_A_tau1: int, L_A_tau2: int, s: float, l: float, g_m: float
) -> float:
    """Diversity with forward, reverse and power-controlled training."""
    if not 0 <= l <= r:
        raise DomainError(f"l = {l}: need 0 <= l <= r = {r}")
    _check_s(r, s)
    data = L_c - L_B_tau - L_A_tau1 - L_A_tau2
    _check_g(g_m, data / L_c)
    return _nonnegative(r * (min(l, s) + 1 - g_m * L_c / data), f"l = {l}, g_m = {g_m}")


def _orthogonal_d(r_used, L_c, L_B_tau, g_m):
    return r_used * (2 - g_m * L_c / (L_c - r_used * L_B_tau))


def dmt_orthogonal(r: int, L_c: int, L_B_tau: int, g_m: float, *, switch_off: bool = True) -> tuple[float, int]:
    """Best diversity of orthogonal training over the number of active antennas.

    Antennas may be switched off down to two; each active antenna costs
    ``L_B_tau`` training symbols.  Ties go to more antennas.  With
    ``switch_off=False`` all ``r`` antennas stay on.
    """
    if L_c <= 2 * L_B_tau:
        raise DomainError(f"L_c = {L_c} must exceed 2 * L_B_tau = {2 * L_B_tau}")
    if g_m < 0:
        raise DomainError(f"g_m = {g_m} must be nonnegative")
    candidates = range(2, r + 1) if switch_off else [r]
    best = None
    for r_used in candidates:
        if g_m < (L_c - r_used * L_B_tau) / L_c:
            d = _orthogonal_d(r_used, L_c, L_B_tau, g_m)
            if best is None or d >= best[0]:
                best = (d, r_used)
    if best is None:
        raise DomainError(f"g_m = {g_m}: no antenna count in {list(candidates)} supports it")
    return best


@dataclass(frozen=True)
class DmtCurve:
    scheme: str
    g_m: np.ndarray
    d: np.ndarray
    r_used: np.ndarray
    alpha: float
    params: dict = field(default_factory=dict)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.g_m.tolist(), self.d.tolist()))


def g_grid(sup: float, step: float) -> np.ndarray:
    """Multiples of ``step`` strictly below ``sup``, rounded to kill drift."""
    n = math.ceil(sup / step - 1e-9)
    g = np.round(np.arange(n) * step, 12)
    return g[g < sup]


def perfect_csir_curve(config: SystemConfig, step: float | None = None) -> DmtCurve:
    c = config
    alpha = (c.coherence - c.lb_tau) / c.coherence
    g = g_grid(alpha, step or c.g_step)
    d = np.array([dmt_perfect_csir(c.r, c.coherence, c.lb_tau, c.s, c.l, x) for x in g])
    return DmtCurve("perfect_csir_genie", g, d, np.full(g.size, c.r), alpha, _params(c))


def threeway_curve(config: SystemConfig, step: float | None = None) -> DmtCurve:
    c = config
    alpha = (c.coherence - c.lb_tau - c.la_tau1 - c.la_tau2) / c.coherence
    g = g_grid(alpha, step or c.g_step)
    d = np.array([dmt_threeway(c.r, c.coherence, c.lb_tau, c.la_tau1, c.la_tau2, c.s, c.l, x) for x in g])
    return DmtCurve("three_way", g, d, np.full(g.size, c.r), alpha, _params(c))


def orthogonal_curve(config: SystemConfig, step: float | None = None, *, switch_off: bool = True) -> DmtCurve:
    """Orthogonal-training curve; with switch-off its range ends at ``(L_c - 2 L_B)/L_c``."""
    c = config
    r_min = 2 if switch_off else c.r
    sup = (c.coherence - r_min * c.lb_tau) / c.coherence
    g = g_grid(sup, step or c.g_step)
    pairs = [dmt_orthogonal(c.r, c.coherence, c.lb_tau, x, switch_off=switch_off) for x in g]
    name = "orthogonal_baseline" if switch_off else "orthogonal_all_antennas"
    return DmtCurve(
        name,
        g,
        np.array([p[0] for p in pairs]),
        np.array([p[1] for p in pairs]),
        (c.coherence - c.r * c.lb_tau) / c.coherence,
        _params(c),
    )


def _params(c: SystemConfig) -> dict:
    return {
        "r": c.r,
        "L_c": c.coherence,
        "L_B_tau": c.lb_tau,
        "L_A_tau1": c.la_tau1,
        "L_A_tau2": c.la_tau2,
        "s": c.s,
        "l": c.l,
        "s_is_limit": c.s_is_limit,
    }


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    r_squared: float
    n_points: int


def usable_point(point) -> tuple[bool, float]:
    """``(usable, p)`` for a ``(pbar, estimate)`` pair under the slope-fit filter."""
    pbar, est = point
    if isinstance(est, (int, float, np.floating)):
        return float(est) > 0, float(est)
    if est.failed is not None or est.outages == 0 or est.ci_low <= 0:
        return False, math.nan
    return (est.ci_high - est.ci_low) / est.p_hat < MAX_REL_CI_WIDTH, est.p_hat


def empirical_slope(points) -> SlopeFit:
    """Least-squares slope of ``-log10 P_out`` against ``log10 pbar``.

    ``points`` holds ``(pbar, estimate)`` pairs where ``estimate`` is either a
    plain probability or an ``OutageEstimate``.  Estimates with no outage, a
    zero lower bound or a relative interval width of 30% or more are dropped.
    A finite-SNR slope is a measurement, not the asymptotic diversity.
    """
    xs, ys = [], []
    for point in points:
        ok, p = usable_point(point)
        if ok:
            xs.append(math.log10(point[0]))
            ys.append(-math.log10(p))
    if len(xs) < 3:
        raise EstimationError(f"need at least 3 usable points, got {len(xs)}")
    x = np.asarray(xs)
    y = np.asarray(ys)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0:
        raise EstimationError("all usable points share one pbar")
    dof = len(x) - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else math.nan
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return SlopeFit(float(slope), stderr, float(intercept), r2, len(x))

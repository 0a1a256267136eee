"""Property suites behind ``tddsimo verify``.

Each check returns a ``CheckResult``; a fault name can be injected to make
sure the corresponding check actually detects the defect.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np

from .channel import RngStream, chi_square_cdf, chi_square_tail_bound
from .config import Scheme, SystemConfig
from .link import simulate_trials
from .power_control import calibrate, check_average_power
from .training import power_controlled_train

FAULTS = ("kappa-doubled", "tail-exponent")

CALIBRATION_TOL = 0.02
KAPPA_SLOPE_TOL = 0.03
MOMENT_SLOPE_TOL = 0.05


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def calibration_grid():
    for r in (2, 3, 5):
        for s, l in itertools.product(sorted({1, r - 1}), sorted({2, r})):
            for pbar in (1e2, 1e4, 1e6):
                yield r, s, l, pbar


def check_calibration(
    seed: int = 0, samples: int = 1_000_000, fault: str | None = None, g_m: float = 0.5
) -> CheckResult:
    """Average power of every calibrated policy on the grid, by Monte-Carlo."""
    worst = (0.0, 1.0, None)
    for r, s, l, pbar in calibration_grid():
        cfg = SystemConfig(r=r, s=s, l=l, g_m=g_m, seed=seed)
        policy = calibrate(cfg, pbar, mc_samples=0)
        if fault == "kappa-doubled":
            policy = dataclasses.replace(policy, kappa=2.0 * policy.kappa)
        ratio, _ = check_average_power(policy, cfg, samples, seed)
        if abs(ratio - 1.0) >= worst[0]:
            worst = (abs(ratio - 1.0), ratio, (r, s, l, pbar))
    dev, ratio, point = worst
    r, s, l, pbar = point
    return CheckResult(
        "average-power calibration",
        dev <= CALIBRATION_TOL,
        ratio,
        f"worst E[P]/budget = {ratio:.4f} at r={r}, s={s}, l={l}, pbar={pbar:g} (tolerance {CALIBRATION_TOL})",
    )


def kappa_slope(r: int = 3, s: float = 1, l: float = 2, g_m: float = 0.5, coherence: int = 40, lb_tau: int = 1):
    cfg = SystemConfig(r=r, s=s, l=l, g_m=g_m, coherence=coherence, lb_tau=lb_tau)
    grid = np.logspace(2, 6, 9)
    kappas = [calibrate(cfg, p, mc_samples=0).kappa for p in grid]
    slope = np.polyfit(np.log(grid), np.log(kappas), 1)[0]
    return float(slope), 1.0 - g_m / cfg.alpha(Scheme.PERFECT_CSIR_GENIE), kappas


def check_kappa_growth() -> CheckResult:
    slope, expected, kappas = kappa_slope()
    increasing = all(b > a for a, b in zip(kappas, kappas[1:]))
    return CheckResult(
        "inversion gain growth",
        abs(slope - expected) <= KAPPA_SLOPE_TOL and increasing,
        slope,
        f"log-log slope {slope:.4f}, expected {expected:.4f} +/- {KAPPA_SLOPE_TOL}; increasing: {increasing}",
    )


def moment_slopes(seed: int = 0, samples: int = 1_000_000, r: int = 3, orders=(1, 2, 3)):
    grid = np.array([1e2, 1e3, 1e4, 1e5])
    moments = {z: [] for z in orders}
    for i, pbar in enumerate(grid):
        rng = RngStream(seed, (1 << 62) + 1000 + i).generator()
        est = power_controlled_train(np.zeros((samples, r), dtype=complex), pbar, 1, rng)
        norm_sq = np.sum(est.error.real**2 + est.error.imag**2, axis=-1)
        for z in orders:
            moments[z].append(np.mean(norm_sq**z))
    return {z: float(np.polyfit(np.log(grid), np.log(m), 1)[0]) for z, m in moments.items()}


def check_moment_scaling(seed: int = 0, samples: int = 1_000_000) -> CheckResult:
    slopes = moment_slopes(seed, samples)
    worst = max(abs(slopes[z] + z) for z in slopes)
    text = ", ".join(f"z={z}: {v:.4f}" for z, v in slopes.items())
    return CheckResult(
        "composite-channel error moments",
        worst <= MOMENT_SLOPE_TOL,
        worst,
        f"slopes {text}; expected -z +/- {MOMENT_SLOPE_TOL}",
    )


def tail_sweep(fault: str | None = None):
    """Yield ``(r, z, cdf, bound)`` over the sweep; the fault drops one antenna from the CDF."""
    for r in range(1, 9):
        for z in np.logspace(-4, 1, 60):
            if fault == "tail-exponent":
                if r == 1:
                    continue
                cdf = chi_square_cdf(r - 1, float(z))
            else:
                cdf = chi_square_cdf(r, float(z))
            yield r, float(z), cdf, chi_square_tail_bound(r, float(z))


def check_small_ball(fault: str | None = None) -> CheckResult:
    count = 0
    for r, z, cdf, bound in tail_sweep(fault):
        count += 1
        if cdf > bound:
            return CheckResult(
                "chi-square small-ball bound",
                False,
                z,
                f"first violation at r={r}, z={z:.6g}: cdf {cdf:.6g} > bound {bound:.6g}",
            )
    return CheckResult("chi-square small-ball bound", True, 0.0, f"{count} points, no violation")


def check_estimate_bound(seed: int = 0, trials: int = 1_000_000, pbar: float = 10.0) -> CheckResult:
    """Per-trial check of ``|sigma_hat| <= sigma + |w_bar|`` on genie trials."""
    cfg = SystemConfig(rate_offset_bits=4, seed=seed)
    policy = calibrate(cfg, pbar, mc_samples=0)
    rng = RngStream(seed, (1 << 62) + 2000).generator()
    violations = done = 0
    while done < trials:
        n = min(1 << 17, trials - done)
        b = simulate_trials(Scheme.PERFECT_CSIR_GENIE, cfg, policy, pbar, rng, n)
        violations += int(np.count_nonzero(np.abs(b.sigma_hat) > b.sigma + np.abs(b.w_bar)))
        done += n
    return CheckResult(
        "estimate magnitude bound",
        violations == 0,
        violations,
        f"{violations} violations in {trials} trials at pbar={pbar:g}",
    )


def run_all(seed: int = 0, fault: str | None = None, quick: bool = False) -> list[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; known: {', '.join(FAULTS)}")
    samples = 100_000 if quick else 1_000_000
    return [
        check_calibration(seed, samples, fault),
        check_kappa_growth(),
        check_moment_scaling(seed, samples),
        check_small_ball(fault),
        check_estimate_bound(seed, samples),
    ]


def summary(results) -> str:
    failed = sum(not r.passed for r in results)
    return f"{len(results) - failed}/{len(results)} checks passed" + ("" if not failed else f", {failed} failed")


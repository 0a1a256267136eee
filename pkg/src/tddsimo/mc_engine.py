"""Block-parallel outage estimation with Wilson intervals and early stopping.

Trials are cut into fixed-size blocks and block ``i`` always draws from
``RngStream(seed, i)``.  Blocks may run in any order on any number of worker
processes; the stopping rule is evaluated on the ordered prefix of blocks, so
the returned counts depend only on (seed, block size, budget).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import RngStream
from .config import Scheme, SystemConfig
from .errors import CalibrationInfeasibleError, InvalidParameterError
from .link import simulate_trials
from .power_control import SCHEME_MODEL, PowerPolicy, calibrate

log = logging.getLogger(__name__)

Z95 = 1.959963984540054


def wilson_interval(outages: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Two-sided Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise InvalidParameterError("need at least one trial")
    if not 0 <= outages <= trials:
        raise InvalidParameterError(f"outages={outages} outside [0, {trials}]")
    p = outages / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    low = 0.0 if outages == 0 else max(0.0, center - half)
    high = 1.0 if outages == trials else min(1.0, center + half)
    return min(low, p), max(high, p)


@dataclass(frozen=True)
class OutageEstimate:
    trials: int
    outages: int
    pbar: float
    scheme: str
    seed: int
    p_hat: float = field(init=False)
    ci_low: float = field(init=False)
    ci_high: float = field(init=False)
    failed: str | None = None

    def __post_init__(self):
        if self.trials > 0:
            low, high = wilson_interval(self.outages, self.trials)
            p = self.outages / self.trials
        else:
            low = high = p = math.nan
        object.__setattr__(self, "p_hat", p)
        object.__setattr__(self, "ci_low", low)
        object.__setattr__(self, "ci_high", high)

    @property
    def upper_bound_only(self) -> bool:
        """No outage observed: only ``ci_high`` carries information."""
        return self.trials > 0 and self.outages == 0

    @property
    def status(self) -> str:
        if self.failed is not None:
            return "failed"
        return "upper_bound_only" if self.upper_bound_only else "ok"

    @property
    def rel_half_width(self) -> float:
        if not self.outages:
            return math.inf
        return 0.5 * (self.ci_high - self.ci_low) / self.p_hat

    def merge(self, other: "OutageEstimate") -> "OutageEstimate":
        if (self.scheme, self.pbar, self.seed) != (other.scheme, other.pbar, other.seed):
            raise InvalidParameterError("can only merge estimates of the same scheme, pbar and seed")
        return OutageEstimate(
            trials=self.trials + other.trials,
            outages=self.outages + other.outages,
            pbar=self.pbar,
            scheme=self.scheme,
            seed=self.seed,
        )


@dataclass(frozen=True)
class BernoulliSource:
    """Synthetic trial source with a known outage probability."""

    p: float

    def count(self, rng: np.random.Generator, n: int) -> int:
        return int(np.count_nonzero(rng.random(n) < self.p))


@dataclass(frozen=True)
class LinkSource:
    """Outage counts of one scheme at one calibrated operating point."""

    scheme: Scheme
    config: SystemConfig
    policy: PowerPolicy | None
    pbar: float

    def count(self, rng: np.random.Generator, n: int) -> int:
        return int(np.count_nonzero(simulate_trials(self.scheme, self.config, self.policy, self.pbar, rng, n).outage))


def _run_block(source, seed: int, block: int, n: int) -> int:
    return source.count(RngStream(seed, block).generator(), n)


def _stop(outages: int, trials: int, target_rel_ci: float) -> bool:
    if outages == 0:
        return False
    low, high = wilson_interval(outages, trials)
    return 0.5 * (high - low) < target_rel_ci * outages / trials


def run_blocks(
    source,
    seed: int,
    max_trials: int,
    target_rel_ci: float,
    block_size: int = 1 << 16,
    executor: Executor | None = None,
    wave: int = 1,
) -> tuple[int, int]:
    """Return ``(trials, outages)`` after the stopping rule or the budget.

    With an executor, ``wave`` blocks are submitted at a time; blocks past
    the stopping point are computed but discarded.
    """
    if max_trials < 1:
        raise InvalidParameterError("max_trials must be positive")
    sizes = [block_size] * (max_trials // block_size)
    if max_trials % block_size:
        sizes.append(max_trials % block_size)
    trials = outages = 0
    start = 0
    while start < len(sizes):
        stop = min(start + max(wave, 1), len(sizes))
        if executor is None:
            counts = [_run_block(source, seed, b, sizes[b]) for b in range(start, stop)]
        else:
            futures = [executor.submit(_run_block, source, seed, b, sizes[b]) for b in range(start, stop)]
            counts = [f.result() for f in futures]
        for b, k in zip(range(start, stop), counts):
            trials += sizes[b]
            outages += k
            if _stop(outages, trials, target_rel_ci):
                return trials, outages
        start = stop
    return trials, outages


def _policy_for(scheme: Scheme, config: SystemConfig, pbar: float) -> PowerPolicy | None:
    if scheme is Scheme.PERFECT_CSIT:
        return None
    return calibrate(config, pbar, SCHEME_MODEL[scheme])


def estimate_outage(
    scheme: Scheme,
    config: SystemConfig,
    pbar: float,
    max_trials: int | None = None,
    target_rel_ci: float | None = None,
    seed: int | None = None,
    *,
    policy: PowerPolicy | None = None,
    source=None,
    workers: int | None = None,
    executor: Executor | None = None,
) -> OutageEstimate:
    """Outage probability of ``scheme`` at ``pbar``.

    Arguments left as None come from ``config``.  ``source`` replaces the link
    simulation by any object with a ``count(rng, n)`` method.
    """
    scheme = Scheme(scheme)
    max_trials = config.max_trials if max_trials is None else int(max_trials)
    target_rel_ci = config.target_rel_ci if target_rel_ci is None else target_rel_ci
    seed = config.seed if seed is None else seed
    workers = config.workers if workers is None else workers
    if max_trials < 1000:
        raise InvalidParameterError(f"max_trials = {max_trials}: need at least 1000")
    if source is None:
        if policy is None:
            policy = _policy_for(scheme, config, pbar)
        source = LinkSource(scheme, config, policy, pbar)

    own = executor is None and workers > 1
    if own:
        executor = ProcessPoolExecutor(max_workers=workers)
    try:
        trials, outages = run_blocks(
            source, seed, max_trials, target_rel_ci, config.block_size, executor, wave=workers
        )
    finally:
        if own:
            executor.shutdown()
    return OutageEstimate(trials=trials, outages=outages, pbar=pbar, scheme=scheme.value, seed=seed)


@dataclass
class SweepResult:
    estimates: list[OutageEstimate]
    policies: dict
    total_trials: int = 0
    wall_seconds: float = 0.0

    def for_scheme(self, scheme: Scheme) -> list[OutageEstimate]:
        return [e for e in self.estimates if e.scheme == Scheme(scheme).value]


def sweep(
    schemes,
    config: SystemConfig,
    pbar_grid=None,
    *,
    workers: int | None = None,
    policies: dict | None = None,
) -> SweepResult:
    """One outage estimate per (scheme, grid point).

    Policies are calibrated once per point and cached in ``policies`` (keyed by
    ``(scheme, pbar)``).  A point whose calibration fails is reported with
    ``failed`` set and zero trials; the sweep continues.
    """
    if isinstance(schemes, (str, Scheme)):
        schemes = [schemes]
    schemes = [Scheme(s) for s in schemes]
    grid = list(config.pbar_grid if pbar_grid is None else pbar_grid)
    if not grid:
        raise InvalidParameterError("pbar grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidParameterError("pbar grid must be strictly increasing")
    workers = config.workers if workers is None else workers
    cache = {} if policies is None else policies

    t0 = time.perf_counter()
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    out = []
    try:
        for scheme in schemes:
            for pbar in grid:
                key = (scheme, pbar)
                try:
                    if key not in cache:
                        cache[key] = _policy_for(scheme, config, pbar)
                except (CalibrationInfeasibleError, InvalidParameterError) as exc:
                    log.warning("%s at pbar=%g: %s", scheme.value, pbar, exc)
                    out.append(
                        OutageEstimate(0, 0, pbar=pbar, scheme=scheme.value, seed=config.seed, failed=str(exc))
                    )
                    continue
                out.append(
                    estimate_outage(
                        scheme, config, pbar, policy=cache[key], workers=workers, executor=executor
                    )
                )
    finally:
        if executor is not None:
            executor.shutdown()
    return SweepResult(
        estimates=out,
        policies=cache,
        total_trials=sum(e.trials for e in out),
        wall_seconds=time.perf_counter() - t0,
    )


def monotonicity_violations(estimates: list[OutageEstimate]) -> list[int]:
    """Indices ``i`` where ``p_hat`` rises from point ``i`` to ``i+1`` with disjoint intervals."""
    usable = [(i, e) for i, e in enumerate(estimates) if e.failed is None and e.trials > 0]
    bad = []
    for (i, a), (_, b) in zip(usable, usable[1:]):
        if b.p_hat > a.p_hat and b.ci_low > a.ci_high:
            bad.append(i)
    return bad


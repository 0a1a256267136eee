"""Command-line entry point: ``tddsimo {dmt-curve, outage-sweep, calibrate, verify}``."""

from __future__ import annotations

import csv
import io
import logging
import math
import sys
from pathlib import Path

import click

from . import __version__
from .config import Scheme, SystemConfig, load_config
from .dmt import orthogonal_curve, perfect_csir_curve, threeway_curve
from .errors import CalibrationInfeasibleError, ConfigError, DomainError
from .link import SURROGATE_LABEL
from .mc_engine import monotonicity_violations, sweep
from .power_control import SCHEME_MODEL, calibrate
from .verify import FAULTS, run_all, summary

EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_INFEASIBLE = 4

OUTAGE_COLUMNS = ("scheme", "pbar_db", "trials", "outages", "p_hat", "ci_low", "ci_high", "seed", "status")


def _num(x) -> str:
    """Locale-free shortest round-trip text for a float."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _load(config_path, seed, workers) -> SystemConfig:
    cfg = load_config(config_path) if config_path else SystemConfig().validate()
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if workers is not None:
        changes["workers"] = workers
    return cfg.replace(**changes).validate() if changes else cfg


def _header(cfg: SystemConfig, extra=()) -> str:
    lines = [
        f"# tddsimo {__version__}",
        f"# config_sha256 = {cfg.fingerprint()}",
        f"# seed = {cfg.seed}",
        *(f"# {x}" for x in extra),
    ]
    return "\n".join(lines) + "\n"


def _emit(text: str, out):
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="")


def _table(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def common_options(f):
    f = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file (default: stdout).")(f)
    f = click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker processes.")(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="64-bit seed override.")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="INI config file.")(f)
    return f


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)
        except CalibrationInfeasibleError as exc:
            click.echo(f"calibration infeasible: {exc}", err=True)
            ctx.exit(EXIT_INFEASIBLE)


@click.group(cls=_Group)
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Reverse-training and power-control simulator for TDD-SIMO links."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command("dmt-curve")
@common_options
def dmt_curve(config_path, seed, workers, out):
    """Closed-form diversity versus multiplexing gain curves."""
    cfg = _load(config_path, seed, workers)
    curves = [perfect_csir_curve(cfg)]
    notes = [f"perfect_csir_genie: g_m < {curves[0].alpha:.12g}"]
    if Scheme.THREE_WAY in cfg.schemes:
        try:
            curves.append(threeway_curve(cfg))
            notes.append(f"three_way: g_m < {curves[-1].alpha:.12g}")
        except DomainError as exc:
            raise ConfigError(f"three_way curve: {exc}") from None
    if cfg.r >= 2 and cfg.coherence > 2 * cfg.lb_tau:
        for switch_off in (False, True):
            c = orthogonal_curve(cfg, switch_off=switch_off)
            curves.append(c)
            r_min = 2 if switch_off else cfg.r
            notes.append(f"{c.scheme}: g_m < {(cfg.coherence - r_min * cfg.lb_tau) / cfg.coherence:.12g}")
    if cfg.s_is_limit:
        notes.append(f"s = r - {cfg.r - cfg.s:.0e} (limit s -> r)")
    rows = []
    for c in curves:
        for g, d, r_used in zip(c.g_m, c.d, c.r_used):
            alpha = (cfg.coherence - int(r_used) * cfg.lb_tau) / cfg.coherence if c.scheme.startswith("orth") else c.alpha
            rows.append([c.scheme, _num(g), _num(d), int(r_used), _num(alpha)])
    _emit(_header(cfg, notes) + _table(("scheme", "g_m", "d", "r_used", "alpha"), rows), out)


@main.command("outage-sweep")
@common_options
def outage_sweep(config_path, seed, workers, out):
    """Monte-Carlo outage probability over the configured power grid."""
    cfg = _load(config_path, seed, workers)
    result = sweep(cfg.schemes, cfg)
    rows = []
    for e in result.estimates:
        rows.append(
            [e.scheme, _num(10 * math.log10(e.pbar)), e.trials, e.outages, _num(e.p_hat), _num(e.ci_low), _num(e.ci_high), e.seed, e.status]
        )
    notes = [f"rate_nats = {_num(cfg.rate_offset_bits)} * ln 2 + {_num(cfg.g_m)} * ln pbar"]
    if Scheme.THREE_WAY in cfg.schemes:
        notes.append(f"three_way rows: {SURROGATE_LABEL}")
    _emit(_header(cfg, notes) + _table(OUTAGE_COLUMNS, rows), out)
    for scheme in cfg.schemes:
        bad = monotonicity_violations(result.for_scheme(scheme))
        if bad:
            click.echo(f"warning: {scheme.value} outage rises beyond interval overlap after points {bad}", err=True)
    click.echo(f"{result.total_trials} trials in {result.wall_seconds:.1f} s", err=True)


@main.command("calibrate")
@common_options
def calibrate_cmd(config_path, seed, workers, out):
    """Calibrated power policy per scheme and grid point."""
    cfg = _load(config_path, seed, workers)
    rows = []
    for scheme in cfg.schemes:
        if scheme is Scheme.PERFECT_CSIT:
            continue
        for pbar in cfg.pbar_grid:
            p = calibrate(cfg, pbar, SCHEME_MODEL[scheme])
            rows.append(
                [
                    scheme.value,
                    _num(10 * math.log10(pbar)),
                    _num(p.kappa),
                    _num(p.theta),
                    _num(p.rate_nats),
                    _num(p.alpha),
                    _num(p.inverse_moment),
                    _num(p.floor_power_mass),
                    _num(p.low_power_scale),
                    _num(p.mc_ratio),
                    _num(p.mc_stderr),
                ]
            )
    columns = (
        "scheme", "pbar_db", "kappa", "theta", "rate_nats", "alpha",
        "inverse_moment", "floor_power_mass", "low_power_scale", "mc_ratio", "mc_stderr",
    )  # fmt: skip
    _emit(_header(cfg) + _table(columns, rows), out)


@main.command("verify")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--inject-fault", type=click.Choice(FAULTS), default=None, help="Plant a known defect.")
@click.option("--quick", is_flag=True, help="10^5 instead of 10^6 samples per Monte-Carlo check.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def verify_cmd(seed, inject_fault, quick, out):
    """Run the property suites; exit 3 if any check fails."""
    results = run_all(seed=seed, fault=inject_fault, quick=quick)
    text = "\n".join(r.line() for r in results) + "\n" + summary(results) + "\n"
    _emit(text, out)
    if not all(r.passed for r in results):
        sys.exit(EXIT_VERIFY)


if __name__ == "__main__":
    main()

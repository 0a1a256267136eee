"""Experiment configuration: one INI file per experiment.

Example::

    [system]
    r = 3
    coherence = 40
    lb_tau = 1

    [policy]
    s = 1
    l = 2

    [rate]
    g_m = 0.0
    offset_bits = 4

    [sweep]
    schemes = perfect_csir_genie, orthogonal_baseline
    pbar_db = 10, 20, 30
    seed = 7
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

S_LIMIT_GAP = 1e-6


class Scheme(str, enum.Enum):
    PERFECT_CSIR_GENIE = "perfect_csir_genie"
    THREE_WAY = "three_way"
    ORTHOGONAL_BASELINE = "orthogonal_baseline"
    PERFECT_CSIT = "perfect_csit"


@dataclass(frozen=True)
class SystemConfig:
    r: int = 3
    coherence: int = 40
    lb_tau: int = 1
    la_tau1: int = 1
    la_tau2: int = 1
    s: float = 1.0
    l: float = 2.0
    s_is_limit: bool = False
    g_m: float = 0.0
    rate_offset_bits: float = 0.0
    schemes: tuple[Scheme, ...] = (Scheme.PERFECT_CSIR_GENIE,)
    pbar_db: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0)
    seed: int = 0
    max_trials: int = 1_000_000
    target_rel_ci: float = 0.1
    block_size: int = 1 << 16
    workers: int = 1
    calibration_samples: int = 1_000_000
    g_step: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(Scheme(x) for x in self.schemes))
        object.__setattr__(self, "pbar_db", tuple(float(x) for x in self.pbar_db))

    @property
    def scheme(self) -> Scheme:
        return self.schemes[0]

    def training_symbols(self, scheme: Scheme) -> int:
        scheme = Scheme(scheme)
        if scheme is Scheme.THREE_WAY:
            return self.lb_tau + self.la_tau1 + self.la_tau2
        if scheme is Scheme.ORTHOGONAL_BASELINE:
            return self.r * self.lb_tau
        return self.lb_tau

    def alpha(self, scheme: Scheme) -> float:
        """Fraction of the coherence block left for data."""
        return (self.coherence - self.training_symbols(scheme)) / self.coherence

    def rate_nats(self, pbar: float) -> float:
        return self.rate_offset_bits * math.log(2.0) + self.g_m * math.log(pbar)

    def policy_exponents(self, scheme: Scheme) -> tuple[float, float]:
        """(s, l) used by the scheme; the orthogonal baseline inverts with s = 1."""
        if Scheme(scheme) is Scheme.ORTHOGONAL_BASELINE:
            return 1.0, self.l
        return self.s, self.l

    @property
    def pbar_grid(self) -> tuple[float, ...]:
        return tuple(10.0 ** (x / 10.0) for x in self.pbar_db)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "SystemConfig":
        """Check the admissible parameter box for every configured scheme."""
        errors = []
        if self.r < 1:
            errors.append(f"r = {self.r}: need at least one receive antenna")
        for name in ("coherence", "lb_tau", "la_tau1", "la_tau2"):
            if getattr(self, name) < 1:
                errors.append(f"{name} = {getattr(self, name)}: durations must be >= 1 symbol")
        if not self.schemes:
            errors.append("schemes: at least one scheme is required")
        if not 1 <= self.s < self.r:
            errors.append(f"s = {self.s}: need 1 <= s < r = {self.r}")
        if self.g_m < 0:
            errors.append(f"g_m = {self.g_m}: multiplexing gain must be >= 0")
        for scheme in self.schemes:
            used = self.training_symbols(scheme)
            if used >= self.coherence:
                errors.append(
                    f"{scheme.value}: {used} training symbols do not fit in coherence = {self.coherence}"
                )
                continue
            a = self.alpha(scheme)
            if scheme is not Scheme.PERFECT_CSIT and self.g_m >= a:
                errors.append(f"{scheme.value}: g_m = {self.g_m} must be < alpha = {a:.6g}")
            l_max = self.r if scheme is Scheme.THREE_WAY else self.r + 1
            if scheme is not Scheme.PERFECT_CSIT and not 0 <= self.l <= l_max:
                errors.append(f"{scheme.value}: l = {self.l} outside [0, {l_max}]")
        if not self.pbar_db:
            errors.append("pbar_db: grid is empty")
        elif any(b <= a for a, b in zip(self.pbar_db, self.pbar_db[1:])):
            errors.append("pbar_db: grid must be strictly increasing")
        if not 0 <= self.seed < 1 << 64:
            errors.append(f"seed = {self.seed}: must fit in 64 bits")
        if self.max_trials < 1000:
            errors.append(f"max_trials = {self.max_trials}: need at least 1000")
        if self.block_size < 1:
            errors.append(f"block_size = {self.block_size}: must be positive")
        if self.target_rel_ci <= 0:
            errors.append(f"target_rel_ci = {self.target_rel_ci}: must be positive")
        if self.workers < 1:
            errors.append(f"workers = {self.workers}: must be positive")
        if not 0 < self.g_step < 1:
            errors.append(f"g_step = {self.g_step}: must lie in (0, 1)")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def fingerprint(self) -> str:
        """SHA-256 over every field that can change results (not ``workers``)."""
        payload = dataclasses.asdict(self)
        payload.pop("workers")
        payload["schemes"] = [s.value for s in self.schemes]
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_FIELDS = {
    "system": {"r": int, "coherence": int, "lb_tau": int, "la_tau1": int, "la_tau2": int},
    "policy": {"s": str, "l": float},
    "rate": {"g_m": float, "offset_bits": float},
    "sweep": {
        "schemes": str,
        "pbar_db": str,
        "seed": int,
        "max_trials": int,
        "target_rel_ci": float,
        "block_size": int,
        "workers": int,
        "calibration_samples": int,
    },
    "dmt": {"g_step": float},
}


def _number_list(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace("\n", ",").split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers ({exc})") from None


def parse_config(text: str, source: str = "<string>") -> SystemConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    values: dict = {}
    for section in parser.sections():
        if section not in _FIELDS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            kind = _FIELDS[section].get(key)
            if kind is None:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            try:
                values[(section, key)] = kind(raw) if kind is not int else int(raw, 0)
            except ValueError:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None

    kwargs: dict = {}
    for (section, key), value in values.items():
        if key == "offset_bits":
            kwargs["rate_offset_bits"] = value
        elif key == "schemes":
            names = [x.strip() for x in value.replace("\n", ",").split(",") if x.strip()]
            try:
                kwargs["schemes"] = tuple(Scheme(n) for n in names)
            except ValueError:
                known = ", ".join(s.value for s in Scheme)
                raise ConfigError(f"{source}: schemes = {value!r}; known schemes: {known}") from None
        elif key == "pbar_db":
            kwargs["pbar_db"] = _number_list(value, "pbar_db")
        elif key == "s":
            continue
        else:
            kwargs[key] = value

    cfg = SystemConfig(**kwargs)
    s_raw = values.get(("policy", "s"))
    if s_raw is not None:
        if s_raw.strip().lower() == "limit":
            cfg = cfg.replace(s=cfg.r - S_LIMIT_GAP, s_is_limit=True)
        else:
            try:
                cfg = cfg.replace(s=float(s_raw))
            except ValueError:
                raise ConfigError(f"{source}: [policy] s = {s_raw!r}; expected a number or 'limit'") from None
    return cfg.validate()


def load_config(path: str | Path) -> SystemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))

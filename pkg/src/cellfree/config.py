"""System configuration: parameters, validation, and the flat key-value config format."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


class ConfigError(ValueError):
    pass


class PilotLengthError(ConfigError):
    """Pilot budget cannot hold one orthogonal pilot per unicast user and group."""


class WeightSumError(ConfigError):
    """Objective weights must be nonnegative and sum to one."""


class ZfDimensionError(ConfigError):
    """ZF needs strictly more antennas per AP than served entities (L > U + M)."""


@dataclass(frozen=True)
class SystemConfig:
    """All scalar network parameters.

    Powers are stored raw (watts); use p_ul_norm / p_dl_norm downstream so the
    effective noise variance is 1. pilot_len and assoc_cap default to U + M
    when left unset.
    """

    n_aps: int = 20
    antennas_per_ap: int = 12
    n_unicast: int = 3
    n_groups: int = 2
    group_sizes: tuple[int, ...] = (2, 2)
    pilot_len: int | None = None
    coherence_len: int = 200
    p_ul: float = 0.1
    p_dl: float = 1.0
    noise_power: float = 10.0 ** (-12.2)  # -92 dBm in watts
    area_side: float = 1000.0
    se_qos_unicast: float = 0.2
    se_qos_multicast: float = 0.2
    w1: float = 0.5
    w2: float = 0.5
    fronthaul_cap: float = math.inf
    assoc_cap: int | None = None
    rng_seed: int = 0

    @property
    def p_ul_norm(self) -> float:
        return self.p_ul / self.noise_power

    @property
    def p_dl_norm(self) -> float:
        return self.p_dl / self.noise_power

    @property
    def n_entities(self) -> int:
        """Served entities per AP: unicast users plus multicast groups."""
        return self.n_unicast + self.n_groups

    @property
    def n_multicast_users(self) -> int:
        return sum(self.group_sizes)

    @property
    def prelog(self) -> float:
        return (self.coherence_len - self.pilot_len) / self.coherence_len


def validate_config(raw: SystemConfig, precoder: str | None = None) -> SystemConfig:
    """Check SystemConfig invariants; returns a config with defaults resolved.

    precoder, when given, additionally enforces the ZF dimension condition.
    """
    if raw.n_aps < 1 or raw.antennas_per_ap < 1:
        raise ConfigError("need at least one AP and one antenna")
    if raw.n_unicast < 0 or raw.n_groups < 0 or raw.n_unicast + raw.n_groups < 1:
        raise ConfigError("need at least one served entity")
    if len(raw.group_sizes) != raw.n_groups:
        raise ConfigError(
            f"group_sizes has {len(raw.group_sizes)} entries for {raw.n_groups} groups"
        )
    if any(k < 1 for k in raw.group_sizes):
        raise ConfigError("every multicast group needs at least one user")

    cfg = raw
    if cfg.pilot_len is None:
        cfg = replace(cfg, pilot_len=cfg.n_unicast + cfg.n_groups)
    if cfg.assoc_cap is None:
        cfg = replace(cfg, assoc_cap=cfg.n_unicast + cfg.n_groups)

    if cfg.pilot_len < cfg.n_unicast + cfg.n_groups or cfg.pilot_len > cfg.coherence_len:
        raise PilotLengthError(
            f"pilot_len={cfg.pilot_len} outside [U+M, T]="
            f"[{cfg.n_unicast + cfg.n_groups}, {cfg.coherence_len}]"
        )
    if cfg.w1 < 0 or cfg.w2 < 0 or abs(cfg.w1 + cfg.w2 - 1.0) > 1e-12:
        raise WeightSumError(f"w1={cfg.w1}, w2={cfg.w2} must be nonnegative and sum to 1")
    if precoder is not None and precoder.lower() == "zf":
        if cfg.antennas_per_ap <= cfg.n_unicast + cfg.n_groups:
            raise ZfDimensionError(
                f"ZF needs L > U+M, got L={cfg.antennas_per_ap}, "
                f"U+M={cfg.n_unicast + cfg.n_groups}"
            )
    if cfg.p_ul <= 0 or cfg.p_dl <= 0 or cfg.noise_power <= 0:
        raise ConfigError("powers and noise_power must be positive")
    if cfg.area_side <= 0:
        raise ConfigError("area_side must be positive")
    if not (1 <= cfg.assoc_cap <= cfg.n_unicast + cfg.n_groups):
        raise ConfigError(
            f"assoc_cap={cfg.assoc_cap} outside [1, U+M={cfg.n_unicast + cfg.n_groups}]"
        )
    if not (cfg.fronthaul_cap > 0):
        raise ConfigError("fronthaul_cap must be positive (inf allowed)")
    return cfg


# ---- flat key-value config files ----

_INT_FIELDS = {"n_aps", "antennas_per_ap", "n_unicast", "n_groups", "pilot_len",
               "coherence_len", "assoc_cap", "rng_seed"}
_FLOAT_FIELDS = {"p_ul", "p_dl", "noise_power", "area_side", "se_qos_unicast",
                 "se_qos_multicast", "w1", "w2", "fronthaul_cap"}

# keys the sweep runner understands; tolerated and skipped by the plain loader
SWEEP_FIELDS = {"sweep_var", "sweep_values", "sweep_seeds", "precoders", "solvers", "out"}


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(kv: dict[str, str]) -> SystemConfig:
    kwargs: dict = {}
    for key, value in kv.items():
        if key in _INT_FIELDS:
            kwargs[key] = int(value)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)  # accepts 'inf'
        elif key == "group_sizes":
            kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
        elif key in SWEEP_FIELDS:
            continue
        else:
            raise ConfigError(f"unknown config field {key!r}")
    return SystemConfig(**kwargs)


def load_config(path: str) -> SystemConfig:
    """Read a flat key-value config file and validate it."""
    with open(path, "r", encoding="utf-8") as fh:
        kv = parse_kv_text(fh.read())
    return validate_config(config_from_mapping(kv))

"""Flat key/value experiment configuration with exact roundtrip.

The config file is a plain text document: one `key = value` per line, `#`
comments, comma-separated lists.  Parsing is position-annotated; serializing
then parsing reproduces the config exactly (floats via repr).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "serialize_config",
           "config_hash", "EXPERIMENTS"]

EXPERIMENTS = ("kpz-table", "gff-stats", "measure-scan", "fpt-run",
               "kpz-verify", "boundary-verify")


class ConfigError(ValueError):
    """Config parse/validation failure, annotated with a line number when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass
class ExperimentConfig:
    """One experiment run: which pipeline, its seeds, sizes and scale ladders."""

    experiment: str = "kpz-table"
    seed: int = 0
    grid_n: int = 256
    gamma_list: list[float] = field(default_factory=lambda: [1.0])
    x_list: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    A_list: list[float] = field(default_factory=lambda: [2.0])
    eps_list: list[float] = field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    delta_list: list[float] = field(default_factory=lambda: [1e-2, 10 ** -2.5, 1e-3, 10 ** -3.5, 1e-4])
    dt: float = 1e-4
    t_max: float = 0.0            # 0 -> drift-dependent default
    n_fields: int = 100
    n_paths: int = 10_000
    n_samples: int = 100_000
    n_points: int = 50
    mask_kind: str = "segment"
    mask_depth: int = 5
    eps_density: float = 0.0      # 0 -> 4 * spacing
    antithetic: bool = False
    dump_hit_times: bool = False
    output_dir: str = "out"


_BOOL_WORDS = {"true": True, "false": False}


def _parse_scalar(token: str, lineno: int):
    token = token.strip()
    low = token.lower()
    if low in _BOOL_WORDS:
        return _BOOL_WORDS[low]
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def parse_config(text: str) -> ExperimentConfig:
    """Parse a flat config document; unknown keys and type mismatches are
    errors carrying the offending line number."""
    spec = {f.name: f for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", lineno)
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key not in spec:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        seen.add(key)
        f = spec[key]
        if f.type.startswith("list"):
            items = [t for t in val.split(",") if t.strip()]
            parsed = [_parse_scalar(t, lineno) for t in items]
            try:
                parsed = [float(p) for p in parsed]
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be a comma list of numbers", lineno)
            setattr(cfg, key, parsed)
            continue
        value = _parse_scalar(val, lineno)
        want = f.type
        if want == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {val!r}", lineno)
        elif want == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {val!r}", lineno)
            value = float(value)
        elif want == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be true/false, got {val!r}", lineno)
        else:
            value = str(value)
        setattr(cfg, key, value)
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; "
                          f"choose one of {', '.join(EXPERIMENTS)}")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical flat dump: every field, declaration order, repr floats."""
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            body = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            body = "true" if v else "false"
        elif isinstance(v, float):
            body = repr(v)
        else:
            body = str(v)
        lines.append(f"{f.name} = {body}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()

"""Run configuration: plain ``key = value`` files, flag overrides, metadata stamps."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from . import __version__
from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    # translation / rotation schedules
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 2.5
    # IGSO(3) table
    table_sigma_min: float = 0.01
    table_sigma_max: float = 10.0
    table_n_sigma: int = 256
    table_n_omega: int = 2048
    table_L: int = 2000
    # time grid and noise annealing
    n_steps: int = 25
    t_min: float = 0.002
    t_max: float = 1.0
    rho: float = 3.0
    gamma_min: float = 0.0
    gamma_max: float = 0.5
    rho_gamma: float = 2.0
    # data scaling and pocket centre jitter (A)
    scale: float = 2.7
    sigma_com: float = 0.5
    # sampling, ranking, training
    n_seeds: int = 8
    seed: int = 0
    rank_beta: float = 4.0
    c_p: float = 1.0
    c_r: float = 1.0
    fr3d_mode: str = "irreducible"

    def validate(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ConfigError("need 0 < beta_min <= beta_max")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if not (self.table_sigma_min <= self.sigma_min and self.sigma_max <= self.table_sigma_max):
            raise ConfigError("schedule sigma range must lie inside the table range")
        if self.table_n_omega < 512 or self.table_n_sigma < 2 or self.table_L < 100:
            raise ConfigError("table needs n_omega >= 512, n_sigma >= 2, L >= 100")
        if self.n_steps < 2 or not 0 < self.t_min < self.t_max <= 1:
            raise ConfigError("need n_steps >= 2 and 0 < t_min < t_max <= 1")
        if self.rho <= 0 or self.rho_gamma <= 0:
            raise ConfigError("rho values must be positive")
        if not 0 <= self.gamma_min <= self.gamma_max:
            raise ConfigError("need 0 <= gamma_min <= gamma_max")
        if self.scale <= 0 or self.sigma_com < 0:
            raise ConfigError("scale must be positive and sigma_com non-negative")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.rank_beta < 0:
            raise ConfigError("rank_beta must be >= 0")
        if self.fr3d_mode not in ("irreducible", "all"):
            raise ConfigError("fr3d_mode must be 'irreducible' or 'all'")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls().updated(d)

    def updated(self, values):
        types = {f.name: f.type for f in fields(self)}
        conv = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            conv[key] = _coerce(key, raw, types[key])
        return replace(self, **conv).validate()

    def table_params(self):
        return dict(sigma_min=self.table_sigma_min, sigma_max=self.table_sigma_max,
                    n_sigma=self.table_n_sigma, n_omega=self.table_n_omega, L=self.table_L)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(key, raw, typ):
    name = typ if isinstance(typ, str) else typ.__name__
    try:
        if name == "int":
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if name == "float":
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text):
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides=None):
    cfg = RunConfig()
    if path:
        try:
            with open(path) as fh:
                cfg = cfg.updated(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg.validate()


def metadata(cfg, **extra):
    meta = {
        "fragdock_version": __version__,
        "config_hash": cfg.hash(),
        "master_seed": cfg.seed,
        "config": cfg.to_dict(),
        "anneal_direction": "gamma_max at t_max, decreasing towards t_min",
    }
    meta.update(extra)
    return meta

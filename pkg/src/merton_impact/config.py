"""Run configuration: INI (sections of key = value) or JSON, with exact round-trip.

Vectors are comma-separated, matrix rows are separated by ``;``. Floats are
written with ``repr`` so ``load(save(c)) == c`` holds exactly.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market_sim import SimConfig
from .merton import InvestorImpactParams, MarketParams, solve_merton


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MarketSection:
    mu: tuple[float, ...] = (0.04, 0.05)
    sigma: tuple[tuple[float, ...], ...] = ((0.30, 0.00), (0.09, 0.28))
    r: float = 0.02


@dataclass(frozen=True)
class InvestorSection:
    R: float = 0.5
    T: float = 1.0
    kappa: float = 1.0
    m: float = 3.0


@dataclass(frozen=True)
class CorrectorSection:
    bisect_tol: float = 1e-10
    asym_tol: float = 0.005
    value_tol: float = 0.02
    x_max: float = 10.0
    x_max_limit: float = 2e6
    require_tail: bool = True
    lambda_override: float | None = None


@dataclass(frozen=True)
class SimSection:
    n_paths: int = 10_000
    seed: int = 0
    n_steps_base: int = 500
    dt_factor: float = 0.1
    t0: float = 0.0
    w0: float = 1.0
    s0: tuple[float, ...] = (1.0, 1.0)
    h0_mode: str = "merton"
    guard_mult: float = 1.0
    cash_floor_mult: float = 0.75
    batch_size: int = 2_000
    workers: int = 1
    n_trace: int = 0


@dataclass(frozen=True)
class ValidatorSection:
    eps_grid: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    ratio_tol: float = 0.2
    slack_tol: float = 0.1
    fk_paths: int = 100_000
    fk_steps: int = 200


@dataclass(frozen=True)
class RunConfig:
    market: MarketSection = field(default_factory=MarketSection)
    investor: InvestorSection = field(default_factory=InvestorSection)
    corrector: CorrectorSection = field(default_factory=CorrectorSection)
    sim: SimSection = field(default_factory=SimSection)
    validator: ValidatorSection = field(default_factory=ValidatorSection)
    output_dir: str = "out"
    cache_dir: str = ".cache"

    def market_params(self) -> MarketParams:
        return MarketParams(np.array(self.market.mu), np.array(self.market.sigma), self.market.r)

    def investor_params(self) -> InvestorImpactParams:
        i = self.investor
        return InvestorImpactParams(i.R, i.T, i.kappa, i.m)

    def sim_config(self, epsilon: float) -> SimConfig:
        return SimConfig(epsilon=epsilon, **dataclasses.asdict(self.sim))

    def corrector_cache_key(self) -> str:
        c = self.corrector
        payload = {"m": self.investor.m, "bisect_tol": c.bisect_tol, "asym_tol": c.asym_tol,
                   "value_tol": c.value_tol, "x_max": c.x_max, "x_max_limit": c.x_max_limit,
                   "require_tail": c.require_tail}
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {"market": MarketSection, "investor": InvestorSection, "corrector": CorrectorSection,
             "sim": SimSection, "validator": ValidatorSection}


# ---------------------------------------------------------------------------
# value coercion


def _base_type(tp: str) -> str:
    return tp.replace(" | None", "").strip()


def _coerce(name: str, tp: str, raw):
    """Convert an INI string or JSON value to the declared field type."""
    base = _base_type(tp)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        if "None" in tp:
            return None
        raise ConfigError(f"{name}: value required")
    try:
        if base == "float":
            return float(raw)
        if base == "int":
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError("not an integer")
            return int(raw)
        if base == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("true", "yes", "1", "on"):
                return True
            if s in ("false", "no", "0", "off"):
                return False
            raise ValueError("not a boolean")
        if base == "str":
            return str(raw)
        if base == "tuple[float, ...]":
            vals = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
            return tuple(float(v) for v in vals)
        if base == "tuple[tuple[float, ...], ...]":
            rows = raw if isinstance(raw, (list, tuple)) else str(raw).split(";")
            return tuple(tuple(float(v) for v in (r if isinstance(r, (list, tuple)) else r.split(",")))
                         for r in rows)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {base}") from exc
    raise ConfigError(f"{name}: unsupported type {tp}")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join(", ".join(repr(float(x)) for x in row) for row in v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _section_from(name: str, cls, data: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    kwargs = {k: _coerce(f"{name}.{k}", str(known[k].type), v) for k, v in data.items()}
    return cls(**kwargs)


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    unknown = set(d) - set(_SECTIONS) - {"output_dir", "cache_dir"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    kwargs = {name: _section_from(name, cls, d.get(name) or {}) for name, cls in _SECTIONS.items()}
    for k in ("output_dir", "cache_dir"):
        if k in d:
            kwargs[k] = str(d[k])
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in _SECTIONS:
        sec = dataclasses.asdict(getattr(cfg, name))
        out[name] = {k: ([list(r) for r in v] if isinstance(v, tuple) and v and isinstance(v[0], tuple)
                         else list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
    out["output_dir"] = cfg.output_dir
    out["cache_dir"] = cfg.cache_dir
    return out


def validate(cfg: RunConfig) -> None:
    """Build every derived object once; any inconsistency becomes a ConfigError."""
    try:
        market = cfg.market_params()
        inv = cfg.investor_params()
        merton = solve_merton(market, inv)
        if len(cfg.sim.s0) != market.d:
            raise ValueError(f"s0 has {len(cfg.sim.s0)} entries, market has {market.d} assets")
        cfg.sim_config(0.0)
        grid = cfg.validator.eps_grid
        if any(e <= 0.0 for e in grid) or any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValueError("eps_grid must be positive and strictly decreasing")
        if not cfg.sim.t0 < inv.T:
            raise ValueError("t0 must be before the horizon")
    except ConfigError:
        raise
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(str(exc)) from exc
    # derived constants recomputed from their definitions
    if not np.isclose(inv.m_star * (3.0 * inv.m - 2.0), 1.0) or not np.isclose(inv.alpha * (inv.m - 1.0), 1.0):
        raise ConfigError("derived exponents are inconsistent")
    if not np.allclose(market.cov @ merton.pi * inv.R, market.excess):
        raise ConfigError("Merton fractions fail their defining equation")


def save_ini(cfg: RunConfig, path) -> Path:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep the case of R, T
    cp["paths"] = {"output_dir": cfg.output_dir, "cache_dir": cfg.cache_dir}
    for name in _SECTIONS:
        cp[name] = {k: _fmt(v) for k, v in dataclasses.asdict(getattr(cfg, name)).items()}
    path = Path(path)
    with path.open("w") as fh:
        cp.write(fh)
    return path


def save_json(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return path


def save(cfg: RunConfig, path) -> Path:
    return save_json(cfg, path) if str(path).endswith(".json") else save_ini(cfg, path)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            return from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid INI: {exc}") from exc
    d = {s: dict(cp[s]) for s in cp.sections() if s != "paths"}
    if cp.has_section("paths"):
        d.update(dict(cp["paths"]))
    return from_dict(d)

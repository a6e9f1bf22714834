"""Flat ``key = value`` experiment configuration with ``#`` comments."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ConfigError, InvalidModelError
from .model import GbmSpec, TimeGrid


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    # model
    mu: float = 0.03
    sigma: float = 0.09
    delta: float = 0.5
    x0: float = 86.3
    y0: float = 86.3
    barrier: float = 76.0
    # time grid: n_steps Euler steps up to t_m, same step size up to t_n
    n_steps: int = 50
    t_m: float = 1.0
    t_n: float = 3.0
    t_n_min: float = 1.1
    # quantization
    sizes: tuple = (50, 100, 400)
    sizes_after: int = 0          # grid size after t_m (0: same as before)
    newton: bool = True
    # filtering
    observations: str = ""        # CSV of time,value; empty means simulate
    exact_F: bool = True
    # credit
    ta: float = 1.0
    tb: float = 3.0
    spread_bps: float = 0.0
    lgd: float = 0.6
    rate: float = 0.0
    alpha: float = 0.25
    paths: int = 150_000
    deltas: tuple = (0.01, 0.02, 0.03)
    strike_factors: tuple = (0.8, 1.0, 1.2)
    lgd_sweep: tuple = (0.4, 0.5, 0.6, 0.7)
    rate_sweep: tuple = (0.0, 0.01, 0.02, 0.03)
    seed: int = 12345
    out: str = ""

    @property
    def dt(self) -> float:
        return self.t_m / self.n_steps

    def spec(self, delta: float | None = None):
        d = self.delta if delta is None else delta
        try:
            return GbmSpec(self.mu, self.sigma, d, self.x0, self.y0, self.barrier).diffusion()
        except InvalidModelError as exc:
            raise ConfigError(str(exc)) from None

    def time_grid(self, t_end: float | None = None) -> TimeGrid:
        t_end = self.t_n if t_end is None else t_end
        n = int(round(t_end / self.dt))
        if abs(n * self.dt - t_end) > 1e-9 * max(1.0, t_end):
            raise ConfigError(f"t_n = {t_end} is not a multiple of the step {self.dt}")
        if n < self.n_steps:
            raise ConfigError("t_n must not precede t_m")
        return TimeGrid.uniform(self.dt, n, self.n_steps)

    def step_sizes(self, n_before: int, grid: TimeGrid) -> list:
        after = self.sizes_after or n_before
        return [1] + [n_before] * grid.m + [after] * (grid.n - grid.m)

    def canonical(self) -> str:
        parts = []
        for f in fields(self):
            if f.name == "out":
                continue
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_PARSERS = {}
for _f in fields(ExperimentConfig):
    default = _f.default
    if isinstance(default, bool):
        _PARSERS[_f.name] = _bool
    elif isinstance(default, int):
        _PARSERS[_f.name] = int
    elif isinstance(default, float):
        _PARSERS[_f.name] = float
    elif isinstance(default, str):
        _PARSERS[_f.name] = str
_PARSERS["sizes"] = _ints
for _name in ("deltas", "strike_factors", "lgd_sweep", "rate_sweep"):
    _PARSERS[_name] = _floats


def _pairs(text: str, allowed):
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", line=lineno)
        seen[key] = lineno
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line=lineno) from None
        if isinstance(parsed, tuple) and not parsed:
            raise ConfigError(f"{key} needs at least one value", line=lineno)
        yield key, parsed, lineno


def _parse(text: str, base: ExperimentConfig | None, allowed) -> ExperimentConfig:
    cfg = replace(base) if base is not None else ExperimentConfig()
    seen = {}
    for key, parsed, lineno in _pairs(text, allowed):
        seen[key] = lineno
        setattr(cfg, key, parsed)
    _validate(cfg, seen)
    return cfg


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines over ``base``; errors name the offending line."""
    return _parse(text, base, _PARSERS)


# keys a standalone contract file may set
CONTRACT_KEYS = ("ta", "tb", "spread_bps", "lgd", "rate", "alpha", "paths", "seed")


def parse_contract(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return _parse(text, base, CONTRACT_KEYS)


def _validate(cfg: ExperimentConfig, lines: dict) -> None:
    def fail(key, msg):
        raise ConfigError(msg, line=lines.get(key))

    if cfg.sigma <= 0:
        fail("sigma", "sigma must be positive")
    if cfg.delta < 0 or any(d <= 0 for d in cfg.deltas):
        fail("delta" if cfg.delta < 0 else "deltas", "noise volatilities must be positive")
    if not 0 < cfg.barrier < cfg.x0:
        fail("barrier", "need 0 < barrier < x0")
    if cfg.y0 <= 0:
        fail("y0", "y0 must be positive")
    if cfg.n_steps < 1:
        fail("n_steps", "n_steps must be at least 1")
    if cfg.t_m <= 0:
        fail("t_m", "t_m must be positive")
    if cfg.t_n < cfg.t_m:
        fail("t_n", "t_n must not precede t_m")
    if any(n < 1 for n in cfg.sizes) or cfg.sizes_after < 0:
        fail("sizes" if "sizes" in lines else "sizes_after", "grid sizes must be positive")
    if not 0 < cfg.lgd <= 1 or any(not 0 < v <= 1 for v in cfg.lgd_sweep):
        fail("lgd" if "lgd" in lines else "lgd_sweep", "lgd must lie in (0, 1]")
    if cfg.paths < 2:
        fail("paths", "paths must be at least 2")
    if cfg.alpha <= 0:
        fail("alpha", "alpha must be positive")
    if not 0 <= cfg.ta < cfg.tb:
        fail("tb", "need 0 <= ta < tb")
    if cfg.spread_bps < 0:
        fail("spread_bps", "spread must be nonnegative")
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        fail("seed", "seed must be an unsigned 64-bit integer")


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)


def load_contract(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_contract(fh.read(), base)

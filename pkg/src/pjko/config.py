"""Flat ``key = value`` run configuration with a lossless round trip."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .energy import parse_energy
from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    a: float = 0.0
    b: float = 1.0
    energy: str = "entropy"
    p: float = 2.0
    d: int = 1
    tau: float = 1e-3
    T: float = 0.05
    m: int = 256
    n: int = 256
    eps_schedule: tuple = ()
    initial: str = "cosine(0.1)"
    inner_tol: float = 1e-9
    inner_max_iter: int = 200
    output: str = "run"
    snapshot_times: tuple = ()
    edi: bool = True
    young: bool = True
    flow_interchange: tuple = (1.0, 2.0)
    bv: bool = True
    lalpha: bool = True
    oracle: bool = False
    oracle_l1_max: float = 0.0
    cfl_safety: float = 0.45

    def __post_init__(self):
        if not self.b > self.a:
            raise ConfigError("domain needs a < b")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if self.d < 1:
            raise ConfigError("dimension d must be a positive integer")
        if not (self.tau > 0 and self.T > 0) or self.tau > self.T * (1 + 1e-12):
            raise ConfigError("need 0 < tau <= T")
        if self.m < 2 or self.n < 3:
            raise ConfigError("grid sizes too small")
        eps = self.eps_schedule
        if any(e <= 0 for e in eps) or any(x <= y for x, y in zip(eps, eps[1:])):
            raise ConfigError("eps_schedule must be positive and strictly decreasing")
        if not self.inner_tol > 0 or self.inner_max_iter < 1:
            raise ConfigError("solver tolerances must be positive")
        if any(t < 0 or t > self.T * (1 + 1e-12) for t in self.snapshot_times):
            raise ConfigError("snapshot times must lie in [0, T]")
        if any(beta < 0 for beta in self.flow_interchange):
            raise ConfigError("flow interchange exponents must be nonnegative")
        if not 0 < self.cfl_safety < 1:
            raise ConfigError("cfl_safety must lie in (0, 1)")
        parse_energy(self.energy)

    def energy_spec(self):
        return parse_energy(self.energy)

    def with_(self, **kw):
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_LISTS = {"eps_schedule", "snapshot_times", "flow_interchange"}


def _to_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _convert(key, raw):
    kind = _TYPES[key]
    try:
        if key in _LISTS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "bool":
            return _to_bool(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return RunConfig(**values)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg):
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def config_dict(cfg):
    return {f.name: (list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v)
            for f in fields(RunConfig)}

"""Simulation parameters and the plain-text ``key = value`` config format."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigError

G_MODES = ("constant", "analytic")


@dataclass(frozen=True)
class SimConfig:
    # defaults reproduce the numerical experiment of the reference setup
    T: float = 1.0
    J: int = 20
    n: int = 7
    theta: float = 0.7
    lambda1: float = 1.0
    lambda2: float = 1.0
    mu0: float = 1.0
    sigma: float = 1.0
    sigma_D: float = 1.0
    H_s: float = 30.0
    L: int = 400
    base_seed: int = 20160101
    g_mode: str = "constant"
    g_kappa: float = 1.0
    retain: int = 3
    n_list: tuple = (2, 3, 4, 5, 6, 7)
    k_ratios: tuple = (1.0, 0.5, 0.25)
    mesh_perturb: float = 0.0
    allow_unstable_theta: bool = False
    out: str = "out"

    def __post_init__(self):
        validate(self)

    @property
    def k(self) -> float:
        return self.T / self.J

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def mu(self) -> float:
        return self.lambda1 ** 2 + self.lambda2 ** 2

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def _check(ok, key, constraint):
    if not ok:
        raise ConfigError(f"{key}: must satisfy {constraint}")


def validate(c: SimConfig) -> None:
    finite = all(math.isfinite(getattr(c, k)) for k in
                 ("T", "theta", "lambda1", "lambda2", "mu0", "sigma", "sigma_D", "H_s",
                  "g_kappa", "mesh_perturb"))
    _check(finite, "config", "all real parameters finite")
    _check(c.T > 0, "T", "T > 0")
    _check(isinstance(c.J, int) and c.J >= 1, "J", "integer J >= 1")
    _check(isinstance(c.n, int) and c.n >= 1, "n", "integer n >= 1")
    _check(0.0 <= c.theta <= 1.0, "theta", "0 <= theta <= 1")
    _check(c.lambda1 != 0, "lambda1", "lambda1 != 0")
    _check(c.lambda2 > 0, "lambda2", "lambda2 > 0")
    _check(c.mu0 > 0, "mu0", "mu0 > 0")
    _check(c.sigma > 0, "sigma", "sigma > 0")
    _check(c.sigma_D > 0, "sigma_D", "sigma_D > 0")
    _check(isinstance(c.L, int) and c.L >= 1, "L", "integer L >= 1")
    _check(isinstance(c.base_seed, int) and 0 <= c.base_seed < 2 ** 64, "base_seed",
           "0 <= base_seed < 2^64")
    _check(c.g_mode in G_MODES, "g_mode", f"one of {', '.join(G_MODES)}")
    _check(isinstance(c.retain, int) and c.retain >= 0, "retain", "integer retain >= 0")
    _check(len(c.n_list) > 0 and all(isinstance(v, int) and v >= 1 for v in c.n_list),
           "n_list", "nonempty list of integers >= 1")
    _check(len(c.k_ratios) > 0 and all(v > 0 for v in c.k_ratios), "k_ratios",
           "nonempty list of positive reals")


def check_theta_stability(c: SimConfig) -> None:
    """Refuse ``theta < 1/2`` unless ``k < h^2 / 2`` or explicitly overridden."""
    if c.theta < 0.5 and c.k >= c.h ** 2 / 2 and not c.allow_unstable_theta:
        raise ConfigError(
            f"theta: theta={c.theta} < 1/2 needs k << h^2 (k={c.k:.4g} >= h^2/2={c.h ** 2 / 2:.4g});"
            " pass --allow-unstable-theta to run anyway")


def _parse_bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _parse_int(s):
    return int(s, 0)


def _parse_int_list(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


def _parse_float_list(s):
    return tuple(_parse_float(v) for v in s.replace(",", " ").split())


def _parse_float(s):
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


_PARSERS = {f.name: f.type for f in dataclasses.fields(SimConfig)}
_CONVERT = {
    "float": _parse_float, "int": _parse_int, "str": str, "bool": _parse_bool,
}


def _converter(key):
    if key == "n_list":
        return _parse_int_list
    if key == "k_ratios":
        return _parse_float_list
    return _CONVERT[_PARSERS[key]]


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _converter(key)(val)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse value {val!r}") from None
    return values


def parse_config(path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> SimConfig:
    """Read a config file and apply ``KEY=VALUE`` overrides on top.

    Missing keys take the defaults of :class:`SimConfig`.
    """
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_lines(text.splitlines(), str(path)))
    values.update(parse_lines(overrides, "--set"))
    return SimConfig(**values)


def format_config(c: SimConfig) -> str:
    out = []
    for f in dataclasses.fields(SimConfig):
        v = getattr(c, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"

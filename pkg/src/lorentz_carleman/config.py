"""Run configuration: a flat JSON object with an optional ``wave`` section.

Omitted keys take the dataclass defaults, so an empty file (or ``{}``) is a
complete Minkowski configuration.  ``LORENTZ_CARLEMAN_OUT`` overrides the
output directory and is the only environment variable consulted.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .metrics import CATALOG

OUT_ENV = "LORENTZ_CARLEMAN_OUT"
MIN_GRID = 16


class ConfigError(ValueError):
    """Unparseable or out-of-range configuration; the message names the key."""


@dataclass
class WaveSection:
    U: tuple[float, float] = (1.0, 2.0)
    span: tuple[float, float] = (-2.0, 2.0)
    nx: int = 128
    nt: int | None = None
    centre: float = 0.0
    r0: float = 2.5
    drift: tuple[str, str] = ("0", "0")
    potential: str = "0"
    target: str = "bump"
    tol: float = 1e-2
    max_iter: int = 200
    n_samples: int = 64


@dataclass
class Config:
    model: str = "minkowski"
    n: int = 1
    delta: float = 0.0
    k: float = 1.0
    centre: list[float] | None = None
    seed: int = 0
    a: float | None = None
    b0: float = 0.25
    eps0: float = 0.05
    r0: float = 1.0
    n_omega0: int = 8
    n_dirs: int = 16
    n_radii: int = 10
    n_points: int = 500
    out: str = "reports"
    format: str = "json"
    wave: WaveSection = field(default_factory=WaveSection)

    def __post_init__(self) -> None:
        if self.a is None:
            self.a = 4.0 * self.n**2
        if self.centre is None:
            self.centre = [0.0] * (self.n + 1)
        self.centre = [float(c) for c in self.centre]
        if isinstance(self.wave, dict):
            self.wave = _build(WaveSection, self.wave, "wave.")
        self.wave.U = tuple(float(v) for v in self.wave.U)
        self.wave.span = tuple(float(v) for v in self.wave.span)
        self.wave.drift = tuple(str(v) for v in self.wave.drift)
        self.validate()

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        if self.model not in CATALOG:
            bad("model", f"unknown model {self.model!r}; choose from {sorted(CATALOG)}")
        if self.n not in (1, 2, 3):
            bad("n", "spatial dimension must be 1, 2 or 3")
        if self.delta < 0:
            bad("delta", "must be >= 0")
        if len(self.centre) != self.n + 1:
            bad("centre", f"needs {self.n + 1} coordinates")
        if self.a < self.n**2:
            bad("a", f"must be >= n^2 = {self.n ** 2}")
        if not 0 <= self.eps0 <= 0.1:
            bad("eps0", "must lie in [0, 0.1]")
        if self.eps0 > self.b0 / 4:
            bad("eps0", f"must be <= b0/4 = {self.b0 / 4:g}")
        if self.b0 / 4 > 1 / 16:
            bad("b0", "b0/4 must be <= 1/16")
        if self.r0 <= 0 or self.wave.r0 <= 0:
            bad("r0", "must be positive")
        for key in ("n_omega0", "n_dirs", "n_radii", "n_points"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if min(self.wave.nx, self.wave.nt or MIN_GRID) < MIN_GRID:
            bad("wave.nx/nt", f"grid sizes must be >= {MIN_GRID}")
        if not self.wave.U[0] < self.wave.U[1]:
            bad("wave.U", "needs lo < hi")
        if not self.wave.span[0] < self.wave.span[1]:
            bad("wave.span", "needs start < end")
        if self.format not in ("json", "csv"):
            bad("format", "must be json or csv")

    def out_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.out)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wave"]["U"] = list(d["wave"]["U"])
        d["wave"]["span"] = list(d["wave"]["span"])
        d["wave"]["drift"] = list(d["wave"]["drift"])
        return d


def _build(cls, data: dict, prefix: str = ""):
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}: unknown key")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    return _build(Config, dict(data))


def read_raw(path) -> dict:
    """The parsed but unvalidated mapping; whitespace-only files give ``{}``."""
    text = Path(path).read_text()
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def load_config(path) -> Config:
    """Parse and validate a configuration file, filling defaults for omitted keys."""
    return config_from_dict(read_raw(path))


def write_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")

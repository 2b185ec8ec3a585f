"""Shared domain types, configuration and value conventions.

Complex vectors and matrices are plain ``numpy`` arrays (``complex128``).
The structured types below freeze their arrays on construction so they can
be shared between threads and worker processes without copying.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

FEAS_TOL = 1e-9
UNIT_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


def _frozen(a, dtype=complex) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and QoS parameters of one downlink.

    ``thresholds`` are the threshold margins Gamma_k; ``gammas`` are the
    scaled values Gamma_k / sin(theta) that enter the constraints.
    """

    n_antennas: int
    n_rf_chains: int
    n_users: int
    psk_order: int = 4
    phase_error_bound: float = 0.0
    thresholds: tuple[float, ...] | None = None
    ps_gain: float = 1.0
    block_length: int = 1
    coherence_symbols: int = 1
    constellation_offset: float = 0.0
    feas_tol: float = FEAS_TOL
    unit_tol: float = UNIT_TOL

    def __post_init__(self):
        for name in ("n_antennas", "n_rf_chains", "n_users", "block_length", "coherence_symbols"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n_rf_chains > self.n_antennas:
            raise ConfigError("n_rf_chains must not exceed n_antennas")
        if self.block_length > self.coherence_symbols:
            raise ConfigError("block_length must not exceed coherence_symbols")
        if isinstance(self.psk_order, bool) or not isinstance(self.psk_order, (int, np.integer)) or self.psk_order < 2:
            raise ConfigError(f"psk_order must be an integer >= 2, got {self.psk_order!r}")
        if not (0.0 <= self.phase_error_bound < math.pi):
            raise ConfigError("phase_error_bound must lie in [0, pi)")
        if not self.ps_gain > 0:
            raise ConfigError("ps_gain must be positive")
        thr = self.thresholds
        if thr is None:
            thr = (1.0,) * self.n_users
        elif np.isscalar(thr):
            thr = (float(thr),) * self.n_users
        thr = tuple(float(t) for t in thr)
        if len(thr) != self.n_users:
            raise ConfigError(f"thresholds must have n_users={self.n_users} entries, got {len(thr)}")
        if any(not (t > 0 and math.isfinite(t)) for t in thr):
            raise ConfigError("all thresholds must be positive and finite")
        object.__setattr__(self, "thresholds", thr)

    @property
    def theta(self) -> float:
        return math.pi / self.psk_order

    @property
    def gammas(self) -> np.ndarray:
        return np.asarray(self.thresholds) / math.sin(self.theta)

    def replace(self, **changes) -> "SystemConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        if "n_users" in changes and "thresholds" not in changes:
            # keep a uniform threshold when only the user count changes
            values["thresholds"] = values["thresholds"][0]
        values.update(changes)
        return SystemConfig(**values)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["thresholds"] = list(d["thresholds"])
        return d


def psk_constellation(order: int, offset: float = 0.0) -> np.ndarray:
    """Unit-modulus M-PSK points ``exp(j(2 pi m / M + offset))``."""
    m = np.arange(order)
    return np.exp(1j * (2 * np.pi * m / order + offset))


def check_symbols(s, order: int, offset: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Validate a symbol vector against the constellation and return it as an array."""
    s = np.asarray(s, dtype=complex)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("symbol vector must be a non-empty 1-D array")
    if np.any(np.abs(np.abs(s) - 1.0) > tol):
        raise ValueError("symbols must have unit modulus")
    idx = np.round((np.angle(s) - offset) * order / (2 * np.pi)) % order
    ref = psk_constellation(order, offset)[idx.astype(int)]
    if np.any(np.abs(s - ref) > 1e-6):
        raise ValueError("symbols are not points of the configured constellation")
    return s


@dataclass(frozen=True)
class AnalogPrecoder:
    """N x R phase-shifter matrix with constant entry modulus ``gain``."""

    matrix: np.ndarray
    gain: float = 1.0
    tol: float = field(default=UNIT_TOL, repr=False, compare=False)

    def __post_init__(self):
        a = _frozen(self.matrix)
        if a.ndim != 2:
            raise ValueError("analog precoder must be a 2-D matrix")
        if not np.all(np.isfinite(a)):
            raise ValueError("analog precoder has non-finite entries")
        if np.any(np.abs(np.abs(a) - self.gain) > self.tol * max(1.0, self.gain)):
            raise ValueError("analog precoder entries must all have modulus equal to the PS gain")
        object.__setattr__(self, "matrix", a)

    @classmethod
    def from_phases(cls, phases, gain: float = 1.0) -> "AnalogPrecoder":
        return cls(gain * np.exp(1j * np.asarray(phases, dtype=float)), gain)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


@dataclass(frozen=True)
class ErrorMatrix:
    """Multiplicative phase-shifter error: unit-modulus entries with angle within ``bound``."""

    matrix: np.ndarray
    bound: float
    tol: float = field(default=UNIT_TOL, repr=False, compare=False)

    def __post_init__(self):
        e = _frozen(self.matrix)
        if e.ndim != 2:
            raise ValueError("error matrix must be 2-D")
        if np.any(np.abs(np.abs(e) - 1.0) > self.tol):
            raise ValueError("error matrix entries must have unit modulus")
        if np.any(np.abs(np.angle(e)) > self.bound + self.tol):
            raise ValueError("error matrix phase exceeds the bound")
        object.__setattr__(self, "matrix", e)

    @classmethod
    def ones(cls, n: int, r: int, bound: float = 0.0) -> "ErrorMatrix":
        return cls(np.ones((n, r), dtype=complex), bound)

    @classmethod
    def from_phases(cls, phases, bound: float) -> "ErrorMatrix":
        return cls(np.exp(1j * np.asarray(phases, dtype=float)), bound)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


@dataclass(frozen=True)
class PrecodingSolution:
    analog: AnalogPrecoder
    composite: np.ndarray
    per_user: tuple[np.ndarray, ...]
    power: float
    iterations: int
    constraint_count: int
    converged: bool = True
    max_violation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "composite", _frozen(self.composite))
        object.__setattr__(self, "per_user", tuple(_frozen(d) for d in self.per_user))

    def to_dict(self) -> dict:
        def cplx(x):
            x = np.asarray(x)
            return {"re": x.real.tolist(), "im": x.imag.tolist()}

        return {
            "analog": {"gain": self.analog.gain, **cplx(self.analog.matrix)},
            "composite": cplx(self.composite),
            "per_user": [cplx(d) for d in self.per_user],
            "power": self.power,
            "iterations": self.iterations,
            "constraint_count": self.constraint_count,
            "converged": self.converged,
            "max_violation": self.max_violation,
        }


def per_user_precoders(b, s) -> list[np.ndarray]:
    """Split the composite precoder into per-user precoders ``d_k = b / (s_k K)``.

    Any split with ``sum_k d_k s_k = b`` yields the same transmit signal; this
    one spreads ``b`` evenly over the users.
    """
    b = np.asarray(b, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if b.size == 0:
        raise ValueError("composite precoder is empty")
    if s.size == 0 or np.any(np.abs(np.abs(s) - 1.0) > 1e-9):
        raise ValueError("symbols must be non-empty and unit modulus")
    k = s.size
    return [b / (sk * k) for sk in s]


# --- config files -----------------------------------------------------------

def _key_line(text: str, key: str) -> int | None:
    pat = re.compile(r'^\s*"?' + re.escape(key) + r'"?\s*[:=]')
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.search(line):
            return i
    return None


def parse_mapping(text: str, fmt: str, source: str | None = None) -> dict:
    """Parse JSON or TOML text, converting decoder errors into :class:`ConfigError`."""
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, exc.lineno, source) from exc
    elif fmt == "toml":
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            import tomli as tomllib

        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(str(exc), int(m.group(1)) if m else None, source) from exc
    else:
        raise ConfigError(f"unknown config format {fmt!r}", None, source)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table/object", 1, source)
    return data


def config_from_mapping(data: dict, text: str = "", source: str | None = None) -> SystemConfig:
    known = {f.name for f in fields(SystemConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", _key_line(text, key), source)
    try:
        return SystemConfig(**data)
    except ConfigError as exc:
        msg = str(exc)
        line = None
        for key in data:
            if msg.startswith(key) or f" {key} " in msg:
                line = _key_line(text, key)
                break
        raise ConfigError(msg, line, source) from None
    except TypeError as exc:
        raise ConfigError(str(exc), None, source) from None


def load_config(path) -> SystemConfig:
    """Load a :class:`SystemConfig` from a ``.json`` or ``.toml`` file."""
    path = Path(path)
    text = path.read_text()
    fmt = "toml" if path.suffix.lower() == ".toml" else "json"
    data = parse_mapping(text, fmt, str(path))
    return config_from_mapping(data, text, str(path))

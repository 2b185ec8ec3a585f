"""Geometric multipath channels and PSK symbol streams.

All randomness goes through :func:`make_rng`, a Philox generator keyed by
``(seed, *stream)``; independent trials use distinct stream tuples, so results
do not depend on how trials are distributed over workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import SystemConfig, psk_constellation

DEFAULT_PATHS = 15


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def ula_response(azimuth: float, n: int) -> np.ndarray:
    """Half-wavelength ULA steering vector, normalised to unit norm."""
    if n < 1:
        raise ValueError("array needs at least one element")
    m = np.arange(n)
    return np.exp(1j * np.pi * m * np.sin(azimuth)) / np.sqrt(n)


@dataclass(frozen=True)
class ChannelSet:
    """Channel vectors of all users, one row per user (K x N)."""

    vectors: np.ndarray
    n_paths: int
    seed: int

    def __post_init__(self):
        v = np.array(self.vectors, dtype=complex, copy=True)
        if v.ndim != 2:
            raise ValueError("channel vectors must form a K x N array")
        if not np.all(np.isfinite(v)):
            raise ValueError("channel has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n_users(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.vectors.shape[1]

    def to_json(self) -> str:
        inter = np.empty(self.vectors.shape[:1] + (2 * self.n_antennas,))
        inter[:, 0::2] = self.vectors.real
        inter[:, 1::2] = self.vectors.imag
        return json.dumps({"n_paths": self.n_paths, "seed": self.seed, "vectors": inter.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ChannelSet":
        d = json.loads(text)
        inter = np.asarray(d["vectors"], dtype=float)
        if inter.ndim != 2 or inter.shape[1] % 2:
            raise ValueError("vectors must be rows of interleaved real/imag pairs")
        return cls(inter[:, 0::2] + 1j * inter[:, 1::2], int(d["n_paths"]), int(d["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ChannelSet":
        return cls.from_json(Path(path).read_text())


def geometric_channel(config: SystemConfig, n_paths: int = DEFAULT_PATHS, seed: int = 0,
                      gains=None, stream: tuple[int, ...] = ()) -> ChannelSet:
    """Draw ``h_k = sqrt(N/L) sum_l alpha_l^k u(Phi_l^k)`` for every user.

    ``gains`` (K x L) overrides the random path gains; it exists for tests.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n, k = config.n_antennas, config.n_users
    rng = make_rng(seed, 0, *stream)
    alpha = (rng.standard_normal((k, n_paths)) + 1j * rng.standard_normal((k, n_paths))) / np.sqrt(2)
    phi = rng.uniform(0.0, 2 * np.pi, size=(k, n_paths))
    if gains is not None:
        alpha = np.broadcast_to(np.asarray(gains, dtype=complex), (k, n_paths))
    m = np.arange(n)
    steer = np.exp(1j * np.pi * m[None, None, :] * np.sin(phi)[:, :, None]) / np.sqrt(n)
    h = np.sqrt(n / n_paths) * np.einsum("kl,kln->kn", alpha, steer)
    return ChannelSet(h, n_paths, seed)


def draw_symbol_indices(config: SystemConfig, n_blocks: int, seed: int,
                        stream: tuple[int, ...] = ()) -> np.ndarray:
    rng = make_rng(seed, 1, *stream)
    return rng.integers(0, config.psk_order, size=(n_blocks, config.n_users))


def draw_symbols(config: SystemConfig, n_blocks: int, seed: int,
                 stream: tuple[int, ...] = ()) -> np.ndarray:
    """Uniform M-PSK symbol vectors, one row per symbol interval (n_blocks x K)."""
    idx = draw_symbol_indices(config, n_blocks, seed, stream)
    return psk_constellation(config.psk_order, config.constellation_offset)[idx]

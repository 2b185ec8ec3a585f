"""Constructive-interference region geometry.

After rotating user k's received signal by ``conj(s_k)`` the CI-region is the
wedge with apex ``gamma_k`` on the positive real axis and half-opening
``theta = pi/M``.  Every CI constraint in the package is written through
:func:`ci_slacks`, which is non-negative on both sides exactly inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet


def boundary_coeffs(theta: float) -> tuple[float, float]:
    """Weights ``(c_im, c_re)`` of the wedge inequality ``c_im |Im y| <= c_re (Re y - gamma)``.

    For ``theta < pi/2`` this is ``(1, tan theta)``.  At ``theta = pi/2`` (BPSK)
    ``tan`` diverges and the wedge degenerates to the half-plane ``Re y >= gamma``,
    written as ``(0, 1)``.
    """
    if not 0.0 < theta <= math.pi / 2 + 1e-15:
        raise ValueError("theta must lie in (0, pi/2]")
    if abs(theta - math.pi / 2) < 1e-12:
        return 0.0, 1.0
    return 1.0, math.tan(theta)


@dataclass(frozen=True)
class RotatedChannel:
    """Channel rows ``h_k = conj(s_k) h~_k`` (K x N)."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=complex, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n_users(self) -> int:
        return self.vectors.shape[0]


def rotate_channels(channels, s) -> RotatedChannel:
    h = channels.vectors if isinstance(channels, ChannelSet) else np.asarray(channels, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if h.shape[0] != s.size:
        raise ValueError(f"{h.shape[0]} channel rows but {s.size} symbols")
    return RotatedChannel(np.conj(s)[:, None] * h)


def ci_slacks(y_rot, gamma, theta: float):
    """Return ``(slack_plus, slack_minus)`` for rotated received values.

    ``slack_plus`` is the distance-like margin to the anti-clockwise boundary,
    ``(Re y - gamma) tan(theta) - Im y``; ``slack_minus`` the clockwise one.
    Works elementwise on arrays.
    """
    c_im, c_re = boundary_coeffs(theta)
    y = np.asarray(y_rot, dtype=complex)
    base = c_re * (y.real - gamma)
    plus = base - c_im * y.imag
    minus = base + c_im * y.imag
    if plus.ndim == 0:
        return float(plus), float(minus)
    return plus, minus


def in_ci_region(y_rot, gamma, theta: float, tol: float = 0.0):
    plus, minus = ci_slacks(y_rot, gamma, theta)
    inside = np.minimum(plus, minus) >= -tol
    return bool(inside) if np.ndim(inside) == 0 else inside

"""Worst-case phase-shifter errors for a fixed digital precoder.

The violation of either CI boundary is a sum of independent per-entry terms
``kappa cos(phi) + tau sin(phi)`` over the phase errors ``phi_nr``, so each
entry is maximised on the arc ``|phi| <= delta`` on its own: the
unconstrained maximiser ``atan2(tau, kappa)`` if it lies on the arc, else the
nearer arc end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import boundary_coeffs, ci_slacks
from .model import AnalogPrecoder, ErrorMatrix


@dataclass(frozen=True)
class WorstCaseResult:
    e_plus: ErrorMatrix
    e_minus: ErrorMatrix
    v_plus: float
    v_minus: float

    @property
    def max_violation(self) -> float:
        return max(self.v_plus, self.v_minus)


def _matrix(analog) -> np.ndarray:
    return analog.matrix if isinstance(analog, AnalogPrecoder) else np.asarray(analog, dtype=complex)


def z_matrix(h_k, b, analog) -> np.ndarray:
    """``Z = (h_k b^T) * A`` (Hadamard), the per-entry contributions to ``h_k^T (A*E) b``."""
    a = _matrix(analog)
    h = np.asarray(h_k, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != (h.size, b.size):
        raise ValueError(f"analog matrix {a.shape} does not match h ({h.size}) and b ({b.size})")
    return np.outer(h, b) * a


def side_coefficients(z: np.ndarray, theta: float, side: int):
    """Per-entry ``(kappa, tau)`` of the violation as a function of ``e = cos phi + j sin phi``."""
    c_im, c_re = boundary_coeffs(theta)
    zr, zi = z.real, z.imag
    if side > 0:
        return c_im * zi - c_re * zr, c_im * zr + c_re * zi
    return -c_im * zi - c_re * zr, -c_im * zr + c_re * zi


def received(h_k, b, analog, e=None) -> complex:
    """Noiseless rotated received value ``h_k^T (A*E) b``."""
    a = _matrix(analog)
    if e is not None:
        a = a * (e.matrix if isinstance(e, ErrorMatrix) else e)
    return complex(np.asarray(h_k) @ (a @ np.asarray(b)))


def violation(h_k, b, analog, e, gamma: float, theta: float) -> tuple[float, float]:
    """``(v_plus, v_minus)``: negated CI slacks of user k under error ``e``."""
    plus, minus = ci_slacks(received(h_k, b, analog, e), gamma, theta)
    return -plus, -minus


def _closed_form_side(z, delta, theta, side):
    kappa, tau = side_coefficients(z, theta, side)
    norm = np.hypot(kappa, tau)
    zero = norm == 0
    safe = np.where(zero, 1.0, norm)
    # u = max(cos delta, kappa/|.|), w = sign(tau) sqrt(1 - u^2), evaluated through
    # the angle: sqrt(1 - u^2) cancels catastrophically once cos(delta) rounds to 1
    inside = kappa / safe >= math.cos(delta)
    phi = np.where(inside, np.arctan2(tau, kappa), np.where(tau >= 0, delta, -delta))
    phi = np.clip(phi, -delta, delta)
    return np.where(zero, 1.0 + 0j, np.exp(1j * phi))


def worst_case_pair(h_k, b, analog, delta: float, theta: float, gamma: float) -> WorstCaseResult:
    """Closed-form worst-case error matrices for both CI boundaries of one user."""
    if not 0.0 <= delta < math.pi / 2:
        raise ValueError("closed form is validated only for 0 <= delta < pi/2")
    z = z_matrix(h_k, b, analog)
    ep = ErrorMatrix(_closed_form_side(z, delta, theta, +1), delta)
    em = ErrorMatrix(_closed_form_side(z, delta, theta, -1), delta)
    vp, _ = violation(h_k, b, analog, ep, gamma, theta)
    _, vm = violation(h_k, b, analog, em, gamma, theta)
    return WorstCaseResult(ep, em, vp, vm)


def worst_case_all(rotated, b, analog, delta: float, theta: float, gammas) -> list[WorstCaseResult]:
    h = rotated.vectors if hasattr(rotated, "vectors") else np.asarray(rotated)
    gammas = np.broadcast_to(np.asarray(gammas, dtype=float), (h.shape[0],))
    return [worst_case_pair(h[k], b, analog, delta, theta, gammas[k]) for k in range(h.shape[0])]


def oracle_worst_case(h_k, b, analog, delta: float, theta: float, gamma: float,
                      grid_points: int = 2001, chunk: int = 1 << 22) -> WorstCaseResult:
    """Brute-force counterpart of :func:`worst_case_pair`: per-entry grid search on ``[-delta, delta]``."""
    if grid_points < 3:
        raise ValueError("grid_points must be >= 3")
    z = z_matrix(h_k, b, analog)
    phi = np.linspace(-delta, delta, grid_points)
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    out = []
    for side in (+1, -1):
        kappa, tau = (c.ravel() for c in side_coefficients(z, theta, side))
        best = np.empty(kappa.size)
        step = max(1, chunk // grid_points)
        for lo in range(0, kappa.size, step):
            obj = kappa[lo:lo + step, None] * cos_p + tau[lo:lo + step, None] * sin_p
            best[lo:lo + step] = phi[np.argmax(obj, axis=1)]
        out.append(ErrorMatrix(np.exp(1j * best).reshape(z.shape), delta))
    vp, _ = violation(h_k, b, analog, out[0], gamma, theta)
    _, vm = violation(h_k, b, analog, out[1], gamma, theta)
    return WorstCaseResult(out[0], out[1], vp, vm)


def grid_resolution_bound(h_k, b, analog, delta: float, theta: float, grid_points: int) -> float:
    """Upper bound on how far the grid optimum can fall short of the true one.

    Each entry loses at most ``|kappa + j tau| (1 - cos(h/2))`` with grid step ``h``.
    """
    z = z_matrix(h_k, b, analog)
    c_im, c_re = boundary_coeffs(theta)
    step = 2 * delta / (grid_points - 1)
    return float(np.abs(z).sum() * math.hypot(c_im, c_re) * (1 - math.cos(step / 2)))

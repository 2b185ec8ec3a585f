"""Worst-case robust digital precoding by constraint generation.

Each outer iteration solves the QP over the error matrices collected so far,
then asks :mod:`cihp.worst_case` for the most violating error matrix of each
user and boundary.  Violating matrices join the ledger; the loop stops when
no user can be pushed out of its CI-region by any admissible error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .channel import ChannelSet
from .geometry import rotate_channels
from .model import AnalogPrecoder, ErrorMatrix, PrecodingSolution, SystemConfig, per_user_precoders
from .realify import InfeasibleError, RealEmbedding, solve_qp
from .worst_case import violation, worst_case_all

PLUS, MINUS = +1, -1


class IterationRecord(NamedTuple):
    power: float
    max_violation: float
    width: int
    inner_iterations: int


class ConstraintLedger:
    """Error matrices defining the relaxed problem, per user and boundary side.

    Entries are keyed ``(k, side, serial)``; serials are never reused, so a key
    identifies the same constraint for the lifetime of the ledger.
    """

    def __init__(self, n_users: int, shape: tuple[int, int], bound: float):
        self.n_users = n_users
        self.shape = shape
        self.bound = bound
        self._mats: dict[tuple, ErrorMatrix] = {}
        self._serial = 0
        self.history: list[IterationRecord] = []
        seed = ErrorMatrix.ones(*shape, bound)
        for side in (PLUS, MINUS):
            for k in range(n_users):
                self.add(k, side, seed)
        self.seeds = frozenset(self._mats)

    def add(self, k: int, side: int, err: ErrorMatrix) -> tuple:
        if err.shape != self.shape:
            raise ValueError("error matrix shape does not match the ledger")
        key = (k, side, self._serial)
        self._serial += 1
        self._mats[key] = err
        return key

    def remove(self, keys) -> None:
        for key in keys:
            if key in self.seeds:
                raise ValueError("seed matrices cannot be removed")
            del self._mats[key]

    def entries(self):
        for key, err in self._mats.items():
            yield key, key[0], key[1], err

    def _sets(self, side):
        out = [[] for _ in range(self.n_users)]
        for (k, s, _), err in self._mats.items():
            if s == side:
                out[k].append(err)
        return out

    @property
    def plus_sets(self) -> list[list[ErrorMatrix]]:
        return self._sets(PLUS)

    @property
    def minus_sets(self) -> list[list[ErrorMatrix]]:
        return self._sets(MINUS)

    def __len__(self) -> int:
        return len(self._mats)


@dataclass(frozen=True)
class RobustOptions:
    max_outer: int = 200
    add_tol: float = 1e-9
    prune: bool = False
    prune_tol: float = 1e-7
    tol_eps: float = 1e-8
    max_inner: int = 100_000
    warm_start: bool = True
    polish: bool = True


@dataclass(frozen=True)
class RobustResult:
    """Everything :func:`solve_robust` learned, beyond the solution itself."""

    solution: PrecodingSolution
    ledger: ConstraintLedger = field(repr=False)
    history: tuple


def prune_redundant(ledger: ConstraintLedger, b, rotated, analog, config: SystemConfig,
                    prune_tol: float = 1e-7) -> ConstraintLedger:
    """Drop non-seed constraints that hold with slack larger than ``prune_tol`` at ``b``."""
    h = rotated.vectors
    gammas = config.gammas
    drop = []
    for key, k, side, err in ledger.entries():
        if key in ledger.seeds:
            continue
        vp, vm = violation(h[k], b, analog, err, gammas[k], config.theta)
        slack = -(vp if side == PLUS else vm)
        if slack > prune_tol:
            drop.append(key)
    ledger.remove(drop)
    return ledger


def _analog_matrix(analog):
    return analog.matrix if isinstance(analog, AnalogPrecoder) else np.asarray(analog, dtype=complex)


def solve_robust_full(channels: ChannelSet, s, analog: AnalogPrecoder, config: SystemConfig,
                      options: RobustOptions | None = None) -> RobustResult:
    opts = options or RobustOptions()
    a = _analog_matrix(analog)
    if not isinstance(analog, AnalogPrecoder):
        analog = AnalogPrecoder(a, float(np.abs(a).flat[0]))
    rotated = rotate_channels(channels, s)
    embedding = RealEmbedding.from_analog(a)
    delta = config.phase_error_bound
    ledger = ConstraintLedger(config.n_users, a.shape, delta)
    cols = None
    lam_by_key: dict = {}
    b = np.zeros(a.shape[1], dtype=complex)
    converged = False
    max_v = np.inf
    it = 0
    for it in range(1, opts.max_outer + 1):
        lam0 = None
        if opts.warm_start and lam_by_key:
            lam0 = [lam_by_key.get(key, 0.0) for key, *_ in ledger.entries()]
        try:
            b, diag = solve_qp(rotated, embedding, ledger, config, opts.tol_eps, opts.max_inner,
                               columns=cols, lam0=lam0, polish=opts.polish)
        except InfeasibleError as exc:
            # the relaxation that failed, so callers can check the certificate independently
            exc.ledger, exc.iteration = ledger, it
            raise
        cols = diag.columns
        lam_by_key = dict(zip(cols.provenance, diag.state.lam))
        power = float(np.linalg.norm(a @ b) ** 2)
        results = worst_case_all(rotated, b, a, delta, config.theta, config.gammas)
        max_v = max(r.max_violation for r in results)
        ledger.history.append(IterationRecord(power, max_v, cols.width, diag.iterations))
        if max_v <= opts.add_tol:
            converged = True
            break
        if opts.prune:
            prune_redundant(ledger, b, rotated, a, config, opts.prune_tol)
        for k, r in enumerate(results):
            if r.v_plus > opts.add_tol:
                ledger.add(k, PLUS, r.e_plus)
            if r.v_minus > opts.add_tol:
                ledger.add(k, MINUS, r.e_minus)
    sol = PrecodingSolution(
        analog=analog,
        composite=b,
        per_user=tuple(per_user_precoders(b, s)),
        power=float(np.linalg.norm(a @ b) ** 2),
        iterations=it,
        constraint_count=cols.width if cols is not None else 0,
        converged=converged,
        max_violation=float(max_v),
    )
    return RobustResult(sol, ledger, tuple(ledger.history))


def solve_robust(channels: ChannelSet, s, analog: AnalogPrecoder, config: SystemConfig,
                 options: RobustOptions | None = None) -> PrecodingSolution:
    """Minimum-power precoder keeping every user in its CI-region for all bounded phase errors.

    Raises :class:`cihp.realify.InfeasibleError` when some relaxation is
    infeasible; the error carries that relaxation as ``ledger`` and the outer
    iteration as ``iteration``.  If ``options.max_outer`` runs out the returned solution has
    ``converged=False`` and reports its largest remaining violation.
    """
    return solve_robust_full(channels, s, analog, config, options).solution


def solve_nonrobust(channels: ChannelSet, s, analog: AnalogPrecoder, config: SystemConfig,
                    options: RobustOptions | None = None) -> PrecodingSolution:
    """CI precoder that ignores phase errors (the error-free design)."""
    return solve_robust(channels, s, analog, config.replace(phase_error_bound=0.0), options)


def history_csv(history) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["iteration", "power", "max_violation", "constraints", "inner_iterations"])
    for i, rec in enumerate(history, start=1):
        w.writerow([i, repr(rec.power), repr(rec.max_violation), rec.width, rec.inner_iterations])
    return buf.getvalue()

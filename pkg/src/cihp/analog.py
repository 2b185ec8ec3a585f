"""Block-level analog precoder design.

Three designers build the N x R phase-shifter matrix that stays fixed over a
block of T symbol intervals:

* :func:`cpc` conjugates the phases of each user's channel (continuous
  phases, needs full-resolution phase shifters);
* :func:`bmcs` picks, per user, the codebook column best matched to the channel;
* :func:`mwaso` selects R codebook columns jointly for the whole block by a
  row-sparse convex program whose weight is tuned by bisection.

Only CPC and BMCS are symbol independent; MWASO looks at the block's symbols.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .channel import ChannelSet
from .geometry import boundary_coeffs
from .model import UNIT_TOL, AnalogPrecoder, SystemConfig, _frozen


def _channel_matrix(channels) -> np.ndarray:
    return channels.vectors if isinstance(channels, ChannelSet) else np.asarray(channels, dtype=complex)


@dataclass(frozen=True)
class Codebook:
    """Candidate analog precoders, one per column (N x C), entries of modulus ``gain``."""

    matrix: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        c = _frozen(self.matrix)
        if c.ndim != 2:
            raise ValueError("codebook must be a 2-D matrix")
        if not self.gain > 0:
            raise ValueError("codebook gain must be positive")
        if np.any(np.abs(np.abs(c) - self.gain) > UNIT_TOL * 1e3 * max(1.0, self.gain)):
            raise ValueError("codebook entries must all have modulus equal to the gain")
        object.__setattr__(self, "matrix", c)

    @property
    def size(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.matrix.shape[0]

    def precoder(self, indices) -> AnalogPrecoder:
        """Analog matrix made of the columns ``indices`` (repeats allowed)."""
        idx = np.asarray(indices, dtype=int)
        return AnalogPrecoder(self.matrix[:, idx], self.gain, tol=UNIT_TOL * 1e3)

    def to_json(self) -> str:
        inter = np.empty((self.n_antennas, 2 * self.size))
        inter[:, 0::2] = self.matrix.real
        inter[:, 1::2] = self.matrix.imag
        return json.dumps({"gain": self.gain, "matrix": inter.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        d = json.loads(text)
        inter = np.asarray(d["matrix"], dtype=float)
        if inter.ndim != 2 or inter.shape[1] % 2:
            raise ValueError("matrix must be rows of interleaved real/imag pairs")
        return cls(inter[:, 0::2] + 1j * inter[:, 1::2], float(d["gain"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_json(Path(path).read_text())


def dft_codebook(n: int, c: int, gain: float = 1.0) -> Codebook:
    """``c`` DFT beams for ``n`` antennas; entry (n, m) is ``gain * exp(-2j pi n m / c)``."""
    if n < 1 or c < 1:
        raise ValueError("codebook dimensions must be positive")
    nm = np.outer(np.arange(n), np.arange(c))
    # reduce the exponent modulo c first so large products keep full phase accuracy
    return Codebook(gain * np.exp(-2j * np.pi * (nm % c) / c), gain)


def _chain_users(n_rf: int, n_users: int) -> np.ndarray:
    # chain r serves user r mod K; chains beyond K repeat users round-robin
    return np.arange(n_rf) % n_users


def cpc(channels, config: SystemConfig) -> AnalogPrecoder:
    """Conjugate-phase-of-channel analog precoder, ``a_nk = a exp(-j arg h_kn)``."""
    h = _channel_matrix(channels)
    k, r = config.n_users, config.n_rf_chains
    if r < k:
        raise ValueError(f"CPC needs at least one RF chain per user (R={r} < K={k})")
    if h.shape != (k, config.n_antennas):
        raise ValueError(f"channel shape {h.shape} does not match the configuration")
    users = _chain_users(r, k)
    return AnalogPrecoder.from_phases(-np.angle(h[users].T), config.ps_gain)


def codebook_scores(channels, codebook: Codebook) -> np.ndarray:
    """``|h_k^T c_i|`` for every user (rows) and codebook column (columns)."""
    return np.abs(_channel_matrix(channels) @ codebook.matrix)


def bmcs_indices(channels, codebook: Codebook, config: SystemConfig) -> np.ndarray:
    k, r = config.n_users, config.n_rf_chains
    if not codebook.size >= r >= k:
        raise ValueError(f"BMCS needs C >= R >= K, got C={codebook.size}, R={r}, K={k}")
    scores = codebook_scores(channels, codebook)
    # stable sort on the negated score: ties resolve to the lowest column index
    order = np.argsort(-scores, axis=1, kind="stable")
    users = _chain_users(r, k)
    rank = np.arange(r) // k
    return order[users, rank]


def bmcs(channels, codebook: Codebook, config: SystemConfig) -> AnalogPrecoder:
    """Best-matching-code-selection: each user's chain takes its best codebook column.

    Users may pick the same column; the repeated column is kept.  A surplus
    chain serving a user for the ``m``-th time takes that user's ``m``-th best
    column.
    """
    return codebook.precoder(bmcs_indices(channels, codebook, config))


class MwasoError(RuntimeError):
    """Weight bisection could not isolate exactly R non-zero rows."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class MwasoOptions:
    weight_lo: float = 1e-6
    weight_hi: float = 1e3
    max_halvings: int = 60
    log_interval_tol: float = 1e-10
    row_rtol: float = 1e-6
    row_floor: float = 1e-6
    ridge: float = 1.0
    on_failure: str = "raise"

    def __post_init__(self):
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")
        if self.on_failure not in ("raise", "top_r"):
            raise ValueError("on_failure must be 'raise' or 'top_r'")
        if not 0 < self.weight_lo < self.weight_hi:
            raise ValueError("need 0 < weight_lo < weight_hi")


class BisectionStep(NamedTuple):
    weight: float
    rows: int
    upsilon: float


@dataclass(frozen=True)
class MwasoResult:
    selected_indices: tuple
    upsilon: float
    x_matrix: np.ndarray = field(repr=False)
    weight: float
    bisection_trace: list = field(repr=False)
    analog: AnalogPrecoder = field(repr=False)
    fallback: bool = False

    @property
    def mwaso_weight(self) -> float:
        return self.weight


class MwasoProblem:
    """The row-sparse selection program for one channel and symbol block.

    ``minimize  U + weight * sum_c ||X[c, :]|| + ridge/2 * ||X||_F^2``
    subject to every user's noiseless signal ``s_kt^* h_k^T C x_t`` lying in
    the CI-region with margin ``gamma_k - U`` for every t.

    Without the ridge term the objective is linear along every ray ``a X``:
    the program is unbounded below when the weight is small and solved by
    ``X = 0`` otherwise, so no weight isolates R rows.  The quadratic term
    makes the optimum unique and lets rows leave the support one at a time
    as the weight grows.
    """

    def __init__(self, channels, symbols_block, codebook: Codebook, config: SystemConfig,
                 ridge: float = 1.0):
        h = _channel_matrix(channels)
        s = np.atleast_2d(np.asarray(symbols_block, dtype=complex))
        if s.shape[1] != h.shape[0]:
            raise ValueError(f"symbol block has {s.shape[1]} users, channel has {h.shape[0]}")
        if codebook.n_antennas != h.shape[1]:
            raise ValueError("codebook and channel disagree on the number of antennas")
        self.config = config
        self.codebook = codebook
        self.n_blocks = s.shape[0]
        # G[t, k, :] = s_kt^* h_k^T C
        self.g = np.conj(s)[:, :, None] * (h @ codebook.matrix)[None]
        self.c_im, self.c_re = boundary_coeffs(config.theta)
        self.gammas = np.asarray(config.gammas, dtype=float)
        self.ridge = float(ridge)
        self.tol = 1e-10
        self._data = None

    @property
    def size(self) -> int:
        return self.codebook.size

    def objective(self, x, upsilon, weight) -> float:
        x = np.asarray(x)
        return float(upsilon + weight * np.linalg.norm(x, axis=1).sum()
                     + 0.5 * self.ridge * np.vdot(x, x).real)

    def min_upsilon(self, x) -> float:
        """Smallest U making ``x`` feasible."""
        z = np.einsum("tkc,ct->tk", self.g, x)
        need = self.gammas[None, :] - z.real + (self.c_im / self.c_re) * np.abs(z.imag)
        return float(need.max())

    def _conic_data(self, rows):
        # real variables [Re X (rows x T), Im X (rows x T), U, t (rows)] with
        # t_c >= ||X[c, :]|| as one second-order cone per row
        import scipy.sparse as sp

        t_len, k_len, _ = self.g.shape
        n_row = rows.size
        nx = n_row * t_len
        n_var = 2 * nx + 1 + n_row
        wp, wm = self.c_re + 1j * self.c_im, self.c_re - 1j * self.c_im
        blocks = []
        for w in (wp, wm):
            p = w * self.g[:, :, rows]
            # Re(p^T x_t) = Re(p) . Re(x_t) - Im(p) . Im(x_t)
            re = np.zeros((t_len, k_len, n_row, t_len))
            im = np.zeros_like(re)
            idx = np.arange(t_len)
            re[idx, :, :, idx] = p.real
            im[idx, :, :, idx] = -p.imag
            blocks.append(np.concatenate([re.reshape(t_len * k_len, nx), im.reshape(t_len * k_len, nx)], axis=1))
        coef = np.vstack(blocks)
        m_ci = coef.shape[0]
        # coef . x + c_re U >= c_re gamma, written as A v + s = b with s >= 0
        a_ci = sp.hstack([sp.csc_matrix(-coef), sp.csc_matrix(np.full((m_ci, 1), -self.c_re)),
                          sp.csc_matrix((m_ci, n_row))])
        b_ci = -self.c_re * np.tile(np.tile(self.gammas, t_len), 2)
        soc_rows, soc_cols = [], []
        for c in range(n_row):
            base = c * (2 * t_len + 1)
            soc_rows.append(base)
            soc_cols.append(2 * nx + 1 + c)
            for t in range(t_len):
                soc_rows += [base + 1 + t, base + 1 + t_len + t]
                soc_cols += [c * t_len + t, nx + c * t_len + t]
        m_soc = n_row * (2 * t_len + 1)
        a_soc = sp.csc_matrix((-np.ones(len(soc_rows)), (soc_rows, soc_cols)), shape=(m_soc, n_var))
        a = sp.vstack([a_ci, a_soc]).tocsc()
        b = np.concatenate([b_ci, np.zeros(m_soc)])
        pdiag = np.zeros(n_var)
        pdiag[:2 * nx] = self.ridge
        return sp.diags(pdiag).tocsc(), a, b, m_ci, n_row, t_len

    def solve(self, weight: float, support=None):
        """Return ``(x, upsilon)``; ``support`` restricts X to the listed rows.

        Solved as a second-order cone program by an interior-point solver.
        The weight enters only the linear cost, so the cone data are built once
        per support and reused across a weight sweep.
        """
        import clarabel

        rows = np.arange(self.size) if support is None else np.asarray(support, dtype=int)
        key = tuple(rows)
        if self._data is None or self._data[0] != key:
            self._data = (key, self._conic_data(rows))
        pmat, a, b, m_ci, n_row, t_len = self._data[1]
        nx = n_row * t_len
        q = np.zeros(a.shape[1])
        q[2 * nx] = 1.0
        q[2 * nx + 1:] = weight
        cones = [clarabel.NonnegativeConeT(m_ci)] + [clarabel.SecondOrderConeT(2 * t_len + 1)] * n_row
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = self.tol
        settings.max_iter = 400
        sol = clarabel.DefaultSolver(pmat, q, a, b, cones, settings).solve()
        if str(sol.status) not in ("Solved", "AlmostSolved"):
            raise RuntimeError(f"MWASO inner solver failed with status {sol.status}")
        v = np.asarray(sol.x)
        full = np.zeros((self.size, self.n_blocks), dtype=complex)
        full[rows] = (v[:nx] + 1j * v[nx:2 * nx]).reshape(n_row, t_len)
        # report the tightest U for the returned X
        return full, self.min_upsilon(full)


def row_support(x, row_rtol: float = 1e-6, row_atol: float = 0.0) -> np.ndarray:
    """Indices of rows whose norm exceeds ``row_rtol`` times the largest row norm.

    Rows at or below ``row_atol`` never count, so a numerically zero X (as an
    interior-point method returns it) has an empty support.
    """
    rn = np.linalg.norm(np.asarray(x), axis=1)
    return np.flatnonzero(rn > max(row_rtol * rn.max(initial=0.0), row_atol))


def mwaso(channels, symbols_block, codebook: Codebook, config: SystemConfig,
          solver_opts: MwasoOptions | None = None) -> MwasoResult:
    """Margin-widening-and-selection-operator analog design for one block.

    Bisects the sparsity weight on a log scale over
    ``[weight_lo, weight_hi]`` until exactly R rows of X are non-zero; those
    codebook columns form the analog precoder.  The returned X is a selection
    device only and is not a usable digital precoder.

    Raises :class:`MwasoError` (carrying the trace) when the interval does not
    bracket R rows or the halvings run out, unless ``on_failure="top_r"``, in
    which case the R largest rows of the last solution with more than R
    rows are taken and the result is flagged ``fallback=True``.  Bisection
    stops early once the log-weight interval is narrower than
    ``log_interval_tol``; the row count typically jumps past R there because
    several rows vanish at the same critical weight.
    """
    opts = solver_opts or MwasoOptions()
    r = config.n_rf_chains
    if codebook.size < r:
        raise ValueError(f"codebook has {codebook.size} columns, fewer than R={r}")
    prob = MwasoProblem(channels, symbols_block, codebook, config, opts.ridge)
    trace: list[BisectionStep] = []

    floor = 0.0

    def probe(weight):
        x, u = prob.solve(weight)
        sup = row_support(x, opts.row_rtol, floor)
        trace.append(BisectionStep(float(weight), int(sup.size), float(u)))
        return x, u, sup

    def finish(x, u, weight, sup, fallback=False):
        sel = tuple(int(i) for i in np.sort(sup))
        return MwasoResult(sel, u, x, weight, trace, codebook.precoder(sel), fallback)

    def fail(message, dense):
        # dense: the last solution with more than R rows, if any
        if opts.on_failure == "raise" or dense is None:
            raise MwasoError(message, trace)
        x, u, weight = dense
        rn = np.linalg.norm(x, axis=1)
        top = np.argsort(-rn, kind="stable")[:r]
        return finish(x, u, weight, top, fallback=True)

    lo, hi = math.log(opts.weight_lo), math.log(opts.weight_hi)
    x, u, sup = probe(opts.weight_lo)
    # near the weight where X collapses to zero every row is tiny and which
    # ones survive is decided by solver noise; rows below this fraction of the
    # densest solution's scale do not count
    floor = opts.row_floor * float(np.linalg.norm(x, axis=1).max(initial=0.0))
    sup = row_support(x, opts.row_rtol, floor)
    trace[-1] = trace[-1]._replace(rows=int(sup.size))
    if sup.size == r:
        return finish(x, u, opts.weight_lo, sup)
    if sup.size < r:
        return fail(f"only {sup.size} rows are non-zero at the smallest weight", None)
    dense = (x, u, opts.weight_lo)
    x, u, sup = probe(opts.weight_hi)
    if sup.size == r:
        return finish(x, u, opts.weight_hi, sup)
    if sup.size > r:
        return fail(f"{sup.size} rows are still non-zero at the largest weight", (x, u, opts.weight_hi))
    for _ in range(opts.max_halvings):
        if hi - lo <= opts.log_interval_tol:
            break
        mid = 0.5 * (lo + hi)
        weight = math.exp(mid)
        x, u, sup = probe(weight)
        if sup.size == r:
            return finish(x, u, weight, sup)
        if sup.size > r:
            lo = mid
            dense = (x, u, weight)
        else:
            hi = mid
    return fail(f"the row count jumps past {r} inside [{math.exp(lo):.12g}, {math.exp(hi):.12g}]", dense)

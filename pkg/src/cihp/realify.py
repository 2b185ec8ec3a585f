"""Real-valued embedding of the finite-constraint precoding QP and its dual solver.

With ``g = crvec(b)`` the relaxed problem reads

    minimize ||M0 g||^2   s.t.   psi_w^T g >= r_w   for every constraint column w,

and its dual is ``min_{lambda >= 0} ||N lambda||^2 - r^T lambda`` with
``N^T N = Psi^T (M0^T M0)^{-1} Psi / 4``.  The dual is solved by parallel
(Jacobi) coordinate minimisation plus an exact line search; the primal point
is ``g = (M0^T M0)^{-1} Psi lambda / 2``.

``N`` is formed with the inverse Cholesky factor of ``M0^T M0`` instead of
the pseudo-inverse of ``M0``; both give the same ``N^T N`` and therefore the
same iterates, but the Cholesky form is only 2R rows tall.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .geometry import boundary_coeffs
from .model import AnalogPrecoder, ErrorMatrix, SystemConfig


class InfeasibleError(RuntimeError):
    """The constraint set admits no precoder (detected from the dual)."""


def crmat(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=complex))
    return np.block([[x.real, -x.imag], [x.imag, x.real]])


def crvec(x) -> np.ndarray:
    x = np.asarray(x, dtype=complex).ravel()
    return np.concatenate([x.real, x.imag])


def uncrvec(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    half = g.size // 2
    return g[:half] + 1j * g[half:]


@dataclass(frozen=True)
class RealEmbedding:
    """Cached real-domain quantities of a fixed analog precoder.

    ``active`` lists the analog columns kept after removing linearly dependent
    ones; the QP runs over those columns only and the dropped entries of ``b``
    are zero.
    """

    analog: np.ndarray
    active: np.ndarray
    m0: np.ndarray
    delta_cache: np.ndarray
    whitener: np.ndarray

    @classmethod
    def from_analog(cls, analog, rank_tol: float = 1e-10) -> "RealEmbedding":
        a = analog.matrix if isinstance(analog, AnalogPrecoder) else np.asarray(analog, dtype=complex)
        _, rr, piv = sla.qr(a, mode="economic", pivoting=True)
        diag = np.abs(np.diag(rr))
        scale = np.linalg.norm(a, 2)
        rank = int(np.sum(diag > rank_tol * scale)) if scale > 0 else 0
        if rank == 0:
            raise ValueError("analog precoder is zero")
        active = np.sort(piv[:rank])
        m0 = crmat(a[:, active])
        gram = m0.T @ m0
        chol = np.linalg.cholesky(gram)
        inv_chol = sla.solve_triangular(chol, np.eye(gram.shape[0]), lower=True)
        delta = 0.5 * (inv_chol.T @ inv_chol)
        return cls(a, active, m0, delta, 0.5 * inv_chol)

    @property
    def n_rf(self) -> int:
        return self.analog.shape[1]

    @property
    def reduced(self) -> bool:
        return self.active.size < self.n_rf

    def lift(self, b_red) -> np.ndarray:
        b = np.zeros(self.n_rf, dtype=complex)
        b[self.active] = b_red
        return b


@dataclass(frozen=True)
class ConstraintColumns:
    psi: np.ndarray
    offsets: np.ndarray
    n_mat: np.ndarray
    col_norms_sq: np.ndarray
    provenance: tuple

    @property
    def width(self) -> int:
        return self.offsets.size

    def index(self) -> dict:
        return {key: i for i, key in enumerate(self.provenance)}


def constraint_column(h_k, error: ErrorMatrix, side: int, gamma: float, theta: float,
                      embedding: RealEmbedding) -> tuple[np.ndarray, float]:
    """Column ``psi`` and offset ``r`` of one CI constraint ``psi^T g >= r``.

    ``psi^T g`` equals ``c_re Re(y) -/+ c_im Im(y)`` with ``y = h_k^T (A*E) b``.
    """
    c_im, c_re = boundary_coeffs(theta)
    x = (embedding.analog * error.matrix)[:, embedding.active]
    a = x.T @ np.asarray(h_k)
    w = complex(c_re, c_im if side > 0 else -c_im)
    return crvec(np.conj(w * a)), c_re * gamma


def build_columns(rotated, embedding: RealEmbedding, ledger, config: SystemConfig,
                  previous: ConstraintColumns | None = None) -> ConstraintColumns:
    """Constraint matrix for the ledger; columns already in ``previous`` are reused as-is."""
    h = rotated.vectors
    if h.shape[1] != embedding.analog.shape[0]:
        raise ValueError("channel length does not match the analog precoder")
    entries = list(ledger.entries())
    if not entries:
        raise ValueError("ledger is empty")
    gammas = config.gammas
    old = previous.index() if previous is not None else {}
    keys = []
    psi_cols, offs, n_cols = [], [], []
    new_idx, new_psi = [], []
    for i, (key, k, side, err) in enumerate(entries):
        keys.append(key)
        if key in old:
            j = old[key]
            psi_cols.append(previous.psi[:, j])
            n_cols.append(previous.n_mat[:, j])
            offs.append(previous.offsets[j])
        else:
            col, r = constraint_column(h[k], err, side, gammas[k], config.theta, embedding)
            psi_cols.append(col)
            n_cols.append(None)
            offs.append(r)
            new_idx.append(i)
            new_psi.append(col)
    if new_idx:
        fresh = embedding.whitener @ np.column_stack(new_psi)
        for j, i in enumerate(new_idx):
            n_cols[i] = fresh[:, j]
    psi = np.column_stack(psi_cols)
    n_mat = np.column_stack(n_cols)
    norms = np.einsum("ij,ij->j", n_mat, n_mat)
    if previous is not None:
        for i, key in enumerate(keys):
            if key in old:
                norms[i] = previous.col_norms_sq[old[key]]
    return ConstraintColumns(psi, np.asarray(offs, dtype=float), n_mat, norms, tuple(keys))


@dataclass
class DualState:
    lam: np.ndarray
    cached_nlambda: np.ndarray
    cached_r_lambda: float
    iteration: int = 0

    @classmethod
    def start(cls, cols: ConstraintColumns, lam=None) -> "DualState":
        lam = np.zeros(cols.width) if lam is None else np.maximum(np.asarray(lam, dtype=float), 0.0)
        return cls(lam, cols.n_mat @ lam, float(cols.offsets @ lam))

    def objective(self) -> float:
        return float(self.cached_nlambda @ self.cached_nlambda - self.cached_r_lambda)


def dual_objective(lam, cols: ConstraintColumns) -> float:
    nl = cols.n_mat @ lam
    return float(nl @ nl - cols.offsets @ lam)


def _zero_columns(cols: ConstraintColumns) -> np.ndarray:
    top = cols.col_norms_sq.max() if cols.width else 0.0
    return cols.col_norms_sq <= 1e-28 * max(top, 1e-300)


def jacobi_direction(state: DualState, cols: ConstraintColumns) -> np.ndarray:
    """Per-coordinate minimisers of the dual with all other multipliers frozen.

    Entries are independent given ``N lambda``; evaluating them in any order or
    partition gives identical results because each is a single dot product.
    """
    nn = cols.col_norms_sq
    zero = _zero_columns(cols)
    if np.any(zero & (cols.offsets > 0)):
        raise InfeasibleError("a constraint column vanishes while its offset is positive")
    corr = cols.n_mat.T @ state.cached_nlambda
    safe = np.where(zero, 1.0, nn)
    lam_hat = np.maximum(0.0, (0.5 * cols.offsets - corr + nn * state.lam) / safe)
    lam_hat[zero] = 0.0
    return lam_hat


def _line_search(state: DualState, cols: ConstraintColumns, lam_hat):
    d = lam_hat - state.lam
    nd = cols.n_mat @ d
    num = -2.0 * float(state.cached_nlambda @ nd) + float(cols.offsets @ d)
    den = 2.0 * float(nd @ nd)
    if den <= 0.0:
        eta = 1.0 if num > 0 else 0.0
    else:
        eta = min(1.0, max(0.0, num / den))
    return eta, d, nd


def step_size(state: DualState, cols: ConstraintColumns, lam_hat) -> float:
    """Exact line-search step along ``lam_hat - lambda``, clamped to [0, 1]."""
    return _line_search(state, cols, lam_hat)[0]


def recover_primal(state: DualState, cols: ConstraintColumns, embedding: RealEmbedding) -> np.ndarray:
    """Primal precoder ``b`` (full length R) from the dual point."""
    g = embedding.delta_cache @ (cols.psi @ state.lam)
    return embedding.lift(uncrvec(g))


def _polish(state: DualState, cols: ConstraintColumns, kkt_rtol: float = 1e-12, max_steps: int | None = None):
    """Finish the dual exactly and return the result if it is KKT.

    The dual is the Lagrange dual of the least-distance problem
    ``min |x|^2  s.t.  N^T x >= r/2`` with ``x = N lambda``, which reduces to a
    single non-negative least squares problem, solved by bounded-variable
    least squares.  BVLS copes with the rank deficient ``N^T N`` that
    near-duplicate cuts produce, where a plain equality-system active set
    pass can cycle.  ``None`` means no verified optimum was reached.
    """
    from scipy.optimize import lsq_linear

    n_mat, c = cols.n_mat, cols.offsets
    h = 0.5 * c
    e = np.vstack([n_mat, h[None, :]])
    f = np.zeros(e.shape[0])
    f[-1] = 1.0
    sol = lsq_linear(e, f, bounds=(0.0, np.inf), method="bvls", tol=1e-15, max_iter=max_steps)
    if sol.status < 1:
        return None
    # BVLS may leave roundoff-sized negatives on bound variables
    u = np.maximum(sol.x, 0.0)
    denom = 1.0 - float(h @ u)
    if denom <= 1e-10:
        # N u ~ 0 with r^T u > 0 certifies that no b meets every constraint
        col = math.sqrt(float(cols.col_norms_sq.max(initial=0.0)))
        if np.linalg.norm(n_mat @ u) <= 1e-8 * max(col * u.sum(), 1.0) and h @ u > 0:
            raise InfeasibleError("the constraint set is infeasible (Farkas certificate found)")
        return None
    lam = u / denom
    nl = n_mat @ lam
    grad = 2.0 * (n_mat.T @ nl) - c
    # rounding in grad scales with the magnitudes summed, |N| lambda, not with N lambda itself:
    # near infeasibility the columns nearly cancel and |N lambda| << |N| |lambda|
    col = math.sqrt(float(cols.col_norms_sq.max(initial=0.0)))
    scale = float(np.abs(c).max(initial=0.0)) + col * float(np.linalg.norm(np.abs(n_mat) @ lam))
    if grad.min(initial=0.0) < -kkt_rtol * max(1.0, scale):
        return None
    return DualState(lam, nl, float(c @ lam), state.iteration)


@dataclass
class QPDiagnostics:
    iterations: int
    converged: bool
    polished: bool
    dual_objective: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    columns: ConstraintColumns | None = None
    state: DualState | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["iteration", "dual_objective", "step_norm"])
        for i, (f, s) in enumerate(zip(self.dual_objective, self.step_norms), start=1):
            w.writerow([i, repr(f), repr(s)])
        return buf.getvalue()


def solve_dual(cols: ConstraintColumns, tol_eps: float = 1e-8, max_iter: int = 100_000,
               lam0=None, polish: bool = True, polish_every: int = 20,
               lambda_cap: float = 1e14, record: bool = False, kkt_rtol: float = 1e-12):
    """Run the Jacobi / exact line search iteration on the dual; returns ``(state, diagnostics)``."""
    state = DualState.start(cols, lam0)
    diag = QPDiagnostics(0, False, False, columns=cols)
    for p in range(1, max_iter + 1):
        lam_hat = jacobi_direction(state, cols)
        eta, d, nd = _line_search(state, cols, lam_hat)
        step = eta * d
        state.lam = state.lam + step
        np.maximum(state.lam, 0.0, out=state.lam)
        state.cached_nlambda = state.cached_nlambda + eta * nd
        state.cached_r_lambda = float(cols.offsets @ state.lam)
        state.iteration = p
        step_norm = float(np.linalg.norm(step))
        obj = state.objective()
        if record:
            diag.dual_objective.append(obj)
            diag.step_norms.append(step_norm)
        if not math.isfinite(step_norm) or np.linalg.norm(state.lam) > lambda_cap:
            raise InfeasibleError("dual multipliers diverge; the constraint set is infeasible")
        done = step_norm <= tol_eps
        if polish and (done or p % polish_every == 0):
            cand = _polish(state, cols, kkt_rtol)
            if cand is not None and cand.objective() <= obj + 1e-12 * max(1.0, abs(obj)):
                state = cand
                state.iteration = p
                if record:
                    diag.dual_objective.append(state.objective())
                    diag.step_norms.append(0.0)
                diag.polished = True
                done = True
        if done:
            diag.converged = True
            break
    diag.iterations = state.iteration
    # rebuild the cache once so the returned products carry no drift
    state.cached_nlambda = cols.n_mat @ state.lam
    state.cached_r_lambda = float(cols.offsets @ state.lam)
    diag.state = state
    return state, diag


def solve_qp(rotated, embedding: RealEmbedding, ledger, config: SystemConfig,
             tol_eps: float = 1e-8, max_iter: int = 100_000, *, columns: ConstraintColumns | None = None,
             lam0=None, polish: bool = True, record: bool = False, lambda_cap: float = 1e14):
    """Minimum-power composite precoder for the constraints held in ``ledger``.

    Returns ``(b, diagnostics)``; ``diagnostics.converged`` is False when
    ``max_iter`` ran out, in which case ``b`` is the last iterate.
    """
    cols = build_columns(rotated, embedding, ledger, config, previous=columns)
    if lam0 is not None and len(lam0) != cols.width:
        raise ValueError("warm start length does not match the number of constraints")
    state, diag = solve_dual(cols, tol_eps, max_iter, lam0, polish, record=record, lambda_cap=lambda_cap)
    return recover_primal(state, cols, embedding), diag


def reference_qp(rotated, embedding: RealEmbedding, ledger, config: SystemConfig) -> np.ndarray:
    """Same QP solved on the primal side by a conic interior-point solver (test oracle).

    Constraints are assembled directly from ``h_k^T (A*E) b``, without the
    column machinery used by :func:`solve_qp`.
    """
    import cvxpy as cp

    a = embedding.analog
    n_rf = a.shape[1]
    br = cp.Variable(n_rf)
    bi = cp.Variable(n_rf)
    c_im, c_re = boundary_coeffs(config.theta)
    gammas = config.gammas
    h = rotated.vectors
    cons = []
    for _, k, side, err in ledger.entries():
        row = (a * err.matrix).T @ h[k]
        re = row.real @ br - row.imag @ bi
        im = row.imag @ br + row.real @ bi
        cons.append(side * c_im * im <= c_re * (re - gammas[k]))
    power = cp.sum_squares(a.real @ br - a.imag @ bi) + cp.sum_squares(a.imag @ br + a.real @ bi)
    prob = cp.Problem(cp.Minimize(power), cons)
    # 1e-12 is not always attainable; 1e-10 is still far below the comparison tolerances
    for tol in (1e-12, 1e-10):
        try:
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500)
            break
        except cp.error.SolverError:
            if tol == 1e-10:
                raise
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise InfeasibleError(f"reference solver status {prob.status}")
    return br.value + 1j * bi.value

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cihp.analog import cpc
from cihp.channel import draw_symbols, geometric_channel
from cihp.model import SystemConfig

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_instance(seed, n=16, r=4, k=4, m=4, delta_deg=0.0, thresholds=1.0):
    """Channel, one symbol vector and the CPC analog precoder of a random instance."""
    cfg = SystemConfig(n, r, k, m, math.radians(delta_deg), thresholds=thresholds)
    ch = geometric_channel(cfg, 15, seed)
    s = draw_symbols(cfg, 1, seed)[0]
    return cfg, ch, s, cpc(ch, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cvxpy_mwaso_value(prob, weight, rows=None):
    """Optimal value of the ridge-regularised selection program, restricted to ``rows``.

    Written directly in complex cvxpy variables, independently of the
    package's conic assembly.
    """
    import cvxpy as cp

    rows = np.arange(prob.size) if rows is None else np.asarray(rows, dtype=int)
    t_len = prob.n_blocks
    x = cp.Variable((rows.size, t_len), complex=True)
    u = cp.Variable()
    z = cp.hstack([prob.g[t][:, rows] @ x[:, t] for t in range(t_len)])
    gam = np.tile(prob.gammas, t_len)
    cons = [prob.c_im * cp.abs(cp.imag(z)) <= prob.c_re * (cp.real(z) - gam + u)]
    obj = u + weight * cp.sum(cp.norm(x, 2, axis=1)) + 0.5 * prob.ridge * cp.sum_squares(x)
    pr = cp.Problem(cp.Minimize(obj), cons)
    pr.solve(solver="CLARABEL", tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    return float(pr.value)


def pytest_terminal_summary(terminalreporter):
    acc = __import__("sys").modules.get("acceptance")
    verdicts = getattr(acc, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n].line())

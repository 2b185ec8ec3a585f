"""
Robust CI precoding on one channel draw
========================================

Design a hybrid precoder that keeps every user inside its constructive
interference region for *all* phase-shifter errors up to a bound, and watch
the cutting-plane loop get there.
"""

import math

import numpy as np

from cihp import SystemConfig, cpc, draw_symbols, geometric_channel, solve_nonrobust, solve_robust_full
from cihp.cutting_plane import history_csv
from cihp.geometry import ci_slacks, rotate_channels
from cihp.worst_case import received

# %%
# A 16-antenna transmitter with 4 RF chains serving 4 QPSK users.  The
# phase shifters may be off by up to 6 degrees each.
cfg = SystemConfig(16, 4, 4, 4, math.radians(6.0), thresholds=1.0)
ch = geometric_channel(cfg, n_paths=15, seed=7)
s = draw_symbols(cfg, 1, seed=7)[0]
analog = cpc(ch, cfg)

# %%
# The error-free design ignores the phase errors.  The robust design
# alternates between a finite QP and a search for the worst-case error
# matrix of every user and boundary, adding each as a new constraint.
non = solve_nonrobust(ch, s, analog, cfg)
res = solve_robust_full(ch, s, analog, cfg)
rob = res.solution
print(f"error-free design power: {non.power:.4f} W")
print(f"robust design power:     {rob.power:.4f} W after {rob.iterations} iterations, "
      f"{rob.constraint_count} constraints")
print()
print(history_csv(res.history).replace("\r\n", "\n"))

# %%
# Theorem-level check at desk scale: draw many error matrices and look at
# the smallest CI slack.  The robust precoder never leaves the region; the
# error-free one does.
rot = rotate_channels(ch, s)
rng = np.random.default_rng(0)
d = cfg.phase_error_bound
for name, sol in (("error-free", non), ("robust", rob)):
    worst = np.inf
    for _ in range(2000):
        e = np.exp(1j * rng.uniform(-d, d, analog.matrix.shape))
        for k in range(cfg.n_users):
            y = received(rot.vectors[k], sol.composite, analog, e)
            worst = min(worst, *ci_slacks(y, cfg.gammas[k], cfg.theta))
    print(f"{name:>10}: smallest sampled CI slack {worst:+.4f}")

"""
Symbol errors caused by phase-shifter errors
=============================================

Monte-Carlo SER of error-free and robust CI precoding as the phase-error
bound grows.  Every bound sees the same channels, symbols, noise and
(scaled) phase-error draws, so changes are compared symbol by symbol.
"""

import math

from cihp import SimOptions, SystemConfig
from cihp.metrics import rows_to_csv, ser_increase_curve

# %%
# 32 antennas, 4 RF chains, 4 QPSK users, TNR = 2.  A few hundred trials
# keep this under a minute; the acceptance suite uses 25 000.
cfg = SystemConfig(32, 4, 4, 4, thresholds=1.0)
rows = ser_increase_curve(cfg, [0, 5, 10], ("ci_nonrobust", "ci_robust"), n_trials=200, seed=1,
                          options=SimOptions(tnr=2.0))
print(rows_to_csv(rows).replace("\r\n", "\n"))

# %%
# Without noise the robust design makes no errors at all, whatever the
# phase errors do inside the bound.
quiet = ser_increase_curve(cfg, [0, 10], ("ci_robust",), n_trials=50, seed=2,
                           options=SimOptions(noiseless=True))
for r in quiet:
    print(f"robust, noiseless, delta = {r.delta_deg:g} deg: {r.errors} errors in {r.symbols} symbols")

# %%
# The error-free design loses accuracy mostly through noise: at TNR = 2
# the noise-driven SER is near 2 Q(2), and the phase errors add a
# small, statistically significant increase on top (see ``p_increase``).
print(f"2 Q(2) = {math.erfc(2 / math.sqrt(2)):.4f}")

# %%
# The robust rows also show far fewer noisy errors than the error-free
# design.  Its margin is sized for the worst phase error, so on a typical
# draw the received symbol sits well beyond the threshold and the same
# noise (sigma^2 = Gamma / TNR) rarely pushes it across a decision
# boundary.  The price is transmit power.

"""
Analog precoders held over a block of symbols
==============================================

Phase shifters are slow, so the analog precoder is fixed for T symbol
intervals while the digital CI precoder changes every interval.  Compare
the transmit power of three analog designs as T grows.
"""

from cihp import SystemConfig
from cihp.metrics import power_vs_block_length, rows_to_csv

# %%
# A small system: 16 antennas, 4 RF chains, 4 users, channel coherence of
# 4 intervals and a 32-beam DFT codebook.
cfg = SystemConfig(16, 4, 4, 4, thresholds=1.0, coherence_symbols=4)
rows = power_vs_block_length(cfg, [1, 2, 4], n_instances=4, seed=3, codebook_size=32)
print(rows_to_csv(rows).replace("\r\n", "\n"))

# %%
# CPC and BMCS depend only on the channel, so their power does not change
# with T.  MWASO picks its codebook columns for the whole block, so a
# longer block gives it a harder compromise.  Averaged over many instances
# (the acceptance suite uses 30) its power grows with T; with only four
# instances the individual channel draws still show through.
for method in ("cpc", "bmcs", "mwaso"):
    p = [r.power_w for r in rows if r.method == method]
    print(f"{method:>6}: " + "  ".join(f"{x:8.3f}" for x in p))

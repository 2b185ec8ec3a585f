"""Robust constructive-interference hybrid precoding under phase-shifter errors.

The modules build on each other in this order: :mod:`cihp.model` (types and
configuration), :mod:`cihp.channel`, :mod:`cihp.geometry` (CI-region
slacks), :mod:`cihp.worst_case`, :mod:`cihp.realify` (the finite QP and its
dual solver), :mod:`cihp.cutting_plane` (the robust design loop),
:mod:`cihp.analog`, :mod:`cihp.metrics` (Monte-Carlo evaluation) and
:mod:`cihp.cli`.
"""

from .analog import (Codebook, MwasoError, MwasoOptions, MwasoResult, bmcs, cpc, dft_codebook,
                     mwaso)
from .channel import ChannelSet, draw_symbols, geometric_channel, make_rng, ula_response
from .cutting_plane import (ConstraintLedger, RobustOptions, prune_redundant, solve_nonrobust,
                            solve_robust, solve_robust_full)
from .geometry import ci_slacks, in_ci_region, rotate_channels
from .metrics import (SimOptions, TrialReport, conventional_robust_power, detect_psk, received_signal,
                      ser_monte_carlo, tnr_tuning_table)
from .model import (AnalogPrecoder, ConfigError, ErrorMatrix, PrecodingSolution, SystemConfig,
                    load_config, per_user_precoders, psk_constellation)
from .realify import InfeasibleError, reference_qp, solve_qp
from .worst_case import oracle_worst_case, worst_case_all, worst_case_pair

__version__ = "0.1.0"

__all__ = [
    "AnalogPrecoder", "ChannelSet", "Codebook", "ConfigError", "ConstraintLedger", "ErrorMatrix",
    "InfeasibleError", "MwasoError", "MwasoOptions", "MwasoResult", "PrecodingSolution",
    "RobustOptions", "SimOptions", "SystemConfig", "TrialReport", "bmcs", "ci_slacks",
    "conventional_robust_power", "cpc", "detect_psk", "dft_codebook", "draw_symbols",
    "geometric_channel", "in_ci_region", "load_config", "make_rng", "mwaso", "oracle_worst_case",
    "per_user_precoders", "prune_redundant", "psk_constellation", "received_signal", "reference_qp",
    "rotate_channels", "ser_monte_carlo", "solve_nonrobust", "solve_qp", "solve_robust",
    "solve_robust_full", "tnr_tuning_table", "ula_response", "worst_case_all", "worst_case_pair",
]

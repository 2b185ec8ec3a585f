"""Monte-Carlo symbol error rates, TNR tuning and the desk-scale experiment recipes.

Every trial derives its randomness from ``(seed, purpose, trial)`` through
:func:`cihp.channel.make_rng`, so a report does not depend on how trials are
spread over worker processes.  Aggregates are reduced in trial order.

Noise is calibrated from the threshold-margin-to-noise ratio,
``sigma_k^2 = Gamma_k / TNR``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .analog import Codebook, MwasoError, MwasoOptions, bmcs, cpc, dft_codebook, mwaso
from .channel import DEFAULT_PATHS, geometric_channel, make_rng
from .cutting_plane import RobustOptions, solve_nonrobust, solve_robust
from .model import AnalogPrecoder, ErrorMatrix, SystemConfig, psk_constellation
from .realify import InfeasibleError

SCHEMES = ("ci_robust", "ci_nonrobust", "conventional_margin", "tnr_reference")
ANALOG_METHODS = ("cpc", "bmcs", "mwaso")

# rng purposes, the second element of every stream key
_CHANNEL, _SYMBOLS, _ERRORS, _NOISE = 0, 1, 2, 3


def received_signal(channels, analog, error, d, s, noise=None) -> np.ndarray:
    """``y_k = h_k^T (A * E) sum_l d_l s_l + n_k`` for every user (unrotated channels)."""
    h = channels.vectors if hasattr(channels, "vectors") else np.asarray(channels, dtype=complex)
    a = analog.matrix if isinstance(analog, AnalogPrecoder) else np.asarray(analog, dtype=complex)
    if error is not None:
        a = a * (error.matrix if isinstance(error, ErrorMatrix) else np.asarray(error))
    d = np.atleast_2d(np.asarray(d, dtype=complex))
    s = np.asarray(s, dtype=complex)
    if d.shape[0] != s.size:
        raise ValueError(f"{d.shape[0]} precoders but {s.size} symbols")
    y = h @ (a @ (d.T @ s))
    if noise is not None:
        y = y + np.asarray(noise, dtype=complex)
    return y


def detect_psk(y, m: int, offset: float = 0.0):
    """Nearest-angle M-PSK decision; points on a decision boundary go to the lower index.

    Works elementwise; a scalar in gives an ``int`` out.
    """
    step = 2 * math.pi / m
    u = np.mod((np.angle(y) - offset) / step, m)
    idx = np.ceil(u - 0.5).astype(int) % m
    # the boundary between index m-1 and 0 belongs to 0, the lower index
    idx = np.where(u == m - 0.5, 0, idx)
    return int(idx) if np.ndim(idx) == 0 else idx


def binomial_interval(errors: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    alpha = 1.0 - level
    lo = 0.0 if errors == 0 else float(stats.beta.ppf(alpha / 2, errors, n - errors + 1))
    hi = 1.0 if errors == n else float(stats.beta.ppf(1 - alpha / 2, errors + 1, n - errors))
    return lo, hi


@dataclass(frozen=True)
class TrialReport:
    ser: float
    symbol_count: int
    error_count: int
    transmit_power_mean: float
    seed: int
    scheme_tag: str
    skipped: int = 0
    ci_low: float = 0.0
    ci_high: float = 1.0
    powers: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.symbol_count < 0 or self.error_count < 0 or self.error_count > self.symbol_count:
            raise ValueError("counts must satisfy 0 <= errors <= symbols")

    @classmethod
    def from_counts(cls, errors: int, symbols: int, powers, seed: int, tag: str, skipped: int = 0):
        powers = tuple(float(p) for p in powers)
        lo, hi = binomial_interval(errors, symbols)
        ser = errors / symbols if symbols else 0.0
        mean_p = math.fsum(powers) / len(powers) if powers else float("nan")
        return cls(ser, symbols, errors, mean_p, seed, tag, skipped, lo, hi, powers)

    def interval(self, level: float) -> tuple[float, float]:
        return binomial_interval(self.error_count, self.symbol_count, level)


@dataclass(frozen=True)
class SimOptions:
    """Knobs of :func:`ser_monte_carlo` beyond the system configuration."""

    tnr: float = 2.0
    n_paths: int = DEFAULT_PATHS
    analog_method: str = "cpc"
    codebook_size: int = 64
    draws_per_design: int = 1
    freeze_errors: bool = False
    noiseless: bool = False
    design_threshold_scale: float = 1.0
    robust: RobustOptions = field(default_factory=RobustOptions)
    mwaso: MwasoOptions = field(default_factory=lambda: MwasoOptions(on_failure="top_r"))

    def __post_init__(self):
        if self.analog_method not in ANALOG_METHODS:
            raise ValueError(f"analog_method must be one of {ANALOG_METHODS}")
        if not self.tnr > 0 or not self.design_threshold_scale > 0:
            raise ValueError("tnr and design_threshold_scale must be positive")
        if self.draws_per_design < 1:
            raise ValueError("draws_per_design must be >= 1")


def design_analog(channels, symbols_block, config: SystemConfig, method: str,
                  codebook: Codebook | None = None, mwaso_opts: MwasoOptions | None = None) -> AnalogPrecoder:
    if method == "cpc":
        return cpc(channels, config)
    if codebook is None:
        raise ValueError(f"{method} needs a codebook")
    if method == "bmcs":
        return bmcs(channels, codebook, config)
    return mwaso(channels, symbols_block, codebook, config, mwaso_opts).analog


def design_digital(scheme: str, channels, s, analog, config: SystemConfig, opts: SimOptions):
    """Composite precoder ``b`` of one symbol interval, or ``None`` for the reference scheme."""
    if scheme == "tnr_reference":
        return None
    if scheme == "ci_robust":
        sol = solve_robust(channels, s, analog, config, opts.robust)
    else:
        cfg = config
        if scheme == "conventional_margin" and opts.design_threshold_scale != 1.0:
            cfg = config.replace(thresholds=tuple(t * opts.design_threshold_scale for t in config.thresholds))
        sol = solve_nonrobust(channels, s, analog, cfg, opts.robust)
    if not sol.converged:
        raise InfeasibleError(f"design did not converge (max violation {sol.max_violation:.3g})")
    return sol.composite


class TrialSamples(NamedTuple):
    """Noiseless received signals of one trial and the unit-variance noise that goes with them.

    Arrays are (slots x K), one slot per symbol interval and error draw.
    Slots whose interval had no feasible precoder are marked invalid and
    their ``y0`` rows are NaN.  The received signal at a given TNR is
    ``y0 + sqrt(Gamma / TNR) * noise``.
    """

    y0: np.ndarray
    noise: np.ndarray
    labels: np.ndarray
    valid: np.ndarray
    powers: tuple
    skipped: int

    @property
    def symbol_count(self) -> int:
        return int(self.valid.sum()) * self.y0.shape[1]


def trial_samples_multi(scheme: str, config: SystemConfig, opts: SimOptions, seed: int, trial: int,
                        deltas, codebook: Codebook | None = None) -> list[TrialSamples]:
    """One trial evaluated under several phase-error bounds (radians).

    Channel, symbols and noise are shared by all bounds, and the phase
    errors are the same uniform draws scaled by each bound, so the samples
    are coupled and can be compared symbol by symbol.  Designs that do not
    depend on the bound are computed once.
    """
    k, t_len, m = config.n_users, config.block_length, config.psk_order
    ch = geometric_channel(config, opts.n_paths, seed, stream=(trial,))
    points = psk_constellation(m, config.constellation_offset)
    idx = make_rng(seed, _SYMBOLS, trial).integers(0, m, size=(t_len, k))
    s_block = points[idx]
    n_slots = t_len * opts.draws_per_design
    noise_rng = make_rng(seed, _NOISE, trial)
    noise = (noise_rng.standard_normal((n_slots, k)) + 1j * noise_rng.standard_normal((n_slots, k))) / math.sqrt(2)
    err_rng = make_rng(seed, _ERRORS, trial)
    shape = (config.n_antennas, config.n_rf_chains)
    # unit draws on [-1, 1]; bound delta scales them to [-delta, delta]
    n_err = 1 if opts.freeze_errors else n_slots
    unit = err_rng.uniform(-1.0, 1.0, size=(n_err,) + shape)
    labels = np.repeat(idx, opts.draws_per_design, axis=0)

    out, cache = [], {}
    for delta in deltas:
        cfg = config.replace(phase_error_bound=float(delta))
        key = float(delta) if scheme == "ci_robust" else None
        if key not in cache:
            cache[key] = _design_block(scheme, ch, s_block, cfg, opts, codebook)
        analog, bs = cache[key]
        y0 = np.full((n_slots, k), np.nan, dtype=complex)
        valid = np.zeros(n_slots, dtype=bool)
        for t, b in enumerate(bs):
            for j in range(opts.draws_per_design):
                slot = t * opts.draws_per_design + j
                if b is None:
                    continue
                if isinstance(b, str):
                    # the CI-region vertex of every user
                    y0[slot] = np.asarray(cfg.gammas) * s_block[t]
                else:
                    e = ErrorMatrix.from_phases(unit[0 if opts.freeze_errors else slot] * delta, delta)
                    y0[slot] = received_signal(ch, analog, e, b[None, :], np.ones(1))
                valid[slot] = True
        powers = tuple(float(np.linalg.norm(analog.matrix @ b) ** 2) for b in bs
                       if b is not None and not isinstance(b, str))
        out.append(TrialSamples(y0, noise, labels, valid, powers, sum(b is None for b in bs)))
    return out


def _design_block(scheme, ch, s_block, config, opts, codebook):
    """Analog precoder and per-interval composite precoders; ``None`` marks an infeasible interval."""
    t_len = s_block.shape[0]
    if scheme == "tnr_reference":
        return None, ["vertex"] * t_len
    try:
        analog = design_analog(ch, s_block, config, opts.analog_method, codebook, opts.mwaso)
    except (MwasoError, InfeasibleError):
        return None, [None] * t_len
    bs = []
    for s in s_block:
        try:
            bs.append(design_digital(scheme, ch, s, analog, config, opts))
        except InfeasibleError:
            bs.append(None)
    return analog, bs


def trial_samples(scheme: str, config: SystemConfig, opts: SimOptions, seed: int, trial: int,
                  codebook: Codebook | None = None) -> TrialSamples:
    """Run one trial up to the receiver input; noise is drawn but not yet scaled."""
    return trial_samples_multi(scheme, config, opts, seed, trial, (config.phase_error_bound,), codebook)[0]


def error_flags(samples: TrialSamples, config: SystemConfig, tnr: float | None) -> np.ndarray:
    """Per-symbol error indicators (slots x K) at ``tnr``; ``None`` means noiseless.  Invalid slots read False."""
    y = samples.y0
    if tnr is not None:
        sigma = np.sqrt(np.asarray(config.thresholds) / tnr)
        y = y + sigma[None, :] * samples.noise
    det = detect_psk(np.where(samples.valid[:, None], y, 1.0), config.psk_order, config.constellation_offset)
    return (det != samples.labels) & samples.valid[:, None]


def count_errors(samples: TrialSamples, config: SystemConfig, tnr: float | None) -> int:
    """Symbol errors of one trial at ``tnr``; ``None`` means noiseless."""
    return int(np.count_nonzero(error_flags(samples, config, tnr)))


class _TrialCounts(NamedTuple):
    # indexed [delta][tnr]
    errors: tuple
    # symbols erring under delta but not under the first delta, and the reverse;
    # counted only on slots valid for both
    up: tuple
    down: tuple
    symbols: tuple
    powers: tuple
    skipped: tuple


def _run_chunk(args):
    scheme, config, opts, seed, trials, codebook, tnrs, deltas = args
    out = []
    levels = [None] if opts.noiseless else list(tnrs)
    for i in trials:
        smps = trial_samples_multi(scheme, config, opts, seed, i, deltas, codebook)
        flags = [[error_flags(s, config, t) for t in levels] for s in smps]
        both = [s.valid & smps[0].valid for s in smps]
        up = tuple(tuple(int(np.count_nonzero(f & ~f0 & b[:, None])) for f, f0 in zip(fl, flags[0]))
                   for fl, b in zip(flags, both))
        down = tuple(tuple(int(np.count_nonzero(~f & f0 & b[:, None])) for f, f0 in zip(fl, flags[0]))
                     for fl, b in zip(flags, both))
        out.append(_TrialCounts(tuple(tuple(int(f.sum()) for f in fl) for fl in flags), up, down,
                                tuple(s.symbol_count for s in smps), tuple(s.powers for s in smps),
                                tuple(s.skipped for s in smps)))
    return out


def _chunks(n: int, jobs: int) -> list[range]:
    size = max(1, math.ceil(n / max(1, jobs * 4)))
    return [range(lo, min(n, lo + size)) for lo in range(0, n, size)]


def map_trials(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Ordered map, in-process for ``jobs <= 1`` and over worker processes otherwise."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _simulate(scheme: str, config: SystemConfig, n_trials: int, seed: int, opts: SimOptions, tnrs,
              jobs: int, deltas=None) -> list[_TrialCounts]:
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if deltas is None:
        deltas = (config.phase_error_bound,)
    codebook = None
    if opts.analog_method != "cpc" and scheme != "tnr_reference":
        codebook = dft_codebook(config.n_antennas, opts.codebook_size, config.ps_gain)
    tasks = [(scheme, config, opts, seed, r, codebook, tuple(tnrs), tuple(float(d) for d in deltas))
             for r in _chunks(n_trials, jobs)]
    # chunks come back in submission order, so the reduction order is fixed
    return [o for chunk in map_trials(_run_chunk, tasks, jobs) for o in chunk]


def _report(out: list[_TrialCounts], i: int, seed: int, scheme: str) -> TrialReport:
    return TrialReport.from_counts(sum(o.errors[i][0] for o in out), sum(o.symbols[i] for o in out),
                                   [p for o in out for p in o.powers[i]], seed, scheme,
                                   sum(o.skipped[i] for o in out))


def ser_monte_carlo(scheme: str, config: SystemConfig, n_trials: int, seed: int,
                    options: SimOptions | None = None, jobs: int = 1) -> TrialReport:
    """Empirical SER of one precoding scheme over ``n_trials`` independent trials.

    A trial draws a channel, a block of ``config.block_length`` symbol
    vectors, designs the analog precoder for the block and a digital
    precoder per interval, then draws phase errors uniform on
    ``[-delta, delta]`` (fresh per interval unless ``freeze_errors``) and
    complex Gaussian noise with ``sigma_k^2 = Gamma_k / TNR``, and counts
    symbol errors.  Intervals whose precoder is infeasible are skipped and
    counted in ``skipped``.
    """
    opts = options or SimOptions()
    return _report(_simulate(scheme, config, n_trials, seed, opts, (opts.tnr,), jobs), 0, seed, scheme)


# --- TNR tuning ------------------------------------------------------------------


@dataclass(frozen=True)
class TnrTable:
    """Empirical SER of the non-robust scheme over a (delta, TNR) grid."""

    deltas_deg: tuple
    tnrs: tuple
    ser: np.ndarray
    errors: np.ndarray
    symbols: np.ndarray

    def row(self, delta_deg: float) -> np.ndarray:
        i = int(np.argmin(np.abs(np.asarray(self.deltas_deg) - delta_deg)))
        if abs(self.deltas_deg[i] - delta_deg) > 1e-9:
            raise ValueError(f"delta {delta_deg} deg is not in the table")
        return self.ser[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["delta_deg"] + [f"tnr_{t:g}" for t in self.tnrs])
        for d, r in zip(self.deltas_deg, self.ser):
            w.writerow([f"{d:g}"] + [repr(float(v)) for v in r])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TnrTable":
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], rows[1:]
        if head[0] != "delta_deg" or not all(h.startswith("tnr_") for h in head[1:]):
            raise ValueError("not a TNR tuning table")
        tnrs = tuple(float(h[4:]) for h in head[1:])
        deltas = tuple(float(r[0]) for r in body)
        ser = np.array([[float(v) for v in r[1:]] for r in body])
        return cls(deltas, tnrs, ser, np.full(ser.shape, -1), np.full(ser.shape, -1))


def tnr_tuning_table(config: SystemConfig, delta_list, tnr_list, n_trials: int, seed: int,
                     options: SimOptions | None = None, jobs: int = 1,
                     scheme: str = "ci_nonrobust") -> TnrTable:
    """SER for every (delta, TNR) pair, ``delta_list`` in degrees.

    The non-robust design depends on neither delta nor the TNR, so one set of
    designs serves the whole grid: each trial's phase errors are the same
    draws scaled by delta and its noise the same draw scaled by the TNR.
    """
    opts = replace(options or SimOptions(), noiseless=False)
    deltas = tuple(float(d) for d in delta_list)
    tnrs = tuple(float(t) for t in tnr_list)
    out = _simulate(scheme, config, n_trials, seed, opts, tnrs, jobs, [math.radians(d) for d in deltas])
    errs = np.array([[sum(o.errors[i][j] for o in out) for j in range(len(tnrs))] for i in range(len(deltas))],
                    dtype=int).reshape(len(deltas), len(tnrs))
    syms = np.array([[sum(o.symbols[i] for o in out)] * len(tnrs) for i in range(len(deltas))],
                    dtype=int).reshape(errs.shape)
    ser = np.divide(errs, syms, out=np.zeros(errs.shape), where=syms > 0)
    return TnrTable(deltas, tnrs, ser, errs, syms)


def tuned_tnr(table: TnrTable, delta_deg: float, target_ser: float) -> float:
    """TNR at which the non-robust SER reaches ``target_ser``, by interpolation in ``log SER``.

    The row is made non-increasing in TNR first (running minimum), so noisy
    non-monotone estimates cannot produce a bracket in the wrong place.
    """
    tnrs = np.asarray(table.tnrs, dtype=float)
    row = np.minimum.accumulate(np.asarray(table.row(delta_deg), dtype=float))
    if not row[-1] <= target_ser <= row[0]:
        raise ValueError(f"target SER {target_ser:g} outside the table range [{row[-1]:g}, {row[0]:g}]")
    hit = np.flatnonzero(row == target_ser)
    if hit.size:
        return float(tnrs[hit[0]])
    j = int(np.flatnonzero(row < target_ser)[0])
    lo, hi = row[j - 1], row[j]
    if hi <= 0.0:
        # log interpolation needs a positive SER; fall back to linear
        frac = (lo - target_ser) / (lo - hi)
    else:
        frac = (math.log(lo) - math.log(target_ser)) / (math.log(lo) - math.log(hi))
    return float(tnrs[j - 1] + frac * (tnrs[j] - tnrs[j - 1]))


def conventional_robust_power(config: SystemConfig, delta: float, target_ser: float, table: TnrTable,
                              n_instances: int = 50, seed: int = 0, options: SimOptions | None = None,
                              per_instance: bool = False):
    """``(tnr_tuned, power)`` of the conventional design that buys robustness with a larger margin.

    ``delta`` is in radians.  The non-robust precoder is designed with the
    threshold margins scaled by ``tnr_tuned / tnr`` (the noise stays at its
    nominal level), which is what raising the TNR to the tuned value means.
    ``power`` is the mean over ``n_instances`` channel/symbol draws, or the
    per-instance list when ``per_instance`` is set.
    """
    opts = options or SimOptions()
    tnr_t = tuned_tnr(table, math.degrees(delta), target_ser)
    scale = tnr_t / opts.tnr
    cfg = config.replace(phase_error_bound=delta)
    o = replace(opts, design_threshold_scale=scale)
    powers = [instance_power("conventional_margin", cfg, seed, i, o) for i in range(n_instances)]
    if per_instance:
        return tnr_t, powers
    good = [p for p in powers if p is not None]
    return tnr_t, math.fsum(good) / len(good) if good else float("nan")


def instance_power(scheme: str, config: SystemConfig, seed: int, trial: int,
                   options: SimOptions | None = None, codebook: Codebook | None = None):
    """Designed transmit power for the first interval of trial ``trial``; ``None`` if infeasible."""
    opts = options or SimOptions()
    ch = geometric_channel(config, opts.n_paths, seed, stream=(trial,))
    points = psk_constellation(config.psk_order, config.constellation_offset)
    idx = make_rng(seed, _SYMBOLS, trial).integers(0, config.psk_order, size=(config.block_length, config.n_users))
    s_block = points[idx]
    try:
        analog = design_analog(ch, s_block, config, opts.analog_method, codebook, opts.mwaso)
        b = design_digital(scheme, ch, s_block[0], analog, config, opts)
    except (InfeasibleError, MwasoError):
        return None
    return float(np.linalg.norm(analog.matrix @ b) ** 2)


# --- experiment recipes ---------------------------------------------------------


class SerIncreaseRow(NamedTuple):
    delta_deg: float
    scheme: str
    ser: float
    ci_low: float
    ci_high: float
    ser_increase_pct: float
    symbols: int
    errors: int
    skipped: int
    errors_gained: int
    errors_lost: int
    p_increase: float


def ser_increase_curve(config: SystemConfig, deltas_deg, schemes=("ci_nonrobust", "ci_robust"),
                       n_trials: int = 1000, seed: int = 0, options: SimOptions | None = None,
                       jobs: int = 1) -> list[SerIncreaseRow]:
    """SER against the phase-error bound, with the increase relative to ``delta = 0`` per scheme.

    All bounds share channels, symbols, noise and (scaled) phase-error draws,
    so the increase is also tested symbol by symbol: ``errors_gained`` counts
    symbols wrong at delta but right at 0, ``errors_lost`` the reverse, and
    ``p_increase`` is the one-sided exact binomial p-value of
    ``gained > lost`` (McNemar's test).
    """
    opts = options or SimOptions()
    deltas = [float(d) for d in deltas_deg]
    grid = [0.0] + [d for d in deltas if d != 0.0]
    rows = []
    for scheme in schemes:
        out = _simulate(scheme, config, n_trials, seed, opts, (opts.tnr,), jobs, [math.radians(d) for d in grid])
        base = _report(out, 0, seed, scheme).ser
        for d in deltas:
            i = grid.index(d)
            rep = _report(out, i, seed, scheme)
            gained = sum(o.up[i][0] for o in out)
            lost = sum(o.down[i][0] for o in out)
            p = float(stats.binomtest(gained, gained + lost, 0.5, alternative="greater").pvalue) \
                if gained + lost else 1.0
            inc = 100.0 * (rep.ser - base) / base if base > 0 else (0.0 if rep.ser == 0 else float("inf"))
            rows.append(SerIncreaseRow(d, scheme, rep.ser, rep.ci_low, rep.ci_high, inc, rep.symbol_count,
                                       rep.error_count, rep.skipped, gained, lost, p))
    return rows


class BlockPowerRow(NamedTuple):
    block_length: int
    method: str
    power_w: float
    instances: int
    fallbacks: int
    skipped: int


def _block_power_instance(args):
    config, method, t_len, seed, trial, n_paths, codebook, mwaso_opts, robust_opts = args
    # the channel is constant over coherence_symbols intervals; the analog
    # precoder is redesigned every t_len of them
    t_c = config.coherence_symbols
    cfg = config.replace(block_length=t_len)
    ch = geometric_channel(cfg, n_paths, seed, stream=(trial,))
    points = psk_constellation(cfg.psk_order, cfg.constellation_offset)
    idx = make_rng(seed, _SYMBOLS, trial).integers(0, cfg.psk_order, size=(t_c, cfg.n_users))
    s_all = points[idx]
    powers, fallbacks, skipped = [], 0, 0
    analog = None
    for start in range(0, t_c - t_c % t_len, t_len):
        block = s_all[start:start + t_len]
        if method == "mwaso":
            res = mwaso(ch, block, codebook, cfg, mwaso_opts)
            analog, fallbacks = res.analog, fallbacks + res.fallback
        elif analog is None:
            analog = cpc(ch, cfg) if method == "cpc" else bmcs(ch, codebook, cfg)
        for s in block:
            try:
                sol = solve_robust(ch, s, analog, cfg, robust_opts)
            except InfeasibleError:
                skipped += 1
                continue
            powers.append(float(np.linalg.norm(analog.matrix @ sol.composite) ** 2))
    return powers, fallbacks, skipped


def power_vs_block_length(config: SystemConfig, block_lengths, methods=ANALOG_METHODS, n_instances: int = 30,
                          seed: int = 0, n_paths: int = DEFAULT_PATHS, codebook_size: int = 64,
                          mwaso_opts: MwasoOptions | None = None, robust_opts: RobustOptions | None = None,
                          jobs: int = 1) -> list[BlockPowerRow]:
    """Mean CI precoding power for each analog design method and block length.

    All block lengths see the same ``coherence_symbols`` symbol vectors per
    instance, so the rows differ only in how often the analog precoder is
    redesigned.
    """
    codebook = dft_codebook(config.n_antennas, codebook_size, config.ps_gain)
    mw = mwaso_opts or MwasoOptions(on_failure="top_r")
    tasks, keys = [], []
    for t_len in block_lengths:
        if config.coherence_symbols % t_len:
            raise ValueError(f"block length {t_len} does not divide the coherence time")
        for method in methods:
            for i in range(n_instances):
                tasks.append((config, method, int(t_len), seed, i, n_paths, codebook, mw, robust_opts))
                keys.append((int(t_len), method))
    results = map_trials(_block_power_instance, tasks, jobs)
    rows = []
    for t_len in block_lengths:
        for method in methods:
            sel = [r for k, r in zip(keys, results) if k == (int(t_len), method)]
            # per-instance mean first, so every instance weighs the same
            means = [math.fsum(p) / len(p) for p, _, _ in sel if p]
            rows.append(BlockPowerRow(int(t_len), method, math.fsum(means) / len(means) if means else float("nan"),
                                      len(means), sum(f for _, f, _ in sel), sum(s for _, _, s in sel)))
    return rows


class PowerComparisonRow(NamedTuple):
    delta_deg: float
    target_ser: float
    tnr_tuned: float
    p_opt: float
    p_conv: float
    conv_ge_opt_frac: float
    instances: int


def power_comparison(config: SystemConfig, deltas_deg, table: TnrTable, n_instances: int = 50,
                     n_trials: int = 500, seed: int = 0, options: SimOptions | None = None,
                     jobs: int = 1) -> list[PowerComparisonRow]:
    """Robust power against the conventional larger-margin design at matched SER.

    For every delta the robust scheme's SER is measured first; the TNR the
    non-robust scheme needs to reach it is read off ``table`` and both
    designs are compared instance by instance on the same draws.
    """
    opts = options or SimOptions()
    rows = []
    for d in deltas_deg:
        cfg = config.replace(phase_error_bound=math.radians(d))
        target = ser_monte_carlo("ci_robust", cfg, n_trials, seed, opts, jobs).ser
        p_opt = [instance_power("ci_robust", cfg, seed + 1, i, opts) for i in range(n_instances)]
        tnr_t, p_conv = conventional_robust_power(config, math.radians(d), target, table, n_instances,
                                                  seed + 1, opts, per_instance=True)
        pairs = [(a, b) for a, b in zip(p_opt, p_conv) if a is not None and b is not None]
        frac = sum(b >= a for a, b in pairs) / len(pairs) if pairs else float("nan")
        rows.append(PowerComparisonRow(float(d), target, tnr_t,
                                       math.fsum(a for a, _ in pairs) / max(1, len(pairs)),
                                       math.fsum(b for _, b in pairs) / max(1, len(pairs)),
                                       frac, len(pairs)))
    return rows


def rows_to_csv(rows, header: Sequence[str] | None = None) -> str:
    """RFC-4180 CSV (CRLF line ends) from a list of named tuples; floats use ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if header is None:
        header = rows[0]._fields if rows else ()
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()

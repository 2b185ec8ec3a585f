"""Command-line experiment runner: ``python -m cihp run <spec.toml>``.

A spec is a TOML file::

    name = "fig5_desk"
    recipe = "ser_increase"     # ser_increase | tnr_table | power_comparison | block_power
    seed = 0
    trials = 500                # Monte-Carlo trials (or instances for block_power)

    [system]                    # SystemConfig fields; phase_error_bound comes from the sweep
    n_antennas = 32
    n_rf_chains = 4
    n_users = 4

    [sweep]                     # lists; n_antennas / n_rf_chains / n_users add outer grid axes
    delta_deg = [0, 5, 10]
    schemes = ["ci_nonrobust", "ci_robust"]

    [options]                   # SimOptions fields (tnr, n_paths, analog_method, ...)
    tnr = 2.0

Every run writes ``<name>.csv`` (plus ``<name>_tnr_table.csv`` for
power_comparison) and ``<name>_manifest.json`` into ``--out-dir``.  Nothing
in the outputs depends on ``--jobs``.

Exit status: 0 on success, 1 when an invariant fails (or, with
``--strict``, when any design point was infeasible), 2 for a bad spec.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import subprocess
import sys
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .model import ConfigError, SystemConfig, _key_line, config_from_mapping, parse_mapping
from . import metrics

RECIPES = ("ser_increase", "tnr_table", "power_comparison", "block_power")
OUTER_AXES = ("n_antennas", "n_rf_chains", "n_users")
SWEEP_KEYS = {
    "ser_increase": {"delta_deg", "schemes"},
    "tnr_table": {"delta_deg", "tnr"},
    "power_comparison": {"delta_deg", "tnr"},
    "block_power": {"block_length", "analog_method"},
}
RECIPE_KEYS = {"table_trials", "instances"}
SIM_FIELDS = {f.name for f in fields(metrics.SimOptions)} - {"robust", "mwaso"}
BUNDLED = ("fig5_desk.toml", "fig8_desk.toml")


@dataclass(frozen=True)
class GridPoint:
    axes: tuple  # ((name, value), ...) of the outer axes
    config: SystemConfig


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    recipe: str
    seed: int
    trials: int
    system: dict
    sweep: dict
    options: dict
    extra: dict
    source: str = "<spec>"

    def sim_options(self) -> metrics.SimOptions:
        return metrics.SimOptions(**self.options)

    def grid(self) -> list[GridPoint]:
        outer = [(k, self.sweep[k]) for k in OUTER_AXES if k in self.sweep]
        points = []
        for values in itertools.product(*[v for _, v in outer]):
            axes = tuple((k, v) for (k, _), v in zip(outer, values))
            data = dict(self.system)
            data.update(axes)
            try:
                cfg = config_from_mapping(data)
            except ConfigError as exc:
                raise ConfigError(f"grid point {dict(axes)}: {exc}", None, self.source) from None
            points.append(GridPoint(axes, cfg))
        return points

    def to_dict(self) -> dict:
        return {"name": self.name, "recipe": self.recipe, "seed": self.seed, "trials": self.trials,
                "system": self.system, "sweep": self.sweep, "options": self.options, "extra": self.extra}


def _need(cond: bool, msg: str, text: str, key: str, source: str):
    if not cond:
        raise ConfigError(msg, _key_line(text, key), source)


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    """Parse and validate a TOML experiment spec; errors carry the file and line."""
    data = parse_mapping(text, "toml", source)
    allowed = {"name", "recipe", "seed", "trials", "system", "sweep", "options"} | RECIPE_KEYS
    for key in data:
        _need(key in allowed, f"unknown key {key!r}", text, key, source)
    for key in ("name", "recipe", "system", "sweep"):
        _need(key in data, f"missing required key {key!r}", text, key, source)
    name, recipe = data["name"], data["recipe"]
    _need(isinstance(name, str) and name.replace("_", "").replace("-", "").isalnum(),
          "name must be a non-empty identifier", text, "name", source)
    _need(recipe in RECIPES, f"recipe must be one of {RECIPES}", text, "recipe", source)
    seed, trials = data.get("seed", 0), data.get("trials", 100)
    for key, v in (("seed", seed), ("trials", trials)):
        _need(isinstance(v, int) and not isinstance(v, bool) and v >= (0 if key == "seed" else 1),
              f"{key} must be a {'non-negative' if key == 'seed' else 'positive'} integer", text, key, source)
    system, sweep = data["system"], data["sweep"]
    options = data.get("options", {})
    for key, v in (("system", system), ("sweep", sweep), ("options", options)):
        _need(isinstance(v, dict), f"[{key}] must be a table", text, key, source)
    _need("phase_error_bound" not in system, "set the phase-error bound through sweep.delta_deg",
          text, "phase_error_bound", source)
    allowed_sweep = SWEEP_KEYS[recipe] | set(OUTER_AXES)
    for key, v in sweep.items():
        _need(key in allowed_sweep, f"sweep key {key!r} is not used by recipe {recipe!r}", text, key, source)
        _need(isinstance(v, list) and len(v) > 0, f"sweep.{key} must be a non-empty list", text, key, source)
    for key in SWEEP_KEYS[recipe] - {"schemes", "analog_method"}:
        _need(key in sweep, f"recipe {recipe!r} needs sweep.{key}", text, "sweep", source)
    for key in sweep.get("delta_deg", []):
        _need(isinstance(key, (int, float)) and 0 <= key < 180, "delta_deg values must lie in [0, 180)",
              text, "delta_deg", source)
    for s in sweep.get("schemes", []):
        _need(s in metrics.SCHEMES, f"unknown scheme {s!r}", text, "schemes", source)
    for m in sweep.get("analog_method", []):
        _need(m in metrics.ANALOG_METHODS, f"unknown analog method {m!r}", text, "analog_method", source)
    for key in options:
        _need(key in SIM_FIELDS, f"unknown option {key!r}", text, key, source)
    try:
        metrics.SimOptions(**options)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), None, source) from None
    extra = {k: data[k] for k in RECIPE_KEYS if k in data}
    for key, v in extra.items():
        _need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"{key} must be a positive integer",
              text, key, source)
    spec = ExperimentSpec(name, recipe, seed, trials, system, sweep, options, extra, source)
    spec.grid()  # every grid point must be a valid SystemConfig
    return spec


def load_spec(path) -> ExperimentSpec:
    """Load a spec file; a bare bundled name such as ``fig5_desk.toml`` also works."""
    p = Path(path)
    if not p.exists() and p.name == str(path) and p.name in BUNDLED:
        text = resources.files("cihp").joinpath("specs", p.name).read_text()
        return parse_spec(text, f"<bundled>/{p.name}")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read spec: {exc.strerror}", None, str(path)) from None
    return parse_spec(text, str(path))


def version_string() -> str:
    """Package version, followed by ``git describe`` output when run from a checkout."""
    try:
        from importlib.metadata import version

        v = version("artifact")
    except Exception:
        v = "0+unknown"
    try:
        here = Path(__file__).resolve().parent
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{v}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return v


# --- recipes -----------------------------------------------------------------------


@dataclass
class Outcome:
    tables: dict        # file name -> CSV text
    checks: list        # (name, passed, detail)
    infeasible: int


def _prefix(point: GridPoint, rows_csv: str, first: bool) -> str:
    """Prepend the outer-axis columns to a CSV body."""
    lines = rows_csv.split("\r\n")
    head, body = lines[0], [ln for ln in lines[1:] if ln]
    cols = [k for k, _ in point.axes]
    vals = [str(v) for _, v in point.axes]
    out = []
    if first:
        out.append(",".join(cols + [head]) if cols else head)
    out.extend(",".join(vals + [ln]) if cols else ln for ln in body)
    return "".join(ln + "\r\n" for ln in out)


def _ser_increase(spec, points, jobs) -> Outcome:
    opts = spec.sim_options()
    schemes = tuple(spec.sweep.get("schemes", ("ci_nonrobust", "ci_robust")))
    body, checks, infeasible = [], [], 0
    for i, pt in enumerate(points):
        rows = metrics.ser_increase_curve(pt.config, spec.sweep["delta_deg"], schemes, spec.trials, spec.seed,
                                          opts, jobs)
        infeasible += sum(r.skipped for r in rows)
        body.append(_prefix(pt, metrics.rows_to_csv(rows), i == 0))
        if opts.noiseless:
            bad = [r for r in rows if r.scheme == "ci_robust" and r.errors > 0]
            checks.append((f"robust noiseless SER is zero {dict(pt.axes)}", not bad,
                           f"{len(bad)} rows with errors"))
    return Outcome({f"{spec.name}.csv": "".join(body)}, checks, infeasible)


def _tnr_table(spec, points, jobs) -> Outcome:
    body = []
    for i, pt in enumerate(points):
        tab = metrics.tnr_tuning_table(pt.config, spec.sweep["delta_deg"], spec.sweep["tnr"], spec.trials,
                                       spec.seed, spec.sim_options(), jobs)
        body.append(_prefix(pt, tab.to_csv(), i == 0))
    return Outcome({f"{spec.name}.csv": "".join(body)}, [], 0)


def _power_comparison(spec, points, jobs) -> Outcome:
    opts = spec.sim_options()
    tables, comp, checks = [], [], []
    for i, pt in enumerate(points):
        tab = metrics.tnr_tuning_table(pt.config, spec.sweep["delta_deg"], spec.sweep["tnr"],
                                       spec.extra.get("table_trials", spec.trials), spec.seed, opts, jobs)
        tables.append(_prefix(pt, tab.to_csv(), i == 0))
        try:
            rows = metrics.power_comparison(pt.config, spec.sweep["delta_deg"], tab,
                                            spec.extra.get("instances", 50), spec.trials, spec.seed, opts, jobs)
        except ValueError as exc:
            checks.append((f"TNR table covers the target SER {dict(pt.axes)}", False, str(exc)))
            continue
        comp.append(_prefix(pt, metrics.rows_to_csv(rows), not comp))
        p = [r.p_opt for r in rows]
        checks.append((f"P_opt non-decreasing in delta {dict(pt.axes)}",
                       all(b >= a * (1 - 1e-9) for a, b in zip(p, p[1:])), repr(p)))
    return Outcome({f"{spec.name}.csv": "".join(comp), f"{spec.name}_tnr_table.csv": "".join(tables)}, checks, 0)


def _block_power(spec, points, jobs) -> Outcome:
    opts = spec.sim_options()
    methods = tuple(spec.sweep.get("analog_method", metrics.ANALOG_METHODS))
    body, checks, infeasible = [], [], 0
    for i, pt in enumerate(points):
        rows = metrics.power_vs_block_length(pt.config, spec.sweep["block_length"], methods, spec.trials,
                                             spec.seed, opts.n_paths, opts.codebook_size, opts.mwaso,
                                             opts.robust, jobs)
        infeasible += sum(r.skipped for r in rows)
        body.append(_prefix(pt, metrics.rows_to_csv(rows), i == 0))
        for m in ("cpc", "bmcs"):
            p = [r.power_w for r in rows if r.method == m]
            if p:
                same = all(x == p[0] or (math.isnan(x) and math.isnan(p[0])) for x in p)
                checks.append((f"{m} power constant in block length {dict(pt.axes)}", same, repr(p)))
    return Outcome({f"{spec.name}.csv": "".join(body)}, checks, infeasible)


_RUNNERS = {"ser_increase": _ser_increase, "tnr_table": _tnr_table,
            "power_comparison": _power_comparison, "block_power": _block_power}


def _validate_points(spec, points):
    codebook = spec.recipe == "block_power" or spec.options.get("analog_method", "cpc") != "cpc"
    size = spec.options.get("codebook_size", metrics.SimOptions.codebook_size)
    for pt in points:
        r, k = pt.config.n_rf_chains, pt.config.n_users
        if r < k:
            raise ConfigError(f"grid point {dict(pt.axes)}: every analog design needs at least one RF chain "
                              f"per user (R={r} < K={k})", None, spec.source)
        if codebook and size < r:
            raise ConfigError(f"grid point {dict(pt.axes)}: codebook_size={size} is smaller than R={r}",
                              None, spec.source)
        for t in spec.sweep.get("block_length", []):
            if not isinstance(t, int) or t < 1 or pt.config.coherence_symbols % t:
                raise ConfigError(f"block length {t!r} must divide coherence_symbols="
                                  f"{pt.config.coherence_symbols}", None, spec.source)


def describe_grid(spec: ExperimentSpec, points) -> str:
    lines = [f"experiment {spec.name}: recipe {spec.recipe}, seed {spec.seed}, trials {spec.trials}"]
    for key in sorted(spec.sweep):
        if key not in OUTER_AXES:
            lines.append(f"  {key}: {spec.sweep[key]}")
    if spec.options:
        lines.append(f"  options: {json.dumps(spec.options, sort_keys=True)}")
    for i, pt in enumerate(points):
        c = pt.config
        lines.append(f"  point {i}: N={c.n_antennas} R={c.n_rf_chains} K={c.n_users} M={c.psk_order} "
                     f"Tc={c.coherence_symbols} thresholds={list(c.thresholds)}")
    return "\n".join(lines)


def run(spec: ExperimentSpec, out_dir, jobs: int = 1, strict: bool = False, log=print) -> int:
    """Run a parsed spec, write its CSVs and manifest, and return the exit status."""
    points = spec.grid()
    _validate_points(spec, points)
    outcome = _RUNNERS[spec.recipe](spec, points, jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for fname, text in outcome.tables.items():
        (out / fname).write_bytes(text.encode())
        digests[fname] = hashlib.sha256(text.encode()).hexdigest()
        log(f"wrote {out / fname}")
    manifest = {
        "name": spec.name,
        "recipe": spec.recipe,
        "seed": spec.seed,
        "version": version_string(),
        "spec": spec.to_dict(),
        "grid": [{"axes": dict(pt.axes), "config": pt.config.to_dict()} for pt in points],
        "artifacts": digests,
        "infeasible_points": outcome.infeasible,
        "invariants": [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in outcome.checks],
    }
    mpath = out / f"{spec.name}_manifest.json"
    mpath.write_bytes((json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    log(f"wrote {mpath}")
    status = 0
    for n, ok, d in outcome.checks:
        if not ok:
            log(f"invariant failed: {n}: {d}")
            status = 1
    if outcome.infeasible:
        log(f"{outcome.infeasible} infeasible design points were skipped")
        if strict:
            status = 1
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cihp", description="Robust CI hybrid precoding experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment spec (TOML)")
    r.add_argument("spec", help=f"spec file, or a bundled name: {', '.join(BUNDLED)}")
    r.add_argument("--seed", type=int, default=None, help="override the spec seed")
    r.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    r.add_argument("--strict", action="store_true", help="fail when any design point is infeasible")
    r.add_argument("--dry-run", action="store_true", help="print the resolved grid and exit")
    r.add_argument("--out-dir", default=".", help="directory for CSVs and the manifest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        spec = load_spec(args.spec)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            spec = replace(spec, seed=args.seed)
        points = spec.grid()
        _validate_points(spec, points)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        print(describe_grid(spec, points))
        return 0
    return run(spec, args.out_dir, args.jobs, args.strict)


if __name__ == "__main__":
    sys.exit(main())

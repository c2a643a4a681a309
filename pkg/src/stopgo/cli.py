"""``stopgo`` command line: run, sweep, stability, fit, report.

Exit codes: 0 ok, 2 invalid input, 3 run finished with collisions, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cfm import DEFAULT_IDM, IdmParams
from .energy import UNIT_TO_GAL_PER_S, FeasibilityBoundary, RankDeficiencyWarning, fit_poly
from .kpi import (KpiReport, compute_kpis, degradation_flags, export_tsd, leaderboard_json,
                  leaderboard_text, rank_runs)
from .sim.config import ConfigError, load_config, tomllib
from .sim.engine import run
from .sim.log import TrajectoryLog
from .stability import critical_density_scan, linearize, unstable_band, write_scan_csv
from .suite import load_suite, run_suite, scenario_portfolio

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_COLLISION = 3
EXIT_IO = 4


def _say(args, *parts):
    if not args.quiet:
        print(*parts)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    baseline = KpiReport.load(args.baseline) if args.baseline else None
    out = _out_dir(args)
    result = run(cfg)
    traj = out / "trajectory.csv"
    result.log.write_csv(traj)
    # KPIs come from the file as written so they can be recomputed from it exactly
    log = TrajectoryLog.from_csv(traj, meta=result.log.meta)
    report = compute_kpis(log, scenario_portfolio(cfg), baseline)
    _write(out / "kpi.json", report.to_json())
    export_tsd(log, args.time_bin, args.space_bin).write(out / "tsd.csv", out / "tsd.json")
    collisions = max(result.collisions, report.collision_count)
    _say(args, f"system_mpg          {report.system_mpg:.4f}")
    _say(args, f"mean_network_speed  {report.mean_network_speed:.4f} m/s")
    _say(args, f"realized_inflow     {report.realized_inflow:.1f} veh/hr")
    _say(args, f"collisions          {collisions}")
    if baseline is not None:
        _say(args, f"flags               {json.dumps(report.flags, sort_keys=True)}")
    _say(args, f"artifacts in {out}")
    if collisions:
        print(f"run flagged: {collisions} collision(s)", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep / report
# ---------------------------------------------------------------------------

def _write_leaderboard(out: Path, rows, errors=None) -> str:
    text = leaderboard_text(rows, errors)
    _write(out / "leaderboard.txt", text)
    _write(out / "leaderboard.json", leaderboard_json(rows, errors))
    return text


def cmd_sweep(args) -> int:
    suite = load_suite(args.suite, args.seed)
    out = _out_dir(args)
    baseline, reports, errors = run_suite(suite, jobs=args.jobs)
    (out / "runs").mkdir(exist_ok=True)
    _write(out / "baseline_kpi.json", baseline.to_json())
    for label, rep in reports:
        _write(out / "runs" / f"{label}.json", rep.to_json())
    rows = rank_runs([("baseline", baseline)] + reports)
    text = _write_leaderboard(out, rows, errors)
    _say(args, text.rstrip("\n"))
    return EXIT_OK


def _label_for(path: Path) -> str:
    return path.parent.name if path.stem in ("kpi", "report") and path.parent.name else path.stem


def cmd_report(args) -> int:
    baseline = KpiReport.load(args.baseline) if args.baseline else None
    entries = []
    for p in args.reports:
        p = Path(p)
        rep = KpiReport.load(p)
        if baseline is not None:
            rep = replace(rep, flags=degradation_flags(rep, baseline))
        entries.append((_label_for(p), rep))
    if baseline is not None:
        entries.append(("baseline", baseline))
    labels = [lbl for lbl, _ in entries]
    if len(set(labels)) != len(labels):
        raise ConfigError("reports", "duplicate run labels; give each report a distinct file or directory name")
    text = _write_leaderboard(_out_dir(args), rank_runs(entries))
    _say(args, text.rstrip("\n"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

_IDM_KEYS = ("a", "b", "v0", "delta", "T", "s0")


def _load_params(path) -> IdmParams:
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            d = json.loads(raw)
        else:
            d = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path.name}: {exc}") from None
    if isinstance(d, dict) and isinstance(d.get("idm"), dict):
        d = d["idm"]
    if not isinstance(d, dict):
        raise ConfigError("idm", "expected a table of IDM parameters")
    for k in d:
        if k not in _IDM_KEYS:
            raise ConfigError(f"idm.{k}", "unknown parameter")
    for k, v in d.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"idm.{k}", f"must be a number, got {v!r}")
    try:
        return IdmParams(**{k: float(v) for k, v in d.items()})
    except ValueError as exc:
        raise ConfigError("idm", str(exc)) from None


def cmd_stability(args) -> int:
    p = _load_params(args.params) if args.params else DEFAULT_IDM
    overrides = {k: getattr(args, f"idm_{k}") for k in _IDM_KEYS if getattr(args, f"idm_{k}") is not None}
    if overrides:
        try:
            p = replace(p, **overrides)
        except ValueError as exc:
            raise ConfigError("idm", str(exc)) from None
    if not (0 < args.v_min < args.v_max) or not args.v_step > 0:
        raise ConfigError("v-grid", "need 0 < v_min < v_max and v_step > 0")
    grid = np.arange(args.v_min, args.v_max + 0.5 * args.v_step, args.v_step)
    grid = grid[grid < p.v0]
    if grid.size == 0:
        raise ConfigError("v-grid", f"no grid speeds below v0={p.v0}")
    points = critical_density_scan(p, grid, vehicle_length=args.vehicle_length)
    out = _out_dir(args)
    write_scan_csv(points, out / "fd_scan.csv")
    with open(out / "lambda_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speed_m_s", "gap_m", "alpha1", "alpha2", "alpha3", "lambda", "stable"])
        for v in grid:
            lin = linearize(p, float(v))
            w.writerow(["%.6g" % v, "%.6g" % lin.s_eq, "%.6g" % lin.alpha1, "%.6g" % lin.alpha2,
                        "%.6g" % lin.alpha3, "%.6g" % lin.lam, str(lin.lam >= 0).lower()])
    bands = unstable_band(points)
    if not bands:
        _say(args, "no unstable band on the scanned grid")
    for v_lo, v_hi, k_lo, k_hi in bands:
        _say(args, f"unstable band: speed {v_lo:g}-{v_hi:g} m/s, density {k_lo:.2f}-{k_hi:.2f} veh/km")
    _say(args, f"artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def read_samples(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError("samples", "file is empty")
        if [h.strip() for h in header] != ["v", "a", "rate"]:
            raise ConfigError("samples", f"header must be v,a,rate, got {','.join(header)}")
        rows = []
        for lineno, r in enumerate(reader, start=2):
            if not r or all(not c.strip() for c in r):
                continue
            if len(r) != 3:
                raise ConfigError(f"samples row {lineno}", f"expected 3 fields, got {len(r)}")
            try:
                v, a, rate = (float(c) for c in r)
            except ValueError:
                raise ConfigError(f"samples row {lineno}", f"non-numeric value in {r!r}") from None
            if not all(math.isfinite(x) for x in (v, a, rate)):
                raise ConfigError(f"samples row {lineno}", "values must be finite")
            if rate < 0:
                raise ConfigError(f"samples row {lineno}", f"negative fuel rate {rate}")
            if v < 0:
                raise ConfigError(f"samples row {lineno}", f"negative speed {v}")
            rows.append((v, a, rate))
    if not rows:
        raise ConfigError("samples", "no data rows")
    return np.array(rows)


def cmd_fit(args) -> int:
    if not (math.isfinite(args.beta) and args.beta >= 0):
        raise ConfigError("beta", f"must be >= 0, got {args.beta}")
    if args.unit not in UNIT_TO_GAL_PER_S:
        raise ConfigError("unit", f"must be one of {sorted(UNIT_TO_GAL_PER_S)}")
    samples = read_samples(args.samples)
    boundary = None
    if args.boundary:
        b = json.loads(Path(args.boundary).read_text())
        boundary = FeasibilityBoundary(tuple(b["v"]), tuple(b["g"]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficiencyWarning)
        res = fit_poly(samples, args.beta, boundary, args.class_name, args.unit)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    target = Path(args.output) if args.output else _out_dir(args) / "model.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    res.model.save(target)
    names = ("C0", "C1", "C2", "C3", "p0", "p1", "p2", "q0", "q1")
    _say(args, f"samples used   {res.n_used} of {len(samples)}")
    _say(args, f"residual norm  {res.residual_norm:.6g}")
    for n, c in zip(names, res.model.coefficients):
        _say(args, f"  {n:<3} {c:.10g}")
    _say(args, f"model written to {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", metavar="N", type=int, default=argparse.SUPPRESS, help="override the seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="no stdout summary")

    parser = argparse.ArgumentParser(prog="stopgo", parents=[common],
                                     description="Traffic wave simulation and controller benchmarking.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.add_argument("config", help="scenario file (.toml or .json)")
    p.add_argument("--baseline", help="KPI JSON of a baseline run, enables degradation flags")
    p.add_argument("--time-bin", type=float, default=10.0, help="time-space diagram bin [s]")
    p.add_argument("--space-bin", type=float, default=20.0, help="time-space diagram bin [m]")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="baseline plus controller parameter sweep")
    p.add_argument("suite", help="suite file (.toml or .json)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stability", parents=[common], help="string-stability scan of IDM")
    p.add_argument("params", nargs="?", help="IDM parameter file (.toml or .json); default parameters otherwise")
    for k in _IDM_KEYS:
        p.add_argument(f"--{k}", dest=f"idm_{k}", type=float, help=f"override IDM {k}")
    p.add_argument("--v-min", type=float, default=0.5)
    p.add_argument("--v-max", type=float, default=29.5)
    p.add_argument("--v-step", type=float, default=0.5)
    p.add_argument("--vehicle-length", type=float, default=5.0)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("fit", parents=[common], help="fit a polynomial fuel model to v,a,rate samples")
    p.add_argument("samples", help="CSV with header v,a,rate")
    p.add_argument("--beta", type=float, required=True, help="minimum fuel rate (cap)")
    p.add_argument("-o", "--output", help="model JSON path (default: OUT/model.json)")
    p.add_argument("--class-name", default="fitted")
    p.add_argument("--unit", default="g/s:gasoline")
    p.add_argument("--boundary", help="JSON {v: [...], g: [...]} feasibility table")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", parents=[common], help="rank KPI reports")
    p.add_argument("reports", nargs="+", help="KPI JSON files")
    p.add_argument("--baseline", help="baseline KPI JSON; flags are recomputed against it")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("out", "stopgo_out"), ("seed", None), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

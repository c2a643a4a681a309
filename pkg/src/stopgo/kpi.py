"""Post-processing of trajectory logs: fleet KPIs, baseline flags, time-space diagrams, rankings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .energy import VehiclePortfolio, fleet_fuel
from .sim.log import TrajectoryLog

DEGRADATION_THRESHOLD = 0.10


class EmptyWindowError(ValueError):
    pass


class InsufficientStructureError(ValueError):
    pass


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


@dataclass(frozen=True)
class KpiReport:
    system_mpg: float
    mean_network_speed: float  # m/s
    realized_inflow: float  # veh/hr
    collision_count: int
    flags: dict = field(default_factory=lambda: {"inflow_degraded": False, "speed_degraded": False})
    per_class_mpg: dict = field(default_factory=dict)
    total_miles: float = 0.0
    total_gallons: float = 0.0

    @property
    def flagged(self) -> bool:
        return any(self.flags.values())

    @property
    def eligible(self) -> bool:
        return not self.flagged and self.collision_count == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system_mpg"] = _finite_or_none(self.system_mpg)
        d["per_class_mpg"] = {k: _finite_or_none(v) for k, v in sorted(self.per_class_mpg.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "KpiReport":
        def num(x):
            return math.inf if x is None else float(x)
        return cls(num(d["system_mpg"]), float(d["mean_network_speed"]), float(d["realized_inflow"]),
                   int(d["collision_count"]), dict(d.get("flags", {})),
                   {k: num(v) for k, v in d.get("per_class_mpg", {}).items()},
                   float(d.get("total_miles", 0.0)), float(d.get("total_gallons", 0.0)))

    @classmethod
    def load(cls, path) -> "KpiReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def degradation_flags(run: KpiReport, baseline: KpiReport | None,
                      threshold: float = DEGRADATION_THRESHOLD) -> dict:
    """A metric is degraded when it sits more than ``threshold`` (fraction) below the baseline."""
    if baseline is None:
        return {"inflow_degraded": False, "speed_degraded": False}

    def drop(x, ref):
        return ref > 0 and (ref - x) / ref > threshold

    return {"inflow_degraded": bool(drop(run.realized_inflow, baseline.realized_inflow)),
            "speed_degraded": bool(drop(run.mean_network_speed, baseline.mean_network_speed))}


def _window_mask(log: TrajectoryLog) -> np.ndarray:
    lo, hi = log.meta["segment"]
    mask = log.measure.copy()
    if log.meta.get("geometry") != "ring":
        mask &= (log.pos >= lo) & (log.pos <= hi)
    return mask


def _by_vehicle(log: TrajectoryLog) -> np.ndarray:
    return np.lexsort((log.t, log.veh_id))


def count_collisions(log: TrajectoryLog) -> int:
    """Onsets of overlap (gap <= 0) per vehicle, counted over the whole log."""
    order = _by_vehicle(log)
    vid, hit = log.veh_id[order], log.gap[order] <= 0.0
    prev_hit = np.concatenate(([False], hit[:-1]))
    prev_same = np.concatenate(([False], vid[1:] == vid[:-1]))
    return int(np.count_nonzero(hit & ~(prev_hit & prev_same)))


def entry_crossings(log: TrajectoryLog) -> int:
    """Vehicles entering the metrics segment during the measurement window.

    On a ring the entry is the origin, so a crossing is a wrap of the logged position.
    """
    order = _by_vehicle(log)
    vid, x, meas = log.veh_id[order], log.pos[order], log.measure[order]
    same = vid[1:] == vid[:-1]
    later_in_window = meas[1:]
    if log.meta.get("geometry") == "ring":
        cross = x[1:] < x[:-1]
    else:
        x0 = log.meta["segment"][0]
        cross = (x[:-1] < x0) & (x[1:] >= x0)
    return int(np.count_nonzero(same & later_in_window & cross))


def compute_kpis(log: TrajectoryLog, portfolio: VehiclePortfolio, baseline: KpiReport | None = None,
                 threshold: float = DEGRADATION_THRESHOLD) -> KpiReport:
    """KPIs over the measurement window restricted to the metrics segment.

    Fuel uses the noise-free commanded acceleration. Network speed is distance-weighted
    (vehicle-meters over vehicle-seconds), which for a fixed step is the mean sampled speed.
    """
    mask = _window_mask(log)
    if not mask.any():
        raise EmptyWindowError("no measurement-phase records on the metrics segment")
    dt = log.dt
    labels = np.asarray(log.class_names, dtype=object)
    trajs = []
    for code in np.unique(log.cls[mask]):
        sel = mask & (log.cls == code)
        energy_class = str(labels[code]).split(":", 1)[-1]
        trajs.append((energy_class, log.speed[sel], log.accel_cmd[sel]))
    fleet = fleet_fuel(portfolio, trajs, dt)
    speed = float(np.mean(log.speed[mask]))
    n_meas = np.unique(log.t[log.measure]).size
    duration = n_meas * dt
    inflow = entry_crossings(log) * 3600.0 / duration
    rep = KpiReport(fleet.mpg, speed, inflow, count_collisions(log),
                    per_class_mpg={k: v.mpg for k, v in fleet.per_class.items()},
                    total_miles=fleet.miles, total_gallons=fleet.gallons)
    if baseline is not None:
        rep = replace(rep, flags=degradation_flags(rep, baseline, threshold))
    return rep


# ---------------------------------------------------------------------------
# time-space diagrams
# ---------------------------------------------------------------------------

@dataclass
class TimeSpaceDiagram:
    """Mean speed per (time bin, space bin); empty cells hold NaN and count 0."""

    t_edges: np.ndarray
    x_edges: np.ndarray
    mean_speed: np.ndarray  # shape (n_t, n_x)
    count: np.ndarray
    circular: bool = False
    samples: tuple = ()  # (t, x, veh_id) of the raw points, for trajectory polylines

    @property
    def time_bin(self) -> float:
        return float(self.t_edges[1] - self.t_edges[0])

    @property
    def space_bin(self) -> float:
        return float(self.x_edges[1] - self.x_edges[0])

    def polylines(self) -> dict:
        t, x, vid = self.samples
        order = np.lexsort((t, vid))
        out = {}
        for v in np.unique(vid):
            sel = order[vid[order] == v]
            out[int(v)] = (t[sel], x[sel])
        return out

    def metadata(self) -> dict:
        return {"time_bin": self.time_bin, "space_bin": self.space_bin,
                "t_window": [float(self.t_edges[0]), float(self.t_edges[-1])],
                "x_window": [float(self.x_edges[0]), float(self.x_edges[-1])],
                "n_t": int(self.mean_speed.shape[0]), "n_x": int(self.mean_speed.shape[1]),
                "circular": self.circular, "empty_cell_value": "nan"}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_bin", "x_bin", "mean_speed", "count"])
        for i, t0 in enumerate(self.t_edges[:-1]):
            for j, x0 in enumerate(self.x_edges[:-1]):
                w.writerow(["%.6g" % t0, "%.6g" % x0, "%.6g" % self.mean_speed[i, j], int(self.count[i, j])])
        return buf.getvalue()

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv_text())
        with open(json_path, "w") as fh:
            fh.write(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")


def export_tsd(log: TrajectoryLog, time_bin: float, space_bin: float) -> TimeSpaceDiagram:
    """Bin measurement-window samples on the metrics segment.

    Bin counts are the requested sizes rounded to tile the window; the realized sizes are
    reported by the diagram.
    """
    if not (time_bin > 0 and space_bin > 0):
        raise ValueError("bin sizes must be positive")
    mask = _window_mask(log)
    if not mask.any():
        raise EmptyWindowError("no measurement-phase records on the metrics segment")
    dt = log.dt
    t_lo = float(np.min(log.t[log.measure]))
    t_hi = float(np.max(log.t[log.measure])) + dt
    x_lo, x_hi = (float(v) for v in log.meta["segment"])
    # bins tile the window exactly, so the realized sizes can differ slightly from the request
    n_t = max(1, int(round((t_hi - t_lo) / time_bin)))
    n_x = max(1, int(round((x_hi - x_lo) / space_bin)))
    time_bin, space_bin = (t_hi - t_lo) / n_t, (x_hi - x_lo) / n_x
    t, x, v = log.t[mask], log.pos[mask], log.speed[mask]
    it = np.clip(np.floor((t - t_lo) / time_bin + 1e-9).astype(np.int64), 0, n_t - 1)
    ix = np.clip(np.floor((x - x_lo) / space_bin).astype(np.int64), 0, n_x - 1)
    flat = it * n_x + ix
    count = np.bincount(flat, minlength=n_t * n_x).reshape(n_t, n_x)
    total = np.bincount(flat, weights=v, minlength=n_t * n_x).reshape(n_t, n_x)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return TimeSpaceDiagram(np.linspace(t_lo, t_hi, n_t + 1), np.linspace(x_lo, x_hi, n_x + 1),
                            mean, count, circular=log.meta.get("geometry") == "ring",
                            samples=(t, x, log.veh_id[mask]))


def wave_speed_estimate(tsd: TimeSpaceDiagram, max_speed: float | None = None) -> float:
    """Propagation speed [m/s] of the speed pattern; negative means moving upstream.

    Successive space profiles are cross-correlated over integer spatial shifts (circularly
    on a ring) and the best shift is refined by a parabola through its neighbours.
    ``max_speed`` bounds the searched shifts (default: half the domain per time bin).
    """
    f = np.array(tsd.mean_speed, dtype=float)
    n_t, n_x = f.shape
    if n_t < 10:
        raise InsufficientStructureError(f"need at least 10 time bins, got {n_t}")
    filled = np.isfinite(f)
    if not filled.any():
        raise InsufficientStructureError("time-space diagram is empty")
    f = np.where(filled, f, np.mean(f[filled]))
    f = f - f.mean(axis=1, keepdims=True)
    if np.var(f) < 1e-12:
        raise InsufficientStructureError("speed field is uniform; no pattern to track")
    a, b = f[:-1], f[1:]
    j_max = n_x // 2 if max_speed is None else min(n_x - 2, int(math.ceil(max_speed * tsd.time_bin / tsd.space_bin)))
    j_max = max(j_max, 1)
    shifts = np.arange(-j_max, j_max + 1)
    score = np.empty(shifts.size)
    for k, j in enumerate(shifts):
        if tsd.circular:
            score[k] = np.mean(a * np.roll(b, -j, axis=1))
        elif j >= 0:
            score[k] = np.mean(a[:, :n_x - j] * b[:, j:])
        else:
            score[k] = np.mean(a[:, -j:] * b[:, :n_x + j])
    k = int(np.argmax(score))
    frac = 0.0
    if 0 < k < shifts.size - 1:
        y0, y1, y2 = score[k - 1], score[k], score[k + 1]
        den = y0 - 2.0 * y1 + y2
        if den < 0:
            frac = 0.5 * (y0 - y2) / den
    return float((shifts[k] + frac) * tsd.space_bin / tsd.time_bin)


# ---------------------------------------------------------------------------
# leaderboard
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    label: str
    report: KpiReport

    @property
    def eligible(self) -> bool:
        return self.report.eligible


def _sig4(x: float) -> float:
    return float("%.4g" % x) if math.isfinite(x) else x


def rank_runs(reports) -> list[LeaderboardRow]:
    """Order by mpg (descending). Ties at 4 significant digits go to the faster run, then by label."""
    ordered = sorted(reports, key=lambda lr: (-_sig4(lr[1].system_mpg), -lr[1].mean_network_speed, lr[0]))
    return [LeaderboardRow(i + 1, label, rep) for i, (label, rep) in enumerate(ordered)]


def leaderboard_text(rows: list[LeaderboardRow], errors: dict | None = None) -> str:
    """Fixed-width table; ``errors`` maps labels of failed runs to their messages."""
    head = f"{'rank':>4}  {'label':<32} {'mpg':>9} {'speed_m_s':>9} {'inflow_vph':>10} {'coll':>4}  status"
    lines = [head, "-" * len(head)]
    for r in rows:
        rep = r.report
        why = [k.replace("_degraded", "") for k, v in sorted(rep.flags.items()) if v]
        if rep.collision_count:
            why.append("collision")
        status = "ok" if r.eligible else "INELIGIBLE (" + ", ".join(why) + ")"
        lines.append(f"{r.rank:>4}  {r.label:<32} {rep.system_mpg:>9.4g} {rep.mean_network_speed:>9.4f} "
                     f"{rep.realized_inflow:>10.1f} {rep.collision_count:>4}  {status}")
    for label, msg in sorted((errors or {}).items()):
        lines.append(f"{'-':>4}  {label:<32} {'-':>9} {'-':>9} {'-':>10} {'-':>4}  ERROR: {msg}")
    return "\n".join(lines) + "\n"


def leaderboard_json(rows: list[LeaderboardRow], errors: dict | None = None) -> str:
    data = [{"rank": r.rank, "label": r.label, "eligible": r.eligible, **r.report.to_dict()} for r in rows]
    data += [{"rank": None, "label": k, "eligible": False, "error": v} for k, v in sorted((errors or {}).items())]
    return json.dumps(data, indent=2, sort_keys=True) + "\n"

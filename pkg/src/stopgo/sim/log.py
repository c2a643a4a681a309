"""Columnar trajectory log and its CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = ("t", "veh_id", "class", "pos_m", "speed_m_s", "accel_cmd_m_s2", "accel_real_m_s2",
              "gap_m", "leader_id", "phase")
PHASES = ("warmup", "measure")


def _g(x: float) -> str:
    return "%.6g" % x


@dataclass
class TrajectoryLog:
    """One row per (step, vehicle). ``cls`` indexes ``class_names``; ``leader_id`` is -1 when free.

    ``meta`` carries what the rows alone cannot: ``dt``, ``n_warmup_steps``, ``geometry``
    (``"ring"``/``"stretch"``), ``ring_length``, ``segment`` (metrics interval) and ``vehicle_length``.
    """

    t: np.ndarray
    veh_id: np.ndarray
    cls: np.ndarray
    class_names: list
    pos: np.ndarray
    speed: np.ndarray
    accel_cmd: np.ndarray
    accel_real: np.ndarray
    gap: np.ndarray
    leader_id: np.ndarray
    measure: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def dt(self) -> float:
        return float(self.meta["dt"])

    @property
    def class_labels(self) -> np.ndarray:
        return np.asarray(self.class_names, dtype=object)[self.cls]

    def subset(self, mask) -> "TrajectoryLog":
        mask = np.asarray(mask, bool)
        return TrajectoryLog(self.t[mask], self.veh_id[mask], self.cls[mask], list(self.class_names),
                             self.pos[mask], self.speed[mask], self.accel_cmd[mask], self.accel_real[mask],
                             self.gap[mask], self.leader_id[mask], self.measure[mask], dict(self.meta))

    def step_index(self) -> np.ndarray:
        return np.rint(self.t / self.dt).astype(np.int64)

    def to_csv_text(self) -> str:
        names = self.class_names
        lines = [",".join(CSV_HEADER)]
        cols = zip(self.t.tolist(), self.veh_id.tolist(), self.cls.tolist(), self.pos.tolist(),
                   self.speed.tolist(), self.accel_cmd.tolist(), self.accel_real.tolist(), self.gap.tolist(),
                   self.leader_id.tolist(), self.measure.tolist())
        lines.extend(
            f"{_g(t)},{i},{names[c]},{_g(x)},{_g(v)},{_g(ac)},{_g(ar)},{_g(s)},{ld},{PHASES[m]}"
            for t, i, c, x, v, ac, ar, s, ld, m in cols
        )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> "TrajectoryLog":
        """Read a CSV written by :meth:`write_csv`. ``meta`` supplies geometry information."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header!r}")
            rows = list(reader)
        names: list[str] = []
        index: dict[str, int] = {}
        n = len(rows)
        t, pos, speed, ac, ar, gap = (np.empty(n) for _ in range(6))
        vid, lid = np.empty(n, np.int64), np.empty(n, np.int64)
        code, measure = np.empty(n, np.int16), np.empty(n, bool)
        for k, r in enumerate(rows):
            if len(r) != len(CSV_HEADER):
                raise ValueError(f"{path}: row {k + 2} has {len(r)} fields")
            c = index.get(r[2])
            if c is None:
                c = index[r[2]] = len(names)
                names.append(r[2])
            t[k], pos[k], speed[k], ac[k], ar[k], gap[k] = (float(r[j]) for j in (0, 3, 4, 5, 6, 7))
            vid[k], lid[k], code[k] = int(r[1]), int(r[8]), c
            if r[9] not in PHASES:
                raise ValueError(f"{path}: row {k + 2} has unknown phase {r[9]!r}")
            measure[k] = r[9] == "measure"
        meta = dict(meta or {})
        if "dt" not in meta:
            steps = np.unique(t)
            meta["dt"] = float(np.min(np.diff(steps))) if steps.size > 1 else math.nan
        return cls(t, vid, code, names, pos, speed, ac, ar, gap, lid, measure, meta)

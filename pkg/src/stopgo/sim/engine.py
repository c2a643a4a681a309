"""Time stepping for ring and open-stretch scenarios.

All vehicles are updated synchronously from the previous state. Per step and per vehicle:
command (IDM or controller) -> add actuation noise -> fail-safes -> ballistic update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..cfm import DEFAULT_IDM, NoiseStream, equilibrium_gap, equilibrium_speed
from ..controllers import FollowerStopper
from ..energy import VehiclePortfolio, default_portfolio
from . import _pykernel, kernel
from .config import RingGeometry, ScenarioConfig, StretchGeometry
from .log import TrajectoryLog
from .params import KIND_FS, KIND_HUMAN, KIND_IDMR, pack

KIND_NAMES = {KIND_HUMAN: "human", KIND_IDMR: "cav", KIND_FS: "cav"}


@dataclass
class VehicleState:
    id: int
    vehicle_class: str  # "human:<energy class>" or "cav:<energy class>"
    position: float
    speed: float
    accel_cmd: float = 0.0
    accel_real: float = 0.0
    length: float = 5.0


@dataclass
class RunResult:
    log: TrajectoryLog
    metadata: dict = field(default_factory=dict)

    @property
    def collisions(self) -> int:
        return self.metadata["collisions"]


def fail_safe(proposed: float, v: float, gap: float, v_lead: float, dt: float,
              bounds: tuple[float, float] = (-4.5, 3.0), v_limit: float = math.inf,
              safe_decel: float = 4.5, min_gap: float = 0.5) -> float:
    """Clip to the acceleration bounds, respect the speed limit and keep a stoppable gap.

    The gap bound is the discrete-time safe speed: after this step the ego can still stop
    ``min_gap`` behind the point where the leader would stop when braking at ``safe_decel``.
    A leaderless vehicle passes ``gap=inf``.
    """
    prm = pack(DEFAULT_IDM, "interaction", dt, bounds, True, safe_decel, min_gap)
    a, _ = _pykernel._fail_safe(np.array([proposed], float), np.array([v], float), np.array([gap], float),
                                np.array([v_lead], float), np.array([v_limit], float), prm)
    return float(a[0])


def ballistic(v: float, a: float, dt: float) -> tuple[float, float]:
    """``(dx, v_new)`` under constant ``a``, truncated at standstill."""
    vn = v + a * dt
    if vn < 0:
        return (v * v / (2.0 * abs(a)) if a != 0 else 0.0), 0.0
    return v * dt + 0.5 * a * dt * dt, vn


class Simulation:
    """Mutable simulation state; :func:`run` is the usual entry point."""

    def __init__(self, config: ScenarioConfig, portfolio: VehiclePortfolio | None = None):
        self.cfg = config
        if portfolio is None:
            portfolio = VehiclePortfolio.load(config.portfolio) if config.portfolio else default_portfolio()
        self.portfolio = portfolio
        ctrl = config.controller
        self.cav_kind = KIND_FS if isinstance(ctrl, FollowerStopper) else KIND_IDMR
        self.prm = pack(config.idm, config.gap_form, config.dt, config.accel_bounds, config.fail_safes,
                        config.safe_decel, config.min_gap, ctrl)
        self.cav_every = int(round(1.0 / config.penetration)) if config.penetration > 0 else 0
        self.class_names = [f"human:{c}" for c in portfolio.human_classes] + [f"cav:{portfolio.cav.class_name}"]
        self.cav_code = len(self.class_names) - 1
        self.noise = NoiseStream(config.noise)
        self.class_rng = np.random.default_rng([config.seed, 1])
        self.ring = isinstance(config.geometry, RingGeometry)
        self.L = config.vehicle_length
        self.k = 0  # step index
        self.collisions = 0
        self.emergencies = 0
        self.spawned = 0
        self._records: list[tuple] = []
        self.ids = np.zeros(0, np.int64)
        self.kind = np.zeros(0, np.int8)
        self.cls = np.zeros(0, np.int16)
        self.x = np.zeros(0)
        self.v = np.zeros(0)
        self.overlap = np.zeros(0, bool)
        if self.ring:
            self._init_ring()

    # -- setup ---------------------------------------------------------------

    def _is_cav(self, j: int) -> bool:
        return self.cav_every > 0 and (j + 1) % self.cav_every == 0

    def _class_code(self, is_cav: bool) -> int:
        if is_cav:
            return self.cav_code
        shares = np.array([e.share for e in self.portfolio.humans])
        return int(self.class_rng.choice(len(shares), p=shares / shares.sum()))

    def _init_ring(self):
        g = self.cfg.geometry
        n = g.n_vehicles
        spacing = g.length / n
        v_eq = equilibrium_speed(spacing - self.L, self.cfg.idm)
        self.x = np.arange(n) * spacing
        self.v = np.full(n, v_eq)
        if n:
            self.v[0] = max(0.0, v_eq - self.cfg.ring_perturbation)
        self.ids = np.arange(n, dtype=np.int64)
        cav = [self._is_cav(i) for i in range(n)]
        self.kind = np.array([self.cav_kind if c else KIND_HUMAN for c in cav], np.int8)
        self.cls = np.array([self._class_code(c) for c in cav], np.int16)
        self.overlap = np.zeros(n, bool)
        self.spawned = n

    # -- neighbours ------------------------------------------------------------

    def neighbours(self):
        """``(gap, v_lead, leader_id, v_limit)`` for the current state."""
        n = self.x.size
        if self.ring:
            C = self.cfg.geometry.length
            lead = np.roll(np.arange(n), -1)
            xl = self.x[lead].copy()
            if n:
                xl[-1] += C
            gap = xl - self.x - self.L
            return gap, self.v[lead], self.ids[lead], np.full(n, np.inf)
        gap = np.empty(n)
        v_lead = np.empty(n)
        leader = np.full(n, -1, np.int64)
        if n:
            gap[0], v_lead[0] = np.inf, self.v[0]
            gap[1:] = self.x[:-1] - self.x[1:] - self.L
            v_lead[1:] = self.v[:-1]
            leader[1:] = self.ids[:-1]
        return gap, v_lead, leader, self._speed_limit()

    def _speed_limit(self) -> np.ndarray:
        g: StretchGeometry = self.cfg.geometry
        zone = g.upstream_buffer + g.length
        lim = g.bottleneck_speed
        # approaching vehicles see a braking envelope at the comfortable deceleration
        dist = np.maximum(zone - self.x, 0.0)
        return np.sqrt(lim * lim + 2.0 * self.cfg.idm.b * dist)

    # -- inflow ----------------------------------------------------------------

    def spawn_inflow(self, time: float) -> bool:
        """Inject at most one vehicle if the nominal schedule has a backlog and the entry is safe."""
        g: StretchGeometry = self.cfg.geometry
        headway = 3600.0 / g.inflow
        due = int(math.floor(time / headway + 1e-9)) + 1
        if due <= self.spawned:
            return False
        idm = self.cfg.idm
        if self.x.size:
            gap = float(self.x[-1]) - self.L
            v_last = float(self.v[-1])
            if gap <= 0 or gap < equilibrium_gap(min(v_last, g.entry_speed, 0.99 * idm.v0), idm):
                return False
            v_comfort = math.sqrt(max(0.0, v_last * v_last + 2.0 * idm.b * (gap - idm.s0)))
            v_new = min(g.entry_speed, equilibrium_speed(gap, idm), v_comfort)
        else:
            v_new = g.entry_speed
        is_cav = self._is_cav(self.spawned)
        self.ids = np.append(self.ids, self.spawned)
        self.kind = np.append(self.kind, np.int8(self.cav_kind if is_cav else KIND_HUMAN))
        self.cls = np.append(self.cls, np.int16(self._class_code(is_cav)))
        self.x = np.append(self.x, 0.0)
        self.v = np.append(self.v, v_new)
        self.overlap = np.append(self.overlap, False)
        self.spawned += 1
        return True

    # -- stepping --------------------------------------------------------------

    def step(self, record: bool = True):
        cfg = self.cfg
        t = self.k * cfg.dt
        if not self.ring:
            self.spawn_inflow(t)
        n = self.x.size
        gap, v_lead, leader, v_limit = self.neighbours()
        noise = self.noise.draw(n)
        if not (cfg.noise_humans and cfg.noise_controlled):
            human = self.kind == KIND_HUMAN
            keep = human if cfg.noise_humans else ~human
            noise = np.where(keep, noise, 0.0)
        cmd, real, dx, vn = (np.empty(n) for _ in range(4))
        self.emergencies += kernel.advance(gap, self.v, v_lead, v_limit, self.kind, noise, self.prm,
                                           cmd, real, dx, vn)
        if record:
            pos = np.mod(self.x, cfg.geometry.length) if self.ring else self.x.copy()
            self._records.append((self.k, self.ids.copy(), self.cls.copy(), pos, self.v.copy(), cmd, real,
                                  gap, leader))
        self.x = self.x + dx
        self.v = vn
        self.k += 1
        gap_new = self.neighbours()[0]
        hit = gap_new <= 0.0
        self.collisions += int(np.count_nonzero(hit & ~self.overlap))
        self.overlap = hit
        if not self.ring and n:
            keep = self.x <= cfg.geometry.total_length
            if not keep.all():
                self.ids, self.kind, self.cls = self.ids[keep], self.kind[keep], self.cls[keep]
                self.x, self.v, self.overlap = self.x[keep], self.v[keep], self.overlap[keep]

    def vehicles(self) -> list[VehicleState]:
        return [VehicleState(int(i), self.class_names[c], float(x), float(v), length=self.L)
                for i, c, x, v in zip(self.ids, self.cls, self.x, self.v)]

    def build_log(self) -> TrajectoryLog:
        cfg = self.cfg
        recs = self._records
        counts = np.array([r[1].size for r in recs], np.int64)
        steps = np.repeat(np.array([r[0] for r in recs], np.int64), counts)
        cols = [np.concatenate([r[j] for r in recs]) if recs else np.zeros(0) for j in range(1, 9)]
        g = cfg.geometry
        if self.ring:
            segment = (0.0, float(g.length))
        else:
            segment = tuple(float(s) for s in g.segment)
        meta = {
            "dt": cfg.dt,
            "n_warmup_steps": cfg.n_warmup_steps,
            "geometry": g.kind,
            "ring_length": float(g.length) if self.ring else None,
            "segment": segment,
            "vehicle_length": self.L,
        }
        return TrajectoryLog(
            t=steps * cfg.dt, veh_id=cols[0].astype(np.int64), cls=cols[1].astype(np.int16),
            class_names=list(self.class_names), pos=cols[2], speed=cols[3], accel_cmd=cols[4],
            accel_real=cols[5], gap=cols[6], leader_id=cols[7].astype(np.int64),
            measure=steps >= cfg.n_warmup_steps, meta=meta,
        )


def step(sim: Simulation) -> Simulation:
    """Advance ``sim`` by one step in place and return it."""
    sim.step()
    return sim


def run(config: ScenarioConfig, portfolio: VehiclePortfolio | None = None) -> RunResult:
    """Warm-up followed by the measurement horizon. Deterministic in ``config``."""
    sim = Simulation(config, portfolio)
    for _ in range(config.n_steps):
        sim.step()
    meta = {
        "collisions": sim.collisions,
        "emergency_interventions": sim.emergencies,
        "vehicles_spawned": sim.spawned,
        "vehicles_final": int(sim.x.size),
        "backend": kernel.BACKEND,
        "config": config.to_dict(),
    }
    return RunResult(sim.build_log(), meta)

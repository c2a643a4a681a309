"""Sparse flow-smoothing controllers: FollowerStopper and IDM with relaxation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

from .cfm import DEFAULT_IDM, CfmInput, IdmParams, clamp_standstill, idm_accel_raw

DEFAULT_ACCEL_BOUNDS = (-4.5, 3.0)


@dataclass(frozen=True)
class FollowerStopper:
    """Three-band speed-command controller.

    Band boundaries grow quadratically with the closing speed:
    ``dx_k = dx0_k + dv_minus^2 / (2 decel_k)`` with ``dv_minus = min(0, v_lead - v)``.
    """

    v_desired: float
    dx0: tuple[float, float, float] = (4.5, 5.25, 6.0)
    decel: tuple[float, float, float] = (1.5, 1.0, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "dx0", tuple(float(x) for x in self.dx0))
        object.__setattr__(self, "decel", tuple(float(x) for x in self.decel))
        if not self.v_desired > 0:
            raise ValueError(f"v_desired must be > 0, got {self.v_desired!r}")
        if len(self.dx0) != 3 or len(self.decel) != 3:
            raise ValueError("dx0 and decel need exactly three entries")
        if not self.dx0[0] < self.dx0[1] < self.dx0[2]:
            raise ValueError(f"dx0 must be strictly increasing, got {self.dx0}")
        d = [abs(x) for x in self.decel]
        # shrinking magnitudes keep dx_1 < dx_2 < dx_3 at every closing speed
        if not (d[2] > 0 and d[0] > d[1] > d[2]):
            raise ValueError(f"decel magnitudes must be positive and strictly decreasing, got {self.decel}")

    kind = "follower_stopper"


@dataclass(frozen=True)
class IdmRelaxation:
    """IDM plus a relaxation pull ``gamma (v_desired - v)`` toward a target speed."""

    v_desired: float
    gamma: float
    idm: IdmParams = field(default_factory=lambda: DEFAULT_IDM)

    def __post_init__(self):
        if not self.v_desired > 0:
            raise ValueError(f"v_desired must be > 0, got {self.v_desired!r}")
        # gamma = 0 is allowed: it reduces the law to plain IDM
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma must be >= 0, got {self.gamma!r}")

    kind = "idm_relaxation"


ControllerSpec = Union[FollowerStopper, IdmRelaxation]


@dataclass(frozen=True)
class ControlCommand:
    """Either a target speed (``kind="speed"``) or an acceleration (``kind="accel"``)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("speed", "accel"):
            raise ValueError(f"unknown command kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise ValueError("command must be finite")


def idm_relaxation_accel(inp: CfmInput, spec: IdmRelaxation) -> float:
    # the standstill clamp acts on the total command so the relaxation pull cannot reverse the car
    raw = idm_accel_raw(inp.s, inp.v, inp.dv, spec.idm) + spec.gamma * (spec.v_desired - inp.v)
    return clamp_standstill(raw, inp.v)


def follower_stopper_bands(dv: float, spec: FollowerStopper) -> tuple[float, float, float]:
    dv_minus = min(0.0, dv)
    return tuple(x0 + dv_minus * dv_minus / (2.0 * abs(d)) for x0, d in zip(spec.dx0, spec.decel))


def follower_stopper_command(inp: CfmInput, spec: FollowerStopper) -> float:
    """Target speed in ``[0, v_desired]``."""
    x1, x2, x3 = follower_stopper_bands(inp.dv, spec)
    r = spec.v_desired
    v_lead = inp.v + inp.dv
    v = min(max(v_lead, 0.0), r)
    s = inp.s
    if s <= x1:
        return 0.0
    if s <= x2:
        return min(r, v * (s - x1) / (x2 - x1))
    if s <= x3:
        return min(r, v + (r - v) * (s - x2) / (x3 - x2))
    return r


def command_to_accel(cmd: ControlCommand, v: float, dt: float,
                     bounds: tuple[float, float] = DEFAULT_ACCEL_BOUNDS) -> float:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    lo, hi = bounds
    a = (cmd.value - v) / dt if cmd.kind == "speed" else cmd.value
    return min(max(a, lo), hi)


def controller_accel(inp: CfmInput, spec: ControllerSpec, dt: float,
                     bounds: tuple[float, float] = DEFAULT_ACCEL_BOUNDS) -> float:
    """Acceleration requested by a controller, before noise and fail-safes."""
    if isinstance(spec, FollowerStopper):
        return command_to_accel(ControlCommand("speed", follower_stopper_command(inp, spec)), inp.v, dt, bounds)
    return command_to_accel(ControlCommand("accel", idm_relaxation_accel(inp, spec)), inp.v, dt, bounds)


def controller_to_dict(spec: ControllerSpec | None) -> dict | None:
    if spec is None:
        return None
    if isinstance(spec, FollowerStopper):
        return {"type": spec.kind, "v_desired": spec.v_desired, "dx0": list(spec.dx0), "decel": list(spec.decel)}
    idm = spec.idm
    return {"type": spec.kind, "v_desired": spec.v_desired, "gamma": spec.gamma,
            "idm": {"a": idm.a, "b": idm.b, "v0": idm.v0, "delta": idm.delta, "T": idm.T, "s0": idm.s0}}


def controller_from_dict(d: dict | None) -> ControllerSpec | None:
    if not d:
        return None
    kind = d.get("type")
    if kind in ("follower_stopper", "fs"):
        kw = {k: d[k] for k in ("dx0", "decel") if k in d}
        return FollowerStopper(float(d["v_desired"]), **kw)
    if kind in ("idm_relaxation", "idm+r", "idmr"):
        idm = IdmParams(**d["idm"]) if "idm" in d else DEFAULT_IDM
        return IdmRelaxation(float(d["v_desired"]), float(d["gamma"]), idm)
    raise ValueError(f"controller.type: unknown controller {kind!r}")

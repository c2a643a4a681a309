"""Scenario description and its TOML/JSON loader."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..cfm import GAP_FORM_INTERACTION, GAP_FORMS, DEFAULT_IDM, IdmParams, NoiseSpec, equilibrium_gap
from ..controllers import ControllerSpec, controller_from_dict, controller_to_dict


class ConfigError(ValueError):
    """Invalid scenario description. ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RingGeometry:
    length: float  # m, circumference
    n_vehicles: int

    kind = "ring"


@dataclass(frozen=True)
class StretchGeometry:
    """Open road: upstream buffer, metrics segment, then a speed-limited downstream buffer."""

    length: float = 1609.0
    inflow: float = 2050.0  # veh/hr
    bottleneck_speed: float = 5.0
    upstream_buffer: float = 200.0
    downstream_buffer: float = 200.0
    entry_speed: float = 15.0

    kind = "stretch"

    @property
    def total_length(self) -> float:
        return self.upstream_buffer + self.length + self.downstream_buffer

    @property
    def segment(self) -> tuple[float, float]:
        return (self.upstream_buffer, self.upstream_buffer + self.length)


Geometry = Union[RingGeometry, StretchGeometry]


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that determines a run. ``run(config)`` is a pure function of this object.

    The noise stream is seeded from ``seed``; ``noise_std`` is its standard deviation.
    ``ring_perturbation`` lowers the initial speed of vehicle 0 on a ring [m/s].
    """

    geometry: Geometry
    dt: float = 0.4
    warmup: float = 720.0
    horizon: float = 1200.0
    noise_std: float = 0.1
    penetration: float = 0.0
    controller: ControllerSpec | None = None
    seed: int = 0
    idm: IdmParams = field(default_factory=lambda: DEFAULT_IDM)
    gap_form: str = GAP_FORM_INTERACTION
    accel_bounds: tuple[float, float] = (-4.5, 3.0)
    fail_safes: bool = True
    safe_decel: float = 4.5
    min_gap: float = 0.5
    vehicle_length: float = 5.0
    noise_humans: bool = True
    noise_controlled: bool = True
    ring_perturbation: float = 0.0
    portfolio: str | None = None

    def __post_init__(self):
        validate(self)

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.noise_std, self.seed)

    @property
    def n_warmup_steps(self) -> int:
        return int(round(self.warmup / self.dt))

    @property
    def n_steps(self) -> int:
        return self.n_warmup_steps + int(round(self.horizon / self.dt))

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["geometry"] = {"type": self.geometry.kind, **asdict(self.geometry)}
        d["idm"] = asdict(self.idm)
        d["controller"] = controller_to_dict(self.controller)
        d["accel_bounds"] = list(self.accel_bounds)
        return {k: v for k, v in d.items() if v is not None}


def _finite(name, val, lo=None, lo_strict=True):
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(name, f"must be a finite number, got {val!r}")
    if lo is not None and (val <= lo if lo_strict else val < lo):
        raise ConfigError(name, f"must be {'>' if lo_strict else '>='} {lo}, got {val!r}")


def validate(cfg: ScenarioConfig) -> None:
    g = cfg.geometry
    if isinstance(g, RingGeometry):
        _finite("geometry.length", g.length, 0)
        if isinstance(g.n_vehicles, bool) or not isinstance(g.n_vehicles, int) or g.n_vehicles < 1:
            raise ConfigError("geometry.n_vehicles", f"must be a positive integer, got {g.n_vehicles!r}")
        if g.length / g.n_vehicles <= cfg.vehicle_length:
            raise ConfigError("geometry.length", "ring too short for its vehicles")
    elif isinstance(g, StretchGeometry):
        for name in ("length", "inflow", "bottleneck_speed", "entry_speed"):
            _finite(f"geometry.{name}", getattr(g, name), 0)
        for name in ("upstream_buffer", "downstream_buffer"):
            _finite(f"geometry.{name}", getattr(g, name), 0, lo_strict=False)
    else:
        raise ConfigError("geometry", f"unknown geometry {g!r}")
    _finite("dt", cfg.dt, 0)
    _finite("warmup", cfg.warmup, 0, lo_strict=False)
    _finite("horizon", cfg.horizon, 0)
    _finite("noise_std", cfg.noise_std, 0, lo_strict=False)
    _finite("penetration", cfg.penetration, 0, lo_strict=False)
    if cfg.penetration > 1:
        raise ConfigError("penetration", f"must be <= 1, got {cfg.penetration!r}")
    if cfg.penetration > 0 and cfg.controller is None:
        raise ConfigError("controller", "penetration > 0 needs a controller")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {cfg.seed!r}")
    if cfg.gap_form not in GAP_FORMS:
        raise ConfigError("gap_form", f"must be one of {GAP_FORMS}, got {cfg.gap_form!r}")
    lo, hi = cfg.accel_bounds
    _finite("accel_bounds", lo)
    _finite("accel_bounds", hi)
    if not lo < 0 < hi:
        raise ConfigError("accel_bounds", f"need a_min < 0 < a_max, got {cfg.accel_bounds!r}")
    _finite("safe_decel", cfg.safe_decel, 0)
    _finite("min_gap", cfg.min_gap, 0, lo_strict=False)
    _finite("vehicle_length", cfg.vehicle_length, 0)
    _finite("ring_perturbation", cfg.ring_perturbation, 0, lo_strict=False)
    for name in ("fail_safes", "noise_humans", "noise_controlled"):
        if not isinstance(getattr(cfg, name), bool):
            raise ConfigError(name, f"must be true or false, got {getattr(cfg, name)!r}")
    if cfg.portfolio is not None and not isinstance(cfg.portfolio, str):
        raise ConfigError("portfolio", "must be a path string")


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

_SCALARS = {f.name for f in fields(ScenarioConfig)} - {"geometry", "idm", "controller", "accel_bounds"}


def _build_geometry(d) -> Geometry:
    if not isinstance(d, dict):
        raise ConfigError("geometry", "must be a table")
    d = dict(d)
    kind = d.pop("type", None)
    cls = {"ring": RingGeometry, "stretch": StretchGeometry}.get(kind)
    if cls is None:
        raise ConfigError("geometry.type", f"must be 'ring' or 'stretch', got {kind!r}")
    known = {f.name for f in fields(cls)}
    for k in d:
        if k not in known:
            raise ConfigError(f"geometry.{k}", "unknown key")
    if cls is RingGeometry and "n_vehicles" in d and isinstance(d["n_vehicles"], float) \
            and d["n_vehicles"].is_integer():
        d["n_vehicles"] = int(d["n_vehicles"])
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError("geometry", str(exc)) from None


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig`; every problem is reported as a :class:`ConfigError`."""
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a table/object")
    if "geometry" not in d:
        raise ConfigError("geometry", "missing")
    kw = {"geometry": _build_geometry(d["geometry"])}
    for k, v in d.items():
        if k == "geometry":
            continue
        if k == "idm":
            try:
                kw["idm"] = IdmParams(**v)
            except (TypeError, ValueError) as exc:
                raise ConfigError("idm", str(exc)) from None
        elif k == "controller":
            try:
                kw["controller"] = controller_from_dict(v)
            except KeyError as exc:
                raise ConfigError("controller", f"missing key {exc}") from None
            except (TypeError, ValueError) as exc:
                msg = str(exc)
                raise ConfigError("controller", msg.removeprefix("controller.type: ")) from None
        elif k == "accel_bounds":
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise ConfigError("accel_bounds", "must be a pair [a_min, a_max]")
            kw["accel_bounds"] = tuple(v)
        elif k in _SCALARS:
            kw[k] = v
        else:
            raise ConfigError(k, "unknown key")
    return ScenarioConfig(**kw)


def load_config(path) -> ScenarioConfig:
    """Read a ``.toml`` or ``.json`` scenario file. Raises ``OSError`` or :class:`ConfigError`."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            d = json.loads(raw)
        else:
            d = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path.name}: {exc}") from None
    cfg = config_from_dict(d)
    if cfg.portfolio and not Path(cfg.portfolio).is_absolute():
        cfg = replace(cfg, portfolio=str(path.parent / cfg.portfolio))
    return cfg


def ring_for_speed(v_eq: float, n_vehicles: int = 22, idm: IdmParams = DEFAULT_IDM,
                   vehicle_length: float = 5.0) -> RingGeometry:
    """Ring whose uniform-flow equilibrium speed is ``v_eq``."""
    return RingGeometry(n_vehicles * (equilibrium_gap(v_eq, idm) + vehicle_length), n_vehicles)

"""Polynomial vehicle fuel-rate models, feasibility boundaries and fuel-economy aggregation."""

from __future__ import annotations

import abc
import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

METERS_PER_MILE = 1609.344
GASOLINE_G_PER_GAL = 2839.0
DIESEL_G_PER_GAL = 3192.0

# gallons per second for one unit of fuel rate
UNIT_TO_GAL_PER_S = {
    "g/s:gasoline": 1.0 / GASOLINE_G_PER_GAL,
    "g/s:diesel": 1.0 / DIESEL_G_PER_GAL,
    "gal/s": 1.0,
    "gal/hr": 1.0 / 3600.0,
}
N_POLY_COEFFS = 9  # C0..C3, p0..p2, q0, q1; beta is the tenth parameter and is given
MPG_SENTINEL = math.inf


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeasibilityBoundary:
    """Piecewise-linear maximum acceleration ``g(v)``; constant beyond the tabulated range."""

    v: tuple[float, ...]
    g: tuple[float, ...]

    def __post_init__(self):
        if len(self.v) != len(self.g) or len(self.v) == 0:
            raise ValueError("boundary tables must be non-empty and of equal length")
        if any(b <= a for a, b in zip(self.v, self.v[1:])):
            raise ValueError("boundary speeds must be strictly increasing")
        if not all(math.isfinite(x) for x in self.g):
            raise ValueError("boundary values must be finite")

    def __call__(self, v):
        out = np.interp(v, self.v, self.g)
        return float(out) if np.ndim(out) == 0 else out

    @classmethod
    def unbounded(cls) -> "FeasibilityBoundary":
        return cls((0.0,), (1e9,))


@dataclass(frozen=True)
class EnergyQuery:
    v: float
    a: float
    theta: float = 0.0

    def __post_init__(self):
        if not self.v >= 0:
            raise ValueError(f"speed must be >= 0, got {self.v!r}")


class EnergyModel(abc.ABC):
    """Interface shared by all fuel-rate models (room for a map-based implementation)."""

    class_name: str
    unit: str

    @abc.abstractmethod
    def rate(self, v, a, theta=0.0):
        """Fuel rate in model units for scalar or array inputs."""

    @abc.abstractmethod
    def feasible(self, v, a):
        """Whether ``(v, a)`` lies inside the powertrain's feasible region."""

    @property
    def gal_per_unit_s(self) -> float:
        return UNIT_TO_GAL_PER_S[self.unit]


@dataclass(frozen=True)
class PolyEnergyModel(EnergyModel):
    """Capped degree-3 bivariate polynomial fuel-rate model.

    ``rate = max(C0 + C1 v + C2 v^2 + C3 v^3 + p0 a + p1 a v + p2 a v^2 + q0 a+^2 + q1 a+^2 v, beta)``
    with ``a+ = max(a, 0)``.  Road grade is accepted and ignored.
    """

    C: tuple[float, float, float, float]
    p: tuple[float, float, float]
    q: tuple[float, float]
    beta: float
    boundary: FeasibilityBoundary = field(default_factory=FeasibilityBoundary.unbounded)
    class_name: str = "unnamed"
    unit: str = "g/s:gasoline"

    def __post_init__(self):
        object.__setattr__(self, "C", tuple(float(x) for x in self.C))
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        if (len(self.C), len(self.p), len(self.q)) != (4, 3, 2):
            raise ValueError("expected 4 C, 3 p and 2 q coefficients")
        if any(not (math.isfinite(c) and c >= 0) for c in self.coefficients):
            raise ValueError(f"polynomial coefficients must be finite and >= 0: {self.coefficients}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be >= 0, got {self.beta!r}")
        if self.unit not in UNIT_TO_GAL_PER_S:
            raise ValueError(f"unknown fuel-rate unit {self.unit!r}; expected one of {sorted(UNIT_TO_GAL_PER_S)}")

    @property
    def coefficients(self) -> tuple[float, ...]:
        return self.C + self.p + self.q

    def polynomial(self, v, a):
        """Uncapped polynomial value."""
        C0, C1, C2, C3 = self.C
        p0, p1, p2 = self.p
        q0, q1 = self.q
        v = np.asarray(v, dtype=float)
        a = np.asarray(a, dtype=float)
        ap2 = np.maximum(a, 0.0) ** 2
        out = C0 + C1 * v + C2 * v * v + C3 * v * v * v + p0 * a + p1 * a * v + p2 * a * v * v + q0 * ap2 + q1 * ap2 * v
        return float(out) if out.ndim == 0 else out

    def rate(self, v, a, theta=0.0):
        out = np.maximum(self.polynomial(v, a), self.beta)
        return float(out) if np.ndim(out) == 0 else out

    def feasible(self, v, a):
        out = np.asarray(a) <= self.boundary(v)
        return bool(out) if out.ndim == 0 else out

    # serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "class_name": self.class_name,
            "unit": self.unit,
            "beta": self.beta,
            "C": list(self.C),
            "p": list(self.p),
            "q": list(self.q),
            "boundary": {"v": list(self.boundary.v), "g": list(self.boundary.g)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolyEnergyModel":
        b = d.get("boundary")
        boundary = FeasibilityBoundary(tuple(b["v"]), tuple(b["g"])) if b else FeasibilityBoundary.unbounded()
        return cls(C=tuple(d["C"]), p=tuple(d["p"]), q=tuple(d["q"]), beta=float(d["beta"]),
                   boundary=boundary, class_name=d.get("class_name", "unnamed"), unit=d.get("unit", "g/s:gasoline"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PolyEnergyModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fuel_rate(model: EnergyModel, q: EnergyQuery) -> float:
    return model.rate(q.v, q.a, q.theta)


def is_feasible(model: EnergyModel, v: float, a: float) -> bool:
    return model.feasible(v, a)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def design_matrix(v, a) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    ap2 = np.maximum(a, 0.0) ** 2
    return np.column_stack([np.ones_like(v), v, v ** 2, v ** 3, a, a * v, a * v ** 2, ap2, ap2 * v])


@dataclass(frozen=True)
class FitResult:
    model: PolyEnergyModel
    residual_norm: float
    n_used: int
    rank_deficient: bool


def fit_poly(samples, beta: float, boundary: FeasibilityBoundary | None = None,
             class_name: str = "fitted", unit: str = "g/s:gasoline") -> FitResult:
    """Non-negative least-squares fit of the polynomial to ``(v, a, rate)`` samples.

    Only samples strictly above ``beta`` enter the fit; the cap is applied at evaluation.
    The residual norm is taken over the fitted samples.
    """
    arr = np.asarray(samples, dtype=float).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise ValueError("no samples to fit")
    if np.any(arr[:, 0] < 0):
        raise ValueError("sample speeds must be >= 0")
    used = arr[arr[:, 2] > beta]
    boundary = boundary or FeasibilityBoundary.unbounded()
    if used.shape[0] == 0:
        zero = PolyEnergyModel((0, 0, 0, 0), (0, 0, 0), (0, 0), beta, boundary, class_name, unit)
        return FitResult(zero, 0.0, 0, False)
    A = design_matrix(used[:, 0], used[:, 1])
    y = used[:, 2]
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    rank = np.linalg.matrix_rank(As)
    deficient = rank < As.shape[1]
    if deficient:
        warnings.warn(f"design matrix has rank {rank} < {As.shape[1]}; coefficients are not unique",
                      RankDeficiencyWarning, stacklevel=2)
    # columns are normalized so v^3 (~1e4) does not swamp the conditioning
    xs, _ = nnls(As, y, maxiter=50 * As.shape[1])
    coef = xs / scale
    resid = float(np.linalg.norm(A @ coef - y))
    model = PolyEnergyModel(tuple(coef[:4]), tuple(coef[4:7]), tuple(coef[7:]), beta, boundary, class_name, unit)
    return FitResult(model, resid, int(used.shape[0]), bool(deficient))


# ---------------------------------------------------------------------------
# trajectories and fleets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FuelTotals:
    gallons: float
    miles: float

    @property
    def mpg(self) -> float:
        return self.miles / self.gallons if self.gallons > 0 else MPG_SENTINEL


def _uniform_dt(t, dt):
    t = np.asarray(t, dtype=float)
    if t.size >= 2:
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise ValueError("timestamps must be strictly increasing")
        step = steps[0] if dt is None else dt
        if np.max(np.abs(steps - step)) > 1e-9 * max(1.0, abs(step)):
            raise ValueError("timestamps must be uniformly spaced")
        return float(step)
    if dt is None and t.size == 1:
        raise ValueError("a single-sample trajectory needs an explicit dt")
    return 0.0 if dt is None else float(dt)


def trajectory_fuel(model: EnergyModel, t, v, a, dt: float | None = None) -> tuple[float, float, float]:
    """Fuel [gal], distance [mi] and fuel economy [mpg] of one trajectory.

    Each sample stands for one step of length ``dt`` (inferred from ``t`` when not given).
    """
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    if v.size == 0:
        return 0.0, 0.0, MPG_SENTINEL
    step = _uniform_dt(t, dt)
    tot = _totals(model, v, a, step)
    return tot.gallons, tot.miles, tot.mpg


def _totals(model: EnergyModel, v, a, dt: float) -> FuelTotals:
    gallons = float(np.sum(model.rate(v, a))) * dt * model.gal_per_unit_s
    miles = float(np.sum(v)) * dt / METERS_PER_MILE
    return FuelTotals(gallons, miles)


@dataclass(frozen=True)
class PortfolioEntry:
    class_name: str
    model: EnergyModel
    share: float


@dataclass(frozen=True)
class VehiclePortfolio:
    """Human-vehicle classes with road shares plus the energy model used for CAVs."""

    humans: tuple[PortfolioEntry, ...]
    cav: EnergyModel

    def __post_init__(self):
        if not self.humans:
            raise ValueError("portfolio needs at least one human class")
        if any(e.share < 0 for e in self.humans):
            raise ValueError("shares must be non-negative")
        total = sum(e.share for e in self.humans)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"human shares must sum to 1, got {total!r}")
        names = [e.class_name for e in self.humans]
        if len(set(names)) != len(names):
            raise ValueError("duplicate class names in portfolio")

    @property
    def human_classes(self) -> list[str]:
        return [e.class_name for e in self.humans]

    def models(self) -> dict[str, EnergyModel]:
        out = {e.class_name: e.model for e in self.humans}
        out[self.cav.class_name] = self.cav
        return out

    def model_for(self, class_name: str) -> EnergyModel:
        models = self.models()
        if class_name not in models:
            raise KeyError(f"unknown vehicle class {class_name!r}")
        return models[class_name]

    def draw_human_classes(self, rng: np.random.Generator, n: int) -> list[str]:
        shares = np.array([e.share for e in self.humans])
        idx = rng.choice(len(self.humans), size=n, p=shares / shares.sum())
        return [self.humans[i].class_name for i in idx]

    @classmethod
    def single_class(cls, model: EnergyModel, cav: EnergyModel | None = None) -> "VehiclePortfolio":
        return cls((PortfolioEntry(model.class_name, model, 1.0),), cav or model)

    @classmethod
    def load(cls, path) -> "VehiclePortfolio":
        """Load ``[{class_name, model_file, share}, ...]``; the entry with ``share: null`` is the CAV."""
        path = Path(path)
        humans, cav = [], None
        for entry in json.loads(path.read_text()):
            mpath = Path(entry["model_file"])
            if not mpath.is_absolute():
                mpath = path.parent / mpath
            model = PolyEnergyModel.load(mpath)
            if model.class_name != entry["class_name"]:
                model = PolyEnergyModel(model.C, model.p, model.q, model.beta, model.boundary,
                                        entry["class_name"], model.unit)
            if entry.get("share") is None:
                cav = model
            else:
                humans.append(PortfolioEntry(entry["class_name"], model, float(entry["share"])))
        if cav is None:
            raise ValueError(f"{path}: portfolio has no CAV entry (share: null)")
        return cls(tuple(humans), cav)


def default_portfolio() -> VehiclePortfolio:
    """Placeholder portfolio shipped with the package (coefficients are not validated)."""
    with resources.as_file(resources.files("stopgo") / "data" / "portfolio.json") as p:
        return VehiclePortfolio.load(p)


@dataclass(frozen=True)
class FleetFuel:
    gallons: float
    miles: float
    per_class: dict

    @property
    def mpg(self) -> float:
        return self.miles / self.gallons if self.gallons > 0 else MPG_SENTINEL


def fleet_fuel(portfolio: VehiclePortfolio, trajectories: Iterable[tuple[str, Sequence, Sequence]],
               dt: float) -> FleetFuel:
    """Aggregate fuel over ``(class_name, v, a)`` trajectories sampled at step ``dt``."""
    gal, mi = 0.0, 0.0
    per: dict[str, list[float]] = {}
    for cls_name, v, a in trajectories:
        model = portfolio.model_for(cls_name)
        tot = _totals(model, np.asarray(v, float), np.asarray(a, float), dt)
        gal += tot.gallons
        mi += tot.miles
        acc = per.setdefault(cls_name, [0.0, 0.0])
        acc[0] += tot.gallons
        acc[1] += tot.miles
    return FleetFuel(gal, mi, {k: FuelTotals(g, m) for k, (g, m) in sorted(per.items())})


def fleet_mpg(portfolio: VehiclePortfolio, trajectories, dt: float) -> float:
    """System fuel economy: total miles over total gallons (not a mean of per-vehicle mpg)."""
    return fleet_fuel(portfolio, trajectories, dt).mpg


# ---------------------------------------------------------------------------
# placeholder model generation
# ---------------------------------------------------------------------------

GRAVITY = 9.81
AIR_DENSITY = 1.2


@dataclass(frozen=True)
class SurrogateVehicle:
    """Road-load / engine-efficiency surrogate used to generate placeholder coefficients."""

    class_name: str
    mass: float  # kg
    cda: float  # m^2
    crr: float
    max_power: float  # W
    idle_rate: float  # g/s
    efficiency: float
    heating_value: float  # J/g
    unit: str = "g/s:gasoline"
    max_traction_accel: float = 4.0
    transient_loss: float = 0.06  # s, convex penalty on hard acceleration

    def road_load(self, v):
        v = np.asarray(v, dtype=float)
        return self.mass * GRAVITY * self.crr + 0.5 * AIR_DENSITY * self.cda * v * v

    def rate(self, v, a):
        v = np.asarray(v, dtype=float)
        a = np.asarray(a, dtype=float)
        power = (self.mass * a + self.road_load(v)) * v
        power = power + self.transient_loss * self.mass * np.maximum(a, 0.0) ** 2 * v
        return self.idle_rate + np.maximum(power, 0.0) / (self.efficiency * self.heating_value)

    def max_accel(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            power_lim = (self.max_power / np.maximum(v, 1e-9) - self.road_load(v)) / self.mass
        return np.minimum(self.max_traction_accel, power_lim)


def fit_surrogate(veh: SurrogateVehicle, v_max: float = 35.0, a_min: float = -3.0) -> FitResult:
    vs = np.linspace(0.0, v_max, 36)
    bound_v = np.linspace(0.0, 40.0, 21)
    boundary = FeasibilityBoundary(tuple(bound_v), tuple(np.round(veh.max_accel(bound_v), 6)))
    rows = []
    for v in vs:
        for a in np.linspace(a_min, boundary(v), 41):
            rows.append((v, a, float(veh.rate(v, a))))
    return fit_poly(rows, veh.idle_rate, boundary, veh.class_name, veh.unit)


PLACEHOLDER_VEHICLES = (
    SurrogateVehicle("compact_sedan", 1300, 0.62, 0.009, 100e3, 0.18, 0.28, 43400.0),
    SurrogateVehicle("midsize_sedan", 1600, 0.68, 0.009, 140e3, 0.22, 0.28, 43400.0),
    SurrogateVehicle("midsize_suv", 1900, 0.85, 0.010, 150e3, 0.25, 0.27, 43400.0),
    SurrogateVehicle("midsize_pickup", 2300, 1.05, 0.011, 210e3, 0.30, 0.26, 43400.0),
    SurrogateVehicle("class3_pnd", 5000, 2.60, 0.008, 150e3, 0.35, 0.35, 42600.0, unit="g/s:diesel",
                     max_traction_accel=2.5),
    SurrogateVehicle("rav4", 1700, 0.80, 0.009, 150e3, 0.22, 0.29, 43400.0),
)

#: Human-vehicle road shares by class.
HV_SHARES = {
    "compact_sedan": 0.2359,
    "midsize_sedan": 0.3292,
    "midsize_suv": 0.1756,
    "midsize_pickup": 0.1032,
    "class3_pnd": 0.1561,
}
CAV_CLASS = "rav4"

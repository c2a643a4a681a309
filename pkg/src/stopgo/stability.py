"""Linear string-stability analysis of car-following models about uniform flow.

A car-following model ``f(s, v, dv)`` is linearized at the equilibrium ``(s_eq(v), v, 0)``.
The follower response to leader oscillations at frequency ``omega`` is

    F(omega) = (alpha1 + alpha3 omega) / (alpha1 + alpha2 omega + omega^2)

and uniform flow is string stable iff ``|F(i w)| <= 1`` for all real ``w``, which reduces to
``lam = alpha2^2 - alpha3^2 - 2 alpha1 >= 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .cfm import IdmParams, equilibrium_gap, idm_accel_smooth

DEFAULT_VEHICLE_LENGTH = 5.0
FD_STEP = 1e-6
CSV_HEADER = ("density_veh_km", "flow_veh_hr", "speed_m_s", "stable")


class NoEquilibriumError(ValueError):
    pass


class SingularTransferError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class LinearizedCfm:
    alpha1: float
    alpha2: float
    alpha3: float
    lam: float
    v_eq: float = float("nan")
    s_eq: float = float("nan")

    @classmethod
    def from_alphas(cls, alpha1: float, alpha2: float, alpha3: float,
                    v_eq: float = float("nan"), s_eq: float = float("nan")) -> "LinearizedCfm":
        return cls(alpha1, alpha2, alpha3, alpha2 * alpha2 - alpha3 * alpha3 - 2.0 * alpha1, v_eq, s_eq)


@dataclass(frozen=True)
class FundamentalDiagramPoint:
    density: float  # veh/km
    flow: float  # veh/hr
    speed: float  # m/s
    stable: bool


def _idm_alphas(v: float, p: IdmParams) -> tuple[float, float, float, float]:
    s = equilibrium_gap(v, p)
    s_star = p.s0 + v * p.T
    alpha1 = 2.0 * p.a * s_star ** 2 / s ** 3
    df_ddv = p.a * s_star * v / (s ** 2 * math.sqrt(p.a * p.b))
    df_dv = -p.a * p.delta * v ** (p.delta - 1.0) / p.v0 ** p.delta - 2.0 * p.a * s_star * p.T / s ** 2
    return alpha1, df_ddv - df_dv, df_ddv, s


def _central(f: Callable[[float], float], x: float) -> float:
    h = FD_STEP * max(1.0, abs(x))
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _fd_alphas(f, s: float, v: float) -> tuple[float, float, float]:
    df_ds = _central(lambda x: f(x, v, 0.0), s)
    df_dv = _central(lambda x: f(s, x, 0.0), v)
    df_ddv = _central(lambda x: f(s, v, x), 0.0)
    return df_ds, df_ddv - df_dv, df_ddv


def _solve_equilibrium_gap(f, v: float, s_max: float = 1e6) -> float:
    lo, hi = 1e-9, 1.0
    while f(hi, v, 0.0) < 0:
        hi *= 2.0
        if hi > s_max:
            raise NoEquilibriumError(f"no equilibrium gap below {s_max} m at v={v}")
    if f(lo, v, 0.0) > 0:
        raise NoEquilibriumError(f"model accelerates at every gap for v={v}")
    return brentq(lambda x: f(x, v, 0.0), lo, hi, xtol=1e-14, rtol=1e-15)


def linearize(model, v_eq: float, method: str = "analytic", s_eq: float | None = None) -> LinearizedCfm:
    """Partial derivatives of a car-following model at the uniform-flow equilibrium.

    ``model`` is either :class:`IdmParams` or a callable ``f(s, v, dv)``.  For IDM,
    ``method="analytic"`` differentiates in closed form and ``method="fd"`` applies central
    differences to the smooth branch of the law (the branch that is active while closing in;
    the floored interaction term has a kink exactly at ``dv = 0``).  Callables are always
    differentiated numerically; their equilibrium gap is found by root-finding unless given.
    """
    if isinstance(model, IdmParams):
        if not 0 < v_eq < model.v0:
            raise NoEquilibriumError(f"IDM has no equilibrium for v_eq={v_eq} (v0={model.v0})")
        if method == "analytic":
            a1, a2, a3, s = _idm_alphas(v_eq, model)
            return LinearizedCfm.from_alphas(a1, a2, a3, v_eq, s)
        if method != "fd":
            raise ValueError(f"unknown linearization method {method!r}")
        s = equilibrium_gap(v_eq, model)
        f = lambda s_, v_, dv_: idm_accel_smooth(s_, v_, dv_, model)  # noqa: E731
    else:
        f = model
        s = _solve_equilibrium_gap(f, v_eq) if s_eq is None else s_eq
    a1, a2, a3 = _fd_alphas(f, s, v_eq)
    return LinearizedCfm.from_alphas(a1, a2, a3, v_eq, s)


def transfer_gain(lin: LinearizedCfm, omega_im):
    """``|F(i w)|`` for scalar or array ``w``."""
    w = 1j * np.asarray(omega_im, dtype=float)
    den = lin.alpha1 + lin.alpha2 * w + w * w
    if np.any(np.abs(den) < 1e-300):
        raise SingularTransferError("transfer function denominator vanishes")
    g = np.abs((lin.alpha1 + lin.alpha3 * w) / den)
    return float(g) if g.ndim == 0 else g


def string_stable(lin: LinearizedCfm) -> bool:
    return bool(lin.lam >= 0)


def sampled_gain_stable(lin: LinearizedCfm, omegas: np.ndarray | None = None, tol: float = 1e-9) -> bool:
    """Brute-force stability verdict: ``max |F(i w)| <= 1 + tol`` over a frequency grid."""
    if omegas is None:
        omegas = np.logspace(-3, 3, 10_000)
    return bool(np.max(transfer_gain(lin, omegas)) <= 1.0 + tol)


def ring_growth_rate(lin: LinearizedCfm, n_vehicles: int) -> float:
    """Largest real part among the linear modes of ``n_vehicles`` on a ring.

    Mode ``k`` perturbs vehicle ``j`` as ``exp(sigma t + 2 pi i j k / n)``, so ``sigma`` solves
    ``sigma^2 + (alpha2 - alpha3 z) sigma + alpha1 (1 - z) = 0`` with ``z = exp(2 pi i k / n)``.
    """
    best = -math.inf
    for k in range(1, n_vehicles):
        z = np.exp(2j * np.pi * k / n_vehicles)
        roots = np.roots([1.0, lin.alpha2 - lin.alpha3 * z, lin.alpha1 * (1.0 - z)])
        best = max(best, float(np.max(roots.real)))
    return best


def critical_density_scan(model, v_grid: Sequence[float],
                          vehicle_length: float = DEFAULT_VEHICLE_LENGTH) -> list[FundamentalDiagramPoint]:
    v_grid = [float(v) for v in v_grid]
    if any(b <= a for a, b in zip(v_grid, v_grid[1:])):
        raise ValueError("v_grid must be strictly increasing")
    points = []
    for v in v_grid:
        lin = linearize(model, v)
        spacing = lin.s_eq + vehicle_length
        points.append(FundamentalDiagramPoint(
            density=1000.0 / spacing,
            flow=3600.0 * v / spacing,
            speed=v,
            stable=string_stable(lin),
        ))
    points.sort(key=lambda pt: pt.density)
    return points


def unstable_band(points: Iterable[FundamentalDiagramPoint]) -> list[tuple[float, float, float, float]]:
    """Contiguous runs (in speed order) of unstable points as ``(v_lo, v_hi, k_lo, k_hi)``."""
    pts = sorted(points, key=lambda pt: pt.speed)
    bands, run = [], []
    for pt in pts + [None]:
        if pt is not None and not pt.stable:
            run.append(pt)
            continue
        if run:
            bands.append((run[0].speed, run[-1].speed,
                          min(r.density for r in run), max(r.density for r in run)))
            run = []
    return bands


def write_scan_csv(points: Sequence[FundamentalDiagramPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for pt in points:
            w.writerow([f"{pt.density:.6g}", f"{pt.flow:.6g}", f"{pt.speed:.6g}", str(pt.stable).lower()])

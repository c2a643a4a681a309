"""Car-following model evaluation: IDM acceleration law, equilibria and actuation noise.

Speed differences follow the kinematic convention ``dv = v_leader - v_ego`` so that the
gap evolves as ``ds/dt = dv``.  The IDM interaction term reacts to the *closing* rate,
which is ``-dv`` under this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

#: Signature shared by all car-following models: ``f(s, v, dv) -> acceleration``.
CarFollowingModel = Callable[[float, float, float], float]

GAP_FORM_INTERACTION = "interaction"
GAP_FORM_DYNAMIC = "dynamic"
GAP_FORMS = (GAP_FORM_INTERACTION, GAP_FORM_DYNAMIC)


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Attributes:
        a: maximum acceleration [m/s^2]
        b: comfortable deceleration [m/s^2]
        v0: desired speed [m/s]
        delta: free-road acceleration exponent
        T: safe time headway [s]
        s0: jam gap [m]
    """

    a: float = 1.3
    b: float = 2.0
    v0: float = 30.0
    delta: float = 4.0
    T: float = 1.0
    s0: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "v0", "delta", "s0"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"IdmParams.{name} must be finite and > 0, got {val!r}")
        if not (math.isfinite(self.T) and self.T >= 0):
            raise ValueError(f"IdmParams.T must be finite and >= 0, got {self.T!r}")

    @property
    def sqrt_ab2(self) -> float:
        """``2 sqrt(a b)``, the denominator of the dynamic desired-gap term."""
        return 2.0 * math.sqrt(self.a * self.b)

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.a, self.b, self.v0, self.delta, self.T, self.s0)


#: Human-driver parameter set used throughout the benchmark scenarios.
DEFAULT_IDM = IdmParams(a=1.3, b=2.0, v0=30.0, delta=4.0, T=1.0, s0=1.0)


@dataclass(frozen=True)
class CfmInput:
    """Inputs to a car-following model for one vehicle at one instant."""

    s: float
    v: float
    dv: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"space gap must be > 0, got {self.s!r}")
        if not self.v >= 0:
            raise ValueError(f"speed must be >= 0, got {self.v!r}")


def idm_desired_gap(v: float, dv: float, p: IdmParams, form: str = GAP_FORM_INTERACTION) -> float:
    """Desired dynamic gap ``s*(v, dv)``.

    With ``form="interaction"`` (default) only the velocity-interaction term is floored at zero::

        s* = s0 + v T + max(0, v * closing) / (2 sqrt(a b))

    ``form="dynamic"`` floors the whole speed-dependent part instead, which keeps ``s*``
    differentiable at every moving equilibrium::

        s* = s0 + max(0, v T + v * closing / (2 sqrt(a b)))
    """
    closing = -dv
    if form == GAP_FORM_INTERACTION:
        return p.s0 + v * p.T + max(0.0, v * closing) / p.sqrt_ab2
    if form == GAP_FORM_DYNAMIC:
        return p.s0 + max(0.0, v * p.T + v * closing / p.sqrt_ab2)
    raise ValueError(f"unknown desired-gap form {form!r}")


def idm_accel_raw(s: float, v: float, dv: float, p: IdmParams, form: str = GAP_FORM_INTERACTION) -> float:
    """Unclamped IDM acceleration. Rejects non-positive gaps."""
    if not s > 0:
        raise ValueError(f"space gap must be > 0, got {s!r}")
    s_star = idm_desired_gap(v, dv, p, form)
    return p.a * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)


def idm_accel_smooth(s: float, v: float, dv: float, p: IdmParams) -> float:
    """IDM without any floor in ``s*``; coincides with the raw law whenever the ego closes in.

    This is the differentiable branch used for linearization about ``dv = 0``.
    """
    s_star = p.s0 + v * p.T - v * dv / p.sqrt_ab2
    return p.a * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)


def clamp_standstill(accel: float, v: float) -> float:
    """A stopped vehicle never commands a negative acceleration."""
    if v == 0.0 and accel < 0.0:
        return 0.0
    return accel


def idm_accel(inp: CfmInput, p: IdmParams, form: str = GAP_FORM_INTERACTION) -> float:
    """IDM acceleration with the standstill clamp applied."""
    return clamp_standstill(idm_accel_raw(inp.s, inp.v, inp.dv, p, form), inp.v)


def equilibrium_gap(v: float, p: IdmParams) -> float:
    """Gap at which IDM yields zero acceleration at speed ``v`` with ``dv = 0``."""
    if not 0 <= v < p.v0:
        raise ValueError(f"no finite equilibrium gap for v={v!r} (need 0 <= v < v0={p.v0})")
    return (p.s0 + v * p.T) / math.sqrt(1.0 - (v / p.v0) ** p.delta)


def equilibrium_speed(gap: float, p: IdmParams) -> float:
    """Inverse of :func:`equilibrium_gap`; 0 for gaps at or below ``s0``."""
    if gap <= p.s0:
        return 0.0
    lo, hi = 0.0, p.v0
    # equilibrium_gap is strictly increasing on [0, v0), so bisection is exact to rounding
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid >= p.v0 or equilibrium_gap(mid, p) > gap:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return lo


# ---------------------------------------------------------------------------
# actuation noise
# ---------------------------------------------------------------------------

NOISE_BLOCK = 4096


@dataclass(frozen=True)
class NoiseSpec:
    std_dev: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.std_dev) and self.std_dev >= 0):
            raise ValueError(f"NoiseSpec.std_dev must be >= 0, got {self.std_dev!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError(f"NoiseSpec.seed must be a 64-bit unsigned integer, got {self.seed!r}")


def _noise_block(seed: int, block: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(block)]).standard_normal(NOISE_BLOCK)


def sample_accel_noise(spec: NoiseSpec, position):
    """Noise value(s) at absolute stream position(s).

    The stream is split into fixed-size blocks, each generated from ``(seed, block_index)``,
    so any position can be addressed directly and agrees with :class:`NoiseStream`.
    Accepts an int or an integer array.
    """
    pos = np.asarray(position, dtype=np.int64)
    if spec.std_dev == 0:
        out = np.zeros(pos.shape)
        return float(out) if out.ndim == 0 else out
    if np.any(pos < 0):
        raise ValueError("stream positions must be non-negative")
    flat = pos.ravel()
    out = np.empty(flat.shape)
    blocks = flat // NOISE_BLOCK
    for blk in np.unique(blocks):
        sel = blocks == blk
        out[sel] = _noise_block(spec.seed, blk)[flat[sel] % NOISE_BLOCK]
    out = spec.std_dev * out.reshape(pos.shape)
    return float(out) if out.ndim == 0 else out


class NoiseStream:
    """Sequential reader over the noise stream of a :class:`NoiseSpec`.

    Owned by a single simulation; not safe to share between threads.
    """

    def __init__(self, spec: NoiseSpec):
        self.spec = spec
        self.position = 0
        self._block_index = -1
        self._block = None

    def draw(self, n: int) -> np.ndarray:
        if self.spec.std_dev == 0:
            self.position += n
            return np.zeros(n)
        out = np.empty(n)
        filled = 0
        while filled < n:
            blk, off = divmod(self.position, NOISE_BLOCK)
            if blk != self._block_index:
                self._block = _noise_block(self.spec.seed, blk)
                self._block_index = blk
            take = min(n - filled, NOISE_BLOCK - off)
            out[filled:filled + take] = self._block[off:off + take]
            filled += take
            self.position += take
        return self.spec.std_dev * out

"""Vectorized numpy implementation of the per-step vehicle update.

Mirrors ``_ckernel.pyx`` operation for operation; used when the compiled module is missing
or when ``STOPGO_PURE_PYTHON=1``.
"""

import numpy as np

from .params import (
    A_MAX, A_MIN, C_A, C_B, C_DELTA, C_GAMMA, C_S0, C_T, C_V0, C_VDES, DT, FAILSAFE, FS_D1, FS_D2, FS_D3,
    FS_X1, FS_X2, FS_X3, GAP_FORM, H_A, H_B, H_DELTA, H_S0, H_T, H_V0, KIND_FS, KIND_HUMAN, KIND_IDMR,
    MIN_GAP, SAFE_DECEL,
)

GAP_FLOOR = 1e-3


def _idm(gap, v, dv, a, b, v0, delta, T, s0, form):
    inter = v * (-dv) / (2.0 * np.sqrt(a * b))
    if form == 0:
        s_star = s0 + v * T + np.maximum(0.0, inter)
    else:
        s_star = s0 + np.maximum(0.0, v * T + inter)
    s = np.maximum(gap, GAP_FLOOR)
    return a * (1.0 - (v / v0) ** delta - (s_star / s) ** 2)


def _fs(gap, v, v_lead, prm):
    dvm = np.minimum(0.0, v_lead - v)
    q = dvm * dvm
    x1 = prm[FS_X1] + q / (2.0 * prm[FS_D1])
    x2 = prm[FS_X2] + q / (2.0 * prm[FS_D2])
    x3 = prm[FS_X3] + q / (2.0 * prm[FS_D3])
    r = prm[C_VDES]
    vv = np.minimum(np.maximum(v_lead, 0.0), r)
    with np.errstate(invalid="ignore"):
        u = np.where(gap <= x1, 0.0,
            np.where(gap <= x2, np.minimum(r, vv * (gap - x1) / (x2 - x1)),
            np.where(gap <= x3, np.minimum(r, vv + (r - vv) * (gap - x2) / (x3 - x2)), r)))
    return np.minimum(np.maximum((u - v) / prm[DT], prm[A_MIN]), prm[A_MAX])


def _fail_safe(a, v, gap, v_lead, v_limit, prm):
    dt = prm[DT]
    a_min = prm[A_MIN]
    a = np.minimum(np.maximum(a, a_min), prm[A_MAX])
    with np.errstate(invalid="ignore"):
        cap = np.maximum((v_limit - v) / dt, a_min)
    a = np.where(np.isfinite(v_limit), np.minimum(a, cap), a)
    if prm[FAILSAFE] == 0.0:
        return a, np.zeros(a.shape, dtype=bool)
    bs = prm[SAFE_DECEL]
    room = gap - prm[MIN_GAP] + v_lead * v_lead / (2.0 * bs)
    rad = dt * dt / 4.0 + (2.0 / bs) * (room - v * dt / 2.0)
    with np.errstate(invalid="ignore"):
        vs = bs * (-dt / 2.0 + np.sqrt(np.maximum(rad, 0.0)))
        stop = -np.maximum(v / dt, v * v / (2.0 * np.maximum(room, GAP_FLOOR)))
        a_safe = np.where((rad >= 0.0) & (vs > 0.0), (vs - v) / dt, stop)
    a_safe = np.where(np.isfinite(gap), a_safe, np.inf)
    emergency = (a_safe < a) & (a_safe < a_min)
    return np.minimum(a, a_safe), emergency


def advance(gap, v, v_lead, v_limit, kind, noise, prm, out_cmd, out_real, out_dx, out_v):
    """One synchronous step for all vehicles. Returns the number of emergency fail-safe interventions."""
    dt = prm[DT]
    form = int(prm[GAP_FORM])
    dv = v_lead - v
    raw = np.empty_like(v)
    hum = kind == KIND_HUMAN
    if hum.any():
        raw[hum] = _idm(gap[hum], v[hum], dv[hum], prm[H_A], prm[H_B], prm[H_V0], prm[H_DELTA],
                        prm[H_T], prm[H_S0], form)
        raw[hum] = np.where((v[hum] == 0.0) & (raw[hum] < 0.0), 0.0, raw[hum])
    idmr = kind == KIND_IDMR
    if idmr.any():
        r = _idm(gap[idmr], v[idmr], dv[idmr], prm[C_A], prm[C_B], prm[C_V0], prm[C_DELTA],
                 prm[C_T], prm[C_S0], form) + prm[C_GAMMA] * (prm[C_VDES] - v[idmr])
        r = np.where((v[idmr] == 0.0) & (r < 0.0), 0.0, r)
        raw[idmr] = np.minimum(np.maximum(r, prm[A_MIN]), prm[A_MAX])
    fs = kind == KIND_FS
    if fs.any():
        raw[fs] = _fs(gap[fs], v[fs], v_lead[fs], prm)

    cmd, _ = _fail_safe(raw, v, gap, v_lead, v_limit, prm)
    real, emerg = _fail_safe(raw + noise, v, gap, v_lead, v_limit, prm)
    vn = v + real * dt
    neg = vn < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dx_stop = np.where(real != 0.0, v * v / (2.0 * np.abs(real)), 0.0)
    out_dx[:] = np.where(neg, dx_stop, v * dt + 0.5 * real * dt * dt)
    out_v[:] = np.where(neg, 0.0, vn)
    out_cmd[:] = cmd
    out_real[:] = real
    return int(emerg.sum())

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step vehicle update; see ``_pykernel.py`` for the reference semantics."""

from libc.math cimport pow, sqrt, fabs, isfinite

cdef enum:
    H_A = 0
    H_B = 1
    H_V0 = 2
    H_DELTA = 3
    H_T = 4
    H_S0 = 5
    GAP_FORM = 6
    DT = 7
    A_MIN = 8
    A_MAX = 9
    FAILSAFE = 10
    SAFE_DECEL = 11
    MIN_GAP = 12
    C_VDES = 13
    C_GAMMA = 14
    C_A = 15
    FS_X1 = 21
    FS_D1 = 24

cdef double GAP_FLOOR = 1e-3


cdef inline double _clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline double _idm(double gap, double v, double dv, const double[::1] prm, int off, int form) nogil:
    cdef double a = prm[off], b = prm[off + 1], v0 = prm[off + 2]
    cdef double delta = prm[off + 3], T = prm[off + 4], s0 = prm[off + 5]
    cdef double inter = v * (-dv) / (2.0 * sqrt(a * b))
    cdef double s_star, s
    if form == 0:
        s_star = s0 + v * T + (inter if inter > 0.0 else 0.0)
    else:
        s_star = v * T + inter
        s_star = s0 + (s_star if s_star > 0.0 else 0.0)
    s = gap if gap > GAP_FLOOR else GAP_FLOOR
    return a * (1.0 - pow(v / v0, delta) - (s_star / s) * (s_star / s))


cdef inline double _fs(double gap, double v, double v_lead, const double[::1] prm) nogil:
    cdef double dvm = v_lead - v
    if dvm > 0.0:
        dvm = 0.0
    cdef double q = dvm * dvm
    cdef double x1 = prm[FS_X1] + q / (2.0 * prm[FS_D1])
    cdef double x2 = prm[FS_X1 + 1] + q / (2.0 * prm[FS_D1 + 1])
    cdef double x3 = prm[FS_X1 + 2] + q / (2.0 * prm[FS_D1 + 2])
    cdef double r = prm[C_VDES]
    cdef double vv = _clip(v_lead, 0.0, r)
    cdef double u
    if gap <= x1:
        u = 0.0
    elif gap <= x2:
        u = vv * (gap - x1) / (x2 - x1)
    elif gap <= x3:
        u = vv + (r - vv) * (gap - x2) / (x3 - x2)
    else:
        u = r
    if u > r:
        u = r  # blend rounding can overshoot by an ulp
    return _clip((u - v) / prm[DT], prm[A_MIN], prm[A_MAX])


cdef inline double _fail_safe(double a, double v, double gap, double v_lead, double v_limit,
                              const double[::1] prm, int* emergency) nogil:
    cdef double dt = prm[DT], a_min = prm[A_MIN]
    cdef double cap, bs, room, rad, vs, a_safe
    a = _clip(a, a_min, prm[A_MAX])
    if isfinite(v_limit):
        cap = (v_limit - v) / dt
        if cap < a_min:
            cap = a_min
        if cap < a:
            a = cap
    emergency[0] = 0
    if prm[FAILSAFE] == 0.0 or not isfinite(gap):
        return a
    bs = prm[SAFE_DECEL]
    room = gap - prm[MIN_GAP] + v_lead * v_lead / (2.0 * bs)
    rad = dt * dt / 4.0 + (2.0 / bs) * (room - v * dt / 2.0)
    vs = bs * (-dt / 2.0 + sqrt(rad if rad > 0.0 else 0.0))
    if rad >= 0.0 and vs > 0.0:
        a_safe = (vs - v) / dt
    else:
        a_safe = v * v / (2.0 * (room if room > GAP_FLOOR else GAP_FLOOR))
        if v / dt > a_safe:
            a_safe = v / dt
        a_safe = -a_safe
    if a_safe < a:
        if a_safe < a_min:
            emergency[0] = 1
        return a_safe
    return a


def advance(const double[::1] gap, const double[::1] v, const double[::1] v_lead,
            const double[::1] v_limit, const signed char[::1] kind, const double[::1] noise,
            const double[::1] prm, double[::1] out_cmd, double[::1] out_real,
            double[::1] out_dx, double[::1] out_v):
    """One synchronous step for all vehicles. Returns the number of emergency fail-safe interventions."""
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double dt = prm[DT], raw, real, vn, dv
    cdef int form = <int>prm[GAP_FORM]
    cdef int flag = 0, count = 0
    with nogil:
        for i in range(n):
            dv = v_lead[i] - v[i]
            if kind[i] == 0:
                raw = _idm(gap[i], v[i], dv, prm, H_A, form)
                if v[i] == 0.0 and raw < 0.0:
                    raw = 0.0
            elif kind[i] == 1:
                raw = _idm(gap[i], v[i], dv, prm, C_A, form) + prm[C_GAMMA] * (prm[C_VDES] - v[i])
                if v[i] == 0.0 and raw < 0.0:
                    raw = 0.0
                raw = _clip(raw, prm[A_MIN], prm[A_MAX])
            else:
                raw = _fs(gap[i], v[i], v_lead[i], prm)
            out_cmd[i] = _fail_safe(raw, v[i], gap[i], v_lead[i], v_limit[i], prm, &flag)
            real = _fail_safe(raw + noise[i], v[i], gap[i], v_lead[i], v_limit[i], prm, &flag)
            count += flag
            vn = v[i] + real * dt
            if vn < 0.0:
                out_dx[i] = v[i] * v[i] / (2.0 * fabs(real)) if real != 0.0 else 0.0
                out_v[i] = 0.0
            else:
                out_dx[i] = v[i] * dt + 0.5 * real * dt * dt
                out_v[i] = vn
            out_real[i] = real
    return count

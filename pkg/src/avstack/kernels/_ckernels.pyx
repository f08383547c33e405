# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the functions in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, log, cos, sin, fabs, INFINITY
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    GREEN = 0
    YELLOW = 1
    RED = 2


def bin_height_grid(xyz, double ox, double oy, double res, int nx, int ny):
    cdef double[:, ::1] p = np.ascontiguousarray(xyz, dtype=np.float64).reshape(-1, 3)
    min_arr = np.full((nx, ny), np.inf)
    max_arr = np.full((nx, ny), -np.inf)
    cnt_arr = np.zeros((nx, ny), dtype=np.int64)
    cdef double[:, ::1] mn = min_arr
    cdef double[:, ::1] mx = max_arr
    cdef long long[:, ::1] cnt = cnt_arr
    cdef Py_ssize_t k, n = p.shape[0]
    cdef double fi, fj, z
    cdef long i, j
    cdef long dropped = 0
    for k in range(n):
        fi = floor((p[k, 0] - ox) / res)
        fj = floor((p[k, 1] - oy) / res)
        if not (fi >= 0 and fi < nx and fj >= 0 and fj < ny):
            dropped += 1
            continue
        i = <long>fi
        j = <long>fj
        z = p[k, 2]
        if z < mn[i, j]:
            mn[i, j] = z
        if z > mx[i, j]:
            mx[i, j] = z
        cnt[i, j] += 1
    return min_arr, max_arr, cnt_arr, int(dropped)


def virtual_scan_keep(pts, valid, double thr, double steep_sin):
    cdef double[:, :, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] V = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t rows = V.shape[0], cols = V.shape[1]
    keep_arr = np.asarray(V).copy()
    cdef cnp.uint8_t[:, ::1] K = keep_arr
    cdef Py_ssize_t c, r, m, k
    cdef long *chain = <long *> malloc(rows * sizeof(long))
    cdef double abx, aby, abz, bcx, bcy, bcz, nab, nbc, dot, fa, fb
    try:
        for c in range(cols):
            m = 0
            for r in range(rows - 1, -1, -1):
                if V[r, c]:
                    chain[m] = r
                    m += 1
            for k in range(1, m - 1):
                abx = P[chain[k], c, 0] - P[chain[k - 1], c, 0]
                aby = P[chain[k], c, 1] - P[chain[k - 1], c, 1]
                abz = P[chain[k], c, 2] - P[chain[k - 1], c, 2]
                bcx = P[chain[k + 1], c, 0] - P[chain[k], c, 0]
                bcy = P[chain[k + 1], c, 1] - P[chain[k], c, 1]
                bcz = P[chain[k + 1], c, 2] - P[chain[k], c, 2]
                nab = sqrt(abx * abx + aby * aby + abz * abz)
                nbc = sqrt(bcx * bcx + bcy * bcy + bcz * bcz)
                if nab == 0.0 or nbc == 0.0:
                    continue
                dot = (abx * bcx + aby * bcy + abz * bcz) / (nab * nbc)
                fa = fabs(abz) / nab
                fb = fabs(bcz) / nbc
                if fabs(dot) > thr and (fa if fa < fb else fb) < steep_sin:
                    K[chain[k], c] = 0
    finally:
        free(chain)
    return keep_arr


cdef inline void _slab(double o, double d, double lo, double hi, double *tmin, double *tmax) noexcept nogil:
    cdef double t1, t2
    if d == 0.0:
        if o < lo or o > hi:
            tmin[0] = INFINITY
            tmax[0] = -INFINITY
        return
    t1 = (lo - o) / d
    t2 = (hi - o) / d
    if t1 > t2:
        t1, t2 = t2, t1
    if t1 > tmin[0]:
        tmin[0] = t1
    if t2 < tmax[0]:
        tmax[0] = t2


def raycast(origin, dirs, boxes, bint ground, double max_range):
    cdef double[:, ::1] D = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] B = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 7)
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef Py_ssize_t n = D.shape[0], nb = B.shape[0], i, b
    out = np.empty(n)
    cdef double[::1] best = out
    cdef double t, c, s, lx, ly, ldx, ldy, tmin, tmax, dx, dy, dz
    cdef double *cs = <double *> malloc((2 * nb + 1) * sizeof(double))
    try:
        for b in range(nb):
            cs[2 * b] = cos(B[b, 2])
            cs[2 * b + 1] = sin(B[b, 2])
        with nogil:
            for i in range(n):
                dx = D[i, 0]
                dy = D[i, 1]
                dz = D[i, 2]
                t = INFINITY
                if ground and dz < 0.0:
                    t = -oz / dz
                for b in range(nb):
                    c = cs[2 * b]
                    s = cs[2 * b + 1]
                    lx = c * (ox - B[b, 0]) + s * (oy - B[b, 1])
                    ly = -s * (ox - B[b, 0]) + c * (oy - B[b, 1])
                    ldx = c * dx + s * dy
                    ldy = -s * dx + c * dy
                    tmin = 0.0
                    tmax = INFINITY
                    _slab(lx, ldx, -B[b, 3], B[b, 3], &tmin, &tmax)
                    _slab(ly, ldy, -B[b, 4], B[b, 4], &tmin, &tmax)
                    _slab(oz, dz, B[b, 5], B[b, 6], &tmin, &tmax)
                    if tmin <= tmax and tmin < t:
                        t = tmin
                if t > max_range:
                    t = INFINITY
                best[i] = t
    finally:
        free(cs)
    return out


# --- UCT over the longitudinal MDP ---

cdef struct Params:
    double dt, gamma, p1, p2, p3, v_max, v_cruise, stop_tl, stop_veh, c
    double acc[3]
    bint greedy
    int max_depth


cdef struct Tree:
    int cap, count
    double *sv
    double *sdphi
    double *sdv
    int *sphi
    long *N
    long *n
    double *q
    int *child
    uint64_t rng


cdef inline double _rand(Tree *t) noexcept nogil:
    cdef uint64_t z
    t.rng += <uint64_t>0x9E3779B97F4A7C15
    z = t.rng
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    z = z ^ (z >> 31)
    return (z >> 11) * (1.0 / 9007199254740992.0)


cdef inline double _ref_speed(double dphi, int phi, double dv, Params *p) noexcept nogil:
    if dv < p.stop_veh or (phi == RED and dphi < p.stop_tl):
        return 0.0
    return p.v_cruise


cdef inline int _next_phi(int phi, double u, Params *p) noexcept nogil:
    if phi == GREEN:
        return YELLOW if u < p.p1 else GREEN
    if phi == YELLOW:
        return RED if u < p.p2 else YELLOW
    if phi == RED:
        return GREEN if u < p.p3 else RED
    return phi


cdef inline void _step(Tree *t, Params *p, double v, double dphi, int phi, double dv, int a,
                       double *v2, double *dphi2, int *phi2, double *dv2) noexcept nogil:
    cdef double x = v + p.acc[a] * p.dt
    if x < 0.0:
        x = 0.0
    if x > p.v_max:
        x = p.v_max
    v2[0] = x
    x = dphi - v * p.dt
    if x < 0.0:
        x = 0.0
    dphi2[0] = x
    x = dv - v * p.dt
    if x < 0.0:
        x = 0.0
    dv2[0] = x
    phi2[0] = _next_phi(phi, _rand(t), p)


cdef inline double _reward(double v, double dphi, int phi, double dv, Params *p) noexcept nogil:
    cdef double e = v - _ref_speed(dphi, phi, dv, p)
    return -(e * e)


cdef int _rollout_action(Tree *t, Params *p, double v, double dphi, int phi, double dv) noexcept nogil:
    cdef int a, best
    cdef double dphi2, dv2, vref, v2, e, best_e
    if not p.greedy:
        a = <int>(_rand(t) * 3.0)
        return 2 if a > 2 else a
    dphi2 = dphi - v * p.dt
    if dphi2 < 0.0:
        dphi2 = 0.0
    dv2 = dv - v * p.dt
    if dv2 < 0.0:
        dv2 = 0.0
    vref = _ref_speed(dphi2, phi, dv2, p)
    best = 0
    best_e = INFINITY
    for a in range(3):
        v2 = v + p.acc[a] * p.dt
        if v2 < 0.0:
            v2 = 0.0
        if v2 > p.v_max:
            v2 = p.v_max
        e = (v2 - vref) * (v2 - vref)
        if e < best_e:
            best = a
            best_e = e
    return best


cdef double _rollout(Tree *t, Params *p, double v, double dphi, int phi, double dv, int depth) noexcept nogil:
    cdef double total = 0.0, disc = 1.0
    cdef int a
    while depth < p.max_depth:
        a = _rollout_action(t, p, v, dphi, phi, dv)
        _step(t, p, v, dphi, phi, dv, a, &v, &dphi, &phi, &dv)
        total += disc * _reward(v, dphi, phi, dv, p)
        disc *= p.gamma
        depth += 1
    return total


cdef int _add(Tree *t, double v, double dphi, int phi, double dv) noexcept nogil:
    cdef int k = t.count, j
    t.sv[k] = v
    t.sdphi[k] = dphi
    t.sphi[k] = phi
    t.sdv[k] = dv
    t.N[k] = 0
    for j in range(3):
        t.n[3 * k + j] = 0
        t.q[3 * k + j] = 0.0
    for j in range(12):
        t.child[12 * k + j] = -1
    t.count += 1
    return k


cdef int _select(Tree *t, Params *p, int k) noexcept nogil:
    cdef int a, best = 0
    cdef double log_n, u, best_u = -INFINITY
    for a in range(3):
        if t.n[3 * k + a] == 0:
            return a
    log_n = log(<double>t.N[k])
    for a in range(3):
        u = t.q[3 * k + a] + p.c * sqrt(log_n / t.n[3 * k + a])
        if u > best_u:
            best = a
            best_u = u
    return best


cdef double _simulate(Tree *t, Params *p, int k, int depth) noexcept nogil:
    cdef int a, phi2, ch
    cdef double v2, dphi2, dv2, r, ret
    if depth >= p.max_depth:
        return 0.0
    a = _select(t, p, k)
    _step(t, p, t.sv[k], t.sdphi[k], t.sphi[k], t.sdv[k], a, &v2, &dphi2, &phi2, &dv2)
    r = _reward(v2, dphi2, phi2, dv2, p)
    ch = t.child[12 * k + 4 * a + phi2]
    if ch < 0:
        if t.count < t.cap:
            t.child[12 * k + 4 * a + phi2] = _add(t, v2, dphi2, phi2, dv2)
        ret = r + p.gamma * _rollout(t, p, v2, dphi2, phi2, dv2, depth + 1)
    else:
        ret = r + p.gamma * _simulate(t, p, ch, depth + 1)
    t.N[k] += 1
    t.n[3 * k + a] += 1
    t.q[3 * k + a] += (ret - t.q[3 * k + a]) / t.n[3 * k + a]
    return ret


def uct_plan(double v, double dphi, int phi, double dv, params, long budget, int max_depth, seed):
    cdef Params p
    (p.dt, p.gamma, p.p1, p.p2, p.p3, p.acc[0], p.acc[1], p.acc[2], p.v_max,
     p.v_cruise, p.stop_tl, p.stop_veh, p.c, p.greedy) = params
    p.max_depth = max_depth
    cdef Tree t
    cdef int cap = budget + 1, a, best = 0, root
    cdef long it
    cdef double best_q = -INFINITY
    t.cap = cap
    t.count = 0
    t.rng = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    t.sv = <double *> malloc(cap * sizeof(double))
    t.sdphi = <double *> malloc(cap * sizeof(double))
    t.sdv = <double *> malloc(cap * sizeof(double))
    t.sphi = <int *> malloc(cap * sizeof(int))
    t.N = <long *> malloc(cap * sizeof(long))
    t.n = <long *> malloc(3 * cap * sizeof(long))
    t.q = <double *> malloc(3 * cap * sizeof(double))
    t.child = <int *> malloc(12 * cap * sizeof(int))
    try:
        with nogil:
            root = _add(&t, v, dphi, phi, dv)
            for it in range(budget):
                _simulate(&t, &p, root, 0)
            for a in range(3):
                if t.n[a] > 0 and t.q[a] > best_q:
                    best = a
                    best_q = t.q[a]
        return best, (t.q[0], t.q[1], t.q[2]), (t.n[0], t.n[1], t.n[2])
    finally:
        free(t.sv); free(t.sdphi); free(t.sdv); free(t.sphi)
        free(t.N); free(t.n); free(t.q); free(t.child)

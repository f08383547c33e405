"""Pure-Python/numpy implementations of the hot loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating-point evaluation order, so both backends return
identical results (the UCT planner shares its RNG bit-for-bit).
"""

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

GREEN, YELLOW, RED, NONE = 0, 1, 2, 3


class SplitMix64:
    """Tiny deterministic RNG shared by both kernel backends."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


def bin_height_grid(xyz, ox, oy, res, nx, ny):
    xyz = np.ascontiguousarray(xyz, dtype=np.float64)
    min_z = np.full((nx, ny), np.inf)
    max_z = np.full((nx, ny), -np.inf)
    count = np.zeros((nx, ny), dtype=np.int64)
    if len(xyz) == 0:
        return min_z, max_z, count, 0
    i = np.floor((xyz[:, 0] - ox) / res)
    j = np.floor((xyz[:, 1] - oy) / res)
    inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
    i = i[inside].astype(np.int64)
    j = j[inside].astype(np.int64)
    z = xyz[inside, 2]
    np.minimum.at(min_z, (i, j), z)
    np.maximum.at(max_z, (i, j), z)
    np.add.at(count, (i, j), 1)
    return min_z, max_z, count, int(len(xyz) - inside.sum())


def virtual_scan_keep(pts, valid, thr, steep_sin):
    """Keep-mask for a depth image reconstructed into (rows, cols, 3) points.

    Each column is walked from the bottom row upward over valid pixels only.
    The middle point B of a consecutive triple is dropped when the unit
    vectors AB and BC are (anti-)parallel beyond ``thr`` and at least one of
    them is flatter than ``steep_sin`` (vertical component of the unit vector).
    """
    rows, cols = valid.shape
    keep = valid.astype(np.uint8).copy()
    for c in range(cols):
        chain = [r for r in range(rows - 1, -1, -1) if valid[r, c]]
        for k in range(1, len(chain) - 1):
            a = pts[chain[k - 1], c]
            b = pts[chain[k], c]
            d = pts[chain[k + 1], c]
            ab = b - a
            bc = d - b
            nab = math.sqrt(ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2])
            nbc = math.sqrt(bc[0] * bc[0] + bc[1] * bc[1] + bc[2] * bc[2])
            if nab == 0.0 or nbc == 0.0:
                continue
            dot = (ab[0] * bc[0] + ab[1] * bc[1] + ab[2] * bc[2]) / (nab * nbc)
            flat = min(abs(ab[2]) / nab, abs(bc[2]) / nbc) < steep_sin
            if abs(dot) > thr and flat:
                keep[chain[k], c] = 0
    return keep


def raycast(origin, dirs, boxes, ground, max_range):
    """Distance along unit rays to the first hit, ``inf`` when nothing is hit.

    ``boxes`` rows are (cx, cy, yaw, half_length, half_width, z_bottom, z_top).
    The ground is the plane z = 0.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 7)
    ox, oy, oz = (float(v) for v in origin)
    n = len(dirs)
    best = np.full(n, np.inf)
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    if ground:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(dz < 0.0, -oz / dz, np.inf)
        best = np.minimum(best, tg)
    for cx, cy, yaw, hl, hw, z0, z1 in boxes:
        c, s = math.cos(yaw), math.sin(yaw)
        lx = c * (ox - cx) + s * (oy - cy)
        ly = -s * (ox - cx) + c * (oy - cy)
        ldx = c * dx + s * dy
        ldy = -s * dx + c * dy
        tmin = np.zeros(n)
        tmax = np.full(n, np.inf)
        for o, d, lo, hi in ((lx, ldx, -hl, hl), (ly, ldy, -hw, hw), (oz, dz, z0, z1)):
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - o) / d
                t2 = (hi - o) / d
            parallel = d == 0.0
            inside = (o >= lo) & (o <= hi)
            t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
            t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
            tmin = np.maximum(tmin, t_near)
            tmax = np.minimum(tmax, t_far)
        hit = tmin <= tmax
        best = np.where(hit & (tmin < best), tmin, best)
    best[best > max_range] = np.inf
    return best


# --- UCT over the longitudinal MDP ---


def _ref_speed(dphi, phi, dv, v_cruise, stop_tl, stop_veh):
    if dv < stop_veh or (phi == RED and dphi < stop_tl):
        return 0.0
    return v_cruise


def _next_phi(phi, u, p1, p2, p3):
    if phi == GREEN:
        return YELLOW if u < p1 else GREEN
    if phi == YELLOW:
        return RED if u < p2 else YELLOW
    if phi == RED:
        return GREEN if u < p3 else RED
    return phi


class _Planner:
    def __init__(self, params, budget, max_depth, seed):
        (self.dt, self.gamma, self.p1, self.p2, self.p3, a_brake, a_stay, a_acc, self.v_max,
         self.v_cruise, self.stop_tl, self.stop_veh, self.c, self.greedy) = params
        self.acc = (a_brake, a_stay, a_acc)
        self.max_depth = max_depth
        self.rng = SplitMix64(seed)
        cap = budget + 1
        self.cap = cap
        self.sv = [0.0] * cap
        self.sdphi = [0.0] * cap
        self.sdv = [0.0] * cap
        self.sphi = [0] * cap
        self.N = [0] * cap
        self.n = [[0, 0, 0] for _ in range(cap)]
        self.q = [[0.0, 0.0, 0.0] for _ in range(cap)]
        self.child = [[[-1] * 4 for _ in range(3)] for _ in range(cap)]
        self.count = 0

    def add(self, v, dphi, phi, dv):
        k = self.count
        self.sv[k], self.sdphi[k], self.sphi[k], self.sdv[k] = v, dphi, phi, dv
        self.count += 1
        return k

    def step(self, v, dphi, phi, dv, a):
        dt = self.dt
        v2 = v + self.acc[a] * dt
        if v2 < 0.0:
            v2 = 0.0
        if v2 > self.v_max:
            v2 = self.v_max
        dphi2 = dphi - v * dt
        if dphi2 < 0.0:
            dphi2 = 0.0
        dv2 = dv - v * dt
        if dv2 < 0.0:
            dv2 = 0.0
        phi2 = _next_phi(phi, self.rng.random(), self.p1, self.p2, self.p3)
        return v2, dphi2, phi2, dv2

    def reward(self, v, dphi, phi, dv):
        e = v - _ref_speed(dphi, phi, dv, self.v_cruise, self.stop_tl, self.stop_veh)
        return -(e * e)

    def rollout_action(self, v, dphi, phi, dv):
        if not self.greedy:
            a = int(self.rng.random() * 3.0)
            return 2 if a > 2 else a
        dt = self.dt
        dphi2 = dphi - v * dt
        if dphi2 < 0.0:
            dphi2 = 0.0
        dv2 = dv - v * dt
        if dv2 < 0.0:
            dv2 = 0.0
        vref = _ref_speed(dphi2, phi, dv2, self.v_cruise, self.stop_tl, self.stop_veh)
        best, best_e = 0, math.inf
        for a in range(3):
            v2 = v + self.acc[a] * dt
            if v2 < 0.0:
                v2 = 0.0
            if v2 > self.v_max:
                v2 = self.v_max
            e = (v2 - vref) * (v2 - vref)
            if e < best_e:
                best, best_e = a, e
        return best

    def rollout(self, v, dphi, phi, dv, depth):
        total, disc = 0.0, 1.0
        while depth < self.max_depth:
            a = self.rollout_action(v, dphi, phi, dv)
            v, dphi, phi, dv = self.step(v, dphi, phi, dv, a)
            total += disc * self.reward(v, dphi, phi, dv)
            disc *= self.gamma
            depth += 1
        return total

    def select(self, k):
        n = self.n[k]
        for a in range(3):
            if n[a] == 0:
                return a
        q = self.q[k]
        log_n = math.log(self.N[k])
        best, best_u = 0, -math.inf
        for a in range(3):
            u = q[a] + self.c * math.sqrt(log_n / n[a])
            if u > best_u:
                best, best_u = a, u
        return best

    def simulate(self, k, depth):
        if depth >= self.max_depth:
            return 0.0
        a = self.select(k)
        v2, dphi2, phi2, dv2 = self.step(self.sv[k], self.sdphi[k], self.sphi[k], self.sdv[k], a)
        r = self.reward(v2, dphi2, phi2, dv2)
        ch = self.child[k][a][phi2]
        if ch < 0:
            if self.count < self.cap:
                self.child[k][a][phi2] = self.add(v2, dphi2, phi2, dv2)
            ret = r + self.gamma * self.rollout(v2, dphi2, phi2, dv2, depth + 1)
        else:
            ret = r + self.gamma * self.simulate(ch, depth + 1)
        self.N[k] += 1
        self.n[k][a] += 1
        self.q[k][a] += (ret - self.q[k][a]) / self.n[k][a]
        return ret


def uct_plan(v, dphi, phi, dv, params, budget, max_depth, seed):
    """Return (best_action, q_values, visit_counts) at the root."""
    p = _Planner(params, budget, max_depth, seed)
    root = p.add(v, dphi, phi, dv)
    for _ in range(budget):
        p.simulate(root, 0)
    best, best_q = 0, -math.inf
    for a in range(3):
        if p.n[root][a] > 0 and p.q[root][a] > best_q:
            best, best_q = a, p.q[root][a]
    return best, tuple(p.q[root]), tuple(p.n[root])

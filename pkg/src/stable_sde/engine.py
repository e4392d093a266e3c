"""Path simulation of dX = A(X-) dZ, first exit and first hitting.

Two schemes are available:

``fixed``
    Euler steps ``X += A(X) dZ`` with exact stable increments of length ``dt``.
    No truncation bias; exits are detected at grid points only.
``jump-adapted``
    Driver jumps larger than ``beta`` are placed at their exact Poisson times
    and applied through ``A`` evaluated at the pre-jump state.  Between them
    the small-jump part moves the state by a Gaussian surrogate of matched
    variance over sub-steps of at most ``dt``.

Every path draws from its own counter-based stream addressed by
``(seed, path_id, step, slot)``, so results do not depend on batching.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numba as nb
import numpy as np

from .field import MatrixField, eval_matrix, kernel_args, scaled_field  # noqa: F401
from .rng import normal_from_pair, uniform_pair
from .stable_driver import (JumpEvent, StableParams, TruncationScheme, cms_standard,
                            large_jump_rate, small_jump_variance)

FIXED = "fixed"
JUMP_ADAPTED = "jump-adapted"
_MODES = {FIXED: 0, JUMP_ADAPTED: 1}

# flag bits of batch results
EXITED = 1
CAPPED = 2
STEP_CAPPED = 4
HIT = 8

_KIND_NONE, _KIND_BALL, _KIND_BOX, _KIND_ALL = -1, 0, 1, 2


@dataclass(frozen=True)
class PathScheme:
    mode: str = FIXED
    dt: float = 1e-3
    truncation: TruncationScheme | None = None
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {sorted(_MODES)}, got {self.mode!r}")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.mode == JUMP_ADAPTED and self.truncation is None:
            raise ValueError("jump-adapted mode needs a truncation scheme")
        if self.mode == FIXED and self.truncation is not None:
            raise ValueError("a truncation scheme only applies to jump-adapted mode")

    @classmethod
    def jump_adapted(cls, beta: float, dt: float = 1e-2, max_steps: int = 10_000_000):
        return cls(JUMP_ADAPTED, dt, TruncationScheme(beta), max_steps)

    def with_dt(self, dt: float) -> "PathScheme":
        return PathScheme(self.mode, dt, self.truncation, self.max_steps)

    def describe(self) -> dict:
        out = {"mode": self.mode, "dt": self.dt, "max_steps": self.max_steps}
        if self.truncation is not None:
            out["beta"] = self.truncation.beta
            out["small_jumps"] = "gaussian-surrogate"
        else:
            out["small_jumps"] = "exact"
        if self.mode == FIXED:
            out["exit_detection"] = "grid"
        return out


@dataclass(frozen=True)
class Domain:
    """Open ball (``radius``) or open box (``half_widths``) around ``center``."""

    kind: str
    center: tuple[float, ...]
    radius: float | None = None
    half_widths: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0.0:
                raise ValueError("a ball needs a positive radius")
        elif self.kind == "box":
            if self.half_widths is None or len(self.half_widths) != len(self.center) \
                    or min(self.half_widths) <= 0.0:
                raise ValueError("a box needs positive half-widths, one per coordinate")
        else:
            raise ValueError(f"domain kind must be 'ball' or 'box', got {self.kind!r}")

    @classmethod
    def ball(cls, center, radius: float) -> "Domain":
        return cls("ball", tuple(float(c) for c in np.atleast_1d(center)), float(radius))

    @classmethod
    def box(cls, center, half_widths) -> "Domain":
        c = tuple(float(v) for v in np.atleast_1d(center))
        hw = np.broadcast_to(np.asarray(half_widths, dtype=float), (len(c),))
        return cls("box", c, None, tuple(float(v) for v in hw))

    @classmethod
    def cube(cls, center, side: float) -> "Domain":
        c = np.atleast_1d(center)
        return cls.box(c, np.full(len(c), 0.5 * side))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(2.0 * np.asarray(self.half_widths)))
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        if self.kind == "ball":
            return bool(np.sum((x - c) ** 2) < self.radius**2)
        return bool(np.all(np.abs(x - c) < np.asarray(self.half_widths)))

    def contains_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        c = np.asarray(self.center)
        if self.kind == "ball":
            return np.sum((xs - c) ** 2, axis=-1) < self.radius**2
        return np.all(np.abs(xs - c) < np.asarray(self.half_widths), axis=-1)

    def is_subset_of(self, other: "Domain") -> bool:
        """Sufficient geometric test for ``self`` inside ``other``."""
        c = np.asarray(self.center)
        oc = np.asarray(other.center)
        if self.kind == "box":
            corners = np.array(np.meshgrid(*[[ci - h, ci + h] for ci, h in
                                             zip(c, self.half_widths)])).reshape(self.dim, -1).T
            if other.kind == "box":
                return bool(np.all(np.abs(corners - oc) <= np.asarray(other.half_widths)))
            return bool(np.all(np.sum((corners - oc) ** 2, axis=1) <= other.radius**2))
        if other.kind == "ball":
            return float(np.linalg.norm(c - oc)) + self.radius <= other.radius
        return bool(np.all(np.abs(c - oc) + self.radius <= np.asarray(other.half_widths)))

    def encode(self) -> tuple[int, np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        if self.kind == "ball":
            return _KIND_BALL, c, np.array([self.radius], dtype=float)
        return _KIND_BOX, c, np.asarray(self.half_widths, dtype=float)

    def describe(self) -> dict:
        out = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "ball":
            out["radius"] = self.radius
        else:
            out["half_widths"] = list(self.half_widths)
        return out


def _encode(domain: Domain | None, d: int, absent: int = _KIND_NONE):
    if domain is None:
        return absent, np.zeros(d), np.ones(1)
    if domain.dim != d:
        raise ValueError(f"domain has dimension {domain.dim}, field has {d}")
    return domain.encode()


@dataclass
class PathSample:
    times: np.ndarray
    states: np.ndarray
    events: list[str]
    jumps: list[JumpEvent]
    pre_jump_states: np.ndarray
    metadata: dict = dc_field(default_factory=dict)

    @property
    def truncated(self) -> bool:
        return bool(self.metadata.get("step_cap_hit", False))


@dataclass(frozen=True)
class ExitRecord:
    exited: bool
    tau: float
    state_pre: np.ndarray
    state_post: np.ndarray
    steps_used: int
    capped: bool = False
    jump_axis: int | None = None  # 1-based; None when the exit was not a large jump
    jump_size: float | None = None


@dataclass
class ExitBatch:
    """Per-path results of a batch run, aligned on ``path_ids``."""

    path_ids: np.ndarray
    tau: np.ndarray
    state_pre: np.ndarray
    state_post: np.ndarray
    steps: np.ndarray
    flags: np.ndarray
    hit_time: np.ndarray
    occupation: np.ndarray
    jump_axis: np.ndarray
    jump_size: np.ndarray

    @property
    def exited(self) -> np.ndarray:
        return (self.flags & EXITED) != 0

    @property
    def capped(self) -> np.ndarray:
        return (self.flags & (CAPPED | STEP_CAPPED)) != 0

    @property
    def hit(self) -> np.ndarray:
        return (self.flags & HIT) != 0

    def record(self, i: int) -> ExitRecord:
        axis = int(self.jump_axis[i])
        return ExitRecord(bool(self.exited[i]), float(self.tau[i]), self.state_pre[i].copy(),
                          self.state_post[i].copy(), int(self.steps[i]), bool(self.capped[i]),
                          axis + 1 if axis >= 0 else None,
                          float(self.jump_size[i]) if axis >= 0 else None)


# --- kernels ------------------------------------------------------------------

@nb.njit(inline="always", cache=True)
def _inside(kind, c, r, x):
    if kind == 2:
        return True
    if kind == 0:
        s = 0.0
        for i in range(x.shape[0]):
            s += (x[i] - c[i]) ** 2
        return s < r[0] * r[0]
    for i in range(x.shape[0]):
        if abs(x[i] - c[i]) >= r[i]:
            return False
    return True


@nb.njit(inline="always", cache=True)
def _advance(mode, x, xmid, xnew, amat, dz, stack, fops, fargs, foffs, fconst, fmat,
             alpha, scale, h_max, beta, lam, sigma, seed, path, k):
    """One step from ``x``; fills ``xmid`` (pre-jump) and ``xnew``.

    Returns ``(h, axis, size)`` with ``axis = -1`` when no large jump occurred.
    """
    d = x.shape[0]
    eval_matrix(fops, fargs, foffs, fconst, fmat, x, stack, amat)
    if mode == 0:
        factor = scale * h_max ** (1.0 / alpha)
        for j in range(d):
            u, w = uniform_pair(seed, path, k, j)
            dz[j] = factor * cms_standard(alpha, u, w)
        for i in range(d):
            s = 0.0
            for j in range(d):
                s += amat[i, j] * dz[j]
            xnew[i] = x[i] + s
            xmid[i] = xnew[i]
        return h_max, -1, 0.0
    u_wait, u_axis = uniform_pair(seed, path, k, 0)
    wait = -math.log(u_wait) / lam
    jump = wait <= h_max
    h = wait if jump else h_max
    sh = sigma * math.sqrt(h)
    for j in range(d):
        u1, u2 = uniform_pair(seed, path, k, 2 + j)
        dz[j] = sh * normal_from_pair(u1, u2)
    for i in range(d):
        s = 0.0
        for j in range(d):
            s += amat[i, j] * dz[j]
        xmid[i] = x[i] + s
    if not jump:
        for i in range(d):
            xnew[i] = xmid[i]
        return h, -1, 0.0
    u_size, _unused = uniform_pair(seed, path, k, 1)
    code = int(u_axis * 2 * d)
    if code >= 2 * d:
        code = 2 * d - 1
    axis = code // 2
    size = beta * u_size ** (-1.0 / alpha)
    if code % 2 == 1:
        size = -size
    eval_matrix(fops, fargs, foffs, fconst, fmat, xmid, stack, amat)
    for i in range(d):
        xnew[i] = xmid[i] + amat[i, axis] * size
    return h, axis, size


@nb.njit(parallel=True, cache=True)
def _exit_kernel(fops, fargs, foffs, fconst, fmat, stack_size,
                 alpha, scale, mode, dt, beta, lam, sigma,
                 x0s, dom_kind, dom_c, dom_r, occ_kind, occ_c, occ_r, tgt_kind, tgt_c, tgt_r,
                 stop_on_hit, t_cap, max_steps, seed, path_offset,
                 out_tau, out_pre, out_post, out_steps, out_flags, out_hit_t, out_occ,
                 out_jaxis, out_jsize):
    n = out_tau.shape[0]
    d = x0s.shape[1]
    for p in nb.prange(n):
        pi = np.int64(p)
        path = path_offset + pi
        row = pi if x0s.shape[0] > 1 else np.int64(0)
        x = x0s[row].copy()
        xmid = np.empty(d)
        xnew = np.empty(d)
        amat = np.empty((d, d))
        dz = np.empty(d)
        stack = np.empty(stack_size)
        t = 0.0
        k = 0
        flags = 0
        occ = 0.0
        occ_steps = 0
        hit_t = -1.0
        jaxis = -1
        jsize = 0.0
        pre = x.copy()
        post = x.copy()
        done = False
        if tgt_kind >= 0 and _inside(tgt_kind, tgt_c, tgt_r, x):
            flags |= 8
            hit_t = 0.0
            done = stop_on_hit
        if not done and not _inside(dom_kind, dom_c, dom_r, x):
            flags |= 1
            done = True
        while not done:
            if mode == 0:
                if (k + 1) * dt > t_cap * (1.0 + 1e-12):
                    flags |= 2
                    break
                h_max = dt
            else:
                if t >= t_cap:
                    flags |= 2
                    break
                h_max = min(dt, t_cap - t)
            if k >= max_steps:
                flags |= 4
                break
            h, axis, size = _advance(mode, x, xmid, xnew, amat, dz, stack, fops, fargs, foffs,
                                     fconst, fmat, alpha, scale, h_max, beta, lam, sigma,
                                     seed, path, k)
            if occ_kind >= 0 and _inside(occ_kind, occ_c, occ_r, x):
                occ += h
                occ_steps += 1
            k += 1
            t_new = k * dt if mode == 0 else t + h
            if not _inside(dom_kind, dom_c, dom_r, xmid):
                pre[:] = x
                post[:] = xmid
                t = t_new
                flags |= 1
                break
            if tgt_kind >= 0 and hit_t < 0.0 and _inside(tgt_kind, tgt_c, tgt_r, xmid):
                flags |= 8
                hit_t = t_new
                if stop_on_hit:
                    pre[:] = xmid
                    post[:] = xmid
                    t = t_new
                    break
            if axis >= 0:
                if not _inside(dom_kind, dom_c, dom_r, xnew):
                    pre[:] = xmid
                    post[:] = xnew
                    t = t_new
                    jaxis = axis
                    jsize = size
                    flags |= 1
                    break
                if tgt_kind >= 0 and hit_t < 0.0 and _inside(tgt_kind, tgt_c, tgt_r, xnew):
                    flags |= 8
                    hit_t = t_new
                    if stop_on_hit:
                        pre[:] = xnew
                        post[:] = xnew
                        t = t_new
                        break
            x[:] = xnew
            t = t_new
        if (flags & 1) == 0 and (flags & 8) == 0:
            pre[:] = x
            post[:] = x
        out_tau[p] = t
        out_pre[p, :] = pre
        out_post[p, :] = post
        out_steps[p] = k
        out_flags[p] = flags
        out_hit_t[p] = hit_t
        out_occ[p] = occ_steps * dt if mode == 0 else occ
        out_jaxis[p] = jaxis
        out_jsize[p] = jsize


@nb.njit(cache=True)
def _record_kernel(fops, fargs, foffs, fconst, fmat, stack_size,
                   alpha, scale, mode, dt, beta, lam, sigma,
                   x0, dom_kind, dom_c, dom_r, horizon, max_steps, seed, path, capacity):
    d = x0.shape[0]
    times = np.empty(capacity)
    states = np.empty((capacity, d))
    events = np.empty(capacity, dtype=np.int64)  # 0 step, 1 jump, 2 exit
    axes = np.full(capacity, -1, dtype=np.int64)
    sizes = np.zeros(capacity)
    pres = np.empty((capacity, d))
    x = x0.copy()
    xmid = np.empty(d)
    xnew = np.empty(d)
    amat = np.empty((d, d))
    dz = np.empty(d)
    stack = np.empty(stack_size)
    times[0] = 0.0
    states[0, :] = x
    events[0] = 0
    m = 1
    t = 0.0
    k = 0
    status = 0  # 0 horizon reached, 1 exited, 2 step cap, 3 capacity
    while True:
        if mode == 0:
            if (k + 1) * dt > horizon * (1.0 + 1e-12):
                break
            h_max = dt
        else:
            if t >= horizon:
                break
            h_max = min(dt, horizon - t)
        if k >= max_steps:
            status = 2
            break
        if m + 2 > capacity:
            status = 3
            break
        h, axis, size = _advance(mode, x, xmid, xnew, amat, dz, stack, fops, fargs, foffs,
                                 fconst, fmat, alpha, scale, h_max, beta, lam, sigma,
                                 seed, path, k)
        k += 1
        t = k * dt if mode == 0 else t + h
        if axis < 0:
            times[m] = t
            states[m, :] = xnew
            events[m] = 0
            m += 1
            if not _inside(dom_kind, dom_c, dom_r, xnew):
                events[m - 1] = 2
                status = 1
                break
        else:
            if not _inside(dom_kind, dom_c, dom_r, xmid):
                times[m] = t
                states[m, :] = xmid
                events[m] = 2
                m += 1
                status = 1
                break
            times[m] = t
            states[m, :] = xnew
            events[m] = 1
            axes[m] = axis
            sizes[m] = size
            pres[m, :] = xmid
            m += 1
            if not _inside(dom_kind, dom_c, dom_r, xnew):
                events[m - 1] = 3  # exit by this jump
                status = 1
                break
        x[:] = xnew
    return times[:m], states[:m], events[:m], axes[:m], sizes[:m], pres[:m], status


@nb.njit(inline="always", cache=True)
def _polyline_at(vt, vp, t, out):
    m = vt.shape[0]
    if t <= vt[0]:
        out[:] = vp[0]
        return
    if t >= vt[m - 1]:
        out[:] = vp[m - 1]
        return
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if vt[mid] <= t:
            lo = mid
        else:
            hi = mid
    a = (t - vt[lo]) / (vt[hi] - vt[lo])
    for i in range(out.shape[0]):
        out[i] = vp[lo, i] + a * (vp[hi, i] - vp[lo, i])


@nb.njit(inline="always", cache=True)
def _dist2(x, y):
    s = 0.0
    for i in range(x.shape[0]):
        s += (x[i] - y[i]) ** 2
    return s


@nb.njit(parallel=True, cache=True)
def _tube_kernel(fops, fargs, foffs, fconst, fmat, stack_size,
                 alpha, scale, mode, dt, beta, lam, sigma,
                 x0, vt, vp, eps, t0, max_steps, seed, path_offset, out_ok):
    n = out_ok.shape[0]
    d = x0.shape[0]
    eps2 = eps * eps
    for p in nb.prange(n):
        path = path_offset + np.int64(p)
        x = x0.copy()
        xmid = np.empty(d)
        xnew = np.empty(d)
        amat = np.empty((d, d))
        dz = np.empty(d)
        stack = np.empty(stack_size)
        phi = np.empty(d)
        t = 0.0
        k = 0
        ok = _dist2(x, vp[0]) < eps2
        while ok and t < t0 * (1.0 - 1e-12) and k < max_steps:
            h_max = min(dt, t0 - t)
            h, axis, size = _advance(mode, x, xmid, xnew, amat, dz, stack, fops, fargs, foffs,
                                     fconst, fmat, alpha, scale, h_max, beta, lam, sigma,
                                     seed, path, k)
            k += 1
            t = t + h
            _polyline_at(vt, vp, t, phi)
            if _dist2(xmid, phi) >= eps2 or _dist2(xnew, phi) >= eps2:
                ok = False
            x[:] = xnew
        out_ok[p] = ok and t >= t0 * (1.0 - 1e-12)


@nb.njit(parallel=True, cache=True)
def _steering_kernel(fops, fargs, foffs, fconst, fmat, stack_size,
                     alpha, scale, dt, beta, lam, sigma,
                     x0, target, axis_k, gamma, t0, max_steps, seed, path_offset, out_ok):
    """Two-phase event: near x0 before some switch time T, near ``target`` from T on.

    Candidate switch times are t = 0 and the times of large jumps on ``axis_k``.
    """
    n = out_ok.shape[0]
    d = x0.shape[0]
    g2 = gamma * gamma
    for p in nb.prange(n):
        path = path_offset + np.int64(p)
        x = x0.copy()
        xmid = np.empty(d)
        xnew = np.empty(d)
        amat = np.empty((d, d))
        dz = np.empty(d)
        stack = np.empty(stack_size)
        idx = 0
        best = 0  # latest admissible switch index
        last_out = -1  # latest index outside the target ball
        prefix_ok = _dist2(x, x0) < g2
        if _dist2(x, target) >= g2:
            last_out = 0
        t = 0.0
        k = 0
        while t < t0 * (1.0 - 1e-12) and k < max_steps:
            if not prefix_ok and last_out >= best:
                break
            h_max = min(dt, t0 - t)
            h, axis, size = _advance(1, x, xmid, xnew, amat, dz, stack, fops, fargs, foffs,
                                     fconst, fmat, alpha, scale, h_max, beta, lam, sigma,
                                     seed, path, k)
            k += 1
            t += h
            idx += 1
            if _dist2(xmid, target) >= g2:
                last_out = idx
            prefix_ok = prefix_ok and _dist2(xmid, x0) < g2
            if axis >= 0:
                idx += 1
                if axis == axis_k and prefix_ok:
                    best = idx
                if _dist2(xnew, target) >= g2:
                    last_out = idx
                prefix_ok = prefix_ok and _dist2(xnew, x0) < g2
            x[:] = xnew
        out_ok[p] = best > last_out


@nb.njit(parallel=True, cache=True)
def _box_occupation_kernel(fops, fargs, foffs, fconst, fmat, stack_size,
                           alpha, scale, mode, dt, beta, lam, sigma,
                           x0, center, half_widths, horizons, max_steps, seed, path_offset,
                           out):
    """Left-endpoint time spent in nested centered cubes up to each horizon."""
    n = out.shape[0]
    q = horizons.shape[0]
    m = half_widths.shape[0]
    d = x0.shape[0]
    t_end = horizons[q - 1]
    for p in nb.prange(n):
        path = path_offset + np.int64(p)
        x = x0.copy()
        xmid = np.empty(d)
        xnew = np.empty(d)
        amat = np.empty((d, d))
        dz = np.empty(d)
        stack = np.empty(stack_size)
        acc = np.zeros((q, m))
        t = 0.0
        k = 0
        while t < t_end * (1.0 - 1e-12) and k < max_steps:
            h_max = min(dt, t_end - t)
            r = 0.0
            for i in range(d):
                r = max(r, abs(x[i] - center[i]))
            h, axis, size = _advance(mode, x, xmid, xnew, amat, dz, stack, fops, fargs, foffs,
                                     fconst, fmat, alpha, scale, h_max, beta, lam, sigma,
                                     seed, path, k)
            for b in range(q):
                if t < horizons[b] * (1.0 - 1e-12):
                    for e in range(m):
                        if r < half_widths[e]:
                            acc[b, e] += h
            k += 1
            t += h
            x[:] = xnew
        out[p, :, :] = acc


# --- python front ends --------------------------------------------------------

def _scheme_args(params: StableParams, scheme: PathScheme) -> tuple:
    mode = _MODES[scheme.mode]
    if mode == 0:
        return mode, scheme.dt, 1.0, 1.0, 0.0
    trunc = scheme.truncation
    lam = large_jump_rate(params, trunc)
    sigma = math.sqrt(small_jump_variance(params, trunc, 1.0))
    return mode, scheme.dt, trunc.beta, lam, sigma


def _kernel_prefix(field: MatrixField, params: StableParams, scheme: PathScheme, d_lam: int):
    mode, dt, beta, lam, sigma = _scheme_args(params, scheme)
    return kernel_args(field) + (float(params.alpha), float(params.scale), mode, float(dt),
                                 float(beta), float(lam * d_lam), float(sigma))


def _points(x0, d: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x0, dtype=float))
    if pts.shape[1] != d:
        raise ValueError(f"start point(s) must have dimension {d}")
    return np.ascontiguousarray(pts)


def run_exit_batch(field: MatrixField, params: StableParams, x0, domain: Domain | None,
                   scheme: PathScheme, n: int, seed: int = 0, t_cap: float = 100.0,
                   path_offset: int = 0, occupation_set: Domain | None = None,
                   target: Domain | None = None, stop_on_hit: bool = True) -> ExitBatch:
    """Simulate ``n`` paths until exit from ``domain`` (or hitting ``target``).

    ``x0`` is one start point or one per path. Path ``p`` uses stream
    ``(seed, path_offset + p)``. ``domain=None`` means no exit.
    """
    d = field.d
    x0s = _points(x0, d)
    if x0s.shape[0] not in (1, n):
        raise ValueError("give one start point or one per path")
    dk, dc, dr = _encode(domain, d, absent=_KIND_ALL)
    ok, oc, orr = _encode(occupation_set, d)
    tk, tc, tr = _encode(target, d)
    tau = np.empty(n)
    pre = np.empty((n, d))
    post = np.empty((n, d))
    steps = np.empty(n, dtype=np.int64)
    flags = np.empty(n, dtype=np.int64)
    hit_t = np.empty(n)
    occ = np.empty(n)
    jaxis = np.empty(n, dtype=np.int64)
    jsize = np.empty(n)
    _exit_kernel(*_kernel_prefix(field, params, scheme, d), x0s, dk, dc, dr, ok, oc, orr,
                 tk, tc, tr, bool(stop_on_hit), float(t_cap), int(scheme.max_steps),
                 np.int64(seed), np.int64(path_offset),
                 tau, pre, post, steps, flags, hit_t, occ, jaxis, jsize)
    ids = np.arange(path_offset, path_offset + n, dtype=np.int64)
    return ExitBatch(ids, tau, pre, post, steps, flags, hit_t, occ, jaxis, jsize)


def simulate_path(field: MatrixField, params: StableParams, x0, horizon: float,
                  scheme: PathScheme, seed: int = 0, path_id: int = 0,
                  domain: Domain | None = None) -> PathSample:
    """One path on ``[0, horizon]``, stopped early at exit from ``domain`` if given."""
    d = field.d
    x0 = np.asarray(x0, dtype=float).reshape(d)
    if not field.contains(x0):
        raise ValueError("x0 must lie in the field's region")
    if not horizon > 0.0:
        raise ValueError("horizon must be positive")
    dk, dc, dr = _encode(domain, d, absent=_KIND_ALL)
    capacity = int(min(scheme.max_steps, math.ceil(horizon / scheme.dt))) + 16
    while True:
        times, states, events, axes, sizes, pres, status = _record_kernel(
            *_kernel_prefix(field, params, scheme, d), x0, dk, dc, dr, float(horizon),
            int(scheme.max_steps), np.int64(seed), np.int64(path_id), capacity)
        if status != 3:
            break
        capacity *= 2
    labels = []
    jumps = []
    pre_states = []
    for t, ev, ax, sz, pr in zip(times, events, axes, sizes, pres):
        if ev in (1, 3):
            jumps.append(JumpEvent(float(t), int(ax) + 1, float(sz)))
            pre_states.append(pr.copy())
        labels.append({0: "step", 1: f"jump:{ax + 1}", 2: "exit", 3: "exit"}[int(ev)])
    meta = {"scheme": scheme.describe(), "seed": int(seed), "path_id": int(path_id),
            "field": field.digest, "alpha": params.alpha, "step_cap_hit": status == 2,
            "exited": status == 1}
    return PathSample(times, states, labels, jumps,
                      np.array(pre_states).reshape(-1, d), meta)


def first_exit(field: MatrixField, params: StableParams, x0, domain: Domain,
               scheme: PathScheme, seed: int = 0, path_id: int = 0,
               t_cap: float = 100.0) -> ExitRecord:
    """First exit of one path from ``domain``.

    In fixed mode the exit is seen at grid times; the pre-exit state is the
    last recorded state inside the domain.
    """
    if not domain.contains(x0):
        raise ValueError("x0 must lie in the domain")
    batch = run_exit_batch(field, params, x0, domain, scheme, 1, seed, t_cap, path_id)
    return batch.record(0)


def first_hit_before_exit(field: MatrixField, params: StableParams, x0, target: Domain,
                          container: Domain, scheme: PathScheme, seed: int = 0,
                          path_id: int = 0, t_cap: float = 100.0) -> tuple[bool | None, ExitRecord]:
    """Whether the path enters ``target`` strictly before leaving ``container``.

    Returns ``None`` for the flag when the time cap was reached first.
    """
    if not container.contains(x0):
        raise ValueError("x0 must lie in the container")
    batch = run_exit_batch(field, params, x0, container, scheme, 1, seed, t_cap, path_id,
                           target=target)
    rec = batch.record(0)
    if batch.hit[0]:
        return True, ExitRecord(False, float(batch.hit_time[0]), rec.state_pre, rec.state_post,
                                rec.steps_used)
    if batch.capped[0]:
        return None, rec
    return False, rec


def run_tube_batch(field: MatrixField, params: StableParams, vertex_times, vertices,
                   eps: float, scheme: PathScheme, n: int, seed: int = 0,
                   path_offset: int = 0, t0: float | None = None) -> np.ndarray:
    """Per-path flag: stayed within ``eps`` of the polyline at every recorded time up to ``t0``."""
    vt = np.ascontiguousarray(vertex_times, dtype=float)
    vp = np.ascontiguousarray(vertices, dtype=float)
    out = np.empty(n, dtype=np.bool_)
    _tube_kernel(*_kernel_prefix(field, params, scheme, field.d), vp[0].copy(), vt, vp,
                 float(eps), float(vt[-1] if t0 is None else t0), int(scheme.max_steps), np.int64(seed),
                 np.int64(path_offset), out)
    return out


def run_steering_batch(field: MatrixField, params: StableParams, x0, target, axis: int,
                       gamma: float, t0: float, scheme: PathScheme, n: int, seed: int = 0,
                       path_offset: int = 0) -> np.ndarray:
    """Per-path flag of the two-phase steering event (jump-adapted scheme required)."""
    if scheme.mode != JUMP_ADAPTED:
        raise ValueError("steering needs the jump-adapted scheme (switch times are large jumps)")
    prefix = _kernel_prefix(field, params, scheme, field.d)
    field_part, rest = prefix[:6], prefix[6:]
    alpha, scale, _mode, dt, beta, lam, sigma = rest
    out = np.empty(n, dtype=np.bool_)
    _steering_kernel(*field_part, alpha, scale, dt, beta, lam, sigma,
                     np.asarray(x0, dtype=float).copy(), np.asarray(target, dtype=float).copy(),
                     int(axis) - 1, float(gamma), float(t0), int(scheme.max_steps),
                     np.int64(seed), np.int64(path_offset), out)
    return out


def run_box_occupation(field: MatrixField, params: StableParams, x0, center, half_widths,
                       horizons, scheme: PathScheme, n: int, seed: int = 0,
                       path_offset: int = 0) -> np.ndarray:
    """Occupation of nested cubes, shape ``(n, len(horizons), len(half_widths))``."""
    hz = np.sort(np.asarray(horizons, dtype=float))
    hw = np.asarray(half_widths, dtype=float)
    out = np.empty((n, len(hz), len(hw)))
    _box_occupation_kernel(*_kernel_prefix(field, params, scheme, field.d),
                           np.asarray(x0, dtype=float).copy(),
                           np.asarray(center, dtype=float).copy(), hw, hz,
                           int(scheme.max_steps), np.int64(seed), np.int64(path_offset), out)
    return out


# --- path dump ----------------------------------------------------------------

def write_path_dump(paths: list[PathSample], csv_path, metadata: dict | None = None) -> Path:
    """CSV ``path_id,t,x1..xd,event`` plus a JSON sidecar ``<name>.meta.json``."""
    csv_path = Path(csv_path)
    d = paths[0].states.shape[1] if paths else 0
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t"] + [f"x{i + 1}" for i in range(d)] + ["event"])
        for ps in paths:
            pid = ps.metadata.get("path_id", 0)
            for t, s, ev in zip(ps.times, ps.states, ps.events):
                w.writerow([pid, repr(float(t))] + [repr(float(v)) for v in s] + [ev])
    meta = dict(metadata or {})
    if paths:
        meta.setdefault("scheme", paths[0].metadata.get("scheme"))
        meta.setdefault("seed", paths[0].metadata.get("seed"))
        meta.setdefault("field_hash", paths[0].metadata.get("field"))
    sidecar = csv_path.with_suffix(".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return csv_path

"""Monte Carlo estimators built on the batch path kernels.

Every estimator is a pure function of ``(seed, n, parameters)``: path ``i``
always reads stream ``(seed, i)``, so reruns are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .engine import (Domain, PathScheme, run_exit_batch, run_steering_batch, run_tube_batch)
from .field import MatrixField, evaluate
from .rng import mix_seed
from .stable_driver import StableParams
from .steering import TubeSpec, segments_to_polyline, subdivide_tube

#: fraction of capped paths above which a result is flagged unreliable
CAP_FRACTION_LIMIT = 0.01
UNRELIABLE = "unreliable"


def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "describe"):
        return o.describe()
    return repr(o)


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n: int
    seed: int = 0
    params_hash: str = ""
    flags: list[str] = dc_field(default_factory=list)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")

    @classmethod
    def from_samples(cls, samples, seed: int = 0, params: dict | None = None,
                     flags: Sequence[str] = ()) -> "MCEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        mean = float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, n, seed, params_hash(params or {}), list(flags))

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr)

    def ci(self, level: float) -> tuple[float, float]:
        z = float(stats.norm.ppf(0.5 + 0.5 * level))
        return (self.mean - z * self.stderr, self.mean + z * self.stderr)

    def excludes_zero(self, level: float = 0.99) -> bool:
        return self.ci(level)[0] > 0.0

    @property
    def unreliable(self) -> bool:
        return UNRELIABLE in self.flags

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "ci95": list(self.ci95), "n": self.n,
                "seed": self.seed, "params_hash": self.params_hash, "flags": list(self.flags)}


def result_record(op: str, params: dict, est: MCEstimate, runtime_s: float, **extra) -> dict:
    """JSON-ready result: op, params, mean, stderr, ci95, n, seed, flags, runtime_s."""
    out = {"op": op, "params": json.loads(json.dumps(params, default=_jsonable)),
           "mean": est.mean, "stderr": est.stderr, "ci95": list(est.ci95), "n": est.n,
           "seed": est.seed, "flags": list(est.flags), "runtime_s": runtime_s}
    out.update(extra)
    return out


def _cap_flags(capped: np.ndarray) -> list[str]:
    frac = float(np.mean(capped)) if capped.size else 0.0
    flags = []
    if frac > 0:
        flags.append(f"capped:{int(np.sum(capped))}")
    if frac > CAP_FRACTION_LIMIT:
        flags.append(UNRELIABLE)
    return flags


def _base_params(field: MatrixField, params: StableParams, scheme: PathScheme, **kw) -> dict:
    out = {"field": field.digest, "d": field.d, "alpha": params.alpha, "scale": params.scale,
           "scheme": scheme.describe()}
    out.update(kw)
    return out


# --- exit moments ---------------------------------------------------------------

@dataclass
class ExitMoments:
    mean: MCEstimate  # at the finest dt
    tail: list[tuple[int, float, float]]  # (m, P(tau > m), stderr)
    coarse_mean: MCEstimate | None = None
    extrapolated: float | None = None
    dt_shift_in_stderr: float | None = None
    taus: np.ndarray | None = None

    def tail_fit(self) -> tuple[float, float, float]:
        """Slope, intercept and r^2 of log P(tau > m) against m (zero buckets dropped)."""
        ms = np.array([m for m, p, _ in self.tail if p > 0], dtype=float)
        ps = np.array([p for _, p, _ in self.tail if p > 0])
        if len(ms) < 2:
            raise ValueError("fewer than two nonzero tail buckets")
        return _line_fit(ms, np.log(ps))


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    res = stats.linregress(x, y)
    r2 = float(res.rvalue**2) if len(x) > 2 else 1.0
    return float(res.slope), float(res.intercept), r2


def estimate_exit_moments(field: MatrixField, params: StableParams, x0, domain: Domain,
                          scheme: PathScheme, n: int, seed: int = 0, t_cap: float = 100.0,
                          m_max: int = 5, refine: bool = True) -> ExitMoments:
    """Mean exit time and tail table ``P(tau > m)``, ``m = 1..m_max``.

    With ``refine`` the batch is also run at ``dt/2`` on an independent seed;
    the finer run is the reported mean and the coarse one bounds the dt bias.
    Capped paths count as ``tau > m`` for every ``m`` and are flagged.
    """
    if not domain.contains(x0):
        raise ValueError("x0 must lie in the domain")
    p = _base_params(field, params, scheme, op="exit-time", x0=list(np.atleast_1d(x0)),
                     domain=domain.describe(), n=n, t_cap=t_cap, refine=refine)

    def run(sch, s):
        b = run_exit_batch(field, params, x0, domain, sch, n, s, t_cap)
        return b.tau, b.capped

    tau, capped = run(scheme.with_dt(scheme.dt / 2) if refine else scheme, seed)
    flags = _cap_flags(capped)
    mean = MCEstimate.from_samples(tau, seed, p, flags)
    tail = []
    for m in range(1, m_max + 1):
        ind = (tau > m) | capped
        tail.append((m, float(np.mean(ind)), float(np.std(ind, ddof=1) / math.sqrt(n)) if n > 1 else 0.0))
    out = ExitMoments(mean, tail, taus=tau)
    if refine:
        s2 = mix_seed(seed, 1)
        tau_c, capped_c = run(scheme, s2)
        coarse = MCEstimate.from_samples(tau_c, s2, p, _cap_flags(capped_c))
        joint = math.hypot(mean.stderr, coarse.stderr)
        shift = abs(mean.mean - coarse.mean) / joint if joint > 0 else 0.0
        # grid-monitoring bias of a stable path scales like dt^(1/alpha)
        k = 2.0 ** (1.0 / params.alpha) - 1.0
        out.coarse_mean = coarse
        out.extrapolated = mean.mean + (mean.mean - coarse.mean) / k
        out.dt_shift_in_stderr = shift
        if shift > 3.0:
            mean.flags.append("dt-sensitive")
    return out


# --- occupation -----------------------------------------------------------------

def estimate_occupation(field: MatrixField, params: StableParams, domain: Domain,
                        region: Domain | None, x0, scheme: PathScheme, n: int, seed: int = 0,
                        t_cap: float = 100.0, refine: bool = False) -> MCEstimate:
    """``E^x int_0^tau 1_C(X_s) ds`` by left-endpoint sums; ``region=None`` is the empty set."""
    if not domain.contains(x0):
        raise ValueError("x0 must lie in the domain")
    p = _base_params(field, params, scheme, op="occupation", domain=domain.describe(),
                     region=region.describe() if region else None, n=n)
    if region is None:
        return MCEstimate(0.0, 0.0, n, seed, params_hash(p), [])

    def run(sch, s):
        b = run_exit_batch(field, params, x0, domain, sch, n, s, t_cap, occupation_set=region)
        return MCEstimate.from_samples(b.occupation, s, p, _cap_flags(b.capped))

    est = run(scheme, seed)
    if refine:
        fine = run(scheme.with_dt(scheme.dt / 2), mix_seed(seed, 1))
        joint = math.hypot(est.stderr, fine.stderr)
        if joint > 0 and abs(est.mean - fine.mean) > 3.0 * joint:
            est.flags.append("dt-sensitive")
        est.flags.append(f"dt/2:{fine.mean!r}")
    return est


@dataclass
class PowerLaw:
    slope: float
    intercept: float
    r_squared: float
    sizes: np.ndarray
    values: list[MCEstimate]


def occupation_power_law(field: MatrixField, params: StableParams, domain: Domain, x0,
                         volumes: Sequence[float], scheme: PathScheme, n: int, seed: int = 0,
                         t_cap: float = 100.0) -> PowerLaw:
    """Occupation of centered cubes of the given volumes; slope of log E vs log |C|.

    All cubes share one stream set.
    """
    c = np.asarray(domain.center)
    vals = []
    for vol in volumes:
        cube = Domain.cube(c, vol ** (1.0 / field.d))
        vals.append(estimate_occupation(field, params, domain, cube, x0, scheme, n, seed, t_cap))
    sz = np.asarray(volumes, dtype=float)
    slope, icpt, r2 = _line_fit(np.log(sz), np.log([v.mean for v in vals]))
    return PowerLaw(slope, icpt, r2, sz, vals)


# --- steering and tubes -----------------------------------------------------------

def steering_scheme(gamma: float, dt: float = 1e-2) -> PathScheme:
    """Jump-adapted scheme whose cut lies well below the steering tolerance."""
    return PathScheme.jump_adapted(0.25 * gamma, dt)


def estimate_single_jump_steering(field: MatrixField, params: StableParams, x0, axis: int,
                                  r: float, gamma: float, t0: float, n: int, seed: int = 0,
                                  scheme: PathScheme | None = None) -> MCEstimate:
    """Fraction of paths that stay within ``gamma`` of ``x0`` up to a large jump on
    ``axis`` and within ``gamma`` of ``x0 + r A(x0) e_axis`` from then to ``t0``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not -1.0 <= r <= 1.0:
        raise ValueError("r must lie in [-1, 1]")
    if not 1 <= axis <= field.d:
        raise ValueError("axis out of range")
    x0 = np.asarray(x0, dtype=float)
    scheme = scheme or steering_scheme(gamma)
    target = x0 + r * evaluate(field, x0)[:, axis - 1]
    p = _base_params(field, params, scheme, op="steering", x0=list(x0), axis=axis, r=r,
                     gamma=gamma, t0=t0, n=n)
    ok = run_steering_batch(field, params, x0, target, axis, gamma, t0, scheme, n, seed)
    return MCEstimate.from_samples(ok, seed, p)


def estimate_tube_probability(field: MatrixField, params: StableParams, spec: TubeSpec,
                              scheme: PathScheme, n: int, seed: int = 0) -> MCEstimate:
    """Fraction of paths within ``eps`` of ``phi`` at every recorded time up to the horizon."""
    if not field.contains(spec.start):
        raise ValueError("phi must start inside the field's region")
    vt, vp = segments_to_polyline(subdivide_tube(spec))
    if not all(field.contains(v) for v in vp):
        raise ValueError("phi must stay inside the field's region")
    p = _base_params(field, params, scheme, op="tube", times=list(spec.times),
                     vertices=[list(v) for v in spec.vertices], eps=spec.eps, t0=spec.horizon, n=n)
    ok = run_tube_batch(field, params, vt, vp, spec.eps, scheme, n, seed, t0=spec.horizon)
    return MCEstimate.from_samples(ok, seed, p)


# --- hitting --------------------------------------------------------------------

def estimate_hitting(field: MatrixField, params: StableParams, target: Domain,
                     container: Domain, x0, scheme: PathScheme, n: int, seed: int = 0,
                     t_cap: float = 100.0) -> MCEstimate:
    """``P^x(T_target < tau_container)``; capped paths count as misses and are flagged."""
    if not container.contains(x0):
        raise ValueError("x0 must lie in the container")
    p = _base_params(field, params, scheme, op="hitting", target=target.describe(),
                     container=container.describe(), x0=list(np.atleast_1d(x0)), n=n)
    b = run_exit_batch(field, params, x0, container, scheme, n, seed, t_cap, target=target)
    hit = b.hit
    return MCEstimate.from_samples(hit, seed, p, _cap_flags(b.capped & ~hit))


# --- harmonic functions and Hoelder fits -----------------------------------------

@dataclass
class HarmonicEstimate:
    points: np.ndarray
    values: list[MCEstimate]
    g_id: str
    domain: Domain | None
    g_bound: float | None = None
    flags: list[str] = dc_field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return np.array([v.mean for v in self.values])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([v.stderr for v in self.values])

    @classmethod
    def synthetic(cls, points, values, stderr: float = 0.0, g_id: str = "synthetic"):
        vals = [MCEstimate(float(v), stderr, 1) for v in values]
        return cls(np.atleast_2d(np.asarray(points, dtype=float)), vals, g_id, None)


def estimate_harmonic(field: MatrixField, params: StableParams, domain: Domain,
                      g: Callable[[np.ndarray], np.ndarray], grid, scheme: PathScheme, n: int,
                      seed: int = 0, t_cap: float = 100.0, g_id: str = "g",
                      g_bound: float | None = None, common_streams: bool = True) -> HarmonicEstimate:
    """``h(x) = E^x g(X_tau)`` at each grid point, ``X_tau`` the first state outside ``domain``.

    ``g`` maps an ``(m, d)`` array of exit states to ``m`` values. With
    ``common_streams`` every grid point reuses path streams ``0..n-1`` so that
    differences between points are estimated with correlated noise.
    """
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if not all(domain.contains(x) for x in pts):
        raise ValueError("grid points must lie in the domain")
    values = []
    flags: list[str] = []
    for i, x in enumerate(pts):
        s = seed if common_streams else mix_seed(seed, i)
        p = _base_params(field, params, scheme, op="harmonic", x=list(x), g=g_id,
                         domain=domain.describe(), n=n)
        b = run_exit_batch(field, params, x, domain, scheme, n, s, t_cap)
        keep = ~b.capped
        gv = np.asarray(g(b.state_post[keep]), dtype=float)
        if g_bound is not None and np.any(np.abs(gv) > g_bound):
            raise ValueError("g exceeded its declared bound")
        f = _cap_flags(b.capped)
        est = MCEstimate.from_samples(gv, s, p, f) if gv.size else MCEstimate(float("nan"), float("nan"), 1, s, "", [UNRELIABLE])
        values.append(est)
        if UNRELIABLE in est.flags and UNRELIABLE not in flags:
            flags.append(UNRELIABLE)
    return HarmonicEstimate(pts, values, g_id, domain, g_bound, flags)


class FitRefused(ValueError):
    pass


@dataclass(frozen=True)
class HoelderFit:
    beta_hat: float
    c_hat: float
    r_squared: float
    pairs_used: int
    radius: float


def fit_hoelder(estimate: HarmonicEstimate, center, radius: float,
                noise_factor: float = 3.0) -> HoelderFit:
    """Fit ``|h(x) - h(center)| = c (|x - center| / r)^beta`` in log-log space.

    ``center`` must be one of the grid points. Points whose difference is not
    above ``noise_factor`` joint standard errors are left out.
    """
    c = np.asarray(center, dtype=float)
    pts = estimate.points
    dist = np.linalg.norm(pts - c, axis=1)
    ic = int(np.argmin(dist))
    if dist[ic] > 1e-12:
        raise FitRefused("center is not a grid point")
    near = (dist > 0) & (dist < radius)
    if np.count_nonzero(near) < 8:
        raise FitRefused(f"need at least 8 grid points within radius {radius}, "
                         f"have {np.count_nonzero(near)}")
    h, se = estimate.means, estimate.stderrs
    diff = np.abs(h - h[ic])
    joint = np.sqrt(se**2 + se[ic] ** 2)
    usable = near & (diff > noise_factor * joint) & (diff > 0)
    if np.count_nonzero(usable) < 4:
        raise FitRefused(f"only {np.count_nonzero(usable)} pairs rise above the noise")
    x = np.log(dist[usable] / radius)
    y = np.log(diff[usable])
    slope, icpt, r2 = _line_fit(x, y)
    return HoelderFit(slope, math.exp(icpt), min(1.0, max(0.0, r2)), int(np.count_nonzero(usable)),
                      float(radius))


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t

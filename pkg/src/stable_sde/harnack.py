"""Failure of the Harnack inequality for A = I in three dimensions.

Take ``B`` the unit ball, ``F = (-eps, eps)^2`` in the (y, z) plane,
``C = (R x F) n B`` and the target ``E = (2, 4) x F`` outside ``B``.  With
independent coordinate drivers every jump is axis-parallel, so a path can
land in ``E`` at its exit from ``B`` only by an x-axis jump from a point of
``C``.  ``h(w) = P^w(W_tau in E)`` is then of order ``eps^alpha`` at the
origin but much smaller at ``w0 = (0, 1/2, 0)``, which must first find the
thin tube ``C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .engine import Domain, PathScheme, run_box_occupation, run_exit_batch
from .estimators import MCEstimate, _cap_flags
from .field import MatrixField
from .rng import mix_seed
from .stable_driver import StableParams

W0 = (0.0, 0.5, 0.0)
E_X_RANGE = (2.0, 4.0)
DEFAULT_BETA_CAP = 0.5


@dataclass(frozen=True)
class HarnackGeometry:
    eps: float

    def __post_init__(self):
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")

    @property
    def ball(self) -> Domain:
        return Domain.ball((0.0, 0.0, 0.0), 1.0)

    @property
    def w0(self) -> np.ndarray:
        return np.array(W0)

    def in_F(self, y, z):
        return (np.abs(y) < self.eps) & (np.abs(z) < self.eps)

    def in_B(self, w):
        w = np.asarray(w, dtype=float)
        return np.sum(w * w, axis=-1) < 1.0

    def in_C(self, w):
        w = np.asarray(w, dtype=float)
        return self.in_B(w) & self.in_F(w[..., 1], w[..., 2])

    def in_C_prime(self, w):
        w = np.asarray(w, dtype=float)
        return self.in_C(w) & (np.abs(w[..., 0]) < 0.5)

    def in_E(self, w):
        w = np.asarray(w, dtype=float)
        x = w[..., 0]
        return (x > E_X_RANGE[0]) & (x < E_X_RANGE[1]) & self.in_F(w[..., 1], w[..., 2])


def in_E(g: HarnackGeometry, w) -> bool:
    return bool(g.in_E(w))


def in_C(g: HarnackGeometry, w) -> bool:
    return bool(g.in_C(w))


def single_jump_reachability(g: HarnackGeometry, w) -> bool:
    """Whether one axis-parallel displacement from ``w`` can land in ``E``."""
    w = np.asarray(w, dtype=float)
    lo, hi = E_X_RANGE
    # the line through w along axis k meets E iff the other two coordinates
    # already satisfy E's constraints (the free coordinate's range is nonempty)
    along_x = abs(w[1]) < g.eps and abs(w[2]) < g.eps
    along_y = lo < w[0] < hi and abs(w[2]) < g.eps
    along_z = lo < w[0] < hi and abs(w[1]) < g.eps
    return bool(along_x or along_y or along_z)


def default_scheme(eps: float, dt: float = 1e-2) -> PathScheme:
    """Jump-adapted, cut ``min(0.5, eps/4)`` so the small-jump surrogate acts below the scale of F."""
    return PathScheme.jump_adapted(min(DEFAULT_BETA_CAP, 0.25 * eps), dt)


@dataclass
class HEstimate:
    estimate: MCEstimate
    counted: int
    pre_in_C: int  # numerator paths whose pre-exit state lies in C

    @property
    def mean(self) -> float:
        return self.estimate.mean

    @property
    def stderr(self) -> float:
        return self.estimate.stderr


def estimate_h(g: HarnackGeometry, start, n: int, params: StableParams | None = None,
               scheme: PathScheme | None = None, seed: int = 0, t_cap: float = 100.0) -> HEstimate:
    """``P^start(W_tau in E)`` for ``A = I`` in three dimensions.

    Raises ``AssertionError`` if any counted path left ``B`` from outside ``C``.
    """
    params = params or StableParams(1.0)
    scheme = scheme or default_scheme(g.eps)
    start = np.asarray(start, dtype=float)
    if not g.in_B(start):
        raise ValueError("start must lie in the unit ball")
    field = MatrixField.identity(3)
    b = run_exit_batch(field, params, start, g.ball, scheme, n, seed, t_cap)
    hit = g.in_E(b.state_post) & b.exited
    pre_ok = g.in_C(b.state_pre[hit])
    if not np.all(pre_ok):
        bad = int(np.flatnonzero(hit)[np.flatnonzero(~pre_ok)[0]])
        raise AssertionError(f"path {bad} reached E from outside C: pre-exit state {b.state_pre[bad]}")
    p = {"op": "harnack-h", "eps": g.eps, "start": start.tolist(), "alpha": params.alpha,
         "scheme": scheme.describe(), "n": n}
    est = MCEstimate.from_samples(hit, seed, p, _cap_flags(b.capped))
    return HEstimate(est, int(hit.sum()), int(pre_ok.sum()))


@dataclass
class RatioRow:
    eps: float
    h0: HEstimate
    hw0: HEstimate
    ratio: float
    ratio_se: float
    n: int
    seed: int
    flags: list[str] = dc_field(default_factory=list)

    def csv_row(self) -> list:
        return [self.eps, self.h0.mean, self.h0.stderr, self.hw0.mean, self.hw0.stderr,
                self.ratio, self.ratio_se, self.n, self.seed]


RATIO_HEADER = ["eps", "h0", "h0_se", "hw0", "hw0_se", "ratio", "ratio_se", "n", "seed"]


def ratio_curve(eps_list: Sequence[float], n: int, params: StableParams | None = None,
                seed: int = 0, dt: float = 1e-2, beta: float | None = None) -> list[RatioRow]:
    """``h(0)``, ``h(w0)`` and their ratio along a strictly decreasing eps list.

    Each (eps, point) pair runs on its own derived seed. The ratio stderr is
    the delta-method value; a ratio whose denominator CI touches zero is
    flagged as a lower bound.
    """
    eps_arr = np.asarray(eps_list, dtype=float)
    if np.any(np.diff(eps_arr) >= 0):
        raise ValueError("eps list must be strictly decreasing")
    params = params or StableParams(1.0)
    rows = []
    for i, eps in enumerate(eps_arr):
        g = HarnackGeometry(float(eps))
        sch = default_scheme(g.eps, dt) if beta is None else PathScheme.jump_adapted(beta, dt)
        s0, s1 = mix_seed(seed, i, 0), mix_seed(seed, i, 1)
        h0 = estimate_h(g, np.zeros(3), n, params, sch, s0)
        hw = estimate_h(g, g.w0, n, params, sch, s1)
        flags = []
        if hw.mean > 0:
            ratio = h0.mean / hw.mean
            rel = math.hypot(h0.stderr / h0.mean if h0.mean > 0 else 0.0, hw.stderr / hw.mean)
            ratio_se = ratio * rel
        else:
            ratio, ratio_se = math.inf, math.inf
        if hw.estimate.ci95[0] <= 0.0:
            flags.append("lower-bound")
        rows.append(RatioRow(float(eps), h0, hw, ratio, ratio_se, n, seed, flags))
    return rows


def check_ratio_curve(rows: list[RatioRow], alpha: float, z: float = 2.0) -> dict:
    """The three properties of a ratio curve, with the numbers behind them."""
    incr = [(b.ratio - a.ratio) / math.hypot(a.ratio_se, b.ratio_se)
            for a, b in zip(rows, rows[1:])]
    scaled = [r.h0.mean / r.eps**alpha for r in rows]
    spread = max(scaled) / min(scaled) if min(scaled) > 0 else math.inf
    dominated = [(r.h0.mean - r.hw0.mean) / math.hypot(r.h0.stderr, r.hw0.stderr) for r in rows]
    return {"increasing": all(s > z for s in incr), "increments_in_se": incr,
            "h0_over_eps_alpha": scaled, "spread": spread, "stable": spread <= 3.0,
            "hw0_below_h0": all(s > z for s in dominated), "gaps_in_se": dominated,
            "pre_in_C": all(r.h0.pre_in_C == r.h0.counted and r.hw0.pre_in_C == r.hw0.counted
                            for r in rows)}


# --- occupation of the thin tube ---------------------------------------------------

def stable_density_at_zero(alpha: float) -> float:
    """Density at 0 of a unit-time symmetric stable variable: ``Gamma(1 + 1/alpha) / pi``."""
    return math.gamma(1.0 + 1.0 / alpha) / math.pi


def occupation_tail(eps: float, alpha: float, horizon: float) -> float:
    """``int_T^inf P(|Y_s|, |Z_s| < eps) ds`` from the small-square density approximation.

    ``P(.) ~ (2 eps)^2 p_s(0)^2`` with ``p_s(0) = s^(-1/alpha) p_1(0)``.
    """
    if not alpha < 2.0 or 2.0 / alpha <= 1.0:
        raise ValueError("the tail integral diverges unless alpha < 2")
    p1 = stable_density_at_zero(alpha)
    return 4.0 * eps * eps * p1 * p1 * horizon ** (1.0 - 2.0 / alpha) / (2.0 / alpha - 1.0)


@dataclass
class OccupationScaling:
    eps: np.ndarray
    horizon: float
    means: np.ndarray  # tail-corrected, at horizon T
    stderrs: np.ndarray
    means_2t: np.ndarray  # tail-corrected, at 2T
    raw: np.ndarray  # shape (2, len(eps)): uncorrected means at T and 2T
    slope: float
    slope_se: float
    slope_2t: float
    n: int
    seed: int
    flags: list[str]

    @property
    def horizon_shift(self) -> float:
        return abs(self.slope_2t - self.slope)


def _slope_with_influence(log_eps: np.ndarray, occ: np.ndarray, tail: np.ndarray):
    m = occ.mean(axis=0) + tail
    y = np.log(m)
    xc = log_eps - log_eps.mean()
    w = xc / np.sum(xc * xc)
    slope = float(np.sum(w * y))
    # each path's first-order effect on the slope through the log means
    infl = (occ - occ.mean(axis=0)) / m @ w
    se = float(np.std(infl, ddof=1) / math.sqrt(occ.shape[0]))
    return slope, se, m


def occupation_scaling(eps_list: Sequence[float], n: int, alpha: float = 1.0,
                       horizon: float = 50.0, dt: float = 1e-3, seed: int = 0) -> OccupationScaling:
    """Slope of ``log E int_0^inf 1_F(Y_s, Z_s) ds`` against ``log eps``.

    The pair (Y, Z) starts at 0 with ``A = I``; the integral is truncated at
    ``horizon`` and at ``2 horizon`` in the same run, each with the tail term
    of :func:`occupation_tail` added. A slope that moves by more than 0.1 when
    the horizon doubles is flagged.
    """
    eps = np.asarray(eps_list, dtype=float)
    params = StableParams(alpha)
    field = MatrixField.identity(2)
    scheme = PathScheme("fixed", dt)
    occ = run_box_occupation(field, params, np.zeros(2), np.zeros(2), eps,
                             [horizon, 2.0 * horizon], scheme, n, seed)
    le = np.log(eps)
    tails = np.array([[occupation_tail(e, alpha, h) for e in eps] for h in (horizon, 2 * horizon)])
    s1, se1, m1 = _slope_with_influence(le, occ[:, 0, :], tails[0])
    s2, _se2, m2 = _slope_with_influence(le, occ[:, 1, :], tails[1])
    flags = []
    if abs(s2 - s1) > 0.1:
        flags.append("horizon-sensitive")
    se_pts = occ[:, 0, :].std(axis=0, ddof=1) / math.sqrt(n)
    return OccupationScaling(eps, horizon, m1, se_pts, m2, occ.mean(axis=0), s1, se1, s2, n,
                             seed, flags)


__all__ = ["HarnackGeometry", "in_E", "in_C", "single_jump_reachability", "estimate_h",
           "ratio_curve", "check_ratio_curve", "occupation_scaling", "occupation_tail",
           "default_scheme", "RATIO_HEADER"]

"""Projection steps and greedy path planning along the columns of A.

A jump of the driver along axis ``k`` moves the state by a multiple of the
column ``A e_k``.  Steering toward a displacement ``v`` therefore projects
``v`` onto the column that captures the largest share of it, and iterates on
the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import MatrixField, evaluate

_SINGULAR_COND = 1e12


@dataclass(frozen=True)
class ProjectionStep:
    k: int  # 1-based axis
    v: np.ndarray
    p: np.ndarray
    coefficient: float  # p = coefficient * A e_k
    residual_norm: float
    contraction: float
    rho_bound: float  # a-priori contraction bound from the entry bound

    @property
    def residual(self) -> np.ndarray:
        return self.v - self.p


def project(v, u) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the line spanned by ``u``."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    uu = float(u @ u)
    if uu == 0.0:
        raise ValueError("cannot project onto the zero vector")
    return (float(v @ u) / uu) * u


def entry_bound(a: np.ndarray) -> float:
    """Smallest Lambda bounding the entries of both ``a`` and its inverse."""
    return float(max(np.max(np.abs(a)), np.max(np.abs(np.linalg.inv(a)))))


def rho_from_lambda(lam: float, d: int) -> float:
    """Contraction guaranteed for every matrix whose entries and inverse entries are <= lam.

    ``|A^T x| >= |x| / (d lam)`` since the Frobenius norm of ``A^-1`` is at most
    ``d lam``; the pigeonhole step loses another factor ``d`` and a column of
    ``A`` has length at most ``sqrt(d) lam``.
    """
    if lam <= 0 or d < 1:
        raise ValueError("need lam > 0 and d >= 1")
    eta = 1.0 / (d**2.5 * lam * lam)
    return math.sqrt(max(0.0, 1.0 - eta * eta))


def _check_nonsingular(a: np.ndarray):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("A must be a square matrix")
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) > _SINGULAR_COND:
        raise np.linalg.LinAlgError("matrix is singular to working precision")


def best_column_step(a, v, lambda_bound: float | None = None) -> ProjectionStep:
    """Project ``v`` onto the column ``A e_k`` maximizing ``|(A^T v)_k|``.

    Ties go to the lowest index. ``lambda_bound`` defaults to the actual entry
    bound of ``A`` and ``A^-1``.
    """
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_nonsingular(a)
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        raise ValueError("v must be nonzero")
    b = a.T @ v
    k = int(np.argmax(np.abs(b)))  # first maximum wins
    u = a[:, k]
    p = project(v, u)
    coef = float(v @ u) / float(u @ u)
    res = float(np.linalg.norm(v - p))
    lam = entry_bound(a) if lambda_bound is None else float(lambda_bound)
    return ProjectionStep(k + 1, v.copy(), p, coef, res, res / vn,
                          rho_from_lambda(lam, a.shape[0]))


@dataclass(frozen=True)
class PlanStage:
    axis: int  # 1-based
    r: float  # signed length along A e_axis at the predicted location
    residual_norm: float


@dataclass
class SegmentPlan:
    stages: list[PlanStage]
    initial_norm: float
    contractions: list[float]

    @property
    def residual_norm(self) -> float:
        return self.stages[-1].residual_norm if self.stages else self.initial_norm

    @property
    def max_contraction(self) -> float:
        return max(self.contractions, default=0.0)

    def __len__(self):
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)


def plan_segment(field: MatrixField, x_now, target, n_stages: int,
                 atol: float = 0.0) -> SegmentPlan:
    """Greedy sequence of single-axis moves from ``x_now`` toward ``target``.

    Each stage projects the remaining displacement onto the best column of A
    at the predicted location. Stops early once the residual is ``<= atol``.
    """
    x = np.asarray(x_now, dtype=float).copy()
    tgt = np.asarray(target, dtype=float)
    if not field.contains(tgt):
        raise ValueError("target must lie in the field's region")
    v = tgt - x
    v0 = float(np.linalg.norm(v))
    stages: list[PlanStage] = []
    rhos: list[float] = []
    for _ in range(int(n_stages)):
        vn = float(np.linalg.norm(v))
        if vn <= atol or vn == 0.0:
            break
        step = best_column_step(evaluate(field, x), v)
        x = x + step.p
        v = tgt - x
        stages.append(PlanStage(step.k, step.coefficient, float(np.linalg.norm(v))))
        rhos.append(step.contraction)
    return SegmentPlan(stages, v0, rhos)


@dataclass(frozen=True)
class TubeSpec:
    """Polygonal path ``phi`` through ``vertices`` at ``times``, tube radius ``eps``."""

    times: tuple[float, ...]
    vertices: tuple[tuple[float, ...], ...]
    eps: float
    t0: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) < 1 or len(t) != len(self.vertices):
            raise ValueError("need one time per vertex")
        if t[0] != 0.0:
            raise ValueError("phi must start at time 0")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("vertex times must be strictly increasing")
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if self.t0 is not None and self.t0 <= 0.0:
            raise ValueError("t0 must be positive")

    @classmethod
    def from_arrays(cls, times, vertices, eps: float, t0: float | None = None) -> "TubeSpec":
        vs = np.atleast_2d(np.asarray(vertices, dtype=float))
        return cls(tuple(float(t) for t in times), tuple(tuple(map(float, v)) for v in vs),
                   float(eps), t0)

    @classmethod
    def straight(cls, start, end, t0: float, eps: float) -> "TubeSpec":
        return cls.from_arrays([0.0, t0], [start, end], eps, t0)

    @property
    def start(self) -> np.ndarray:
        return np.asarray(self.vertices[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1]) if self.t0 is None else float(self.t0)

    def with_eps(self, eps: float) -> "TubeSpec":
        return TubeSpec(self.times, self.vertices, eps, self.t0)

    def polyline(self) -> tuple[np.ndarray, np.ndarray]:
        """Vertex times and points, extended as a constant up to the horizon."""
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.vertices, dtype=float)
        if self.horizon > t[-1]:
            t = np.append(t, self.horizon)
            v = np.vstack([v, v[-1]])
        return t, v


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))


def subdivide_tube(spec: TubeSpec) -> list[Segment]:
    """Split every edge of ``phi`` into pieces shorter than ``eps / 4``.

    Times are split in proportion; original vertices are kept exactly.
    """
    t, v = spec.polyline()
    limit = spec.eps / 4.0
    out: list[Segment] = []
    for i in range(len(t) - 1):
        a, b = v[i], v[i + 1]
        length = float(np.linalg.norm(b - a))
        m = int(math.floor(length / limit)) + 1
        while True:
            pieces = _split_edge(t[i], t[i + 1], a, b, m)
            if all(sg.length < limit for sg in pieces):  # rounding can land exactly on eps/4
                break
            m += 1
        out += pieces
    return out


def _split_edge(ta: float, tb: float, a: np.ndarray, b: np.ndarray, m: int) -> list[Segment]:
    out = []
    for j in range(m):
        s0, s1 = j / m, (j + 1) / m
        p0 = a if j == 0 else a + s0 * (b - a)
        p1 = b if j == m - 1 else a + s1 * (b - a)
        t0 = ta if j == 0 else ta + s0 * (tb - ta)
        t1 = tb if j == m - 1 else ta + s1 * (tb - ta)
        out.append(Segment(float(t0), float(t1), np.array(p0), np.array(p1)))
    return out


def segments_to_polyline(segments: list[Segment]) -> tuple[np.ndarray, np.ndarray]:
    times = np.array([segments[0].t_start] + [s.t_end for s in segments])
    pts = np.vstack([segments[0].start] + [s.end for s in segments])
    return times, pts

"""The coefficient field A(x): parsing, evaluation, symbol and generator quadrature."""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property
from typing import Callable, Sequence

import numba as nb
import numpy as np
from scipy.stats import qmc

from . import expr
from .expr import Node
from .stable_driver import StableParams, levy_constant

DEFAULT_HALF_WIDTH = 10.0
DET_FLOOR = 1e-12


class NondegeneracyError(ValueError):
    """A probed determinant of A(x) is zero or numerically zero."""


class QuadratureError(RuntimeError):
    """Generator quadrature failed to converge under panel refinement."""


class OutOfRegionWarning(UserWarning):
    pass


#: Levy mass of one coordinate left beyond the default tail radius
TAIL_MASS = 0.008


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization of the generator integral along one axis.

    ``|w| <= inner_cutoff`` uses the second-order Taylor surrogate; log-spaced
    Gauss-Legendre panels cover ``[inner_cutoff, 1]`` and ``[1, log_to]``;
    equal-width panels cover ``[log_to, tail_radius]``; beyond ``tail_radius``
    the integrand is replaced by its weighted mean on the last band times the
    exact power-law mass.

    ``tail_radius=None`` picks the radius whose neglected Levy mass is about
    ``TAIL_MASS`` (clipped to ``[1e3, 1e5]``); ``linear_panels=None`` keeps
    the equal-width panels about one unit wide.
    """

    inner_cutoff: float = 1e-3
    taylor_order: int = 2
    log_panels: int = 32
    linear_panels: int | None = None
    nodes_per_panel: int = 16
    log_to: float = 10.0
    tail_radius: float | None = None
    fd_step: float = 1e-5
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.taylor_order != 2:
            raise ValueError("only the second-order Taylor surrogate is implemented")
        if self.log_panels < 16 or (self.linear_panels is not None and self.linear_panels < 16):
            raise ValueError("panel counts must be at least 16")
        if self.tail_radius is not None and self.tail_radius < 10.0:
            raise ValueError("tail radius must be at least 10")
        radius = math.inf if self.tail_radius is None else self.tail_radius
        if not (0.0 < self.inner_cutoff < 1.0 < self.log_to < radius):
            raise ValueError("need 0 < inner_cutoff < 1 < log_to < tail_radius")

    def resolved(self, alpha: float, c1: float) -> "QuadratureSpec":
        """Concrete radius and panel count for one alpha and density constant."""
        radius = self.tail_radius
        if radius is None:
            radius = (2.0 * c1 / (alpha * TAIL_MASS)) ** (1.0 / alpha)
            radius = float(min(max(radius, 1e3), 1e5))
        panels = self.linear_panels
        if panels is None:
            panels = max(1024, int(math.ceil(radius - self.log_to)))
        return replace(self, tail_radius=radius, linear_panels=panels)

    def refined(self, factor: int) -> "QuadratureSpec":
        if self.linear_panels is None:
            raise ValueError("resolve the spec before refining it")
        # the Taylor core shrinks too, so its error shows up in the refinement sequence
        return replace(self, inner_cutoff=self.inner_cutoff / factor,
                       log_panels=self.log_panels * factor,
                       linear_panels=self.linear_panels * factor)


@dataclass(frozen=True)
class FieldProgram:
    """Postfix bytecode of all d*d entries, laid out row-major."""

    ops: np.ndarray
    args: np.ndarray
    offsets: np.ndarray
    stack_size: int
    is_constant: bool
    constant_matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class MatrixField:
    """A(x) on R^d, given entrywise by expressions in x1..xd.

    ``region`` is a box ``((lo1, hi1), ..., (lod, hid))`` on which the field is
    declared valid; ``lambda_bound`` is the reported bound on the entries of A
    and A^-1 (filled by :func:`assert_nondegenerate` when not given).
    """

    d: int
    entries: tuple[tuple[Node, ...], ...]
    region: tuple[tuple[float, float], ...]
    lambda_bound: float | None = None
    texts: tuple[str, ...] = dc_field(default=(), compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        if len(self.entries) != self.d or any(len(r) != self.d for r in self.entries):
            raise ValueError(f"entries must form a {self.d}x{self.d} array")
        if len(self.region) != self.d or any(not lo < hi for lo, hi in self.region):
            raise ValueError("region must be a nondegenerate box of matching dimension")
        for row in self.entries:
            for node in row:
                if any(i > self.d for i in expr.variables(node)):
                    raise ValueError(f"entry {expr.to_text(node)} uses a variable beyond x{self.d}")

    # construction helpers

    @classmethod
    def from_strings(cls, entries: Sequence[str] | Sequence[Sequence[str]], d: int | None = None,
                     region=None, lambda_bound: float | None = None) -> "MatrixField":
        flat = [e for row in entries for e in row] if entries and not isinstance(entries[0], str) \
            else list(entries)
        if d is None:
            d = math.isqrt(len(flat))
        if len(flat) != d * d:
            raise ValueError(f"expected {d * d} entry expressions, got {len(flat)}")
        nodes = [expr.parse_entry_expression(t, d) for t in flat]
        grid = tuple(tuple(nodes[i * d:(i + 1) * d]) for i in range(d))
        return cls(d, grid, _as_region(region, d), lambda_bound, tuple(flat))

    @classmethod
    def identity(cls, d: int, region=None) -> "MatrixField":
        texts = ["1" if i == j else "0" for i in range(d) for j in range(d)]
        return cls.from_strings(texts, d, region)

    @classmethod
    def constant(cls, matrix, region=None) -> "MatrixField":
        m = np.asarray(matrix, dtype=float)
        d = m.shape[0]
        return cls.from_strings([repr(float(v)) if v >= 0 else f"-{repr(float(-v))}"
                                 for v in m.ravel()], d, region)

    # derived data

    @property
    def entry_texts(self) -> tuple[str, ...]:
        if self.texts:
            return self.texts
        return tuple(expr.to_text(n) for row in self.entries for n in row)

    @cached_property
    def program(self) -> FieldProgram:
        ops, args, offsets = [], [], [0]
        depth = 1
        for row in self.entries:
            for node in row:
                o, a, dep = expr.compile_postfix(node)
                ops += o
                args += a
                offsets.append(len(ops))
                depth = max(depth, dep)
        is_const = all(not expr.variables(n) for row in self.entries for n in row)
        const = np.zeros((self.d, self.d))
        if is_const:
            const = np.array([[float(expr.evaluate(n, np.zeros(self.d))) for n in row]
                              for row in self.entries])
        return FieldProgram(np.array(ops, dtype=np.int64), np.array(args, dtype=np.float64),
                            np.array(offsets, dtype=np.int64), depth, is_const, const)

    @cached_property
    def digest(self) -> str:
        text = "|".join(expr.to_text(n) for row in self.entries for n in row)
        text += "|" + repr(self.region)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return all(lo <= xi <= hi for xi, (lo, hi) in zip(x, self.region))


def _as_region(region, d: int) -> tuple[tuple[float, float], ...]:
    if region is None:
        return tuple((-DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH) for _ in range(d))
    region = [tuple(map(float, r)) for r in region]
    if len(region) == 1 and d > 1:
        region = region * d
    return tuple(region)


# --- numba evaluator ----------------------------------------------------------

@nb.njit(cache=True)
def eval_entry(ops, args, start, stop, x, stack):
    sp = 0
    for i in range(start, stop):
        op = ops[i]
        if op == 0:
            stack[sp] = args[i]
            sp += 1
        elif op == 1:
            stack[sp] = x[int(args[i])]
            sp += 1
        elif op == 2:
            stack[sp - 1] = -stack[sp - 1]
        elif op <= 5:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 3:
                stack[sp - 1] = a + b
            elif op == 4:
                stack[sp - 1] = a - b
            else:
                stack[sp - 1] = a * b
        elif op == 6:
            stack[sp - 1] = math.sin(stack[sp - 1])
        elif op == 7:
            stack[sp - 1] = math.cos(stack[sp - 1])
        elif op == 8:
            stack[sp - 1] = math.exp(stack[sp - 1])
        elif op == 9:
            stack[sp - 1] = abs(stack[sp - 1])
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 10:
                stack[sp - 1] = min(a, b)
            else:
                stack[sp - 1] = max(a, b)
    return stack[0]


@nb.njit(cache=True)
def eval_matrix(ops, args, offsets, is_const, const, x, stack, out):
    d = out.shape[0]
    if is_const:
        for i in range(d):
            for j in range(d):
                out[i, j] = const[i, j]
        return
    for i in range(d):
        for j in range(d):
            k = i * d + j
            out[i, j] = eval_entry(ops, args, offsets[k], offsets[k + 1], x, stack)


@nb.njit(cache=True)
def _eval_many(ops, args, offsets, is_const, const, xs, stack_size):
    n, d = xs.shape
    out = np.empty((n, d, d))
    stack = np.empty(stack_size)
    for p in range(n):
        eval_matrix(ops, args, offsets, is_const, const, xs[p], stack, out[p])
    return out


def kernel_args(f: MatrixField) -> tuple:
    """Field arguments in the order the path kernels take them."""
    p = f.program
    return (p.ops, p.args, p.offsets, p.is_constant, p.constant_matrix, p.stack_size)


def evaluate_compiled(f: MatrixField, xs) -> np.ndarray:
    """A at each row of ``xs`` through the kernel evaluator."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    p = f.program
    return _eval_many(p.ops, p.args, p.offsets, p.is_constant, p.constant_matrix, xs,
                      p.stack_size)


# --- operations ---------------------------------------------------------------

def evaluate(f: MatrixField, x) -> np.ndarray:
    """A(x) for a point ``(d,)`` or a batch ``(m, d)``; warns outside the region."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != f.d:
        raise ValueError(f"expected points of dimension {f.d}, got shape {x.shape}")
    lo = np.array([r[0] for r in f.region])
    hi = np.array([r[1] for r in f.region])
    if np.any((x < lo) | (x > hi)):
        warnings.warn("probe point outside the field's declared region", OutOfRegionWarning,
                      stacklevel=2)
    shape = x.shape[:-1] + (f.d, f.d)
    out = np.empty(shape)
    for i, row in enumerate(f.entries):
        for j, node in enumerate(row):
            out[..., i, j] = expr.evaluate(node, x)
    return out


@dataclass(frozen=True)
class NondegeneracyReport:
    min_abs_det: float
    argmin: np.ndarray
    lambda_estimate: float
    max_entry: float
    max_inverse_entry: float
    samples: int


def assert_nondegenerate(f: MatrixField, sample_count: int = 4096,
                         rng: np.random.Generator | int | None = 0) -> NondegeneracyReport:
    """Probe det A over the region with a scrambled Sobol set.

    Raises :class:`NondegeneracyError` if any probed ``|det| < 1e-12``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    sampler = qmc.Sobol(d=f.d, scramble=True, seed=rng)
    m = 1 << max(0, math.ceil(math.log2(sample_count)))
    pts = sampler.random(m)[:sample_count]
    lo = np.array([r[0] for r in f.region])
    hi = np.array([r[1] for r in f.region])
    xs = qmc.scale(pts, lo, hi)
    xs = np.vstack([xs, (lo + hi) / 2])
    mats = evaluate_compiled(f, xs)
    dets = np.linalg.det(mats)
    k = int(np.argmin(np.abs(dets)))
    min_det = float(abs(dets[k]))
    if not min_det >= DET_FLOOR:
        raise NondegeneracyError(
            f"A(x) is singular (|det| = {min_det:.3g}) at x = {xs[k].tolist()}")
    inv = np.linalg.inv(mats)
    max_a = float(np.max(np.abs(mats)))
    max_inv = float(np.max(np.abs(inv)))
    return NondegeneracyReport(min_det, xs[k], max(max_a, max_inv), max_a, max_inv, len(xs))


def symbol(f: MatrixField, x, u, alpha: float | StableParams) -> float:
    """sum_j |u . a_j(x)|^alpha, with a_j the j-th column of A(x)."""
    a = alpha.alpha if isinstance(alpha, StableParams) else float(alpha)
    m = evaluate(f, x)
    proj = np.asarray(u, dtype=float) @ m
    return float(np.sum(np.abs(proj) ** a))


def oscillation(f: MatrixField, box, points_per_axis: int = 41) -> float:
    """max over entries of (max - min) of A on a grid of ``box``."""
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, f.d)
    mats = evaluate_compiled(f, grid)
    return float(np.max(mats.max(axis=0) - mats.min(axis=0)))


def scaled_field(f: MatrixField, lam: float) -> MatrixField:
    """The field x -> A(x / lam), valid on the region scaled by lam."""
    if not lam > 0.0:
        raise ValueError("lambda must be positive")
    factor = 1.0 / lam
    entries = tuple(tuple(expr.substitute_scaled(n, factor) for n in row) for row in f.entries)
    region = tuple((lo * lam, hi * lam) for lo, hi in f.region)
    return MatrixField(f.d, entries, region, f.lambda_bound)


# --- generator quadrature -----------------------------------------------------

def _gauss_panels(a: float, b: float, panels: int, nodes: int):
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    return (mid[:, None] + half[:, None] * xg).ravel(), (half[:, None] * wg).ravel()


def _axis_integral(fv: Callable, x: np.ndarray, a: np.ndarray, fx: float, slope: float,
                   c1: float, alpha: float, q: QuadratureSpec) -> float:
    """int_{R \\ 0} [f(x+aw) - f(x) - w 1{|w|<=1} slope] c1 |w|^(-1-alpha) dw."""
    norm_a = float(np.linalg.norm(a))
    if norm_a == 0.0:
        return 0.0

    def compensated(w):
        pts = x[None, :] + w[:, None] * a[None, :]
        comp = np.where(np.abs(w) <= 1.0, w * slope, 0.0)
        return fv(pts) - fx - comp

    # Taylor core: the first-order term cancels against the compensator
    h = q.fd_step * max(1.0, float(np.linalg.norm(x))) / norm_a
    fpm = fv(np.vstack([x + h * a, x - h * a]))
    second = (fpm[0] + fpm[1] - 2.0 * fx) / (h * h)
    eps = q.inner_cutoff
    total = second * c1 * eps ** (2.0 - alpha) / (2.0 - alpha)

    n = q.nodes_per_panel
    s1, ws1 = _gauss_panels(math.log(eps), 0.0, q.log_panels, n)
    s2, ws2 = _gauss_panels(0.0, math.log(q.log_to), q.log_panels, n)
    s = np.concatenate([s1, s2])
    w = np.exp(s)
    weight = c1 * w ** (-alpha) * np.concatenate([ws1, ws2])  # dw/w absorbed by ds
    total += np.sum((compensated(w) + compensated(-w)) * weight)

    w, ww = _gauss_panels(q.log_to, q.tail_radius, q.linear_panels, n)
    weight = c1 * w ** (-1.0 - alpha) * ww
    total += np.sum((compensated(w) + compensated(-w)) * weight)

    # beyond R: exact power-law mass times the weighted mean over [R/4, R]
    w, ww = _gauss_panels(0.25 * q.tail_radius, q.tail_radius, max(16, q.linear_panels // 4), n)
    weight = w ** (-1.0 - alpha) * ww
    mean = np.sum((compensated(w) + compensated(-w)) * weight) / np.sum(weight)
    total += mean * c1 * q.tail_radius ** (-alpha) / alpha
    return float(total)


def _central_gradient(fv, x: np.ndarray, step: float) -> np.ndarray:
    d = len(x)
    pts = np.vstack([x + step * np.eye(d), x - step * np.eye(d)])
    vals = fv(pts)
    return (vals[:d] - vals[d:]) / (2.0 * step)


def apply_generator(f: MatrixField, func: Callable, x, params: StableParams,
                    quad: QuadratureSpec | None = None, grad: Callable | None = None,
                    vectorized: bool = False, full_output: bool = False):
    """Quadrature value of the generator applied to ``func`` at ``x``.

    ``func`` maps a point of R^d to a real; with ``vectorized=True`` it maps an
    ``(m, d)`` array to ``(m,)``. The gradient in the compensator comes from
    ``grad`` when supplied, else central differences. The panel counts are
    doubled twice; if the second correction exceeds both half the first and
    ``quad.tolerance`` (relative to max(1, |value|)), the quadrature is declared
    unconverged.

    Returns the value, or ``(value, error_estimate)`` with ``full_output``.
    """
    x = np.asarray(x, dtype=float)
    if vectorized:
        fv = lambda pts: np.asarray(func(pts), dtype=float)
    else:
        fv = lambda pts: np.fromiter((func(p) for p in pts), dtype=float, count=len(pts))
    if not f.contains(x):
        warnings.warn("generator evaluated outside the field's declared region",
                      OutOfRegionWarning, stacklevel=2)
    alpha = params.alpha
    c1 = levy_constant(alpha) * params.scale ** alpha
    quad = (quad or QuadratureSpec()).resolved(alpha, c1)
    m = evaluate_compiled(f, x[None, :])[0]
    fx = float(fv(x[None, :])[0])
    step = quad.fd_step * max(1.0, float(np.linalg.norm(x)))
    gradient = np.asarray(grad(x), dtype=float) if grad is not None else _central_gradient(fv, x, step)

    levels = []
    for factor in (1, 2, 4):
        q = quad.refined(factor)
        levels.append(sum(_axis_integral(fv, x, m[:, j], fx, float(gradient @ m[:, j]),
                                         c1, alpha, q) for j in range(f.d)))
    d1 = abs(levels[1] - levels[0])
    d2 = abs(levels[2] - levels[1])
    floor = quad.tolerance * max(1.0, abs(levels[2]))
    if d2 > floor and d2 > 0.5 * d1:
        raise QuadratureError(
            f"generator quadrature not converging: corrections {d1:.3g} then {d2:.3g}")
    value = levels[2]
    return (value, max(d2, floor)) if full_output else value


@dataclass(frozen=True)
class GeneratorProbe:
    matrix: np.ndarray
    x: np.ndarray
    u: np.ndarray
    quadrature: float
    exact: float

    @property
    def error(self) -> float:
        return abs(self.quadrature - self.exact)


def generator_check(params: StableParams, probes: int = 20, d: int = 2, seed: int = 0,
                    quad: QuadratureSpec | None = None) -> list[GeneratorProbe]:
    """Compare the quadrature generator on ``cos(u . x)`` with ``-symbol * cos(u . x)``.

    Each probe draws a constant field ``I + U(-1, 1)``, a point in ``[-1, 1]^d``
    and a frequency in ``[-2, 2]^d`` from the ``(seed, 0)`` stream.
    """
    from .rng import path_generator

    rng = path_generator(seed, 0)
    out = []
    for _ in range(probes):
        m = np.eye(d) + rng.uniform(-1.0, 1.0, (d, d))
        while abs(np.linalg.det(m)) < 0.05:
            m = np.eye(d) + rng.uniform(-1.0, 1.0, (d, d))
        x = rng.uniform(-1.0, 1.0, d)
        u = rng.uniform(-2.0, 2.0, d)
        fld = MatrixField.constant(m)
        val = apply_generator(fld, lambda p, u=u: np.cos(p @ u), x, params, quad, vectorized=True,
                              grad=lambda p, u=u: -np.sin(p @ u) * u)
        exact = -symbol(fld, x, u, params) * math.cos(float(x @ u))
        out.append(GeneratorProbe(m, x, u, float(val), exact))
    return out

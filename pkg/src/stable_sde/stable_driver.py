"""Symmetric alpha-stable driver: exact increments and the large/small jump split.

Normalization: a unit-time increment has characteristic function
``exp(-|scale * u|**alpha)``.  With this choice the Levy density of one
coordinate is ``c1 * |h|**(-1 - alpha)`` where ``c1`` is fixed by
:func:`levy_constant`, and the symbol constant of the generator is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import integrate

from .rng import uniform_pair

#: alpha within this distance of 1 uses the Cauchy branch of the sampler
ALPHA_ONE_TOL = 1e-6


@dataclass(frozen=True)
class StableParams:
    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def levy_c1(self) -> float:
        """Density constant of the Levy measure, scale included."""
        return levy_constant(self.alpha) * self.scale**self.alpha


@dataclass(frozen=True)
class TruncationScheme:
    """Jumps with ``|size| > beta`` are treated as large (compound Poisson)."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class JumpEvent:
    time: float
    coordinate: int  # 1-based axis index
    size: float


def _one_minus_cos_over_sq(h: float) -> float:
    if h == 0.0:
        return 0.5
    s = math.sin(0.5 * h)
    return 2.0 * s * s / (h * h)


@lru_cache(maxsize=None)
def levy_constant(alpha: float) -> float:
    """c1 such that ``int (1 - cos(u h)) c1 |h|^(-1-alpha) dh = |u|^alpha``.

    Computed once per alpha by quadrature of ``int_0^inf (1 - cos h) h^(-1-alpha) dh``:
    algebraic-weight quadrature on (0, 1], Fourier quadrature on the tail.
    """
    if not (0.0 < alpha < 2.0):
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    # (1 - cos h) h^(-1-alpha) = [(1 - cos h)/h^2] * h^(1-alpha)
    head, _ = integrate.quad(_one_minus_cos_over_sq, 0.0, 1.0,
                             weight="alg", wvar=(1.0 - alpha, 0.0), epsabs=0.0, epsrel=1e-12)
    # int_1^inf cos(h) h^(-1-alpha) dh, integrated by parts twice for faster decay
    rest, _ = integrate.quad(lambda h: h ** (-3.0 - alpha), 1.0, np.inf,
                             weight="cos", wvar=1.0, epsabs=1e-12)
    tail_cos = -math.sin(1.0) + (1.0 + alpha) * (math.cos(1.0) - (2.0 + alpha) * rest)
    total = head + 1.0 / alpha - tail_cos
    return 1.0 / (2.0 * total)


def levy_constant_closed_form(alpha: float) -> float:
    """Gamma(1 + alpha) sin(pi alpha / 2) / pi."""
    return math.gamma(1.0 + alpha) * math.sin(0.5 * math.pi * alpha) / math.pi


# --- scalar kernels (numba) -------------------------------------------------

@nb.njit(inline="always", cache=True)
def cms_standard(alpha, u, w_uniform):
    """Chambers-Mallows-Stuck map of U(0,1) pair to a standard symmetric stable variate.

    ``w_uniform`` becomes the Exp(1) variable through ``-log``.
    """
    v = math.pi * (u - 0.5)
    if abs(alpha - 1.0) < ALPHA_ONE_TOL:
        return math.tan(v)
    w = -math.log(w_uniform)
    return (math.sin(alpha * v) / math.cos(v) ** (1.0 / alpha)
            * (math.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))


@nb.njit(inline="always", cache=True)
def stable_draw(alpha, seed, path, step, slot):
    u, w = uniform_pair(seed, path, step, slot)
    return cms_standard(alpha, u, w)


@nb.njit(cache=True)
def _driver_increments(alpha, factor, n_steps, d, seed, path):
    out = np.empty((n_steps, d))
    for k in range(n_steps):
        for j in range(d):
            out[k, j] = factor * stable_draw(alpha, seed, path, k, j)
    return out


# --- public operations ------------------------------------------------------

def sample_increment(params: StableParams, dt: float, rng: np.random.Generator, size=None):
    """Exact increment(s) of the driver over a time step ``dt``.

    Characteristic function ``exp(-dt |scale u|^alpha)``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    u = rng.random(size)
    w = rng.standard_exponential(size)
    v = np.pi * (u - 0.5)
    a = params.alpha
    if abs(a - 1.0) < ALPHA_ONE_TOL:
        s = np.tan(v)
    else:
        s = (np.sin(a * v) / np.cos(v) ** (1.0 / a)
             * (np.cos((1.0 - a) * v) / w) ** ((1.0 - a) / a))
    return params.scale * dt ** (1.0 / a) * s


def driver_increments(params: StableParams, dt: float, n_steps: int, d: int,
                      seed: int, path: int = 0) -> np.ndarray:
    """Driver increments of one path as the fixed-step engine consumes them.

    Shape ``(n_steps, d)``; row ``k`` is ``Z_{(k+1) dt} - Z_{k dt}``.
    """
    factor = params.scale * dt ** (1.0 / params.alpha)
    return _driver_increments(float(params.alpha), float(factor), int(n_steps), int(d),
                              np.int64(seed), np.int64(path))


def large_jump_rate(params: StableParams, scheme: TruncationScheme) -> float:
    """Levy mass of ``{|h| > beta}`` for one coordinate: ``2 c1 beta^-alpha / alpha``."""
    return 2.0 * params.levy_c1 * scheme.beta ** (-params.alpha) / params.alpha


def sample_large_jumps(params: StableParams, scheme: TruncationScheme, horizon: float,
                       rng: np.random.Generator, coordinate: int = 1) -> list[JumpEvent]:
    """Jumps of size exceeding beta on ``[0, horizon]`` for one driver coordinate."""
    if not horizon > 0.0:
        raise ValueError("horizon must be positive")
    count = rng.poisson(large_jump_rate(params, scheme) * horizon)
    times = np.sort(rng.uniform(0.0, horizon, count))
    # |h| has tail (|h|/beta)^-alpha above beta; 1 - U keeps the base in (0, 1]
    mags = scheme.beta * (1.0 - rng.random(count)) ** (-1.0 / params.alpha)
    signs = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    return [JumpEvent(float(t), coordinate, float(s * m)) for t, s, m in zip(times, signs, mags)]


def small_jump_variance(params: StableParams, scheme: TruncationScheme, t: float) -> float:
    """``t * int_{-beta}^{beta} x^2 c1 |x|^(-1-alpha) dx = t * 2 c1 beta^(2-alpha) / (2-alpha)``."""
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    a = params.alpha
    return t * 2.0 * params.levy_c1 * scheme.beta ** (2.0 - a) / (2.0 - a)


def choose_beta(t0: float, delta: float, d: int, params: StableParams, c4: float,
                cap: float | None = None) -> float:
    """Largest cut with ``c4 t0 beta^(2-alpha) <= delta^2 / (2 d)``, optionally capped."""
    if min(t0, delta, d, c4) <= 0:
        raise ValueError("t0, delta, d and c4 must be positive")
    beta = (delta * delta / (2.0 * d * c4 * t0)) ** (1.0 / (2.0 - params.alpha))
    if cap is not None:
        beta = min(beta, cap)
    return beta

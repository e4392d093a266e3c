"""Counter-based random streams.

Every simulated path owns a logical stream identified by ``(seed, path_id)``.
Draws inside the stream are addressed by ``(step, slot)``, so the numbers a
path sees never depend on how paths are batched or scheduled. The block
function is Philox4x32-10 (Salmon et al., SC'11), written for numba so that
the path kernels can call it per draw.
"""

from __future__ import annotations

import math
import os

import numba as nb
import numpy as np

SEED_ENV_VAR = "STABLE_SDE_SEED"

_MASK32 = 0xFFFFFFFF
_INV_2_53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on a 128-bit counter with a 64-bit key."""
    for _ in range(10):
        p0 = np.uint64(0xD2511F53) * np.uint64(c0)
        p1 = np.uint64(0xCD9E8D57) * np.uint64(c2)
        hi0 = np.uint32(p0 >> np.uint64(32))
        lo0 = np.uint32(p0 & np.uint64(_MASK32))
        hi1 = np.uint32(p1 >> np.uint64(32))
        lo1 = np.uint32(p1 & np.uint64(_MASK32))
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + np.uint32(0x9E3779B9))
        k1 = np.uint32(k1 + np.uint32(0xBB67AE85))
    return c0, c1, c2, c3


@nb.njit(inline="always", cache=True)
def uniform_pair(seed, path, step, slot):
    """Two independent U(0,1) doubles (53-bit, never 0 or 1) for one draw address."""
    a, b, c, d = philox4x32(
        np.uint32(step & _MASK32),
        np.uint32(slot & _MASK32),
        np.uint32(path & _MASK32),
        np.uint32((path >> 32) & _MASK32),
        np.uint32(seed & _MASK32),
        np.uint32((seed >> 32) & _MASK32),
    )
    x = (np.uint64(a) >> np.uint64(5)) * np.uint64(67108864) + (np.uint64(b) >> np.uint64(6))
    y = (np.uint64(c) >> np.uint64(5)) * np.uint64(67108864) + (np.uint64(d) >> np.uint64(6))
    return (np.float64(x) + 0.5) * _INV_2_53, (np.float64(y) + 0.5) * _INV_2_53


@nb.njit(inline="always", cache=True)
def normal_from_pair(u1, u2):
    # Box-Muller, cosine branch only
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True)
def _uniform_block(seed, path, n_steps, slot):
    out = np.empty((n_steps, 2))
    for k in range(n_steps):
        u, v = uniform_pair(seed, path, k, slot)
        out[k, 0] = u
        out[k, 1] = v
    return out


def uniform_block(seed: int, path: int, n_steps: int, slot: int = 0) -> np.ndarray:
    """Uniform pairs for steps ``0..n_steps-1`` of one path, shape ``(n_steps, 2)``."""
    return _uniform_block(np.int64(seed), np.int64(path), n_steps, slot)


def philox_block(counter, key) -> tuple[int, int, int, int]:
    """Raw Philox4x32-10 block, exposed for known-answer checks."""
    c = [np.uint32(v) for v in counter]
    k = [np.uint32(v) for v in key]
    return tuple(int(v) for v in _philox_raw(c[0], c[1], c[2], c[3], k[0], k[1]))


@nb.njit(cache=True)
def _philox_raw(c0, c1, c2, c3, k0, k1):
    return philox4x32(c0, c1, c2, c3, k0, k1)


def path_generator(seed: int, path: int = 0) -> np.random.Generator:
    """A numpy Generator for pure-Python consumers of the ``(seed, path)`` stream.

    Uses numpy's own Philox with the 128-bit key ``seed | path << 64``.
    """
    key = (int(seed) & ((1 << 64) - 1)) | (int(path) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def resolve_seed(seed: int | None) -> int:
    """Explicit seed, else ``$STABLE_SDE_SEED``, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip():
        return int(env)
    return 0


def mix_seed(seed: int, *tags: int) -> int:
    """Derive a child seed from a parent seed and integer tags, deterministically."""
    a, b, c, d = philox_block(
        (tags[0] if len(tags) > 0 else 0, tags[1] if len(tags) > 1 else 0,
         tags[2] if len(tags) > 2 else 0, 0x5EED),
        (seed & _MASK32, (seed >> 32) & _MASK32),
    )
    return (a << 32 | b) & ((1 << 63) - 1)


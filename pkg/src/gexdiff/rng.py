"""Seedable xoshiro256** generator with Box-Muller Gaussians.

Every random draw in the package goes through :class:`Xoshiro256` so that a
seed fully determines a run. The stream is defined as follows, so other
implementations can reproduce it bit for bit:

* Seeding: the four state words are successive outputs of splitmix64 started
  from the 64-bit seed (``x += 0x9E3779B97F4A7C15``; ``z = x``;
  ``z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9``;
  ``z = (z ^ z >> 27) * 0x94D049BB133111EB``; output ``z ^ z >> 31``).
* Update (xoshiro256**): ``out = rotl(s1 * 5, 7) * 9``; ``t = s1 << 17``;
  ``s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)``.
* Uniform double in [0, 1): ``(out >> 11) * 2**-53``.
* Integers in ``[low, high]``: rejection of ``out < (2**64 - r) % r`` with
  ``r = high - low + 1``, then ``low + out % r``.
* Gaussians: Box-Muller on consecutive uniform pairs ``(u1, u2)`` with
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``. An odd request discards the unused sine value.
* Splitting: the child stream for index ``i`` is ``Xoshiro256(seed ^ i)``.
"""

from __future__ import annotations

import numba
import numpy as np

_MASK = (1 << 64) - 1
_U64 = np.uint64


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << _U64(k)) | (x >> _U64(64 - k))


@numba.njit(cache=True)
def _splitmix_state(seed):
    state = np.empty(4, dtype=np.uint64)
    x = _U64(seed)
    for i in range(4):
        x = x + _U64(0x9E3779B97F4A7C15)
        z = x
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        state[i] = z ^ (z >> _U64(31))
    return state


@numba.njit(cache=True)
def _next(s):
    result = _rotl(s[1] * _U64(5), 7) * _U64(9)
    t = s[1] << _U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@numba.njit(cache=True)
def _fill_u64(s, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _next(s)
    return out


@numba.njit(cache=True)
def _fill_uniform(s, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = np.float64(_next(s) >> _U64(11)) * (1.0 / 9007199254740992.0)
    return out


@numba.njit(cache=True)
def _fill_normal(s, n):
    out = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        u1 = np.float64(_next(s) >> _U64(11)) * (1.0 / 9007199254740992.0)
        u2 = np.float64(_next(s) >> _U64(11)) * (1.0 / 9007199254740992.0)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        theta = 2.0 * np.pi * u2
        out[i] = r * np.cos(theta)
        if i + 1 < n:
            out[i + 1] = r * np.sin(theta)
        i += 2
    return out


@numba.njit(cache=True)
def _fill_integers(s, low, span, n):
    # span = high - low + 1, as uint64; span == 0 encodes the full 2**64 range
    out = np.empty(n, dtype=np.int64)
    threshold = (_U64(0) - span) % span
    for i in range(n):
        x = _next(s)
        while x < threshold:
            x = _next(s)
        out[i] = low + np.int64(x % span)
    return out


@numba.njit(cache=True)
def _permutation(s, n):
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        span = _U64(i + 1)
        threshold = (_U64(0) - span) % span
        x = _next(s)
        while x < threshold:
            x = _next(s)
        j = np.int64(x % span)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm


class Xoshiro256:
    """xoshiro256** stream. All draws advance one shared 256-bit state."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK
        self._s = _splitmix_state(_U64(self.seed))

    @classmethod
    def from_state(cls, state) -> "Xoshiro256":
        gen = cls.__new__(cls)
        gen.seed = None
        gen._s = np.array(state, dtype=np.uint64).copy()
        if gen._s.shape != (4,) or not gen._s.any():
            raise ValueError("state must be four words, not all zero")
        return gen

    @property
    def state(self) -> np.ndarray:
        return self._s.copy()

    def split(self, index: int) -> "Xoshiro256":
        if self.seed is None:
            raise ValueError("cannot split a generator restored from raw state")
        return Xoshiro256(self.seed ^ (int(index) & _MASK))

    def next_u64(self, n: int = 1) -> np.ndarray:
        return _fill_u64(self._s, int(n))

    def uniform(self, n: int = 1) -> np.ndarray:
        return _fill_uniform(self._s, int(n))

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        size = int(np.prod(shape, dtype=np.int64))
        return _fill_normal(self._s, size).reshape(shape)

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """``n`` uniform integers in ``[low, high]`` inclusive."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        span = (high - low + 1) & _MASK
        return _fill_integers(self._s, np.int64(low), _U64(span), int(n))

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top down."""
        return _permutation(self._s, int(n))

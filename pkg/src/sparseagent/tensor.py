"""Deterministic float64 arithmetic and seeded random streams.

Tensors are plain ``numpy.float64`` arrays. Everything here is written so that
a run replays bit-for-bit on any platform: reductions have a fixed order and
random draws come from a counter-based generator with explicit key splitting.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox

_TWO_53 = float(2**53)
_MASK64 = (1 << 64) - 1


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed left-to-right summation over the inner index.

    BLAS is free to reorder (and fuse) the inner sum, which breaks bit-exact
    replay across machines, so the product is accumulated one rank-1 term at
    a time instead. Matches a naive triple loop exactly.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def sum_rows(a) -> np.ndarray:
    """Column sums of a rank-2 tensor, accumulated top to bottom."""
    a = as_tensor(a)
    out = np.zeros(a.shape[1:])
    for row in a:
        out += row
    return out


def topk_indices(values, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, returned in ascending index order.

    Ties go to the lower index.
    """
    values = as_tensor(values).ravel()
    if not 0 <= k <= values.size:
        raise ValueError(f"k={k} outside [0, {values.size}]")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    # stable sort on the negated values keeps equal entries in index order
    order = np.argsort(-values, kind="stable")
    return np.sort(order[:k])


def _as_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(d) for d in shape)


def _numel(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


class RngStream:
    """Counter-based random stream (Philox-4x64) keyed by ``(seed, stream)``.

    The 128-bit Philox key is ``seed | stream << 64``, so substreams with
    different ids never overlap. The full state is the number of 64-bit words
    consumed, which makes checkpointing a single integer.

    Uniform doubles take the top 53 bits of one word; normals use the
    Box-Muller transform on pairs of uniforms.
    """

    def __init__(self, seed: int, stream: int = 0, position: int = 0):
        if not (0 <= seed <= _MASK64 and 0 <= stream <= _MASK64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream = int(stream)
        self._bitgen = Philox(key=self.seed | (self.stream << 64))
        self.position = 0
        if position:
            self._skip(int(position))

    def _skip(self, n: int):
        self._bitgen.advance(n // 4)
        self._bitgen.random_raw(n % 4)
        self.position += n

    def spawn(self, stream: int) -> "RngStream":
        """Independent stream sharing this seed (counter reset to zero)."""
        return RngStream(self.seed, stream)

    def fork(self) -> "RngStream":
        """Child stream whose key is drawn from this one; consumes one word."""
        return RngStream(int(self.raw(1)[0]), self.stream)

    def state(self) -> tuple[int, int, int]:
        return self.seed, self.stream, self.position

    @classmethod
    def from_state(cls, state) -> "RngStream":
        seed, stream, position = state
        return cls(seed, stream, position)

    def raw(self, n: int) -> np.ndarray:
        self.position += int(n)
        return self._bitgen.random_raw(int(n))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform doubles in ``[low, high)``."""
        shape = _as_shape(shape)
        u = (self.raw(_numel(shape)) >> np.uint64(11)).astype(np.float64) / _TWO_53
        return (low + (high - low) * u).reshape(shape)

    def gaussian(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """i.i.d. normal samples via Box-Muller.

        ``std == 0`` still consumes draws so the stream position does not
        depend on the value of ``std``.
        """
        if std < 0:
            raise ValueError(f"std must be non-negative, got {std}")
        shape = _as_shape(shape)
        n = _numel(shape)
        pairs = (n + 1) // 2
        u = (self.raw(2 * pairs) >> np.uint64(11)).astype(np.float64) / _TWO_53
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(2.0 * np.pi * u2)
        z[1::2] = radius * np.sin(2.0 * np.pi * u2)
        return (mean + std * z[:n]).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, sorted ascending."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n}")
        return np.sort(self.permutation(n)[:k])

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, position={self.position})"


def gaussian(rng: RngStream, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    return rng.gaussian(shape, mean, std)

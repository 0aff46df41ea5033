"""Count-Min Sketch with mergeable, seed-shared hash rows.

Row ``j`` hashes an integer key ``x`` with ``((a_j x + b_j) mod p) mod w``
where ``p = 2**31 - 1``.  Keys are 31-bit fingerprints of token sequences;
:func:`fingerprint` is vectorised so the learner can hash every prefix of a
whole dataset layer in one pass.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import IncompatibleSketchError, UsageError

MERSENNE_P = (1 << 31) - 1

_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_SEED = np.uint64(0x9E3779B97F4A7C15)
_LEN = np.uint64(0xD6E8FEB86659FD93)


@np.errstate(over="ignore")
def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _C1
    z = z ^ (z >> np.uint64(27))
    z = z * _C2
    return z ^ (z >> np.uint64(31))


def hash_start(shape) -> np.ndarray:
    return np.full(shape, _SEED, dtype=np.uint64)


def hash_push(state: np.ndarray, token_ids) -> np.ndarray:
    """Absorb one token id per row into a running hash state."""
    return _mix(state ^ (np.asarray(token_ids, dtype=np.uint64) + np.uint64(1)))


@np.errstate(over="ignore")
def hash_finish(state: np.ndarray, length: int) -> np.ndarray:
    """Close a running hash with an explicit length tag; returns keys in ``[0, p)``."""
    z = _mix(state ^ (np.uint64(length) * _LEN))
    return z % np.uint64(MERSENNE_P)


def fingerprint(token_ids) -> np.ndarray:
    """Keys for integer token sequences, one sequence per row of a 2-d array."""
    arr = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
    state = hash_start(arr.shape[0])
    for col in range(arr.shape[1]):
        state = hash_push(state, arr[:, col])
    return hash_finish(state, arr.shape[1])


def key_to_int(key) -> int:
    """Canonical integer for a key: token-id sequence, Token sequence, str or bytes."""
    if isinstance(key, (int, np.integer)):
        return int(fingerprint([[int(key)]])[0])
    if isinstance(key, str):
        key = key.encode("utf-8")
    if isinstance(key, (bytes, bytearray)):
        digest = hashlib.blake2b(bytes(key), digest_size=8).digest()
        return int.from_bytes(digest, "little") % MERSENNE_P
    items = list(key)
    if all(isinstance(k, (int, np.integer)) for k in items):
        return int(fingerprint([items] if items else np.zeros((1, 0)))[0])
    parts = [f"{len(items)}"] + [f"{k[0]}\x1f{k[1]!r}" for k in items]
    return key_to_int("\x1e".join(parts).encode("utf-8"))


def sketch_dimensions(delta_c: float, epsilon: float) -> tuple:
    """``(d, w) = (ceil(ln(1/delta_c)), ceil(e/epsilon))``."""
    if not 0 < delta_c < 1:
        raise UsageError(f"delta_c must lie in (0, 1), got {delta_c}")
    if not epsilon > 0:
        raise UsageError(f"epsilon must be positive, got {epsilon}")
    return max(1, math.ceil(math.log(1.0 / delta_c))), math.ceil(math.e / epsilon)


@dataclass
class Sketch:
    counters: np.ndarray
    a: np.ndarray
    b: np.ndarray
    epsilon: float
    delta_c: float
    total: int = 0

    @classmethod
    def new(cls, delta_c: float, epsilon: float, seed=0) -> "Sketch":
        d, w = sketch_dimensions(delta_c, epsilon)
        rng = np.random.default_rng(seed)
        a = rng.integers(1, MERSENNE_P, size=d, dtype=np.int64).astype(np.uint64)
        b = rng.integers(0, MERSENNE_P, size=d, dtype=np.int64).astype(np.uint64)
        return cls(np.zeros((d, w), dtype=np.int64), a, b, float(epsilon), float(delta_c))

    def empty_like(self) -> "Sketch":
        return Sketch(np.zeros_like(self.counters), self.a, self.b, self.epsilon, self.delta_c)

    @property
    def depth(self) -> int:
        return self.counters.shape[0]

    @property
    def width(self) -> int:
        return self.counters.shape[1]

    def columns(self, xs) -> np.ndarray:
        """Column of each key in each row, shape ``(d, n)``."""
        xs = np.atleast_1d(np.asarray(xs, dtype=np.uint64)) % np.uint64(MERSENNE_P)
        h = (self.a[:, None] * xs[None, :] + self.b[:, None]) % np.uint64(MERSENNE_P)
        return (h % np.uint64(self.width)).astype(np.int64)

    def add_keys(self, xs, counts=1) -> None:
        xs = np.atleast_1d(np.asarray(xs, dtype=np.uint64))
        counts = np.broadcast_to(np.asarray(counts, dtype=np.int64), xs.shape)
        if np.any(counts <= 0):
            raise UsageError("sketch increments must be positive")
        cols = self.columns(xs)
        for j in range(self.depth):
            self.counters[j] += np.bincount(cols[j], weights=counts, minlength=self.width).astype(np.int64)
        self.total += int(counts.sum())

    def query_keys(self, xs) -> np.ndarray:
        cols = self.columns(xs)
        return self.counters[np.arange(self.depth)[:, None], cols].min(axis=0)

    def update(self, key, c: int = 1) -> None:
        if c <= 0:
            raise UsageError("sketch increments must be positive")
        self.add_keys([key_to_int(key)], [c])

    def query(self, key) -> int:
        return int(self.query_keys([key_to_int(key)])[0])

    def compatible(self, other: "Sketch") -> bool:
        return (
            self.counters.shape == other.counters.shape
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    def merge(self, other: "Sketch") -> "Sketch":
        if not self.compatible(other):
            raise IncompatibleSketchError("sketches differ in dimensions or hash seeds")
        return Sketch(
            self.counters + other.counters, self.a, self.b, self.epsilon, self.delta_c,
            self.total + other.total,
        )

    def merge_inplace(self, other: "Sketch") -> None:
        if not self.compatible(other):
            raise IncompatibleSketchError("sketches differ in dimensions or hash seeds")
        self.counters += other.counters
        self.total += other.total


def sketch_new(delta_c: float, epsilon: float, seed=0) -> Sketch:
    return Sketch.new(delta_c, epsilon, seed)


def sketch_update(sketch: Sketch, key, c: int = 1) -> None:
    sketch.update(key, c)


def sketch_query(sketch: Sketch, key) -> int:
    return sketch.query(key)


def sketch_merge(s1: Sketch, s2: Sketch) -> Sketch:
    return s1.merge(s2)

"""Probability-simplex primitives and divergences on finite alphabets.

Every distribution is a :class:`FiniteDistribution`, an immutable weight
vector that sums to one. Arithmetic that leaves the simplex by floating
drift is repaired by renormalising whenever the total mass is off by more
than :data:`SIMPLEX_TOL`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeError

SIMPLEX_TOL = 1e-12
# Loose acceptance threshold for user-supplied weights (decimal round-off).
INPUT_TOL = 1e-9


def _repair(w):
    s = w.sum()
    if abs(s - 1.0) > SIMPLEX_TOL:
        w = w / s
    return w


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """A point on the probability simplex over ``{0, ..., n-1}``.

    Weights are copied into a read-only float array. Inputs whose mass is
    within ``1e-9`` of one are accepted and renormalised if the drift
    exceeds ``1e-12``; anything further away is rejected.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size < 1:
            raise DomainError("a distribution needs at least one symbol")
        if not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        s = w.sum()
        if abs(s - 1.0) > INPUT_TOL:
            raise DomainError(f"weights sum to {s!r}, not 1")
        w = _repair(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def alphabet_size(self) -> int:
        return self.weights.size

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0

    def __len__(self):
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __repr__(self):
        return f"FiniteDistribution({np.array2string(self.weights, precision=6)})"

    @classmethod
    def uniform(cls, n: int) -> "FiniteDistribution":
        if n < 1:
            raise DomainError("alphabet size must be positive")
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, index: int) -> "FiniteDistribution":
        if not 0 <= index < n:
            raise DomainError(f"index {index} outside alphabet of size {n}")
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w)


@dataclass(frozen=True)
class DivergenceValue:
    """A KL divergence in nats; ``finite`` is False on a support violation."""

    value: float
    finite: bool

    def __float__(self):
        return self.value


def as_distribution(p) -> FiniteDistribution:
    if isinstance(p, FiniteDistribution):
        return p
    return FiniteDistribution(p)


def from_simplex_array(w) -> FiniteDistribution:
    """Wrap an internally computed simplex vector, clipping round-off negatives."""
    w = np.asarray(w, dtype=float)
    w = np.where(w < 0, 0.0, w)
    return FiniteDistribution(_repair(w))


def _check_same_size(a, b):
    if a.alphabet_size != b.alphabet_size:
        raise ShapeError(
            f"alphabet sizes differ: {a.alphabet_size} vs {b.alphabet_size}"
        )


def normalize(raw) -> FiniteDistribution:
    """Scale a nonnegative vector onto the simplex.

    A vector that already sums to one within ``1e-12`` is returned as is,
    which makes the operation idempotent bit for bit.
    """
    v = np.array(raw, dtype=float).reshape(-1)
    if v.size == 0:
        raise DegenerateInputError("empty vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("entries must be finite")
    if np.any(v < 0):
        raise DomainError("entries must be nonnegative")
    s = v.sum()
    if s <= 0:
        raise DegenerateInputError("cannot normalize an all-zero vector")
    return FiniteDistribution(_repair(v))


def kl_array(a, b) -> float:
    """KL(a || b) for raw simplex arrays; ``inf`` on support violation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = a > 0
    if np.any(b[pos] <= 0):
        return math.inf
    ap = a[pos]
    val = float(np.sum(ap * (np.log(ap) - np.log(b[pos]))))
    return max(val, 0.0)


def kl_divergence(a, b) -> DivergenceValue:
    """Kullback-Leibler divergence KL(a || b) in nats, with 0 log 0 = 0."""
    a = as_distribution(a)
    b = as_distribution(b)
    _check_same_size(a, b)
    val = kl_array(a.weights, b.weights)
    return DivergenceValue(val, math.isfinite(val))


def total_variation(a, b) -> float:
    a = as_distribution(a)
    b = as_distribution(b)
    _check_same_size(a, b)
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


def mix(a, b, weight_on_b: float) -> FiniteDistribution:
    """Convex combination ``(1 - t) a + t b``."""
    a = as_distribution(a)
    b = as_distribution(b)
    _check_same_size(a, b)
    t = float(weight_on_b)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"mixing weight {t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return from_simplex_array((1.0 - t) * a.weights + t * b.weights)


def neg_entropy(q) -> float:
    """sum_y q(y) log q(y) with the 0 log 0 = 0 convention."""
    w = np.asarray(q, dtype=float)
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos])))

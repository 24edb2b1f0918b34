"""One-sided entropic optimal transport.

With only the y-marginal pinned to ``q``, the entropic transport problem

    Phi(p) = min_{pi : pi_y = q}  <c, pi> + KL(pi || p (x) q)

is solved column by column: ``pi*(x | y)`` is proportional to
``p(x) exp(-c(x, y))``. With ``c = -log r`` this makes ``Phi(p)`` equal to
``KL(q || T_r p)`` minus the entropy term ``sum_y q log q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import as_distribution, kl_array, neg_entropy
from .errors import DegenerateInputError, ShapeError
from .kernels import CorruptionKernel, CostMatrix, apply, cost_matrix


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint law ``pi(x, y)`` stored as an ``|X| x |Y|`` array."""

    joint: np.ndarray

    @property
    def x_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def y_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def _check(p, q, cost):
    p = as_distribution(p)
    q = as_distribution(q)
    if cost.entries.shape != (p.alphabet_size, q.alphabet_size):
        raise ShapeError(
            f"cost is {cost.entries.shape}, expected {(p.alphabet_size, q.alphabet_size)}"
        )
    if not np.all(np.isfinite(cost.entries)):
        raise DegenerateInputError("cost matrix has non-finite entries")
    return p, q


def _conditional_logits(p, cost):
    with np.errstate(divide="ignore"):
        logp = np.log(p.weights)
    return logp[:, None] - cost.entries


def inner_coupling(p, q, cost: CostMatrix) -> Coupling:
    """Closed-form minimiser of the inner problem; its y-marginal is exactly ``q``."""
    p, q = _check(p, q, cost)
    logits = _conditional_logits(p, cost)
    logz = logsumexp(logits, axis=0)
    if np.any(~np.isfinite(logz)):
        bad = int(np.flatnonzero(~np.isfinite(logz))[0])
        raise DegenerateInputError(f"normaliser Z(y) vanishes at y={bad}")
    cond = np.exp(logits - logz[None, :])
    cond /= cond.sum(axis=0, keepdims=True)
    joint = cond * q.weights[None, :]
    joint.setflags(write=False)
    return Coupling(joint)


def coupling_objective(coupling: Coupling, p, q, cost: CostMatrix) -> float:
    """``<c, pi> + KL(pi || p (x) q)`` for an arbitrary coupling."""
    p, q = _check(p, q, cost)
    pi = coupling.joint
    pos = pi > 0
    transport = float(np.sum(pi[pos] * cost.entries[pos]))
    ref = np.outer(p.weights, q.weights)
    return transport + kl_array(pi.ravel(), ref.ravel())


def phi(p, q, cost: CostMatrix) -> float:
    """Value of the one-sided entropic OT problem at its closed-form minimiser."""
    return coupling_objective(inner_coupling(p, q, cost), p, q, cost)


def verify_dv_identity(kernel: CorruptionKernel, q, p) -> float:
    """Residual ``|KL(q || T_r p) - Phi(p) - sum_y q log q|``.

    The left side is computed directly from the pushed-forward law, the
    right side from the transport plan, so the two share no code path
    beyond the KL primitive.
    """
    q = as_distribution(q)
    p = as_distribution(p)
    if q.alphabet_size != kernel.output_size or p.alphabet_size != kernel.input_size:
        raise ShapeError("kernel, p and q sizes disagree")
    direct = kl_array(q.weights, apply(kernel, p).weights)
    value = phi(p, q, cost_matrix(kernel)) + neg_entropy(q.weights)
    return abs(direct - value)


def random_coupling(q, n_x: int, rng: np.random.Generator) -> Coupling:
    """A random member of the set of couplings with y-marginal ``q``."""
    q = as_distribution(q)
    cond = rng.dirichlet(np.ones(n_x), size=q.alphabet_size).T
    return Coupling(cond * q.weights[None, :])

"""Alternating posterior-mixture iteration on finite alphabets.

Each iteration computes the exact Bayes posterior of the current iterate,
averages it against the observed law ``q`` to get the mixture ``m_p``, and
blends ``m_p`` with the prior ``h`` (and, in the online variant, with the
current iterate). The online update with refresh ratio ``gamma`` is the
damped step

    p_next = (m_p + lam * h + nu * p) / (1 + lam + nu),
    nu = (1 - gamma) * (1 + lam) / gamma,

which reduces to the batch step when ``gamma == 1``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    FiniteDistribution,
    as_distribution,
    from_simplex_array,
    kl_array,
)
from .errors import ConfigurationError, DomainError, InitializationError, ShapeError
from .kernels import CorruptionKernel, IdentifiabilityReport, is_identifiable
from .matrix_io import fmt

P0_FLOOR = 1e-9
TRAJECTORY_HEADER = "k,J_lambda,kl_q_Trp,kl_hdagger_p,residual,tv_to_reference"


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.0
    gamma: float = 1.0
    max_iterations: int = 100_000
    fixed_point_tolerance: float = 1e-10
    record_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigurationError(f"lambda must be a finite nonnegative number, got {self.lam}")
        if not 0 < self.gamma <= 1:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        if int(self.max_iterations) < 1:
            raise ConfigurationError("max_iterations must be positive")
        if not self.fixed_point_tolerance > 0:
            raise ConfigurationError("fixed_point_tolerance must be positive")
        if int(self.record_every) < 1:
            raise ConfigurationError("record_every must be positive")

    @property
    def nu(self) -> float:
        return damping(self.lam, self.gamma)

    @property
    def weight(self) -> float:
        """Clean-sample weight ``lam / (1 + lam)``."""
        return self.lam / (1.0 + self.lam)

    @classmethod
    def from_weight(cls, w: float, **kwargs) -> "SolverConfig":
        return cls(lam=lambda_from_weight(w), **kwargs)


def lambda_from_weight(w: float) -> float:
    """Invert ``w = lam / (1 + lam)``; ``w`` must lie in [0, 1)."""
    if not 0 <= w < 1:
        raise ConfigurationError(f"clean-sample weight must lie in [0, 1), got {w}")
    return w / (1.0 - w)


def damping(lam: float, gamma: float) -> float:
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    return (1.0 - gamma) * (1.0 + lam) / gamma


@dataclass(frozen=True)
class IterationState:
    """Iterate ``p`` at step ``k`` together with its posterior mixture ``m``."""

    p: FiniteDistribution
    m: FiniteDistribution
    k: int = 0


@dataclass(frozen=True)
class TrajectoryRecord:
    k: int
    J_lambda: float
    kl_q_Trp: float
    kl_hdagger_p: float | None
    residual: float
    tv_to_reference: float | None


@dataclass
class Trajectory:
    records: list
    final_p: FiniteDistribution
    converged: bool
    iterations_run: int
    identifiability: IdentifiabilityReport | None = None
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRAJECTORY_HEADER + "\n")
        for r in self.records:
            cells = [str(r.k), fmt(r.J_lambda), fmt(r.kl_q_Trp),
                     "" if r.kl_hdagger_p is None else fmt(r.kl_hdagger_p),
                     fmt(r.residual),
                     "" if r.tv_to_reference is None else fmt(r.tv_to_reference)]
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()


# -- array kernels of the iteration -----------------------------------------


def _mixture(R, q, p, RT=None):
    """m_p(x) = sum_y q(y) u_y(x) for raw arrays."""
    tp = R @ p
    if RT is None:
        RT = R.T
    if tp.min() > 0:
        return p * (RT @ (q / tp))
    reach = tp > 0
    ratio = np.zeros_like(tp)
    np.divide(q, tp, out=ratio, where=reach)
    m = p * (RT @ ratio)
    lost = q[~reach].sum()
    if lost > 0:
        supp = p > 0
        m = m + lost * supp / supp.sum()
    return m


def _renorm(w):
    s = w.sum()
    if abs(s - 1.0) > 1e-12:
        w = w / s
    return w


def _objective(R, q, h, lam, p):
    val = kl_array(q, R @ p)
    if lam > 0:
        val += lam * kl_array(h, p)
    return val


def _residual(m, h, lam, p):
    target = m / (1.0 + lam)
    if lam > 0:
        target = target + (lam / (1.0 + lam)) * h
    return float(np.abs(target - p).sum())


# -- public operations --------------------------------------------------------


def _prepare(kernel, q, h, lam, p=None):
    q = as_distribution(q)
    if q.alphabet_size != kernel.output_size:
        raise ShapeError(f"q has {q.alphabet_size} symbols, kernel outputs {kernel.output_size}")
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    if h is not None:
        h = as_distribution(h)
        if h.alphabet_size != kernel.input_size:
            raise ShapeError(f"prior has {h.alphabet_size} symbols, kernel expects {kernel.input_size}")
    elif lam > 0:
        raise ConfigurationError("lambda > 0 requires a prior h")
    if p is not None:
        p = as_distribution(p)
        if p.alphabet_size != kernel.input_size:
            raise ShapeError(f"iterate has {p.alphabet_size} symbols, kernel expects {kernel.input_size}")
    return q, h, p


def mixture(kernel: CorruptionKernel, q, p) -> FiniteDistribution:
    """Posterior mixture ``m_p(x) = sum_y q(y) u_y(x)``."""
    q, _, p = _prepare(kernel, q, None, 0.0, p)
    return from_simplex_array(_mixture(kernel.matrix, q.weights, p.weights))


def initial_state(kernel: CorruptionKernel, q, p0) -> IterationState:
    return IterationState(as_distribution(p0), mixture(kernel, q, p0), 0)


def objective_J(kernel: CorruptionKernel, q, h, lam: float, p) -> float:
    """Augmented objective ``KL(q || T_r p) + lam * KL(h || p)``; may be ``inf``."""
    q, h, p = _prepare(kernel, q, h, lam, p)
    hw = None if h is None else h.weights
    return _objective(kernel.matrix, q.weights, hw, lam, p.weights)


def fixed_point_residual(kernel: CorruptionKernel, q, h, lam: float, p) -> float:
    """L1 norm of ``m_p / (1 + lam) + lam / (1 + lam) * h - p``."""
    q, h, p = _prepare(kernel, q, h, lam, p)
    m = _mixture(kernel.matrix, q.weights, p.weights)
    return _residual(m, None if h is None else h.weights, lam, p.weights)


def kkt_residual(kernel: CorruptionKernel, q, h, lam: float, p) -> float:
    """L1 norm of ``p * (g + lam * h / p - (1 + lam))`` with ``g = R^T (q / T_r p)``.

    This is the first-order condition with multiplier ``1 + lam`` written on
    the support of ``p``; it vanishes exactly at interior stationary points.
    """
    q, h, p = _prepare(kernel, q, h, lam, p)
    R = kernel.matrix
    tp = R @ p.weights
    ratio = np.zeros_like(tp)
    np.divide(q.weights, tp, out=ratio, where=tp > 0)
    g = R.T @ ratio
    val = p.weights * g - (1.0 + lam) * p.weights
    if lam > 0:
        val = val + lam * h.weights
    return float(np.abs(val).sum())


def sfbd_step(kernel: CorruptionKernel, q, h, lam: float,
              state: IterationState) -> IterationState:
    """One batch update: ``p_next = m / (1 + lam) + lam / (1 + lam) * h``."""
    q, h, _ = _prepare(kernel, q, h, lam, state.p)
    new = state.m.weights / (1.0 + lam)
    if lam > 0:
        new = new + (lam / (1.0 + lam)) * h.weights
    new = _renorm(new)
    m = _mixture(kernel.matrix, q.weights, new)
    return IterationState(from_simplex_array(new), from_simplex_array(m), state.k + 1)


def online_step(kernel: CorruptionKernel, q, h, lam: float, gamma: float,
                state: IterationState) -> IterationState:
    """Damped update refreshing a fraction ``gamma`` of the reconstruction."""
    nu = damping(lam, gamma)
    q, h, _ = _prepare(kernel, q, h, lam, state.p)
    hw = None if h is None else h.weights
    new = _damped(state.m.weights, hw, lam, nu, state.p.weights)
    m = _mixture(kernel.matrix, q.weights, new)
    return IterationState(from_simplex_array(new), from_simplex_array(m), state.k + 1)


def _damped(m, h, lam, nu, p):
    num = m
    if lam > 0:
        num = num + lam * h
    if nu > 0:
        num = num + nu * p
    return _renorm(num / (1.0 + lam + nu))


def solve(kernel: CorruptionKernel, q, h, config: SolverConfig, p0=None, *,
          h_dagger=None, reference=None, step=None) -> Trajectory:
    """Iterate the online update until the fixed-point residual drops below tolerance.

    ``p0`` defaults to the prior ``h`` when given, else uniform. A ``p0``
    without full support is mixed with ``1e-9`` of the uniform law first.
    ``h_dagger`` and ``reference`` only feed the diagnostic columns.
    ``step`` replaces the update map ``(m, p) -> p_next`` and exists for
    fault-injection checks.
    """
    lam = float(config.lam)
    q, h, p0 = _prepare(kernel, q, h, lam, p0)
    n = kernel.input_size
    meta = {"p0_repaired": False}
    if p0 is None:
        p0 = h if h is not None else FiniteDistribution.uniform(n)
        meta["p0_source"] = "prior" if h is not None else "uniform"
    else:
        meta["p0_source"] = "given"
    p = np.array(p0.weights)
    if np.any(p <= 0):
        p = (1.0 - P0_FLOOR) * p + P0_FLOOR / n
        meta["p0_repaired"] = True

    R = kernel.matrix
    qa = q.weights
    ha = None if h is None else h.weights
    hd = None if h_dagger is None else as_distribution(h_dagger).weights
    ref = None if reference is None else as_distribution(reference).weights
    nu = config.nu
    tol = config.fixed_point_tolerance
    K = int(config.max_iterations)
    every = int(config.record_every)

    j0 = _objective(R, qa, ha, lam, p)
    if not math.isfinite(j0):
        raise InitializationError(
            "objective is infinite at p0: q puts mass where T_r p0 has none; "
            "apply support_floor(kernel, eps) to the kernel"
        )

    if step is None:
        def step(m_, p_):
            return _damped(m_, ha, lam, nu, p_)

    records = []

    def record(k, p_, res):
        tp = R @ p_
        klq = kl_array(qa, tp)
        J = klq + (lam * kl_array(ha, p_) if lam > 0 else 0.0)
        records.append(TrajectoryRecord(
            k, J, klq,
            None if hd is None else kl_array(hd, p_),
            res,
            None if ref is None else 0.5 * float(np.abs(ref - p_).sum()),
        ))

    RT = np.ascontiguousarray(R.T)
    m = _mixture(R, qa, p, RT)
    k = 0
    converged = False
    while True:
        res = _residual(m, ha, lam, p)
        if k % every == 0:
            record(k, p, res)
        if res < tol:
            converged = True
            break
        if k >= K:
            break
        p = step(m, p)
        m = _mixture(R, qa, p, RT)
        k += 1
    if records[-1].k != k:
        record(k, p, res)

    ident = is_identifiable(kernel)
    meta["non_identifiable"] = not ident.injective
    return Trajectory(records, from_simplex_array(p), converged, k, ident, meta)

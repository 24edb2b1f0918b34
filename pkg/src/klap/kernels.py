"""Corruption kernels as column-stochastic matrices.

A kernel is stored as a ``|Y| x |X|`` matrix whose column ``x`` is the
conditional law ``r(. | x)``. Product alphabets (dropout, grayscale
analogue) are enumerated row-major over coordinates: the first coordinate
is the most significant digit, exactly as :func:`numpy.ravel_multi_index`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import FiniteDistribution, as_distribution, from_simplex_array
from .errors import DomainError, ShapeError, SupportError

COLUMN_TOL = 1e-12
DEFAULT_IDENTIFIABILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CorruptionKernel:
    """Column-stochastic matrix with entry ``(y, x) = r(y | x)``."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ShapeError(f"kernel must be a nonempty 2-D matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise DomainError("kernel entries must be finite and nonnegative")
        cols = m.sum(axis=0)
        if np.any(np.abs(cols - 1.0) > 1e-9):
            bad = int(np.argmax(np.abs(cols - 1.0)))
            raise DomainError(f"column {bad} sums to {cols[bad]!r}, not 1")
        drift = np.abs(cols - 1.0) > COLUMN_TOL
        if np.any(drift):
            m[:, drift] /= cols[drift]
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def input_size(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_size(self) -> int:
        return self.matrix.shape[0]

    def column(self, x: int) -> FiniteDistribution:
        return FiniteDistribution(self.matrix[:, x])

    def __repr__(self):
        return f"CorruptionKernel({self.label or 'unnamed'}, |Y|={self.output_size}, |X|={self.input_size})"


@dataclass(frozen=True, eq=False)
class Posterior:
    """Row ``y`` holds the Bayes posterior ``u_y(.)`` over X."""

    table: np.ndarray

    def row(self, y: int) -> FiniteDistribution:
        return FiniteDistribution(self.table[y])


@dataclass(frozen=True)
class IdentifiabilityReport:
    injective: bool
    nullspace_dimension_on_zero_sum_subspace: int
    smallest_restricted_singular_value: float
    tolerance_used: float

    def to_dict(self):
        return {
            "injective": self.injective,
            "nullspace_dimension_on_zero_sum_subspace": self.nullspace_dimension_on_zero_sum_subspace,
            "smallest_restricted_singular_value": self.smallest_restricted_singular_value,
            "tolerance_used": self.tolerance_used,
        }


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """``|X| x |Y|`` matrix of costs ``c(x, y) = -log r(y | x)`` in nats."""

    entries: np.ndarray

    @property
    def input_size(self) -> int:
        return self.entries.shape[0]

    @property
    def output_size(self) -> int:
        return self.entries.shape[1]


def _readonly(a):
    a.setflags(write=False)
    return a


# -- constructors -----------------------------------------------------------


def identity_kernel(n: int) -> CorruptionKernel:
    return CorruptionKernel(np.eye(n), label=f"identity({n})")


def constant_kernel(input_size: int, output_size: int, index: int = 0) -> CorruptionKernel:
    """Every input is sent to output ``index`` (the degenerate "white patch")."""
    if not 0 <= index < output_size:
        raise DomainError(f"output index {index} outside range {output_size}")
    m = np.zeros((output_size, input_size))
    m[index, :] = 1.0
    return CorruptionKernel(m, label=f"constant({input_size}->{output_size}@{index})")


def _offset_kernel(n, pmf, boundary, center, label):
    pmf = as_distribution(pmf).weights
    if boundary not in ("cyclic", "clipped"):
        raise DomainError(f"unknown boundary mode {boundary!r}")
    m = np.zeros((n, n))
    if boundary == "cyclic":
        if pmf.size != n:
            raise ShapeError(f"cyclic noise pmf needs {n} entries, got {pmf.size}")
        c = 0 if center is None else center
        for x in range(n):
            for i, w in enumerate(pmf):
                m[(x + i - c) % n, x] += w
    else:
        if pmf.size > 2 * n - 1:
            raise ShapeError(f"offset pmf of length {pmf.size} does not fit alphabet {n}")
        c = (pmf.size - 1) // 2 if center is None else center
        for x in range(n):
            for i, w in enumerate(pmf):
                m[min(max(x + i - c, 0), n - 1), x] += w
    return CorruptionKernel(m, label=label)


def additive_noise_kernel(alphabet_size: int, noise_pmf, boundary: str = "cyclic",
                          center: int | None = None) -> CorruptionKernel:
    """Kernel of ``y = x + e`` with ``e`` drawn from ``noise_pmf``.

    Entry ``i`` of ``noise_pmf`` is the probability of offset ``i - center``.
    In cyclic mode offsets wrap modulo ``alphabet_size`` and ``center``
    defaults to 0, so ``r(y|x) = noise((y - x) mod n)``. In clipped mode the
    pmf is centred by default and mass pushed past either end piles up on
    the boundary bins.
    """
    return _offset_kernel(alphabet_size, noise_pmf, boundary, center,
                          f"additive_noise({boundary},{alphabet_size})")


def blur_kernel(alphabet_size: int, stencil, boundary: str = "cyclic",
                center: int | None = None) -> CorruptionKernel:
    """Discrete convolution with a low-pass stencil; same layout as additive noise."""
    return _offset_kernel(alphabet_size, stencil, boundary, center,
                          f"blur({boundary},{alphabet_size})")


def dropout_kernel(num_coordinates: int, levels_per_coordinate: int,
                   mask_prob: float) -> CorruptionKernel:
    """Independent per-coordinate masking.

    Each output coordinate takes values ``0..levels-1`` or the extra MASK
    symbol ``levels``. The matrix is the Kronecker power of the
    single-coordinate kernel, which matches the row-major enumeration.
    """
    a = float(mask_prob)
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"mask probability {a} outside [0, 1]")
    if num_coordinates < 1 or levels_per_coordinate < 1:
        raise DomainError("need at least one coordinate and one level")
    L = levels_per_coordinate
    single = np.zeros((L + 1, L))
    single[np.arange(L), np.arange(L)] = 1.0 - a
    single[L, :] = a
    m = np.ones((1, 1))
    for _ in range(num_coordinates):
        m = np.kron(m, single)
    return CorruptionKernel(m, label=f"dropout({num_coordinates}x{L},{a})")


def deterministic_map_kernel(mapping, output_size: int | None = None) -> CorruptionKernel:
    """Kernel of a deterministic function given as a table ``mapping[x] = y``."""
    table = [int(v) for v in mapping]
    if not table:
        raise DomainError("empty map")
    if output_size is None:
        output_size = max(table) + 1
    m = np.zeros((output_size, len(table)))
    for x, y in enumerate(table):
        if not 0 <= y < output_size:
            raise DomainError(f"map({x}) = {y} outside output range {output_size}")
        m[y, x] = 1.0
    return CorruptionKernel(m, label=f"map({len(table)}->{output_size})")


def grayscale_kernel(shades: int, colors: int) -> CorruptionKernel:
    """Discard the color coordinate of ``x = (s, c)``; the grayscale analogue.

    X is enumerated as ``index = s * colors + c``.
    """
    mapping = [s for s in range(shades) for _ in range(colors)]
    k = deterministic_map_kernel(mapping, output_size=shades)
    return CorruptionKernel(k.matrix, label=f"grayscale({shades}x{colors})")


def default_poisson_truncation(photon_budget: float) -> int:
    return int(math.ceil(photon_budget + 8.0 * math.sqrt(photon_budget)))


def poisson_kernel(intensity_levels: int, photon_budget: float,
                   truncation: int | None = None) -> CorruptionKernel:
    """Photon counts ``y ~ Poisson(alpha * x)`` on the lattice ``x = i / (L - 1)``.

    Counts at or above ``truncation`` are folded into the last bin.
    """
    alpha = float(photon_budget)
    if not alpha > 0:
        raise DomainError("photon budget must be positive")
    if intensity_levels < 2:
        raise DomainError("need at least two intensity levels")
    if truncation is None:
        truncation = default_poisson_truncation(alpha)
    if truncation < 1:
        raise DomainError("truncation must be at least 1")
    xs = np.arange(intensity_levels) / (intensity_levels - 1)
    counts = np.arange(truncation)
    m = np.zeros((truncation + 1, intensity_levels))
    for j, x in enumerate(xs):
        mu = alpha * x
        if mu == 0:
            m[0, j] = 1.0
            continue
        m[:truncation, j] = stats.poisson.pmf(counts, mu)
        m[truncation, j] = stats.poisson.sf(truncation - 1, mu)
    return CorruptionKernel(m, label=f"poisson(L={intensity_levels},alpha={alpha:g},T={truncation})")


def support_floor(kernel: CorruptionKernel, eps: float) -> CorruptionKernel:
    """Mix every column with the uniform law on Y at weight ``eps``."""
    e = float(eps)
    if not 0.0 < e < 1.0:
        raise DomainError(f"floor {e} outside (0, 1)")
    m = (1.0 - e) * kernel.matrix + e / kernel.output_size
    return CorruptionKernel(m, label=f"{kernel.label}+floor({e:g})")


# -- queries -----------------------------------------------------------------


def apply(kernel: CorruptionKernel, p) -> FiniteDistribution:
    """Push ``p`` through the kernel: ``q(y) = sum_x r(y|x) p(x)``."""
    p = as_distribution(p)
    if p.alphabet_size != kernel.input_size:
        raise ShapeError(f"distribution has {p.alphabet_size} symbols, kernel expects {kernel.input_size}")
    return from_simplex_array(kernel.matrix @ p.weights)


def posterior(kernel: CorruptionKernel, p) -> Posterior:
    """Exact Bayes posterior ``u_y(x) = p(x) r(y|x) / (T_r p)(y)``.

    Rows for outputs that ``p`` cannot produce are set to the uniform law on
    ``supp(p)``; they carry zero weight in any mixture against a reachable q.
    """
    p = as_distribution(p)
    if p.alphabet_size != kernel.input_size:
        raise ShapeError(f"distribution has {p.alphabet_size} symbols, kernel expects {kernel.input_size}")
    joint = kernel.matrix * p.weights[None, :]
    z = joint.sum(axis=1)
    table = np.empty_like(joint)
    reach = z > 0
    table[reach] = joint[reach] / z[reach, None]
    if not np.all(reach):
        fallback = p.support / p.support.sum()
        table[~reach] = fallback
    return Posterior(_readonly(table))


def _zero_sum_basis(n):
    # orthonormal basis of {v : sum v = 0}
    if n == 1:
        return np.zeros((1, 0))
    a = np.eye(n)[:, : n - 1] - 1.0 / n
    q, _ = np.linalg.qr(a)
    return q


def is_identifiable(kernel: CorruptionKernel,
                    tol: float = DEFAULT_IDENTIFIABILITY_TOL) -> IdentifiabilityReport:
    """Decide injectivity of ``T_r`` on the simplex.

    ``T_r`` is injective on distributions iff the matrix has no nullspace on
    the zero-sum subspace. Singular values of the restricted operator are
    compared against ``tol`` times the largest singular value of the kernel.
    """
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    m = kernel.matrix
    n = kernel.input_size
    basis = _zero_sum_basis(n)
    top = float(np.linalg.norm(m, 2))
    if n == 1:
        return IdentifiabilityReport(True, 0, top, tol)
    sv = np.linalg.svd(m @ basis, compute_uv=False)
    full = np.zeros(n - 1)
    full[: sv.size] = sv
    dim = int(np.sum(full <= tol * top))
    return IdentifiabilityReport(dim == 0, dim, float(full.min()), tol)


def cost_matrix(kernel: CorruptionKernel) -> CostMatrix:
    """Costs ``c(x, y) = -log r(y|x)``; needs a strictly positive kernel."""
    if np.any(kernel.matrix <= 0):
        raise SupportError(
            "kernel has zero entries so some costs are infinite; "
            "apply support_floor(kernel, eps) first"
        )
    return CostMatrix(_readonly(-np.log(kernel.matrix.T)))

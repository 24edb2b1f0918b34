"""Finite-sample experiments.

Randomness follows a counter-based discipline: every batch owns a stream
seeded by ``SeedSequence([seed, crc32(label)])``, so a batch does not
depend on what else was drawn before it. Clean and noisy batches use the
labels ``"clean"`` and ``"noisy"``; a clean batch of size M is the prefix
of any larger clean batch with the same seed.
"""

from __future__ import annotations

import io
import zlib
from dataclasses import dataclass

import numpy as np

from .core import FiniteDistribution, as_distribution, kl_array
from .errors import ConfigurationError, DataError, DomainError, ShapeError
from .kernels import CorruptionKernel, is_identifiable, support_floor
from .matrix_io import fmt
from .solver import SolverConfig, lambda_from_weight, solve

REPORT_HEADER = "clean_count,noisy_count,lambda_weight,gamma,kl_to_pdata,tv_to_pdata,iterations,converged"
DEFAULT_FLOOR = 1e-6


@dataclass(frozen=True)
class SampleBatch:
    outcomes: np.ndarray
    source: str
    seed: int
    count: int


def stream(seed: int, label: str) -> np.random.Generator:
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))


def _inverse_cdf(cdf, u):
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.size - 1)


def sample_clean(p_data, n: int, seed: int, label: str = "clean") -> SampleBatch:
    if n < 1:
        raise DomainError("sample count must be at least 1")
    p = as_distribution(p_data)
    u = stream(seed, label).random(n)
    x = _inverse_cdf(np.cumsum(p.weights), u)
    return SampleBatch(x, "clean", seed, n)


def sample_corrupted(kernel: CorruptionKernel, p_data, n: int, seed: int,
                     label: str = "noisy") -> SampleBatch:
    """Draw ``x ~ p_data`` then ``y ~ r(. | x)``, ``n`` times."""
    if n < 1:
        raise DomainError("sample count must be at least 1")
    p = as_distribution(p_data)
    if p.alphabet_size != kernel.input_size:
        raise ShapeError("p_data and kernel input sizes differ")
    rng = stream(seed, label)
    u = rng.random((n, 2))
    x = _inverse_cdf(np.cumsum(p.weights), u[:, 0])
    y = np.empty(n, dtype=np.int64)
    cdfs = np.cumsum(kernel.matrix, axis=0)
    for xv in np.unique(x):
        sel = x == xv
        y[sel] = _inverse_cdf(cdfs[:, xv], u[sel, 1])
    return SampleBatch(y, "corrupted", seed, n)


def empirical_distribution(batch: SampleBatch, alphabet_size: int,
                           smoothing: float = 0.0) -> FiniteDistribution:
    """Histogram with additive smoothing ``(count + s) / (n + s * size)``."""
    if smoothing < 0:
        raise DomainError("smoothing must be nonnegative")
    out = np.asarray(batch.outcomes)
    if out.size and (out.min() < 0 or out.max() >= alphabet_size):
        raise DataError(f"outcomes outside alphabet of size {alphabet_size}")
    counts = np.bincount(out, minlength=alphabet_size).astype(float)
    total = out.size + smoothing * alphabet_size
    if total <= 0:
        raise DataError("empty batch with zero smoothing")
    return FiniteDistribution((counts + smoothing) / total)


@dataclass(frozen=True)
class ReportRow:
    clean_count: int
    noisy_count: int
    lambda_weight: float
    gamma: float
    kl_to_pdata: float
    tv_to_pdata: float
    iterations: int
    converged: bool
    monotone: bool = True

    def key(self):
        return (self.clean_count, self.noisy_count, self.lambda_weight, self.gamma)

    def csv_line(self):
        return ",".join([str(self.clean_count), str(self.noisy_count),
                         fmt(self.lambda_weight), fmt(self.gamma),
                         fmt(self.kl_to_pdata), fmt(self.tv_to_pdata),
                         str(self.iterations), "true" if self.converged else "false"])


def report_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(REPORT_HEADER + "\n")
    for r in sorted(rows, key=ReportRow.key):
        buf.write(r.csv_line() + "\n")
    return buf.getvalue()


def initial_point(h, lam: float, injective: bool, n: int, mode: str = "auto") -> FiniteDistribution:
    """Starting iterate for a run with optional clean histogram ``h``.

    ``"auto"`` starts from ``h`` unless the kernel is non-identifiable and
    ``lam == 0``: then the clean samples play no role and the run starts
    from the uniform law.
    """
    if mode not in ("auto", "prior", "uniform"):
        raise ConfigurationError(f"unknown init mode {mode!r}")
    if h is None or mode == "uniform":
        return FiniteDistribution.uniform(n)
    if mode == "prior" or injective or lam > 0:
        return as_distribution(h)
    return FiniteDistribution.uniform(n)


def _run_one(kernel, floored, p_data, q_hat, clean, M, noisy_count, w, gamma,
             smoothing, init, injective, max_iterations, tolerance):
    h = None
    if M > 0:
        h = empirical_distribution(
            SampleBatch(clean.outcomes[:M], "clean", clean.seed, M),
            kernel.input_size, smoothing)
    if w > 0 and h is None:
        raise ConfigurationError("a positive clean-sample weight needs clean samples")
    lam = lambda_from_weight(w)
    p0 = initial_point(h, lam, injective, kernel.input_size, init)
    cfg = SolverConfig(lam=lam, gamma=gamma, max_iterations=max_iterations,
                       fixed_point_tolerance=tolerance, record_every=1)
    traj = solve(floored, q_hat, h if lam > 0 else None, cfg, p0=p0)
    J = traj.column("J_lambda")
    final = traj.final_p.weights
    pd = p_data.weights
    return ReportRow(M, noisy_count, float(w), float(gamma),
                     kl_array(pd, final), 0.5 * float(np.abs(pd - final).sum()),
                     traj.iterations_run, traj.converged,
                     bool(np.all(np.diff(J) <= 1e-10)))


def recoverability_experiment(kernel: CorruptionKernel, p_data, clean_counts,
                              noisy_count: int, lambda_weights, gamma=1.0, seed: int = 0,
                              *, gammas=None, smoothing: float = 0.0,
                              noisy_smoothing: float = 0.0,
                              floor: float = DEFAULT_FLOOR, init: str = "auto",
                              max_iterations: int = 20_000, tolerance: float = 1e-10,
                              jobs: int = 1):
    """Recover ``p_data`` from finite samples over a grid of configurations.

    For every clean count ``M`` and clean-sample weight ``w`` the prior is
    the histogram of the first ``M`` clean draws, ``q_hat`` is the
    histogram of ``noisy_count`` corrupted draws, and the solver runs on the
    kernel floored at ``floor``. Rows come back sorted by configuration.

    ``init`` picks the starting point: ``"prior"`` starts from the clean
    histogram whenever there is one, ``"uniform"`` never does, and
    ``"auto"`` starts from the histogram unless the kernel is
    non-identifiable and the prior is switched off (``w == 0``), in which
    case the clean samples are not used at all.
    """
    p_data = as_distribution(p_data)
    if init not in ("auto", "prior", "uniform"):
        raise ConfigurationError(f"unknown init mode {init!r}")
    clean_counts = [int(c) for c in clean_counts]
    if any(c < 0 for c in clean_counts) or noisy_count < 1:
        raise ConfigurationError("counts must be nonnegative and noisy_count >= 1")
    gammas = [float(gamma)] if gammas is None else [float(g) for g in gammas]
    weights = [float(w) for w in lambda_weights]
    if not clean_counts or not weights or not gammas:
        raise ConfigurationError("sweep axes must be nonempty")
    for w in weights:
        lambda_from_weight(w)

    noisy = sample_corrupted(kernel, p_data, noisy_count, seed)
    q_hat = empirical_distribution(noisy, kernel.output_size, noisy_smoothing)
    M_max = max(clean_counts)
    clean = sample_clean(p_data, M_max, seed) if M_max > 0 else None
    floored = support_floor(kernel, floor)
    injective = is_identifiable(kernel).injective

    tasks = [(kernel, floored, p_data, q_hat, clean, M, noisy_count, w, g,
              smoothing, init, injective, max_iterations, tolerance)
             for M in clean_counts for w in weights for g in gammas]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_star_run, tasks))
    else:
        rows = [_run_one(*t) for t in tasks]
    return sorted(rows, key=ReportRow.key)


def _star_run(args):
    return _run_one(*args)

"""Ground truth for certifying solver output.

``solution_set_projection`` finds the I-projection ``h_dagger`` of a prior
``h`` onto ``S(q) = {p : T_r p = q}`` by the small-lambda route: solve the
augmented problem for a decreasing lambda schedule, extrapolate to
lambda = 0 and snap onto the affine constraint. The result is then checked
against an oracle that does not use the solver: the marginal closed form
for deterministic kernels, the unique preimage for injective kernels, or a
grid over ``S(q)`` when ``|X| <= 3``.

``brute_force_minimizer`` enumerates the simplex lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import FiniteDistribution, as_distribution, from_simplex_array, kl_array
from .errors import DomainError, InfeasibleError, ScaleGuardError, ShapeError
from .kernels import CorruptionKernel, is_identifiable
from .solver import SolverConfig, _prepare, solve

FEASIBILITY_TOL = 1e-7
DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4)
MAX_GRID_SIZE = 4


@dataclass(frozen=True)
class ProjectionResult:
    h_dagger: FiniteDistribution
    achieved_constraint_violation: float
    achieved_kl: float
    method: str
    certificate: str | None = None
    certificate_tv: float | None = None
    path: tuple = ()


def _violation(R, p, q):
    return float(np.abs(R @ p - q).sum())


def min_l1_residual(kernel: CorruptionKernel, q):
    """Smallest ``||T_r p - q||_1`` over the simplex, by linear programming.

    Returns ``(residual, p)``.
    """
    q = as_distribution(q).weights
    R = kernel.matrix
    ny, nx = R.shape
    # variables: p (nx), t (ny); minimise sum t with -t <= R p - q <= t
    c = np.concatenate([np.zeros(nx), np.ones(ny)])
    a_ub = np.block([[R, -np.eye(ny)], [-R, -np.eye(ny)]])
    b_ub = np.concatenate([q, -q])
    a_eq = np.concatenate([np.ones(nx), np.zeros(ny)])[None, :]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (nx + ny), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"feasibility program failed: {res.message}")
    p = np.clip(res.x[:nx], 0, None)
    p /= p.sum()
    return _violation(R, p, q), p


def check_feasible(kernel: CorruptionKernel, q) -> np.ndarray:
    """Raise :class:`InfeasibleError` unless some p on the simplex has ``T_r p = q``."""
    resid, p = min_l1_residual(kernel, q)
    if resid > FEASIBILITY_TOL:
        raise InfeasibleError(
            f"q is not the image of any distribution under this kernel; "
            f"best achievable L1 residual is {resid:.3e}", residual=resid)
    return p


def _snap(R, q, p):
    """Minimum-norm correction putting ``p`` on ``{T_r p = q, sum p = 1}``."""
    a = np.vstack([R, np.ones(R.shape[1])])
    b = np.concatenate([q - R @ p, [1.0 - p.sum()]])
    delta, *_ = np.linalg.lstsq(a, b, rcond=None)
    return p + delta


def _is_deterministic(kernel):
    m = kernel.matrix
    return bool(np.all((m == 0) | (m == 1)))


def marginal_closed_form(kernel: CorruptionKernel, q, h) -> np.ndarray:
    """``h_dagger(x) = q(y(x)) h(x | y(x))`` for a deterministic kernel.

    Where ``h`` puts no mass on a fibre that ``q`` charges, the fibre gets
    the uniform conditional.
    """
    if not _is_deterministic(kernel):
        raise DomainError("closed form needs a deterministic kernel")
    R = kernel.matrix
    q = as_distribution(q).weights
    h = as_distribution(h).weights
    y_of = R.argmax(axis=0)
    hy = R @ h
    out = np.zeros_like(h)
    for x, y in enumerate(y_of):
        if hy[y] > 0:
            out[x] = q[y] * h[x] / hy[y]
        else:
            out[x] = q[y] / R[y].sum()
    return out


def grid_projection(kernel: CorruptionKernel, q, h, resolution: float = 1e-4) -> ProjectionResult:
    """I-projection by scanning ``S(q)`` directly; needs ``|X| <= 3``.

    ``S(q)`` is a point, a segment, or the whole simplex at this size. A
    segment is sampled so neighbouring points are ``resolution`` apart in TV.
    """
    n = kernel.input_size
    if n > 3:
        raise ScaleGuardError(f"grid projection supports |X| <= 3, got {n}")
    R = kernel.matrix
    qa = as_distribution(q).weights
    ha = as_distribution(h).weights
    base = check_feasible(kernel, qa)
    dim = is_identifiable(kernel).nullspace_dimension_on_zero_sum_subspace
    if dim == 0:
        best = base
    elif dim == n - 1:
        best = ha.copy()
    else:
        # one-dimensional segment through base along the null direction
        a = np.vstack([R, np.ones(n)])
        _, _, vt = np.linalg.svd(a)
        v = vt[-1]
        neg, pos = v < -1e-15, v > 1e-15
        t_hi = np.min(-base[neg] / v[neg]) if np.any(neg) else 0.0
        t_lo = np.max(-base[pos] / v[pos]) if np.any(pos) else 0.0
        step = 2.0 * resolution / np.abs(v).sum()
        ts = np.arange(t_lo, t_hi, step)
        ts = np.append(ts, t_hi)
        pts = np.clip(base[None, :] + ts[:, None] * v[None, :], 0, None)
        pts /= pts.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            logp = np.log(pts)
        pos_h = ha > 0
        vals = -(logp[:, pos_h] @ ha[pos_h])
        best = pts[int(np.argmin(vals))]
    best = from_simplex_array(best)
    return ProjectionResult(best, _violation(R, best.weights, qa),
                            kl_array(ha, best.weights), "grid")


def solution_set_projection(kernel: CorruptionKernel, q, h, *,
                            schedule=DEFAULT_SCHEDULE,
                            max_iterations: int = 2_000_000,
                            tolerance: float = 1e-12,
                            p0=None) -> ProjectionResult:
    """I-projection of ``h`` onto the solution set ``S(q)``."""
    q, h, _ = _prepare(kernel, q, h, 0.0)
    if h is None:
        raise DomainError("a prior h is required")
    R = kernel.matrix
    qa, ha = q.weights, h.weights
    check_feasible(kernel, qa)

    lams = sorted(float(x) for x in schedule)[::-1]
    if len(lams) < 2 or lams[-1] <= 0:
        raise DomainError("schedule needs at least two positive lambdas")
    start = p0 if p0 is not None else h
    path = []
    for lam in lams:
        cfg = SolverConfig(lam=lam, gamma=1.0, max_iterations=max_iterations,
                           fixed_point_tolerance=tolerance, record_every=max_iterations)
        traj = solve(kernel, q, h, cfg, p0=start)
        start = traj.final_p
        path.append((lam, traj.final_p))

    (l1, p1), (l2, p2) = path[-2], path[-1]
    w1, w2 = l1 / (1 + l1), l2 / (1 + l2)
    extrap = (w1 * p2.weights - w2 * p1.weights) / (w1 - w2)
    cand = _snap(R, qa, extrap)
    if np.any(cand < 0):
        cand = _snap(R, qa, p2.weights)
    if np.any(cand < -1e-12):
        cand = np.clip(cand, 0, None)
    cand = from_simplex_array(cand)
    result = ProjectionResult(cand, _violation(R, cand.weights, qa),
                              kl_array(ha, cand.weights), "small_lambda_limit",
                              path=tuple(path))

    report = is_identifiable(kernel)
    if _is_deterministic(kernel):
        exact = from_simplex_array(marginal_closed_form(kernel, qa, ha))
        return ProjectionResult(exact, _violation(R, exact.weights, qa),
                                kl_array(ha, exact.weights), "closed_form",
                                "small_lambda_limit", _tv(exact, cand), tuple(path))
    if report.injective:
        exact = from_simplex_array(_snap(R, qa, cand.weights))
        return ProjectionResult(exact, _violation(R, exact.weights, qa),
                                kl_array(ha, exact.weights), "closed_form",
                                "small_lambda_limit", _tv(exact, cand), tuple(path))
    if kernel.input_size <= 3:
        g = grid_projection(kernel, qa, ha)
        return ProjectionResult(result.h_dagger, result.achieved_constraint_violation,
                                result.achieved_kl, result.method, "grid",
                                _tv(g.h_dagger, cand), tuple(path))
    return result


def _tv(a, b):
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


# -- lattice search -----------------------------------------------------------


def _compositions(n, N):
    if n == 1:
        yield np.array([[N]])
        return
    if n == 2:
        k0 = np.arange(N + 1)
        yield np.stack([k0, N - k0], axis=1)
        return
    for k0 in range(N + 1):
        for rest in _compositions(n - 1, N - k0):
            yield np.hstack([np.full((rest.shape[0], 1), k0), rest])


def lattice_points(n: int, N: int):
    """Yield blocks of the simplex lattice ``{k / N : sum k = N}``.

    Points come in lexicographic order of ``(k_0, ..., k_{n-2})``, smallest
    first; the last coordinate takes the remainder.
    """
    for block in _compositions(n, N):
        yield block / N


def brute_force_minimizer(kernel: CorruptionKernel, q, h, lam: float,
                          grid_resolution: float) -> FiniteDistribution:
    """Exhaustive minimisation of the augmented objective on a simplex lattice.

    Ties go to the first point in :func:`lattice_points` order.
    """
    n = kernel.input_size
    if n > MAX_GRID_SIZE:
        raise ScaleGuardError(f"brute force is limited to |X| <= {MAX_GRID_SIZE}, got {n}")
    if not 0 < grid_resolution <= 0.1:
        raise DomainError("grid_resolution must lie in (0, 0.1]")
    q, h, _ = _prepare(kernel, q, h, lam)
    N = int(round(1.0 / grid_resolution))
    R = kernel.matrix
    qa = q.weights
    qpos = qa > 0
    c_q = float(np.sum(qa[qpos] * np.log(qa[qpos])))
    if lam > 0:
        ha = h.weights
        hpos = ha > 0
        c_h = float(np.sum(ha[hpos] * np.log(ha[hpos])))
    best_val = math.inf
    best = None
    for block in lattice_points(n, N):
        with np.errstate(divide="ignore"):
            vals = c_q - np.log(block @ R[qpos].T) @ qa[qpos]
            if lam > 0:
                vals = vals + lam * (c_h - np.log(block[:, hpos]) @ ha[hpos])
        vals = np.where(np.isnan(vals), math.inf, vals)
        i = int(np.argmin(vals))
        if vals[i] < best_val or best is None:
            best_val = float(vals[i])
            best = block[i].copy()
    return from_simplex_array(best)

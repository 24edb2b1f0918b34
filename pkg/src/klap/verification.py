"""Executable property suite behind ``klap verify``.

Each check builds its own instances from fixed seeds and returns a
:class:`CheckResult`. Details are formatted deterministically so the
written report is byte-identical across runs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import scenarios
from .core import FiniteDistribution, kl_array
from .eot import coupling_objective, inner_coupling, phi, random_coupling, verify_dv_identity
from .empirical import (
    empirical_distribution,
    recoverability_experiment,
    sample_corrupted,
)
from .kernels import (
    CorruptionKernel,
    apply,
    cost_matrix,
    grayscale_kernel,
    identity_kernel,
    is_identifiable,
    posterior,
    support_floor,
)
from .matrix_io import fmt
from .oracle import brute_force_minimizer, marginal_closed_form
from .solver import (
    SolverConfig,
    fixed_point_residual,
    initial_state,
    kkt_residual,
    objective_J,
    online_step,
    sfbd_step,
    solve,
)

SLACK = 1e-10

SCALES = {
    "quick": {"fixed_point": 20, "dv_instances": 100, "dv_couplings": 1000,
              "equivalence_steps": 10_000, "sampling": False},
    "full": {"fixed_point": 40, "dv_instances": 200, "dv_couplings": 1000,
             "equivalence_steps": 20_000, "sampling": True},
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _random_setup(rng, i):
    nx = int(rng.integers(2, 9))
    ny = int(rng.integers(nx, 17))
    inst = scenarios.random_instance(rng, nx, ny)
    lam = (0.0, 0.25, 1.0)[i % 3]
    gamma = (1.0, 0.1)[(i // 3) % 2]
    h = FiniteDistribution(rng.dirichlet(np.ones(nx))) if lam > 0 else None
    return inst, lam, gamma, h


def check_fixed_point(n_instances=20, seed=1001, step=None, max_iterations=300_000):
    """Solve random instances to the stationarity certificate."""
    rng = np.random.default_rng(seed)
    worst_fp = worst_kkt = 0.0
    failures = 0
    for i in range(n_instances):
        inst, lam, gamma, h = _random_setup(rng, i)
        q = inst.q
        cfg = SolverConfig(lam=lam, gamma=gamma, max_iterations=max_iterations,
                           record_every=max_iterations)
        stepper = None if step is None else step(h, lam, cfg.nu)
        traj = solve(inst.kernel, q, h, cfg, step=stepper)
        fp = fixed_point_residual(inst.kernel, q, h, lam, traj.final_p)
        kkt = kkt_residual(inst.kernel, q, h, lam, traj.final_p) / (1.0 + lam)
        worst_fp, worst_kkt = max(worst_fp, fp), max(worst_kkt, kkt)
        if not (traj.converged and fp < 1e-10 and kkt < 1e-10):
            failures += 1
    return CheckResult("fixed_point_certificate", failures == 0,
                       f"instances={n_instances} failures={failures} "
                       f"max_residual={fmt(worst_fp)} max_kkt={fmt(worst_kkt)}")


def _descent_corpus(seed=2002):
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(12):
        inst, lam, gamma, h = _random_setup(rng, i)
        corpus.append((inst, lam, gamma, h))
    g = scenarios.grayscale_small()
    corpus.append((g, 0.0, 1.0, None))
    corpus.append((g, 0.0, 0.3, None))
    corpus.append((g, 0.25, 0.5, FiniteDistribution([0.25, 0.25, 0.25, 0.25])))
    s = scenarios.sparse_noise()
    s = scenarios.Instance(s.name, s.kernel, FiniteDistribution(
        0.9 * s.p_data.weights + 0.1 / 8))
    corpus.append((s, 0.0, 1.0, None))
    corpus.append((s, 1.0, 0.2, FiniteDistribution.uniform(8)))
    return corpus


def descent_violations(traj, lam):
    J = traj.column("J_lambda")
    v = int(np.sum(np.diff(J) > SLACK))
    if lam == 0 and traj.records and traj.records[0].kl_hdagger_p is not None:
        H = traj.column("kl_hdagger_p")
        v += int(np.sum(np.diff(H) > SLACK))
    return v


def check_monotone_descent(max_iterations=3000):
    """Objective and, at lambda = 0, KL(h_dagger || p) never increase."""
    violations = 0
    runs = 0
    for inst, lam, gamma, h in _descent_corpus():
        p0 = FiniteDistribution.uniform(inst.kernel.input_size) if h is None else None
        cfg = SolverConfig(lam=lam, gamma=gamma, max_iterations=max_iterations)
        # p_data lies in S(q) for exact q, which is all the bound needs
        traj = solve(inst.kernel, inst.q, h, cfg, p0=p0,
                     h_dagger=inst.p_data if lam == 0 else None)
        violations += descent_violations(traj, lam)
        runs += 1
    return CheckResult("monotone_descent", violations == 0,
                       f"runs={runs} violations={violations}")


def _rate_corpus():
    rng = np.random.default_rng(3003)
    out = []
    for i in range(7):
        nx = int(rng.integers(2, 7))
        inst = scenarios.random_instance(rng, nx, nx + 3)
        assert is_identifiable(inst.kernel).injective
        out.append((inst.kernel, inst.q, inst.p_data, (1.0, 0.5, 0.1)[i % 3]))
    g = scenarios.grayscale_small()
    for gamma, h in ((1.0, [0.4, 0.1, 0.1, 0.4]), (0.5, [0.25] * 4), (0.1, [0.1, 0.2, 0.3, 0.4])):
        hd = FiniteDistribution(marginal_closed_form(g.kernel, g.q, h))
        out.append((g.kernel, g.q, hd, gamma))
    return out


def rate_bound_violations(traj, gamma, kl0):
    klq = traj.column("kl_q_Trp")[1:]
    running = np.minimum.accumulate(klq)
    Ks = np.arange(1, klq.size + 1)
    return int(np.sum(running > kl0 / (gamma * Ks) + 1e-15))


def check_rate_bound(max_iterations=2000):
    """min_{k<=K} KL(q || T_r p_k) <= KL(h_dagger || p_0) / (gamma K) for every K."""
    rng = np.random.default_rng(3004)
    violations = 0
    for kernel, q, hd, gamma in _rate_corpus():
        p0 = FiniteDistribution(rng.dirichlet(np.ones(kernel.input_size)))
        cfg = SolverConfig(lam=0.0, gamma=gamma, max_iterations=max_iterations,
                           fixed_point_tolerance=1e-300)
        traj = solve(kernel, q, None, cfg, p0=p0, h_dagger=hd)
        violations += rate_bound_violations(traj, gamma, kl_array(hd.weights, p0.weights))
    return CheckResult("rate_bound", violations == 0, f"runs=10 violations={violations}")


def random_floored_instance(rng):
    nx = int(rng.integers(1, 9))
    ny = int(rng.integers(1, 9))
    R = rng.dirichlet(np.full(ny, 0.5), size=nx).T
    k = support_floor(CorruptionKernel(R), float(rng.choice([1e-6, 1e-3, 0.1])))
    p = FiniteDistribution(rng.dirichlet(np.ones(nx)))
    q = FiniteDistribution(rng.dirichlet(np.ones(ny)))
    return k, p, q


def check_dv_identity(n_instances=100, n_couplings=1000, seed=4004):
    """KL(q || T_r p) = Phi(p) + sum q log q, and the closed form minimises Phi."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    beaten = 0
    for _ in range(n_instances):
        k, p, q = random_floored_instance(rng)
        worst = max(worst, verify_dv_identity(k, q, p))
        cost = cost_matrix(k)
        best = phi(p, q, cost)
        for _ in range(n_couplings):
            c = random_coupling(q, k.input_size, rng)
            if coupling_objective(c, p, q, cost) < best - 1e-12:
                beaten += 1
    ok = worst < 1e-10 and beaten == 0
    return CheckResult("dv_identity", ok,
                       f"instances={n_instances} max_residual={fmt(worst)} beaten={beaten}")


def check_uniqueness(seed=5005):
    """Injective kernels forget the start; the grayscale analogue does not."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(3):
        inst = scenarios.random_instance(rng, 4, 7)
        for _ in range(5):
            p0 = FiniteDistribution(rng.dirichlet(np.ones(4)))
            t = solve(inst.kernel, inst.q, None, SolverConfig(max_iterations=200_000), p0=p0)
            worst = max(worst, 0.5 * float(np.abs(t.final_p.weights - inst.p_data.weights).sum()))
    g = scenarios.grayscale_small()
    tvs, fits = [], []
    for _ in range(5):
        p0 = FiniteDistribution(rng.dirichlet(np.ones(4)))
        t = solve(g.kernel, g.q, None, SolverConfig(), p0=p0)
        tvs.append(0.5 * float(np.abs(t.final_p.weights - g.p_data.weights).sum()))
        fits.append(float(np.abs(apply(g.kernel, t.final_p).weights - g.q.weights).sum()))
    spread = max(tvs) - min(tvs)
    ok = worst < 1e-7 and max(fits) < 1e-9 and spread > 0.05
    return CheckResult("uniqueness", ok,
                       f"injective_max_tv={fmt(worst)} grayscale_fit={fmt(max(fits))} "
                       f"grayscale_tv_spread={fmt(spread)}")


def check_small_lambda_limit():
    """KL(h_dagger || p_lam) shrinks monotonically as lambda decreases."""
    g = scenarios.grayscale_small()
    h = FiniteDistribution([0.2, 0.3, 0.1, 0.4])
    hd = marginal_closed_form(g.kernel, g.q, h)
    vals = []
    for lam in (1e-1, 1e-2, 1e-3, 1e-4):
        t = solve(g.kernel, g.q, h, SolverConfig(lam=lam))
        vals.append(kl_array(hd, t.final_p.weights))
    mono = all(b <= a + SLACK for a, b in zip(vals, vals[1:]))
    ok = mono and vals[-1] < 1e-4
    return CheckResult("small_lambda_limit", ok,
                       "kl=" + ";".join(fmt(v) for v in vals))


def two_state_corpus():
    """2-state instances with a unique minimiser (lambda > 0 or injective)."""
    rng = np.random.default_rng(7007)
    kernels = [
        scenarios.two_state().kernel,
        CorruptionKernel([[0.6, 0.3], [0.4, 0.7]]),
        support_floor(identity_kernel(2), 0.1),
        CorruptionKernel([[0.7, 0.1], [0.2, 0.3], [0.1, 0.6]]),
    ]
    out = []
    for k in kernels:
        for lam in (0.0, 0.25, 1.0):
            p_data = FiniteDistribution(rng.dirichlet(np.ones(2)))
            q = apply(k, p_data)
            h = None
            if lam > 0:
                h = FiniteDistribution(rng.dirichlet(np.ones(2)))
                q = FiniteDistribution(rng.dirichlet(np.ones(k.output_size)))
            out.append((k, q, h, lam))
    return out


def check_oracle_agreement(resolution=1e-4):
    """Solver output sits within one lattice cell of the brute-force minimiser."""
    worst_tv = worst_j = 0.0
    for k, q, h, lam in two_state_corpus():
        t = solve(k, q, h, SolverConfig(lam=lam, record_every=10**6))
        b = brute_force_minimizer(k, q, h, lam, resolution)
        worst_tv = max(worst_tv, 0.5 * float(np.abs(t.final_p.weights - b.weights).sum()))
        worst_j = max(worst_j, abs(objective_J(k, q, h, lam, t.final_p)
                                   - objective_J(k, q, h, lam, b)))
    ok = worst_tv <= resolution and worst_j <= 10 * resolution
    return CheckResult("oracle_agreement", ok,
                       f"max_tv={fmt(worst_tv)} max_dJ={fmt(worst_j)}")


def check_online_batch_equivalence(n_steps=10_000, seed=8008):
    """online_step with gamma = 1 reproduces sfbd_step."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_steps:
        nx = int(rng.integers(2, 9))
        ny = int(rng.integers(2, 17))
        k = CorruptionKernel(rng.dirichlet(np.ones(ny), size=nx).T)
        q = FiniteDistribution(rng.dirichlet(np.ones(ny)))
        lam = float(rng.choice([0.0, 0.25, 1.0, 10.0]))
        h = FiniteDistribution(rng.dirichlet(np.ones(nx))) if lam > 0 else None
        state = initial_state(k, q, FiniteDistribution(rng.dirichlet(np.ones(nx))))
        for _ in range(50):
            a = sfbd_step(k, q, h, lam, state)
            b = online_step(k, q, h, lam, 1.0, state)
            worst = max(worst, float(np.max(np.abs(a.p.weights - b.p.weights))))
            state = a
            done += 1
    return CheckResult("online_batch_equivalence", worst < 1e-14,
                       f"steps={done} max_linf={fmt(worst)}")


def check_bayes_consistency(seed=9009, n=200):
    """sum_y q(y) u_y = p when q = T_r p."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        nx = int(rng.integers(1, 9))
        ny = int(rng.integers(1, 17))
        R = rng.dirichlet(np.full(ny, 0.5), size=nx).T
        R[R < 0.05] = 0.0
        R[:, R.sum(axis=0) == 0] = 1.0 / ny
        k = CorruptionKernel(R / R.sum(axis=0))
        p = FiniteDistribution(rng.dirichlet(np.ones(nx)))
        q = apply(k, p)
        post = posterior(k, p)
        worst = max(worst, float(np.abs(q.weights @ post.table - p.weights).max()))
    return CheckResult("bayes_consistency", worst < 1e-10, f"cases={n} max_err={fmt(worst)}")


def check_qualitative(seed=0):
    """Orderings of recovery error across clean-sample weight and count."""
    g = scenarios.grayscale_sweep()
    rows = recoverability_experiment(g.kernel, g.p_data, [50], 10_000, [0.0, 0.2, 0.99], seed=seed)
    e = {r.lambda_weight: r.tv_to_pdata for r in rows}
    a = e[0.0] > e[0.2] and e[0.99] > e[0.2]
    rows = recoverability_experiment(g.kernel, g.p_data, [10, 50, 200], 10_000, [0.2], seed=seed)
    c = {r.clean_count: r.tv_to_pdata for r in rows}
    b = c[10] >= c[50] >= c[200]
    s = scenarios.sparse_noise()
    rows = recoverability_experiment(s.kernel, s.p_data, [0, 50], 10_000, [0.0], seed=seed)
    m = {r.clean_count: r.tv_to_pdata for r in rows}
    cc = m[0] > m[50]
    detail = (f"w0={fmt(e[0.0])} w0.2={fmt(e[0.2])} w0.99={fmt(e[0.99])} "
              f"M10={fmt(c[10])} M50={fmt(c[50])} M200={fmt(c[200])} "
              f"init_M0={fmt(m[0])} init_M50={fmt(m[50])}")
    return CheckResult("qualitative_sweeps", a and b and cc, detail)


def check_sampling_consistency(seed=11):
    """Histogram of 10^6 draws is within TV 0.005; recovery improves with n."""
    inst = scenarios.two_state()
    batch = sample_corrupted(inst.kernel, inst.p_data, 1_000_000, seed)
    qh = empirical_distribution(batch, 2)
    tv = 0.5 * float(np.abs(qh.weights - inst.q.weights).sum())
    errs = []
    for n in (10**3, 10**4, 10**5, 10**6):
        qn = empirical_distribution(sample_corrupted(inst.kernel, inst.p_data, n, seed), 2)
        t = solve(inst.kernel, qn, None, SolverConfig(record_every=10**6))
        errs.append(0.5 * float(np.abs(t.final_p.weights - inst.p_data.weights).sum()))
    mono = all(b <= a for a, b in zip(errs, errs[1:]))
    return CheckResult("sampling_consistency", tv < 0.005 and mono,
                       f"tv_1e6={fmt(tv)} errors=" + ";".join(fmt(v) for v in errs))


def run_suite(scale: str = "quick"):
    cfg = SCALES[scale]
    checks = [
        lambda: check_fixed_point(cfg["fixed_point"]),
        check_monotone_descent,
        check_rate_bound,
        lambda: check_dv_identity(cfg["dv_instances"], cfg["dv_couplings"]),
        check_uniqueness,
        check_small_lambda_limit,
        check_oracle_agreement,
        lambda: check_online_batch_equivalence(cfg["equivalence_steps"]),
        check_bayes_consistency,
        check_qualitative,
    ]
    if cfg["sampling"]:
        checks.append(check_sampling_consistency)
    return [c() for c in checks]


def report_csv(results) -> str:
    buf = io.StringIO()
    buf.write("property,passed,detail\n")
    for r in results:
        buf.write(f"{r.name},{'true' if r.passed else 'false'},{r.detail}\n")
    return buf.getvalue()

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from klap import scenarios
from klap.core import FiniteDistribution, kl_array, total_variation
from klap.errors import ConfigurationError, DomainError, InitializationError, ShapeError
from klap.kernels import (
    CorruptionKernel,
    apply,
    constant_kernel,
    grayscale_kernel,
    identity_kernel,
    support_floor,
)
from klap.oracle import brute_force_minimizer, marginal_closed_form
from klap.solver import (
    TRAJECTORY_HEADER,
    SolverConfig,
    damping,
    fixed_point_residual,
    initial_state,
    kkt_residual,
    lambda_from_weight,
    mixture,
    objective_J,
    online_step,
    sfbd_step,
    solve,
)

from strategies import kernel_and_p, simplex

TWO_STATE = CorruptionKernel([[0.9, 0.2], [0.1, 0.8]])


class TestConfig:
    def test_nu_derived(self):
        cfg = SolverConfig(lam=1.0, gamma=0.25)
        assert cfg.nu == (1 - 0.25) * 2.0 / 0.25
        assert SolverConfig(lam=3.0, gamma=1.0).nu == 0.0

    @pytest.mark.parametrize("kw, err", [
        ({"gamma": 0.0}, DomainError), ({"gamma": 1.5}, DomainError),
        ({"lam": -1.0}, ConfigurationError), ({"lam": math.inf}, ConfigurationError),
        ({"max_iterations": 0}, ConfigurationError),
        ({"fixed_point_tolerance": 0.0}, ConfigurationError),
        ({"record_every": 0}, ConfigurationError),
    ])
    def test_invalid(self, kw, err):
        with pytest.raises(err):
            SolverConfig(**kw)

    @given(st.floats(0, 0.999))
    def test_weight_round_trip(self, w):
        cfg = SolverConfig.from_weight(w)
        assert cfg.weight == pytest.approx(w, abs=1e-12)

    def test_weight_domain(self):
        with pytest.raises(ConfigurationError):
            lambda_from_weight(1.0)
        assert lambda_from_weight(0.2) == pytest.approx(0.25)
        with pytest.raises(DomainError):
            damping(0.0, 0.0)


class TestObjective:
    def test_zero_at_truth(self):
        inst = scenarios.two_state()
        assert objective_J(inst.kernel, inst.q, None, 0.0, inst.p_data) == 0.0

    def test_flat_for_constant_kernel(self, rng):
        k = constant_kernel(3, 2)
        q = FiniteDistribution([1, 0])
        vals = {objective_J(k, q, None, 0.0, FiniteDistribution(rng.dirichlet(np.ones(3))))
                for _ in range(5)}
        assert max(vals) - min(vals) < 1e-15

    def test_identity_example(self):
        # KL(q || p) with q = [1, 0], p = [0.5, 0.5]; the transposed pair is infinite
        v = objective_J(identity_kernel(2), [1, 0], None, 0.0, [0.5, 0.5])
        assert v == pytest.approx(math.log(2), abs=1e-15)
        assert objective_J(identity_kernel(2), [0.5, 0.5], None, 0.0, [1, 0]) == math.inf

    def test_infinite_on_support_failure(self):
        assert objective_J(identity_kernel(2), [0.5, 0.5], None, 0.0, [1.0, 0.0]) == math.inf
        assert objective_J(identity_kernel(2), [0.5, 0.5], [0.5, 0.5], 1.0, [1.0, 0.0]) == math.inf

    def test_lambda_needs_prior(self):
        with pytest.raises(ConfigurationError):
            objective_J(identity_kernel(2), [0.5, 0.5], None, 0.5, [0.5, 0.5])

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            objective_J(identity_kernel(2), [1.0], None, 0.0, [0.5, 0.5])
        with pytest.raises(ShapeError):
            objective_J(identity_kernel(2), [0.5, 0.5], [1.0], 1.0, [0.5, 0.5])


class TestSteps:
    def test_identity_step_returns_q(self):
        k = identity_kernel(3)
        q = FiniteDistribution([0.2, 0.3, 0.5])
        s = sfbd_step(k, q, None, 0.0, initial_state(k, q, FiniteDistribution.uniform(3)))
        assert np.allclose(s.p.weights, q.weights, atol=1e-15) and s.k == 1

    def test_constant_kernel_fixed(self, rng):
        k = constant_kernel(4, 3, 1)
        q = FiniteDistribution([0, 1, 0])
        p = FiniteDistribution(rng.dirichlet(np.ones(4)))
        s = sfbd_step(k, q, None, 0.0, initial_state(k, q, p))
        assert np.allclose(s.p.weights, p.weights, atol=1e-15)

    def test_large_lambda_tends_to_prior(self):
        k, q, h = TWO_STATE, FiniteDistribution([0.7, 0.3]), FiniteDistribution([0.1, 0.9])
        st0 = initial_state(k, q, FiniteDistribution.uniform(2))
        gaps = [total_variation(sfbd_step(k, q, h, lam, st0).p, h) for lam in (1, 10, 1e3, 1e6)]
        assert all(b < a for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 1e-6

    def test_online_gamma_one_equals_batch(self, rng):
        for _ in range(50):
            inst = scenarios.random_instance(rng, 4, 6)
            h = FiniteDistribution(rng.dirichlet(np.ones(4)))
            for lam in (0.0, 0.5):
                hh = h if lam > 0 else None
                s = initial_state(inst.kernel, inst.q, FiniteDistribution(rng.dirichlet(np.ones(4))))
                a = sfbd_step(inst.kernel, inst.q, hh, lam, s)
                b = online_step(inst.kernel, inst.q, hh, lam, 1.0, s)
                assert np.abs(a.p.weights - b.p.weights).max() < 1e-14

    def test_online_small_gamma_barely_moves(self):
        k, q = TWO_STATE, FiniteDistribution([0.7, 0.3])
        s = initial_state(k, q, FiniteDistribution([0.5, 0.5]))
        moves = [total_variation(online_step(k, q, None, 0.0, g, s).p, s.p) for g in (1e-2, 1e-4, 1e-6)]
        assert moves[0] > moves[1] > moves[2] and moves[2] < 1e-6

    def test_online_half_gamma_formula(self):
        k, q = TWO_STATE, FiniteDistribution([0.7, 0.3])
        s = initial_state(k, q, FiniteDistribution([0.6, 0.4]))
        out = online_step(k, q, None, 0.0, 0.5, s)
        assert np.allclose(out.p.weights, 0.5 * s.m.weights + 0.5 * s.p.weights, atol=1e-15)

    def test_online_gamma_domain(self):
        k = TWO_STATE
        s = initial_state(k, [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(DomainError):
            online_step(k, [0.5, 0.5], None, 0.0, 0.0, s)

    @given(kernel_and_p(), st.floats(0.05, 1.0), st.sampled_from([0.0, 0.25, 2.0]), st.data())
    def test_single_step_descends(self, kp, gamma, lam, data):
        k, p = kp
        q = data.draw(simplex(k.output_size))
        h = data.draw(simplex(k.input_size)) if lam > 0 else None
        s = initial_state(k, q, p)
        nxt = online_step(k, q, h, lam, gamma, s)
        assert objective_J(k, q, h, lam, nxt.p) <= objective_J(k, q, h, lam, p) + 1e-10
        assert abs(nxt.p.weights.sum() - 1) <= 1e-12


class TestResidual:
    def test_zero_at_truth(self):
        inst = scenarios.two_state()
        assert fixed_point_residual(inst.kernel, inst.q, None, 0.0, inst.p_data) < 1e-12

    def test_constant_kernel_everywhere_stationary(self, rng):
        k = constant_kernel(3, 2)
        p = FiniteDistribution(rng.dirichlet(np.ones(3)))
        assert fixed_point_residual(k, [1, 0], None, 0.0, p) < 1e-15

    def test_identity_prior_example(self):
        r = fixed_point_residual(identity_kernel(2), [0.7, 0.3], [0.5, 0.5], 1.0, [0.5, 0.5])
        assert r == pytest.approx(0.2, abs=1e-15)

    @given(kernel_and_p(), st.sampled_from([0.0, 0.5, 3.0]), st.data())
    def test_kkt_form_equivalent(self, kp, lam, data):
        k, p = kp
        q = data.draw(simplex(k.output_size))
        h = data.draw(simplex(k.input_size)) if lam > 0 else None
        a = fixed_point_residual(k, q, h, lam, p)
        b = kkt_residual(k, q, h, lam, p) / (1 + lam)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-13)

    def test_mixture_preserves_mass(self, rng):
        inst = scenarios.random_instance(rng, 5, 7)
        m = mixture(inst.kernel, inst.q, FiniteDistribution.uniform(5))
        assert abs(m.weights.sum() - 1) <= 1e-12


class TestSolve:
    def test_identity_one_step(self):
        q = FiniteDistribution([0.1, 0.6, 0.3])
        t = solve(identity_kernel(3), q, None, SolverConfig())
        assert t.converged and t.iterations_run == 1
        assert np.allclose(t.final_p.weights, q.weights, atol=1e-15)

    def test_two_state_recovers_truth(self):
        inst = scenarios.two_state()
        t = solve(inst.kernel, inst.q, None, SolverConfig())
        assert t.converged
        assert np.abs(t.final_p.weights - [0.3, 0.7]).max() < 1e-8
        grid = brute_force_minimizer(inst.kernel, inst.q, None, 0.0, 1e-4)
        assert total_variation(grid, t.final_p) <= 1e-4

    def test_grayscale_prior_is_projection(self):
        g = scenarios.grayscale_small()
        hd = marginal_closed_form(g.kernel, g.q, g.p_data)
        assert np.allclose(hd, g.p_data.weights)
        t = solve(g.kernel, g.q, g.p_data, SolverConfig(lam=0.25))
        assert total_variation(t.final_p, g.p_data) < 1e-6

    def test_constant_kernel_immediate(self):
        t = solve(constant_kernel(3, 2), [1, 0], None, SolverConfig())
        assert t.converged and t.iterations_run == 0 and len(t.records) == 1
        assert t.metadata["non_identifiable"]

    def test_p0_defaults(self):
        k = TWO_STATE
        t = solve(k, [0.5, 0.5], None, SolverConfig(max_iterations=1))
        assert t.metadata["p0_source"] == "uniform"
        t = solve(k, [0.5, 0.5], [0.2, 0.8], SolverConfig(lam=1.0, max_iterations=1))
        assert t.metadata["p0_source"] == "prior"
        assert t.records[0].J_lambda == objective_J(k, [0.5, 0.5], [0.2, 0.8], 1.0, [0.2, 0.8])

    def test_p0_repaired_to_full_support(self):
        t = solve(TWO_STATE, [0.5, 0.5], None, SolverConfig(max_iterations=3), p0=[1.0, 0.0])
        assert t.metadata["p0_repaired"]
        assert t.final_p.weights.min() > 0

    def test_infinite_start_raises(self):
        with pytest.raises(InitializationError, match="support_floor"):
            solve(constant_kernel(2, 2), [0.5, 0.5], None, SolverConfig())

    def test_hits_cap(self):
        t = solve(TWO_STATE, [0.6, 0.4], None, SolverConfig(max_iterations=3, fixed_point_tolerance=1e-300))
        assert not t.converged and t.iterations_run == 3 and len(t.records) == 4

    def test_record_every_keeps_final(self):
        t = solve(TWO_STATE, [0.6, 0.4], None, SolverConfig(record_every=7, fixed_point_tolerance=1e-12))
        ks = [r.k for r in t.records]
        assert ks[:-1] == list(range(0, ks[-1], 7))[: len(ks) - 1]
        assert ks[-1] == t.iterations_run

    def test_csv_format(self):
        inst = scenarios.two_state()
        t = solve(inst.kernel, inst.q, None, SolverConfig(max_iterations=2), reference=inst.p_data)
        lines = t.to_csv().splitlines()
        assert lines[0] == TRAJECTORY_HEADER
        cells = lines[1].split(",")
        assert len(cells) == 6 and cells[3] == "" and cells[5] != ""
        assert float(cells[1]) == t.records[0].J_lambda

    def test_deterministic(self):
        inst = scenarios.sparse_noise()
        a = solve(inst.kernel, inst.q, None, SolverConfig(max_iterations=500))
        b = solve(inst.kernel, inst.q, None, SolverConfig(max_iterations=500))
        assert a.to_csv() == b.to_csv()

    def test_gamma_sweep_tradeoff(self):
        inst = scenarios.two_state()
        runs = {g: solve(inst.kernel, inst.q, None, SolverConfig(gamma=g, record_every=10**6))
                for g in (1.0, 0.5, 0.1, 0.01)}
        its = [runs[g].iterations_run for g in (1.0, 0.5, 0.1, 0.01)]
        assert its == sorted(its)
        finals = np.array([runs[g].final_p.weights for g in runs])
        assert np.ptp(finals, axis=0).max() < 1e-6

    def test_stationary_point_is_global_min(self, rng):
        for _ in range(3):
            inst = scenarios.random_instance(rng, 4, 6)
            h = FiniteDistribution(rng.dirichlet(np.ones(4)))
            q = FiniteDistribution(rng.dirichlet(np.ones(6)))
            t = solve(inst.kernel, q, h, SolverConfig(lam=0.5, record_every=10**6))
            assert t.converged
            best = objective_J(inst.kernel, q, h, 0.5, t.final_p)
            for p in rng.dirichlet(np.ones(4), size=1000):
                assert best <= objective_J(inst.kernel, q, h, 0.5, FiniteDistribution(p)) + 1e-10

    @given(st.integers(0, 10**6), st.sampled_from([0.0, 0.25, 1.0]), st.sampled_from([1.0, 0.3]))
    def test_monotone_trajectory(self, seed, lam, gamma):
        r = np.random.default_rng(seed)
        inst = scenarios.random_instance(r, int(r.integers(2, 6)), int(r.integers(2, 8)))
        h = FiniteDistribution(r.dirichlet(np.ones(inst.kernel.input_size))) if lam > 0 else None
        t = solve(inst.kernel, inst.q, h, SolverConfig(lam=lam, gamma=gamma, max_iterations=300),
                  h_dagger=inst.p_data if lam == 0 else None)
        assert np.all(np.diff(t.column("J_lambda")) <= 1e-10)
        if lam == 0:
            assert np.all(np.diff(t.column("kl_hdagger_p")) <= 1e-10)

    def test_kl_to_hdagger_column(self):
        inst = scenarios.two_state()
        t = solve(inst.kernel, inst.q, None, SolverConfig(max_iterations=5), h_dagger=inst.p_data)
        assert t.records[0].kl_hdagger_p == kl_array(inst.p_data.weights, np.full(2, 0.5))

    def test_step_hook_used(self):
        calls = []

        def step(m, p):
            calls.append(1)
            return m
        solve(TWO_STATE, [0.6, 0.4], None, SolverConfig(max_iterations=4,
              fixed_point_tolerance=1e-300), step=step)
        assert len(calls) == 4

    def test_floored_kernel_handles_infeasible_q(self):
        k = support_floor(grayscale_kernel(2, 2), 1e-6)
        t = solve(k, [0.3, 0.7], None, SolverConfig())
        assert t.converged
        assert np.allclose(apply(k, t.final_p).weights, [0.3, 0.7], atol=1e-9)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesicle_pf.energy import EnergyModel, ModelParams
from vesicle_pf.integrators import (
    DiagnosticsRow,
    EnergyInequalityViolated,
    IntegratorConfig,
    NonFinite,
    NonPositiveSymbol,
    PicardDiverged,
    StoppingCriterion,
    check_admissible,
    run_to_steady_state,
    step,
    step_backward_euler,
    step_forward_euler,
    step_fully_implicit,
    step_semi_implicit,
    symmetric_nonlinearities,
)
from vesicle_pf.oracles import energy_law_residual, smooth_random_field
from vesicle_pf.scenarios import preset
from vesicle_pf.spectral import GridSpec


@pytest.fixture
def smooth_case(grid16):
    p = ModelParams(epsilon=0.1, M1=10.0, M2=10.0, alpha=0.3, beta=0.5, dA0=0.05)
    phi = smooth_random_field(grid16, np.random.default_rng(0), offset=0.05)
    return EnergyModel(grid16, p), phi


@pytest.fixture
def stationary(grid16):
    """phi = 1 with every target matched: the right-hand side vanishes."""
    p = ModelParams(epsilon=0.1, alpha=1.0, beta=0.0, A0=1.0)
    return EnergyModel(grid16, p), np.ones(grid16.shape)


@pytest.fixture
def disc16():
    d = preset("discocyte")
    g = GridSpec.cube(16)
    return EnergyModel(g, d.params), d.initial_field(g).values, d.integrator.dt


class TestConfigs:
    @pytest.mark.parametrize("kw", [
        {"scheme": "rk4"}, {"dt": 0.0}, {"picard_tol": -1.0}, {"picard_max_iters": 0},
    ])
    def test_integrator_invalid(self, kw):
        with pytest.raises(ValueError):
            IntegratorConfig(**kw)

    @pytest.mark.parametrize("kw", [{"max_steps": 0}, {"rate_tol": 0.0}, {"energy_tol": -1.0}])
    def test_stopping_invalid(self, kw):
        with pytest.raises(ValueError):
            StoppingCriterion(**kw)

    def test_defaults(self):
        c = IntegratorConfig()
        assert (c.picard_tol, c.picard_max_iters) == (1e-10, 200)
        s = StoppingCriterion()
        assert (s.rate_tol, s.energy_tol) == (1e-2, 1e-4)


class TestAdmissibility:
    def test_reference_setting_passes(self, grid16):
        m = EnergyModel(grid16, ModelParams(epsilon=0.02, beta=1.0))
        check_admissible(m, 2e-7)  # dt*kappa/eps^3 = 0.025

    def test_too_large_dt_raises(self, grid16):
        m = EnergyModel(grid16, ModelParams(epsilon=0.02, beta=1.0))
        with pytest.raises(NonPositiveSymbol):
            check_admissible(m, 1e-5)

    def test_step_raises_only_on_a_resolved_bad_mode(self):
        # The symbol minimum sits at k^2 = 1/eps^2; whether a mode hits it depends on the grid.
        eps, dt = 0.1, 5e-3  # dt*kappa/eps^3 = 5
        phi = np.zeros((16, 16, 16))
        coarse = EnergyModel(GridSpec.cube(16, 0.1), ModelParams(epsilon=eps, beta=1.0, M1=0, M2=0))
        step_semi_implicit(coarse, phi, dt)  # smallest nonzero k^2 = 3948 >> 100: all symbols positive
        fine = EnergyModel(GridSpec.cube(16, 2 * np.pi), ModelParams(epsilon=eps, beta=1.0, M1=0, M2=0))
        with pytest.raises(NonPositiveSymbol):
            step_semi_implicit(fine, phi, dt)


class TestForwardEuler:
    def test_fixed_point(self, stationary):
        m, phi = stationary
        np.testing.assert_array_equal(step_forward_euler(m, phi, 1e-3), phi)

    def test_linear_in_dt(self, smooth_case):
        m, phi = smooth_case
        d1 = step_forward_euler(m, phi, 1e-7) - phi
        d2 = step_forward_euler(m, phi, 2e-7) - phi
        np.testing.assert_allclose(d2, 2 * d1, rtol=1e-9, atol=1e-15)

    @pytest.fixture
    def disc32(self):
        d = preset("discocyte")
        g = GridSpec.cube(32)
        return EnergyModel(g, d.params), d.initial_field(g).values

    def test_descent_from_experiment_data(self, disc32):
        m, phi = disc32
        assert m.energy(step_forward_euler(m, phi, 5e-8)) < m.energy(phi)

    def test_explicit_bound_exceeded_at_5e_7(self, disc32):
        # 2/(kappa eps k_max^4) is about 5e-8 on 32^3, so 5e-7 overshoots
        m, phi = disc32
        assert m.energy(step_forward_euler(m, phi, 5e-7)) > m.energy(phi)

    def test_blow_up_raises(self, smooth_case):
        m, phi = smooth_case
        with pytest.raises(NonFinite), np.errstate(all="ignore"):
            for _ in range(200):
                phi = step_forward_euler(m, phi, 1e-2)


class TestSemiImplicit:
    def test_kappa_zero_is_forward_euler(self, grid16):
        p = ModelParams(epsilon=0.1, kappa=0.0, M1=10.0, M2=10.0, alpha=0.3, beta=0.5, dA0=0.05)
        m = EnergyModel(grid16, p)
        phi = smooth_random_field(grid16, np.random.default_rng(3), offset=0.05)
        np.testing.assert_allclose(step_semi_implicit(m, phi, 1e-4), step_forward_euler(m, phi, 1e-4),
                                   rtol=0, atol=1e-13)

    def test_fixed_point(self, stationary):
        m, phi = stationary
        np.testing.assert_allclose(step_semi_implicit(m, phi, 1e-5), phi, atol=1e-14)

    def test_input_untouched(self, smooth_case):
        m, phi = smooth_case
        keep = phi.copy()
        step_semi_implicit(m, phi, 1e-6)
        np.testing.assert_array_equal(phi, keep)


class TestSymmetricNonlinearities:
    @pytest.mark.parametrize("form", ["printed", "exact"])
    def test_diagonal_reduces(self, smooth_case, form):
        m, phi = smooth_case
        f, g, h = symmetric_nonlinearities(m, phi, phi, form)
        parts = m.variational_derivative(phi, decompose=True)
        np.testing.assert_allclose(f, m.f(phi), rtol=1e-12, atol=1e-10)
        np.testing.assert_allclose(m.params.kappa * g, parts["W"], rtol=1e-11, atol=1e-8)
        np.testing.assert_allclose(h, parts["G"], rtol=1e-11, atol=1e-8)

    @pytest.mark.parametrize("form", ["printed", "exact"])
    def test_symmetric(self, grid16, smooth_case, form):
        m, phi = smooth_case
        eta = smooth_random_field(grid16, np.random.default_rng(9), offset=-0.1)
        a = symmetric_nonlinearities(m, phi, eta, form)
        b = symmetric_nonlinearities(m, eta, phi, form)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12 * np.abs(x).max())

    def test_exact_form_is_a_difference_quotient(self, grid16, smooth_case):
        m, phi = smooth_case
        eta = smooth_random_field(grid16, np.random.default_rng(9), offset=-0.1)
        _, _, h = symmetric_nonlinearities(m, phi, eta, "exact")
        lhs = m.ade_energy(eta) - m.ade_energy(phi)
        rhs = m.ops.integrate((eta - phi) * h)
        assert lhs == pytest.approx(rhs, rel=1e-11)

    def test_rejects_unknown_form(self, smooth_case):
        m, phi = smooth_case
        with pytest.raises(ValueError):
            symmetric_nonlinearities(m, phi, phi, "guess")


class TestFullyImplicit:
    def test_stationary_one_iteration(self, stationary):
        m, phi = stationary
        out, iters = step_fully_implicit(m, phi, 1e-5, IntegratorConfig("fully_implicit", 1e-5),
                                         return_iterations=True)
        assert iters == 1
        np.testing.assert_allclose(out, phi, atol=1e-14)

    def test_energy_law(self, disc16):
        m, phi, dt = disc16
        cfg = IntegratorConfig("fully_implicit", dt, picard_tol=1e-12, picard_max_iters=500)
        for _ in range(5):
            new = step_fully_implicit(m, phi, dt, cfg)
            r = energy_law_residual(m, phi, new, dt)
            assert abs(r) <= 1e-8 * max(1.0, m.energy(phi))
            phi = new

    def test_printed_form_misses_the_energy_law(self, disc16):
        m, phi, dt = disc16
        cfg = IntegratorConfig("fully_implicit", dt, picard_tol=1e-12, picard_max_iters=500)
        new = step_fully_implicit(m, phi, dt, cfg, form="printed")
        assert abs(energy_law_residual(m, phi, new, dt)) > 1e-6 * m.energy(phi)

    def test_picard_budget_exhausted(self, disc16):
        m, phi, dt = disc16
        with pytest.raises(PicardDiverged):
            step_fully_implicit(m, phi, dt, IntegratorConfig("fully_implicit", dt, picard_tol=1e-14,
                                                             picard_max_iters=2))


class TestBackwardEuler:
    def test_stationary(self, stationary):
        m, phi = stationary
        out = step_backward_euler(m, phi, 1e-5, IntegratorConfig("backward_euler", 1e-5), slack=0.0)
        np.testing.assert_allclose(out, phi, atol=1e-14)

    def test_monotone_energy(self, disc16):
        m, phi, dt = disc16
        cfg = IntegratorConfig("backward_euler", dt, picard_tol=1e-12, picard_max_iters=500)
        e = m.energy(phi)
        for _ in range(10):
            phi = step_backward_euler(m, phi, dt, cfg)
            e_new = m.energy(phi)
            assert e_new <= e + 1e-10
            e = e_new

    def test_negative_slack_rejects(self, disc16):
        m, phi, dt = disc16
        with pytest.raises(EnergyInequalityViolated):
            step_backward_euler(m, phi, dt, IntegratorConfig("backward_euler", dt), slack=-1e12)


class TestConsistency:
    def test_pairwise_first_order(self, smooth_case):
        m, phi = smooth_case
        results = {}
        for dt in (1e-7, 5e-8):
            cfg = IntegratorConfig("fully_implicit", dt, picard_tol=1e-13, picard_max_iters=500)
            results[dt] = {
                "forward_euler": step_forward_euler(m, phi, dt),
                "semi_implicit": step_semi_implicit(m, phi, dt),
                "fully_implicit": step_fully_implicit(m, phi, dt, cfg),
                "backward_euler": step_backward_euler(m, phi, dt, cfg),
            }
        for a, b in itertools.combinations(results[1e-7], 2):
            d1 = np.abs(results[1e-7][a] - results[1e-7][b]).max()
            d2 = np.abs(results[5e-8][a] - results[5e-8][b]).max()
            assert d1 / d2 >= 3.5, (a, b, d1 / d2)


class TestRunLoop:
    def test_stationary_converges_in_one_step(self, stationary):
        m, phi = stationary
        res = run_to_steady_state(phi, m, IntegratorConfig("semi_implicit", 1e-6), StoppingCriterion(10))
        assert res.converged and res.steps == 1 and res.reason == "converged"

    @pytest.mark.parametrize("steps,cadence", [(250, 100), (200, 100), (7, 3), (5, 1)])
    def test_history_length(self, smooth_case, steps, cadence):
        m, phi = smooth_case
        calls = []
        res = run_to_steady_state(phi, m, IntegratorConfig("semi_implicit", 1e-7),
                                  StoppingCriterion(max_steps=steps, rate_tol=1e-30),
                                  hooks=[lambda row, f: calls.append(row.step)], cadence=cadence)
        assert not res.converged and res.reason == "max_steps" and res.steps == steps
        assert len(res.history) == len(calls) == -(-steps // cadence) + 1
        assert calls[0] == 0 and calls[-1] == steps

    def test_rows_satisfy_breakdown(self, smooth_case):
        m, phi = smooth_case
        res = run_to_steady_state(phi, m, IntegratorConfig("semi_implicit", 1e-7),
                                  StoppingCriterion(max_steps=20), cadence=5)
        for row in res.history:
            assert isinstance(row, DiagnosticsRow)
            assert row.E_M == ((row.W + row.G) + row.T1) + row.T2
            assert row.time == row.step * 1e-7

    def test_inadmissible_rejected_before_stepping(self, smooth_case):
        m, phi = smooth_case
        with pytest.raises(NonPositiveSymbol):
            run_to_steady_state(phi, m, IntegratorConfig("semi_implicit", 1e-2), StoppingCriterion(5))

    def test_dispatch(self, smooth_case):
        m, phi = smooth_case
        for scheme in ("forward_euler", "semi_implicit", "fully_implicit", "backward_euler"):
            assert np.isfinite(step(m, phi, IntegratorConfig(scheme, 1e-8))).all()


class TestProperties:
    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), dt=st.sampled_from([1e-7, 5e-7, 2e-6]))
    def test_fully_implicit_energy_law_random(self, seed, dt):
        g = GridSpec.cube(8)
        p = ModelParams(epsilon=0.2, M1=10.0, M2=10.0, alpha=0.4, beta=1.0, dA0=0.05)
        m = EnergyModel(g, p)
        phi = smooth_random_field(g, np.random.default_rng(seed), offset=0.05)
        cfg = IntegratorConfig("fully_implicit", dt, picard_tol=1e-13, picard_max_iters=500)
        new = step_fully_implicit(m, phi, dt, cfg)
        assert abs(energy_law_residual(m, phi, new, dt)) <= 1e-8 * max(1.0, m.energy(phi))

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_semi_implicit_decreases_energy_at_small_dt(self, seed):
        g = GridSpec.cube(8)
        p = ModelParams(epsilon=0.2, M1=10.0, M2=10.0, alpha=0.4, beta=1.0, dA0=0.05)
        m = EnergyModel(g, p)
        phi = smooth_random_field(g, np.random.default_rng(seed), offset=0.05)
        assert m.energy(step_semi_implicit(m, phi, 1e-7)) <= m.energy(phi)

import math

import numpy as np
import pytest

from noisyotto.dynamics import (
    INITIAL_STATE,
    EngineConfig,
    MomentState,
    NoiseParams,
    PhysicalState,
    casimir_companion,
    casimir_growth_rate,
    efficiency_loss,
    from_physical,
    parasitic_energy,
    rhs,
    to_physical,
)


class TestValidation:
    def test_noise_params_reject_negative(self):
        with pytest.raises(ValueError):
            NoiseParams(-0.01, 0.0)
        with pytest.raises(ValueError):
            NoiseParams(0.0, -1e-9)

    def test_engine_config_bounds(self):
        with pytest.raises(ValueError):
            EngineConfig(1.2, 1.0)
        with pytest.raises(ValueError):
            EngineConfig(0.5, 0.0)
        with pytest.raises(ValueError):
            EngineConfig(0.5, -1.0)
        cfg = EngineConfig(1.0 / 3.0, 2.0, NoiseParams(0.02, 0.01))
        assert cfg.u_min == pytest.approx(1.0 / 9.0)


class TestRhs:
    def test_thermal_state_is_noiseless_equilibrium(self):
        assert np.all(rhs(INITIAL_STATE, 1.0, NoiseParams()) == 0.0)

    def test_thermal_state_survives_pure_dephasing(self):
        # direct substitution: the dephasing terms cancel pairwise at (1,1,0), u=1
        out = rhs(INITIAL_STATE, 1.0, NoiseParams(0.0, 0.01))
        assert np.allclose(out, 0.0, atol=1e-15)

    def test_amplitude_noise_example(self):
        # frozen by direct substitution: (2*0.02/81*2 - 1/9), checked against a
        # finite difference of the integrated trajectory below
        out = rhs((2.0, 1.0, 0.5), 1.0 / 9.0, NoiseParams(0.02, 0.0))
        assert out[0] == pytest.approx(1.0, abs=1e-15)
        assert out[1] == pytest.approx(0.08 / 81.0 - 1.0 / 9.0, abs=1e-15)
        assert out[2] == pytest.approx(7.0 / 9.0, abs=1e-15)

    def test_rhs_matches_trajectory_finite_difference(self):
        from scipy.integrate import solve_ivp

        noise = NoiseParams(0.02, 0.0)
        u = 1.0 / 9.0
        x0 = np.array([2.0, 1.0, 0.5])
        sol = solve_ivp(
            lambda t, x: rhs(x, u, noise), (0.0, 1e-4), x0,
            rtol=1e-12, atol=1e-14, dense_output=True,
        )
        h = 5e-5
        fd = (sol.sol(h) - sol.sol(0.0)) / h
        assert np.allclose(fd, rhs(x0, u, noise), rtol=1e-3)

    def test_non_finite_input_rejected(self):
        with pytest.raises(ValueError):
            rhs((np.nan, 1.0, 0.0), 1.0, NoiseParams())
        with pytest.raises(ValueError):
            rhs((1.0, 1.0, 0.0), np.inf, NoiseParams())


class TestTransformations:
    def test_initial_condition_maps_to_unit_energy(self):
        phys = to_physical(INITIAL_STATE, 1.0)
        assert phys == pytest.approx((1.0, 0.0, 0.0, 1.0))

    def test_ideal_final_state(self, ratio):
        phys = to_physical((1.0 / ratio, ratio, 0.0), ratio**2)
        assert phys.energy == pytest.approx(ratio, abs=1e-15)
        assert phys.lagrangian_mean == pytest.approx(0.0, abs=1e-15)
        assert phys.correlation == pytest.approx(0.0)

    def test_direct_substitution(self):
        phys = to_physical((2.0, 0.5, 1.0), 0.25)
        assert phys == pytest.approx((0.5, 0.0, 0.5, 0.25))

    def test_from_physical_examples(self):
        assert from_physical(PhysicalState(1.0, 0.0, 0.0, 1.0)) == pytest.approx(
            (1.0, 1.0, 0.0)
        )
        state = from_physical(PhysicalState(1.0 / 3.0, 0.0, 0.0, 1.0 / 9.0))
        assert state == pytest.approx((3.0, 1.0 / 3.0, 0.0))

    def test_round_trip_is_identity(self, rng):
        for _ in range(200):
            state = MomentState(*rng.uniform(0.05, 4.0, 2), rng.uniform(-2.0, 2.0))
            u = rng.uniform(1e-3, 1.0)
            back = from_physical(to_physical(state, u))
            assert np.allclose(back, state, rtol=1e-14, atol=1e-14)

    def test_energy_identity(self, rng):
        # E = (x2 + u*x1)/2 is the definition, not an inequality assumption
        for _ in range(50):
            state = MomentState(*rng.uniform(0.05, 4.0, 2), rng.uniform(-2.0, 2.0))
            u = rng.uniform(1e-3, 1.0)
            phys = to_physical(state, u)
            assert phys.energy == pytest.approx(0.5 * (state.x2 + u * state.x1))

    def test_nonpositive_control_rejected(self):
        with pytest.raises(ValueError):
            to_physical(INITIAL_STATE, 0.0)
        with pytest.raises(ValueError):
            from_physical(PhysicalState(1.0, 0.0, 0.0, -0.5))


class TestCasimir:
    def test_initial_value(self):
        assert casimir_companion(INITIAL_STATE) == 1.0

    def test_arithmetic(self):
        assert casimir_companion((2.0, 1.0, 0.5)) == pytest.approx(1.75)

    def test_noiseless_rate_vanishes(self, rng):
        for _ in range(50):
            state = rng.uniform(0.1, 3.0, 3)
            u = rng.uniform(0.1, 1.0)
            assert casimir_growth_rate(state, u, NoiseParams()) == 0.0

    def test_amplitude_rate_at_thermal_state(self):
        rate = casimir_growth_rate(INITIAL_STATE, 1.0, NoiseParams(0.02, 0.0))
        assert rate == pytest.approx(0.04)

    def test_rate_vanishes_on_energy_axis_without_amplitude_noise(self):
        # L = C = 0 three-parameter family: x2 = u*x1, x3 = 0
        state = (2.0, 0.5, 0.0)
        rate = casimir_growth_rate(state, 0.25, NoiseParams(0.0, 0.05))
        assert rate == pytest.approx(0.0, abs=1e-16)

    def test_rate_matches_companion_derivative(self, rng):
        # independent oracle: finite difference of x1*x2 - x3^2 along the flow
        from scipy.integrate import solve_ivp

        for _ in range(10):
            noise = NoiseParams(rng.uniform(0, 0.05), rng.uniform(0, 0.05))
            u = rng.uniform(0.2, 1.0)
            x0 = np.array([rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(-0.5, 0.5)])
            sol = solve_ivp(
                lambda t, x: rhs(x, u, noise), (0.0, 2e-4), x0,
                rtol=1e-12, atol=1e-14, dense_output=True,
            )
            h = 1e-4
            fd = (casimir_companion(sol.sol(h)) - casimir_companion(sol.sol(0.0))) / h
            assert fd == pytest.approx(casimir_growth_rate(x0, u, noise), rel=1e-4, abs=1e-9)

    def test_rate_requires_positive_control(self):
        with pytest.raises(ValueError):
            casimir_growth_rate(INITIAL_STATE, -1.0, NoiseParams())


class TestScalars:
    def test_efficiency_loss_examples(self, ratio):
        assert efficiency_loss(1.0 / 3.0, ratio) == pytest.approx(0.0, abs=1e-15)
        assert efficiency_loss(0.4, ratio) == pytest.approx(0.2)

    def test_efficiency_loss_preconditions(self):
        with pytest.raises(ValueError):
            efficiency_loss(0.5, 1.5)
        with pytest.raises(ValueError):
            efficiency_loss(-0.1, 0.5)

    def test_parasitic_energy(self):
        assert parasitic_energy(PhysicalState(1.0, 0.0, 0.0, 0.1)) == 0.0
        assert parasitic_energy(PhysicalState(1.0, 0.3, 0.4, 0.1)) == pytest.approx(0.5)

import numpy as np
import pytest

from noisyotto.controls import ConstantProfile, reference_profile
from noisyotto.dynamics import EngineConfig, NoiseParams
from noisyotto.montecarlo import (
    EnsembleMoments,
    SdeOptions,
    compare_moments,
    ode_reference,
    simulate_ensemble,
    write_comparison_csv,
)

# modest ensembles keep the unit tests fast; the acceptance suite runs 1e5
SMALL = dict(ensemble_size=8000, time_step=4e-4, n_samples=41)


def u_flat(ratio, duration):
    return ConstantProfile(1.0, duration, ratio**2)


class TestOptions:
    def test_validation(self):
        with pytest.raises(ValueError):
            SdeOptions(time_step=0.0)
        with pytest.raises(ValueError):
            SdeOptions(ensemble_size=10)
        with pytest.raises(ValueError):
            SdeOptions(scheme="milstein")


class TestEnsemble:
    def test_noiseless_flat_control_conserves_energy(self, ratio):
        cfg = EngineConfig(ratio, 2.0)
        mc = simulate_ensemble(cfg, u_flat(ratio, 2.0), SdeOptions(seed=1, **SMALL))
        # symmetric Gaussian start: L and C average to zero for all times
        assert np.all(np.abs(mc.means[:, 1]) < 4.0 * mc.standard_errors[:, 1])
        assert np.all(np.abs(mc.means[:, 2]) < 4.0 * mc.standard_errors[:, 2])
        drift = np.abs(mc.means[:, 0] - mc.means[0, 0])
        assert np.all(drift < 4.0 * mc.standard_errors[:, 0] + 1e-3)

    @pytest.mark.parametrize(
        "noise", [NoiseParams(0.0, 0.01), NoiseParams(0.02, 0.0)]
    )
    def test_matches_moment_ode_under_reference_ramp(self, ratio, noise):
        prof = reference_profile(1, ratio)
        cfg = EngineConfig(ratio, prof.duration, noise)
        mc = simulate_ensemble(cfg, prof, SdeOptions(seed=2, **SMALL))
        ode = ode_reference(cfg, prof, mc)
        cmp = compare_moments(mc, ode)
        assert cmp.max_z < 4.0
        assert cmp.fraction_above_3 <= 0.01

    def test_amplitude_heating_slope(self, ratio):
        # at fixed control the energy drifts at rate gamma_a * (E - L)
        cfg = EngineConfig(ratio, 1.0, NoiseParams(0.02, 0.0))
        mc = simulate_ensemble(
            cfg, u_flat(ratio, 1.0),
            SdeOptions(seed=3, ensemble_size=50_000, time_step=2e-4, n_samples=51),
        )
        slope = np.polyfit(mc.times, mc.means[:, 0], 1)[0]
        assert slope == pytest.approx(0.02, abs=0.008)

    def test_monte_carlo_error_scaling(self, ratio):
        cfg = EngineConfig(ratio, 1.0, NoiseParams(0.0, 0.01))
        se = []
        for m in (2000, 8000):
            mc = simulate_ensemble(
                cfg, u_flat(ratio, 1.0),
                SdeOptions(seed=4, ensemble_size=m, time_step=4e-4, n_samples=11),
            )
            se.append(np.mean(mc.standard_errors[-1]))
        assert se[0] / se[1] == pytest.approx(2.0, rel=0.25)

    def test_step_halving_self_consistency(self, ratio):
        cfg = EngineConfig(ratio, 2.0, NoiseParams(0.0, 0.01))
        coarse = simulate_ensemble(
            cfg, u_flat(ratio, 2.0),
            SdeOptions(seed=5, ensemble_size=20_000, time_step=4e-4, n_samples=11),
        )
        fine = simulate_ensemble(
            cfg, u_flat(ratio, 2.0),
            SdeOptions(seed=5, ensemble_size=20_000, time_step=2e-4, n_samples=11),
        )
        gap = abs(coarse.means[-1, 0] - fine.means[-1, 0])
        assert gap < coarse.standard_errors[-1, 0] + fine.standard_errors[-1, 0]

    def test_divergence_guard(self, ratio):
        cfg = EngineConfig(ratio, 20.0, NoiseParams(8.0, 0.0))
        with pytest.raises(RuntimeError, match="diverged"):
            simulate_ensemble(
                cfg, u_flat(ratio, 20.0),
                SdeOptions(seed=6, ensemble_size=500, time_step=2e-2, n_samples=21),
            )


class TestNegativeControls:
    def test_ito_scheme_misses_dephasing_drift(self, ratio):
        # the phase channel has a genuine Stratonovich correction; the plain
        # Euler (Ito) reading grows the energy at the spurious rate 2*gp*E
        cfg = EngineConfig(ratio, 3.0, NoiseParams(0.0, 0.01))
        mc = simulate_ensemble(
            cfg, u_flat(ratio, 3.0),
            SdeOptions(seed=7, scheme="euler-ito",
                       ensemble_size=20_000, time_step=2e-4, n_samples=31),
        )
        ode = ode_reference(cfg, u_flat(ratio, 3.0), mc)
        cmp = compare_moments(mc, ode)
        assert cmp.z_scores[-1, 0] > 5.0

    def test_heun_scheme_passes_same_setup(self, ratio):
        cfg = EngineConfig(ratio, 3.0, NoiseParams(0.0, 0.01))
        mc = simulate_ensemble(
            cfg, u_flat(ratio, 3.0),
            SdeOptions(seed=7, ensemble_size=20_000, time_step=2e-4, n_samples=31),
        )
        ode = ode_reference(cfg, u_flat(ratio, 3.0), mc)
        assert compare_moments(mc, ode).max_z < 4.0

    def test_shared_wiener_path_breaks_agreement(self, ratio):
        # cross quadratic variation appears when both channels ride one path
        noise = NoiseParams(0.03, 0.03)
        cfg = EngineConfig(ratio, 2.5, noise)
        common = SdeOptions(seed=8, ensemble_size=20_000, time_step=2e-4,
                            n_samples=26, shared_wiener=True)
        mc_bad = simulate_ensemble(cfg, u_flat(ratio, 2.5), common)
        ode = ode_reference(cfg, u_flat(ratio, 2.5), mc_bad)
        assert compare_moments(mc_bad, ode).max_z > 5.0

        independent = SdeOptions(seed=8, ensemble_size=20_000, time_step=2e-4,
                                 n_samples=26)
        mc_ok = simulate_ensemble(cfg, u_flat(ratio, 2.5), independent)
        assert compare_moments(mc_ok, ode).max_z < 4.0


class TestComparison:
    def test_self_comparison_is_zero(self, ratio):
        cfg = EngineConfig(ratio, 1.0, NoiseParams(0.0, 0.01))
        prof = u_flat(ratio, 1.0)
        times = np.linspace(0.0, 1.0, 11)
        from noisyotto.integrate import integrate

        traj = integrate(cfg, prof, sample_times=times)
        fake = EnsembleMoments(
            times=times,
            means=traj.moments(),
            standard_errors=np.ones((11, 3)),
            ensemble_size=1,
            diverged=0,
        )
        cmp = compare_moments(fake, traj)
        assert cmp.max_z == 0.0
        assert cmp.fraction_above_3 == 0.0

    def test_grid_mismatch_raises(self, ratio):
        cfg = EngineConfig(ratio, 1.0)
        prof = u_flat(ratio, 1.0)
        mc = simulate_ensemble(cfg, prof, SdeOptions(seed=9, ensemble_size=1000,
                                                     time_step=1e-3, n_samples=11))
        from noisyotto.integrate import integrate

        other = integrate(cfg, prof, sample_times=np.linspace(0.0, 1.0, 13))
        with pytest.raises(ValueError, match="grids"):
            compare_moments(mc, other)

    def test_comparison_csv_columns(self, ratio, tmp_path):
        cfg = EngineConfig(ratio, 1.0, NoiseParams(0.0, 0.01))
        prof = u_flat(ratio, 1.0)
        mc = simulate_ensemble(cfg, prof, SdeOptions(seed=10, ensemble_size=1000,
                                                     time_step=1e-3, n_samples=11))
        ode = ode_reference(cfg, prof, mc)
        path = tmp_path / "compare.csv"
        write_comparison_csv(path, mc, ode)
        with open(path) as fh:
            header = fh.readline().strip()
        assert header == "t,E_mc,L_mc,C_mc,se_E,se_L,se_C,E_ode,L_ode,C_ode"
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (len(mc.times), 10)

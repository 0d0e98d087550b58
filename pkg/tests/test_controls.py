import math

import numpy as np
import pytest

from noisyotto.controls import (
    BangProfile,
    ConstantProfile,
    FeedbackProtocol,
    SampledProfile,
    dephasing_feedback,
    noiseless_feedback,
    ramp_duration,
    ramp_rate,
    reference_profile,
)
from noisyotto.dynamics import EngineConfig, NoiseParams
from noisyotto.integrate import integrate

# high-precision evaluations of the closed forms at ratio 1/3 (30-digit arithmetic)
MU_1 = -0.344473114455
T_1 = 5.80596835014
T_5 = 28.6134882891


class TestRampFamily:
    def test_rate_frozen_value(self, ratio):
        assert ramp_rate(1, ratio) == pytest.approx(MU_1, abs=1e-10)

    def test_rate_always_negative_and_vanishing(self, ratio):
        values = [ramp_rate(n, ratio) for n in range(1, 60)]
        assert all(v < 0 for v in values)
        assert abs(values[-1]) < abs(values[0]) / 30

    def test_rate_vanishes_as_ratio_approaches_one(self):
        assert abs(ramp_rate(1, 0.999999)) < 1e-5

    def test_rate_rejects_bad_arguments(self, ratio):
        with pytest.raises(ValueError):
            ramp_rate(0, ratio)
        with pytest.raises(ValueError):
            ramp_rate(1, 1.5)

    def test_duration_frozen_values(self, ratio):
        assert ramp_duration(1, ratio) == pytest.approx(T_1, abs=1e-9)
        assert ramp_duration(5, ratio) == pytest.approx(T_5, abs=1e-9)

    def test_duration_increasing_in_index(self, ratio):
        durations = [ramp_duration(n, ratio) for n in range(1, 8)]
        assert np.all(np.diff(durations) > 0)

    def test_first_five_durations_span_the_plot_range(self, ratio):
        durations = [ramp_duration(n, ratio) for n in range(1, 6)]
        assert 5.5 < durations[0] < 6.0
        assert 28.0 < durations[-1] < 29.0


class TestReferenceProfile:
    def test_endpoint_values(self, ratio):
        prof = reference_profile(1, ratio)
        assert prof(0.0) == pytest.approx(1.0, abs=1e-14)
        assert prof(prof.duration) == pytest.approx(ratio**2, abs=1e-12)

    def test_monotone_decreasing(self, ratio):
        prof = reference_profile(2, ratio)
        t, u = prof.samples(400)
        assert np.all(np.diff(u) < 0)

    def test_domain_error_outside_support(self, ratio):
        prof = reference_profile(1, ratio)
        with pytest.raises(ValueError):
            prof.raw_value(prof.duration * 1.5)
        with pytest.raises(ValueError):
            prof.raw_value(-0.5)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_noiseless_closure(self, n, ratio):
        # the ramp returns all energy to the breathing-free subspace at t = T_n
        prof = reference_profile(n, ratio)
        cfg = EngineConfig(ratio, prof.duration)
        traj = integrate(cfg, prof)
        final = traj.final_physical(ratio**2)
        assert abs(final.lagrangian_mean) < 1e-6
        assert abs(final.correlation) < 1e-6
        assert final.energy == pytest.approx(ratio, abs=1e-6)


class TestGenericProfiles:
    def test_constant_profile(self, ratio):
        prof = ConstantProfile(0.5, 2.0, ratio**2)
        assert prof(1.0) == 0.5
        assert prof.breakpoints() == ()

    def test_bang_profile_segments_and_breakpoints(self, ratio):
        prof = BangProfile([0.0, 1.0, 2.0], [1.0, 0.2], ratio**2)
        assert prof(0.5) == 1.0
        assert prof(1.0) == 0.2  # right-continuous at the jump
        assert prof(2.0) == 0.2
        assert prof.breakpoints() == (1.0,)

    def test_bang_profile_validation(self, ratio):
        with pytest.raises(ValueError):
            BangProfile([0.5, 1.0], [1.0], ratio**2)
        with pytest.raises(ValueError):
            BangProfile([0.0, 1.0], [1.0, 0.5], ratio**2)

    def test_clamping_and_clamp_fraction(self, ratio):
        prof = SampledProfile([0.0, 1.0, 2.0], [1.5, 0.5, 0.05], ratio**2)
        assert prof(0.0) == 1.0  # clamped down to the admissible band
        assert prof(2.0) == pytest.approx(ratio**2)
        assert prof.clamp_fraction() > 0.0

    def test_sampled_profile_csv_round_trip(self, tmp_path, ratio):
        prof = SampledProfile([0.0, 0.7, 2.0], [1.0, 0.6, 0.2], ratio**2)
        path = tmp_path / "control.csv"
        prof.to_csv(path, n_samples=64)
        back = SampledProfile.from_csv(path, ratio**2)
        t = np.linspace(0.0, 2.0, 17)
        assert np.allclose(back(t), prof(t), atol=1e-12)


class TestFeedbackProtocols:
    def test_protocol_validation(self):
        with pytest.raises(ValueError):
            FeedbackProtocol(0.5)
        with pytest.raises(ValueError):
            FeedbackProtocol(0.05, "dephasing", 0.0)
        with pytest.raises(ValueError):
            FeedbackProtocol(0.05, "made-up")

    def test_noiseless_invariant_and_plateau(self, ratio):
        run = noiseless_feedback(0.05, ratio)
        assert run.invariant_drift() < 1e-6
        mask = run.feedback_mask()
        # the correlation moment is frozen at its plateau during feedback
        assert np.max(np.abs(run.states[mask, 2] - 0.05)) < 1e-7
        # x1*x2 = 1 + eps^2 once the plateau is reached
        vals = run.invariant_values()[mask]
        assert vals[0] == pytest.approx(1.0 + 0.05**2, abs=1e-6)

    def test_noiseless_final_point(self, ratio):
        eps = 0.05
        run = noiseless_feedback(eps, ratio)
        scale = math.sqrt(1.0 + eps**2)
        assert run.final_state[0] == pytest.approx(scale / ratio, rel=1e-5)
        assert run.final_state[1] == pytest.approx(scale * ratio, rel=1e-5)

    def test_noiseless_adiabatic_limit(self, ratio):
        # final state approaches the ideal corner as the plateau shrinks
        gaps = []
        for eps in (0.1, 0.05, 0.025):
            run = noiseless_feedback(eps, ratio)
            gaps.append(abs(run.final_state[0] - 1.0 / ratio))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_feedback_control_monotone_nonincreasing(self, ratio):
        run = noiseless_feedback(0.05, ratio)
        u_fb = run.controls[run.feedback_mask()]
        assert np.all(np.diff(u_fb) <= 1e-10)

    def test_dephasing_invariant(self, ratio):
        run = dephasing_feedback(0.05, 0.01, ratio)
        assert run.invariant_drift() < 1e-6

    def test_dephasing_stays_near_noise_free_subspace(self, ratio):
        eps, gp = 0.02, 0.01
        run = dephasing_feedback(eps, gp, ratio)
        mask = run.feedback_mask()
        states = run.states[mask]
        u = run.controls[mask]
        corr = np.sqrt(u) * states[:, 2]
        lagr = 0.5 * (states[:, 1] - u * states[:, 0])
        assert np.max(np.abs(corr)) < eps
        assert np.max(lagr) < 2.0 * gp * eps * 1.25

    def test_dephasing_delta_decreases_with_epsilon(self, ratio):
        deltas = [dephasing_feedback(eps, 0.01, ratio).delta for eps in (0.1, 0.05, 0.025)]
        assert deltas[0] > deltas[1] > deltas[2] > 0.0

    def test_recorded_profile_replays(self, ratio):
        run = noiseless_feedback(0.05, ratio)
        prof = run.profile()
        cfg = EngineConfig(ratio, run.duration)
        traj = integrate(cfg, prof)
        # open-loop replay through the linear interpolant of the recorded
        # samples reproduces the transfer to interpolation accuracy
        assert np.allclose(traj.final_state, run.final_state, atol=1e-5)

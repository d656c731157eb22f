"""
Tests for the noise layer: paths, Hölder seminorms, stopping times,
the growth profile and the exponential process.
"""

import numpy as np
import pytest

from convexlab.exceptions import HorizonTooShort, OutOfWindow, ScaleTooFine
from convexlab.stochastic import (
    PATH_START,
    NoiseProfile,
    StoppingTimeResult,
    StoppingTimeSpec,
    WienerPath,
    exponential_process,
    holder_seminorm,
    linear_path_stopping_time,
    m0_profile,
    ramp_integral,
    running_holder_seminorm,
    sample_path,
    stopping_time,
    stopping_times_for,
    survival_probability,
)


def _linear(c, dt=1e-3, horizon=5.0):
    return WienerPath.from_function(lambda t: c * t, dt=dt, horizon=horizon)


class TestWienerPath:
    def test_sampling_is_seeded(self):
        """Equal seeds give equal paths."""
        a = sample_path(11, 0.01, 2.0)
        b = sample_path(11, 0.01, 2.0)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, sample_path(12, 0.01, 2.0).values)

    def test_flat_before_zero(self):
        path = sample_path(3, 0.01, 1.0)
        times = path.times
        assert times[0] == PATH_START
        assert np.all(path.values[times <= 0] == 0.0)
        assert path.values.size == 301

    def test_dt_must_divide_two(self):
        with pytest.raises(ValueError):
            sample_path(0, 0.3, 1.0)

    def test_flatness_is_validated(self):
        values = np.zeros(301)
        values[10] = 1.0
        with pytest.raises(ValueError):
            WienerPath(dt=0.01, horizon=1.0, values=values)

    def test_modified_after_keeps_past(self):
        path = sample_path(5, 0.01, 1.0)
        changed = path.modified_after(0.5, np.full(path.values.size, 9.0))
        cut = path.index_of(0.5)
        assert np.array_equal(changed.values[: cut + 1], path.values[: cut + 1])
        assert np.all(changed.values[cut + 1:] == 9.0)


class TestHolder:
    def test_linear_path_seminorm(self):
        """For B = 2t the seminorm on [0, 1] is 2 * 1^(1-h)."""
        path = _linear(2.0, dt=0.01, horizon=1.0)
        assert holder_seminorm(path, 0.4, (0.0, 1.0)) == pytest.approx(2.0, rel=1e-9)

    def test_running_seminorm_is_monotone(self, rng):
        values = np.cumsum(rng.standard_normal(3000)) * 0.03
        running = running_holder_seminorm(values, 1e-3, 0.375)
        assert np.all(np.diff(running) >= 0)

    def test_exponent_range(self):
        with pytest.raises(ValueError):
            holder_seminorm(_linear(1.0), 1.0, (0.0, 1.0))


class TestStoppingTime:
    def test_thresholds(self):
        spec = StoppingTimeSpec(L=16.0, delta=0.0625)
        assert spec.exponent == pytest.approx(0.375)
        assert spec.amplitude_threshold == pytest.approx(2.0)
        assert spec.holder_threshold == pytest.approx(4.0)

    def test_amplitude_fires_on_slow_path(self):
        """B = t hits sqrt(2) before its seminorm reaches 2."""
        spec = StoppingTimeSpec(L=4.0)
        result = stopping_time(_linear(1.0), spec)
        assert result.fired == "amplitude"
        assert abs(result.T_L - linear_path_stopping_time(1.0, spec)) <= 1e-3 + 1e-12

    def test_holder_fires_on_steep_path(self):
        """B = 8t reaches the seminorm threshold first."""
        spec = StoppingTimeSpec(L=4.0)
        result = stopping_time(_linear(8.0), spec)
        assert result.fired == "holder"
        assert abs(result.T_L - linear_path_stopping_time(8.0, spec)) <= 1e-3 + 1e-12

    def test_cap_at_L(self):
        spec = StoppingTimeSpec(L=4.0)
        result = stopping_time(_linear(0.0), spec)
        assert result.fired == "cap"
        assert result.T_L == 4.0

    def test_short_horizon_without_hit(self):
        with pytest.raises(HorizonTooShort):
            stopping_time(_linear(0.0, horizon=2.0), StoppingTimeSpec(L=4.0))

    def test_stopping_times_matrix(self):
        paths = [_linear(0.0), _linear(1.0)]
        specs = [StoppingTimeSpec(L=2.0), StoppingTimeSpec(L=4.0)]
        table = stopping_times_for(paths, specs)
        assert table.shape == (2, 2)
        assert table[0, 0] == 2.0 and table[0, 1] == 4.0

    @pytest.mark.slow
    @pytest.mark.parametrize("c", [0.0, 0.5, 1.0, 3.0, 8.0])
    @pytest.mark.parametrize("L", [2.0, 4.0])
    @pytest.mark.parametrize("delta", [1.0 / 16.0, 0.1])
    def test_linear_paths_match_closed_form(self, c, L, delta):
        """On B = c t the sampled stopping time is within one step of the closed form."""
        dt = 1e-4
        spec = StoppingTimeSpec(L=L, delta=delta)
        result = stopping_time(_linear(c, dt=dt, horizon=L), spec)
        assert abs(result.T_L - linear_path_stopping_time(c, spec)) <= dt + 1e-12

    @pytest.mark.slow
    def test_positive_and_monotone_in_L(self):
        """Over 1000 seeds T_L > 0 and T_L never decreases as L grows."""
        specs = [StoppingTimeSpec(L=L) for L in (2.0, 4.0, 8.0)]
        paths = [sample_path(seed, 0.01, 8.0) for seed in range(1000)]
        table = stopping_times_for(paths, specs)
        assert (table > 0).all()
        assert (np.diff(table, axis=1) >= 0).all()

    def test_survival_is_reproducible(self):
        spec = StoppingTimeSpec(L=2.0)
        first = survival_probability(spec, 1.0, samples=3, seed=4, dt=0.01)
        assert first == survival_probability(spec, 1.0, samples=3, seed=4, dt=0.01)
        assert first in (0.0, 1 / 3, 2 / 3, 1.0)


class TestNoiseProfile:
    def test_ramp_integrates_to_one(self):
        assert float(ramp_integral(1.0)) == pytest.approx(1.0, rel=1e-6)

    def test_flat_before_zero_and_linear_after(self):
        profile = NoiseProfile(L=4.0, T=1.0)
        assert float(profile.M0(-0.5)) == pytest.approx(np.exp(8.0))
        assert float(profile.rho(1.7)) == pytest.approx(1.7)
        assert float(profile.rho(1.0)) == pytest.approx(1.0, rel=1e-6)

    def test_square_root(self):
        profile = NoiseProfile(L=4.0, T=1.0)
        t = np.linspace(-0.5, 1.5, 9)
        assert np.allclose(profile.sqrt_M0(t) ** 2, profile.M0(t), rtol=1e-12)

    def test_log_derivative_bound(self):
        """0 <= M0'/M0 <= 8L."""
        profile = m0_profile(4.0, 1.0)
        t = np.linspace(-0.2, 1.2, 2001)
        ratio = profile.log_derivative(t)
        assert ratio.min() >= 0.0
        assert ratio.max() <= 32.0

    def test_m_L(self):
        profile = NoiseProfile(L=16.0, T=1.0)
        assert profile.mL == pytest.approx(np.sqrt(3.0) * 2.0 * np.exp(1.0))


class TestExponentialProcess:
    @pytest.fixture
    def process_inputs(self):
        spec = StoppingTimeSpec(L=4.0)
        path = sample_path(9, 1e-3, 4.0)
        stopping = StoppingTimeResult(T_L=1.0, fired="cap", seed=9, L=4.0, delta=spec.delta)
        return path, stopping, spec

    def test_deterministic_before_zero(self, process_inputs):
        """Upsilon and its mollification are 1 while the path is flat."""
        path, stopping, spec = process_inputs
        process = exponential_process(path, 0.02, stopping, spec)
        assert float(process.at(-0.5)[0]) == 1.0
        assert float(process.mollified_at(-0.5)[0]) == pytest.approx(1.0, abs=1e-12)

    def test_scale_must_cover_four_steps(self, process_inputs):
        path, stopping, spec = process_inputs
        with pytest.raises(ScaleTooFine):
            exponential_process(path, 0.002, stopping, spec)

    def test_no_evaluation_past_stopping(self, process_inputs):
        path, stopping, spec = process_inputs
        process = exponential_process(path, 0.02, stopping, spec)
        with pytest.raises(OutOfWindow):
            process.at(1.5)

    def test_mollification_only_sees_the_past(self, process_inputs):
        """Changing the path after t0 leaves Upsilon_l(t0 + ell) unchanged."""
        path, stopping, spec = process_inputs
        ell = 0.02
        changed = path.modified_after(0.5, np.full(path.values.size, 3.0))
        before = exponential_process(path, ell, stopping, spec)
        after = exponential_process(changed, ell, stopping, spec)
        assert float(after.mollified_at(0.5 + ell)[0]) == pytest.approx(float(before.mollified_at(0.5 + ell)[0]), rel=1e-13)
        assert float(after.mollified_at(0.55)[0]) != pytest.approx(float(before.mollified_at(0.55)[0]), rel=1e-6)

    def test_bounds_recorded(self, process_inputs):
        path, stopping, spec = process_inputs
        process = exponential_process(path, 0.02, stopping, spec)
        bounds = process.bounds
        assert bounds["sup_upsilon"] >= 1.0
        assert bounds["mollification_gap"] >= 0.0
        assert set(bounds) >= {"holder_upsilon", "holder_bound", "mollification_gap_bound"}

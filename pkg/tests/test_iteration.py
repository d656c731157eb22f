"""
Tests for the iteration layer: base level, cutoffs, flow maps,
mollification and one full induction step on the toy parameters.
"""

import numpy as np
import pytest

from convexlab.exceptions import (
    CFLViolation,
    DeepModeTooLarge,
    InsufficientHistory,
    OffLattice,
    OutOfWindow,
    ParameterRangeError,
    TimeGridTooCoarse,
)
from convexlab.geometry import building_block, standard_families
from convexlab.iteration.base import (
    base_residual_study,
    build_noise,
    equation_residual,
    half_step_derivative,
    init_base,
    time_grid,
)
from convexlab.iteration.cutoffs import CutoffSystem, build_cutoffs
from convexlab.iteration.flow import (
    VelocityField,
    characteristic_map,
    evaluate_at_points,
    solve_flow_maps,
    transport_residual,
)
from convexlab.iteration.mollify import mollify_level
from convexlab.iteration.oscillation import OscillationSlice, PacketGroup, decompose_oscillation
from convexlab.iteration.perturbation import check_lattice
from convexlab.iteration.step import induction_step, plan_step, step_dt
from convexlab.params import sequences
from convexlab.spectral import (
    Grid,
    anti_divergence_coeffs,
    nonlinear_coeffs,
    random_band_limited,
    realify,
    spatial_mollifier_transform,
    tensor_divergence_coeffs,
    to_physical,
    to_spectral,
)
from convexlab.stochastic import PATH_START, WienerPath, sample_path


class TestBase:
    def test_grid_and_support(self, early_base):
        """lambda_0 = 5 lands on N = 64 and y_0 is a |k| = 1 shear."""
        level, _ = early_base
        assert level.grid.N == 64
        assert level.freq_radius_y == 1.0
        report = level.support_report()
        assert report["y_outside"] == 0.0
        assert report["R_outside"] == 0.0

    def test_flags(self, early_base):
        level, _ = early_base
        assert level.y.divergence_free
        assert level.R.trace_free

    def test_equation_closes(self, early_base, toy_params):
        """y_0, R_0 and p_0 solve the level equation."""
        level, noise = early_base
        upsilon = noise.upsilon(level.time_grid)
        report = equation_residual(level, upsilon, toy_params.gamma1, toy_params.gamma2)
        assert report.relative < 1e-10
        projected = equation_residual(level, upsilon, toy_params.gamma1, toy_params.gamma2, pressure=False)
        assert projected.relative < 1e-10

    def test_window(self, early_base):
        level, _ = early_base
        piece = level.window(-0.5, -0.4)
        assert piece.time_grid[0] == pytest.approx(-0.5)
        assert piece.y.n_times == piece.time_grid.size == 101

    def test_upsilon_past_stopping(self, early_base):
        _, noise = early_base
        dt = noise.path.dt
        late = PATH_START + dt * round((noise.T_L + 0.5 - PATH_START) / dt)
        with pytest.raises(OutOfWindow):
            noise.upsilon(np.array([late]))


class TestBaseResidualStudy:
    @pytest.fixture(scope="class")
    def ramp_base(self, toy_params):
        """Level 0 on [-0.05, 0.3] against a flat path, so T_L = L and the window reaches into the M0 ramp."""
        sampled = sample_path(7, 1e-3, toy_params.L)
        flat = WienerPath(seed=None, dt=sampled.dt, horizon=sampled.horizon, values=np.zeros_like(sampled.values))
        noise = build_noise(flat, toy_params)
        level = init_base(toy_params, noise, time_grid(-0.05, 0.3, 1e-3))
        return level, noise

    def test_window_reaches_growth(self, ramp_base):
        level, noise = ramp_base
        assert noise.T_L == pytest.approx(4.0)
        assert level.time_grid[-1] == pytest.approx(0.3)
        amplitude = np.abs(level.y.coeffs).max(axis=(1, 2, 3))
        assert amplitude[-1] > amplitude[0]

    def test_difference_residual_is_second_order(self, ramp_base, toy_params):
        """Halving the step cuts the centred-difference residual by about 4."""
        level, noise = ramp_base
        study = base_residual_study(level, noise, toy_params.gamma1, toy_params.gamma2)
        assert study.coarse.relative > 1e-12
        assert 3.5 <= study.ratio <= 4.5

    def test_extrapolated_residual(self, ramp_base, toy_params):
        level, noise = ramp_base
        study = base_residual_study(level, noise, toy_params.gamma1, toy_params.gamma2)
        assert study.extrapolated.relative <= 1e-6
        assert study.projected.relative <= 1e-6
        assert study.extrapolated.relative < study.coarse.relative

    def test_half_step_derivative_at_constant_amplitude(self, early_base):
        """Before the ramp y_0 is constant in time, so both differences vanish."""
        level, noise = early_base
        fine = half_step_derivative(noise.profile, level.grid, level.time_grid)
        assert fine.shape == level.y.coeffs.shape
        assert np.abs(fine).max() < 1e-12

    def test_base_level_only(self, early_base, toy_params):
        level, noise = early_base
        shifted = level.model_copy(update={"q": 1})
        with pytest.raises(ValueError):
            base_residual_study(shifted, noise, toy_params.gamma1, toy_params.gamma2)


class TestCutoffs:
    @pytest.fixture
    def cutoffs(self):
        return CutoffSystem(tau=0.1, j_min=-6, j_max=6)

    def test_partition_of_unity(self, cutoffs):
        t = np.linspace(-0.5, 0.5, 2001)
        assert cutoffs.partition_residual(t) < 1e-12

    def test_plateau_and_support(self, cutoffs):
        assert float(cutoffs.chi(2, 0.2 + 0.02)) == 1.0
        assert float(cutoffs.chi(2, 0.2 + 0.08)) == 0.0

    def test_derivative(self, cutoffs):
        t, h = 0.2 + 0.04, 1e-6
        numeric = (cutoffs.chi(2, t + h) - cutoffs.chi(2, t - h)) / (2 * h)
        assert float(cutoffs.chi_dot(2, t)) == pytest.approx(float(numeric), rel=1e-5)

    def test_active_and_labels(self, cutoffs):
        assert cutoffs.active(0.2) == [2]
        assert cutoffs.active(0.25) == [2, 3]
        assert CutoffSystem.family_label(3) == 1
        assert CutoffSystem.family_label(4) == 2

    def test_coarse_time_grid(self, toy_params):
        """tau_1 is about 0.012, so dt = 0.01 is too coarse."""
        with pytest.raises(TimeGridTooCoarse):
            build_cutoffs(toy_params, 0, 1.0, 0.01)


class TestFlowMaps:
    @pytest.fixture
    def grid(self):
        return Grid.create(16)

    def test_point_evaluation(self, grid):
        x1, x2 = grid.mesh()
        coeffs = to_spectral(np.sin(2 * x1) * np.cos(x2), grid)
        pts = np.array([0.3, 1.7, 4.1])
        values = evaluate_at_points(coeffs, grid, pts, pts[::-1])
        assert np.allclose(values, np.sin(2 * pts) * np.cos(pts[::-1]), atol=1e-12)

    def test_constant_velocity(self, grid):
        """Phi(t, x) = x + c (anchor - t) for a constant velocity."""
        c = (0.3, -0.2)
        velocity = VelocityField.constant(grid, np.linspace(0.0, 0.2, 21), c)
        phi = characteristic_map(velocity, 0.15, 0.05, grid, max_step=0.01)
        x1, x2 = grid.mesh()
        assert np.allclose(phi[0], x1 - 0.1 * c[0], atol=1e-12)
        assert np.allclose(phi[1], x2 - 0.1 * c[1], atol=1e-12)
        assert transport_residual(velocity, 0.15, 0.05, grid, 0.01, delta=1e-3) < 1e-8

    def test_velocity_history(self, grid):
        velocity = VelocityField.constant(grid, np.linspace(0.0, 0.2, 21), (1.0, 0.0))
        with pytest.raises(InsufficientHistory):
            velocity.coeffs_at(0.3)

    def test_cfl_guard(self, grid):
        """A shear with |grad V| = 100 refuses steps of 0.01."""
        x1, x2 = grid.mesh()
        samples = np.stack([100.0 * np.sin(x2), np.zeros_like(x2)])
        coeffs = np.stack([to_spectral(samples, grid)] * 2)
        velocity = VelocityField(grid=grid, times=np.array([0.0, 1.0]), coeffs=coeffs)
        assert velocity.gradient_bound() == pytest.approx(100.0, rel=1e-10)
        with pytest.raises(CFLViolation):
            characteristic_map(velocity, 0.5, 0.0, grid, max_step=0.01)

    def test_flow_map_set(self, grid):
        cutoffs = CutoffSystem(tau=0.05, j_min=0, j_max=4)
        velocity = VelocityField.constant(grid, np.linspace(0.0, 0.2, 41), (0.5, 0.5))
        times = np.array([0.06, 0.07])
        flow = solve_flow_maps(velocity, cutoffs, times, grid)
        assert flow.active(0) == [1]
        assert flow.active(1) == [1, 2]
        assert flow.anchors[2] == pytest.approx(0.1)
        assert flow.gradient_report()["max_deviation"] < 1e-10


class TestMollification:
    def test_shear_commutator_vanishes(self, early_base, toy_params):
        """For the shear base the nonlinearity is a gradient, so R_Com1 = 0."""
        level, noise = early_base
        process = noise.process(0.02)
        times = np.array([-0.45, -0.4])
        state, com1 = mollify_level(level, noise, process, times, toy_params.gamma1, toy_params.gamma2)
        assert np.abs(com1.coeffs).max() < 1e-10 * np.abs(state.y.coeffs).max()
        assert np.allclose(state.upsilon_l, 1.0, atol=1e-12)

    def test_constant_level_is_only_smoothed(self, early_base, toy_params):
        """Before the ramp y_0 is constant in time, so y_l = phi_hat(ell) y_0."""
        level, noise = early_base
        ell = 0.02
        process = noise.process(ell)
        state, _ = mollify_level(level, noise, process, np.array([-0.4]), toy_params.gamma1, toy_params.gamma2)
        factor = float(spatial_mollifier_transform(np.array([ell]))[0])
        assert np.allclose(state.y.coeffs[0], factor * level.y.coeffs[0], atol=1e-12 * np.abs(level.y.coeffs).max())

    def test_needs_history(self, early_base, toy_params):
        level, noise = early_base
        process = noise.process(0.1)
        with pytest.raises(InsufficientHistory):
            mollify_level(level, noise, process, np.array([-0.5]), toy_params.gamma1, toy_params.gamma2)


class TestPlanning:
    def test_step_dt(self):
        """dt <= tau / steps with 2 / dt an integer."""
        dt = step_dt(0.0121, 512)
        assert dt <= 0.0121 / 512
        assert abs(2.0 / dt - round(2.0 / dt)) < 1e-6

    def test_plan_layout(self, toy_params):
        plan = plan_step(toy_params, 0, -1.0, 3, grid_size=256)
        assert plan.lam_next == pytest.approx(25.0)
        assert plan.output_times.size == 3
        assert plan.slice_times.size == 5
        assert plan.level_times[0] >= sequences(toy_params, 0).t_q

    def test_window_before_start_time(self, toy_params):
        with pytest.raises(ParameterRangeError):
            plan_step(toy_params, 0, -1.95, 2, grid_size=256)

    def test_lattice_frequencies(self):
        families = standard_families()
        check_lattice(families, 25.0)
        with pytest.raises(OffLattice):
            check_lattice(families, 12.0)


@pytest.mark.slow
class TestInductionStep:
    def test_new_level(self, toy_step):
        level = toy_step.level
        assert level.q == 1
        assert level.grid.N == 256
        assert level.time_grid.size == 2
        assert level.y.divergence_free and level.R.trace_free

    def test_hard_checks(self, toy_step):
        checks = toy_step.checks
        assert checks["partition_residual"] < 1e-12
        assert checks["w_imaginary_gap"] <= 1e-12
        assert checks["equation_residual"] <= 1e-3
        assert checks["o1_tracefree_residual"] < 1e-8

    def test_perturbation_support(self, toy_step):
        """w lives in the annulus around lambda_1 and y_1 inside B(0, 2 lambda_1)."""
        report = toy_step.support_report()
        assert report["w_outside_annulus"] < 1e-12
        assert report["y_outside"] < 1e-12
        assert toy_step.perturbation.lam == pytest.approx(25.0)

    def test_deterministic_window_has_no_noise_commutator(self, toy_step):
        """Upsilon = Upsilon_l = 1 before t = 0, so R_Com2 vanishes."""
        table = toy_step.breakdown.norm_table()
        assert table["R_Com2"] <= 1e-12 * table["R_total"]
        assert set(table) >= {"R_T", "R_N", "R_L", "R_O", "R_Com1", "R_total"}

    def test_total_is_sum_of_groups(self, toy_step):
        breakdown = toy_step.breakdown
        total = sum(breakdown.group(g).coeffs for g in ("T", "N", "L", "O", "Com1", "Com2"))
        assert np.allclose(total, toy_step.level.R.coeffs, atol=1e-12 * np.abs(total).max())

    def test_pressure_is_real(self, toy_step):
        p = toy_step.level.p
        assert p.is_real(rel_tol=1e-10)
        assert np.isfinite(p.physical()).all()

    def test_level_one_ignores_the_noise_seed(self, toy_step, toy_params, ledger_constants):
        """On a window before t = 0 every path is flat, so y_1, R_1 and p_1 do not depend on the seed."""
        plan = toy_step.plan
        noise = build_noise(sample_path(38, plan.dt, toy_params.L), toy_params)
        level = init_base(toy_params, noise, plan.level_times)
        other = induction_step(level, noise, toy_params, plan, C1=ledger_constants.C1).level
        for mine, theirs in ((toy_step.level.y, other.y), (toy_step.level.R, other.R), (toy_step.level.p, other.p)):
            scale = np.abs(mine.coeffs).max()
            assert np.allclose(mine.coeffs, theirs.coeffs, rtol=0.0, atol=1e-12 * scale)


def _packet_slice(grid, rng, lam=3.0, gamma2=1.0, upsilon_l=1.3):
    """One cutoff carrying plane-wave packets at frequency 5 with a slow modulation."""
    family = standard_families()[0]
    x1, x2 = grid.mesh()
    envelope = 1.0 + 0.3 * np.cos(x1)
    packets = {}
    for i in family.representatives:
        c = rng.standard_normal() + 1j * rng.standard_normal()
        for index, amp in ((i, c), (family.partner(i), np.conj(c))):
            b, _ = building_block(family.directions[index], np.stack([5 * x1, 5 * x2]))
            packets[index] = to_spectral(amp * envelope * b, grid)
    R_l = random_band_limited(grid, rng, 3.0, components=3)
    R_qj = 0.1 * to_physical(random_band_limited(grid, rng, 2.0, components=3), grid)
    w = realify(sum(packets.values()))
    R_O = anti_divergence_coeffs(
        tensor_divergence_coeffs(R_l, grid) + upsilon_l * nonlinear_coeffs(w, w, grid, gamma2), grid
    )
    group = PacketGroup(j=0, chi=1.0, family=family, R_qj=R_qj, a=np.ones(3), packets=packets)
    return OscillationSlice(grid=grid, lam=lam, gamma2=gamma2, upsilon_l=upsilon_l, R_l=R_l, R_O=R_O, groups=[group])


class TestDeepOscillation:
    def test_direct_sums_agree_with_fft(self, grid32, rng):
        """The k + k' = 0 interactions and R_O,low match their direct double sums."""
        report = decompose_oscillation(_packet_slice(grid32, rng), deep=True)
        assert report.deep_pair_gap < 1e-6
        assert report.deep_low_gap < 1e-6
        assert report.norms["O_low"] > 0

    def test_fast_split_is_unchanged(self, grid32):
        """Deep mode only adds the gaps."""
        piece = _packet_slice(grid32, np.random.default_rng(5))
        fast = decompose_oscillation(piece)
        deep = decompose_oscillation(piece, deep=True)
        assert fast.deep_pair_gap is None and fast.deep_low_gap is None
        assert np.array_equal(fast.low, deep.low)
        assert np.array_equal(fast.high, deep.high)

    def test_large_grid_rejected(self):
        grid = Grid.create(128)
        piece = OscillationSlice(
            grid=grid, lam=3.0, gamma2=1.0, upsilon_l=1.0,
            R_l=np.zeros((3, 128, 128), dtype=complex), R_O=np.zeros((3, 128, 128), dtype=complex), groups=[],
        )
        with pytest.raises(DeepModeTooLarge):
            decompose_oscillation(piece, deep=True)

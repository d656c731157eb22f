"""
Tests for the spectral layer.

Validates:
- grid construction and the integral coefficient normalization
- exact multipliers (gradient, Leray, anti-divergence, fractional powers, Riesz)
- field flags, frequency projectors and mollifiers
- norm conventions
"""

import numpy as np
import pytest

from convexlab.exceptions import (
    GridBound,
    InsufficientHistory,
    NonMeanZeroNegativePower,
    NyquistOverflow,
    ScaleTooFine,
)
from convexlab.spectral import (
    TWO_PI,
    Grid,
    NormSpec,
    ScalarField,
    SymTensorField2,
    VectorField2,
    annulus_symbol,
    anti_divergence,
    band_symbol,
    conjugate_reflect,
    divergence_coeffs,
    fractional_laplacian,
    leray_coeffs,
    leray_project,
    mollify_space_coeffs,
    mollify_time,
    nonlinear_term,
    norm_series,
    norms,
    physical_gradient,
    random_band_limited,
    resample_coeffs,
    riesz_and_perp,
    support_radius,
    temporal_first_moment,
    temporal_weights,
    tensor_operator_norm,
    to_physical,
    to_spectral,
    two_term_nonlinearity,
)


def _vector(grid, rng, radius=6.0):
    return VectorField2(grid=grid, coeffs=random_band_limited(grid, rng, radius, components=2))


class TestGrid:
    def test_rejects_non_power_of_two(self):
        """N must be a power of two."""
        with pytest.raises(ValueError):
            Grid.create(48)

    def test_smallest_for_radius(self):
        """B(0, 20) first fits strictly below N/2 at N = 64."""
        assert Grid.smallest_for(20.0).N == 64
        assert Grid.smallest_for(1.0).N == 8

    def test_nyquist_modes_masked(self, grid32):
        """The keep mask removes the row and column at |k_i| = N/2."""
        assert not grid32.keep[16, 0]
        assert not grid32.keep[3, 16]
        assert grid32.keep[15, 15]


class TestTransforms:
    def test_integral_normalization(self, grid64):
        """cos(3 x1) has coefficient 2 pi^2 at k = (+-3, 0)."""
        x1, _ = grid64.mesh()
        c = to_spectral(np.cos(3 * x1), grid64)
        assert c[3, 0].real == pytest.approx(2 * np.pi**2, rel=1e-12)
        assert c[-3, 0].real == pytest.approx(2 * np.pi**2, rel=1e-12)
        assert abs(c[0, 0]) < 1e-10

    def test_round_trip(self, grid64):
        """Band-limited samples survive forward and inverse transforms."""
        x1, x2 = grid64.mesh()
        f = np.sin(2 * x1 + x2) + 0.5 * np.cos(5 * x2)
        assert np.allclose(to_physical(to_spectral(f, grid64), grid64), f, atol=1e-12)

    def test_conjugate_reflect_of_real_data(self, grid32, rng):
        """Real fields are fixed by k -> conj(c(-k))."""
        c = to_spectral(rng.standard_normal((32, 32)), grid32)
        assert np.allclose(conjugate_reflect(c), c, atol=1e-12)

    def test_physical_gradient(self, grid64):
        """Spectral gradient of sin(2 x1 + x2)."""
        x1, x2 = grid64.mesh()
        grad = physical_gradient(np.sin(2 * x1 + x2), grid64)
        assert np.allclose(grad[0], 2 * np.cos(2 * x1 + x2), atol=1e-11)
        assert np.allclose(grad[1], np.cos(2 * x1 + x2), atol=1e-11)

    def test_resample_round_trip(self, grid32, grid64, rng):
        """Zero padding then truncation returns the original coefficients."""
        c = random_band_limited(grid32, rng, 10.0)
        up = resample_coeffs(c, grid32, grid64)
        assert np.allclose(resample_coeffs(up, grid64, grid32), c, atol=1e-12)

    def test_resample_down_rejects_high_modes(self, grid32, grid64, rng):
        """Truncation refuses to drop represented modes."""
        c = random_band_limited(grid64, rng, 25.0)
        with pytest.raises(GridBound):
            resample_coeffs(c, grid64, grid32)

    def test_random_band_limited(self, grid64, rng):
        """Random data is real, mean-zero and inside its radius."""
        c = random_band_limited(grid64, rng, 7.0, components=2)
        assert np.allclose(conjugate_reflect(c), c, atol=1e-12)
        assert np.all(c[..., 0, 0] == 0)
        assert support_radius(c, grid64) <= 7.0


class TestMultipliers:
    def test_leray_is_divergence_free(self, grid64, rng):
        """k . P v = 0 for every mode."""
        v = random_band_limited(grid64, rng, 10.0, components=2)
        div = divergence_coeffs(leray_coeffs(v, grid64), grid64)
        assert np.abs(div).max() < 1e-10 * np.abs(v).max()

    def test_anti_divergence_inverts_divergence(self, grid64, rng):
        """div B f = f for mean-zero divergence-free f, and B f is trace free."""
        f = leray_project(_vector(grid64, rng))
        R = anti_divergence(f)
        assert np.allclose(R.divergence().coeffs, f.coeffs, atol=1e-10 * np.abs(f.coeffs).max())
        assert R.trace_residual() < 1e-12

    def test_anti_divergence_of_roundoff_is_trace_free(self, grid64, rng):
        """A flux that cancels to roundoff still maps to an exactly trace-free tensor."""
        x1, _ = grid64.mesh()
        gradient = np.stack([np.cos(x1), np.zeros_like(x1)])
        noise = 1e-17 * rng.standard_normal(gradient.shape)
        f = VectorField2.from_physical(gradient + noise, grid64)
        R = anti_divergence(f)
        assert np.array_equal(R.coeffs[0], -R.coeffs[2])
        assert np.abs(R.coeffs).max() < 1e-12

    def test_anti_divergence_keeps_solenoidal_part(self, grid64, rng):
        """For general f, div B f is the Leray projection of f."""
        f = _vector(grid64, rng)
        R = anti_divergence(f)
        assert np.allclose(R.divergence().coeffs, leray_coeffs(f.coeffs, grid64), atol=1e-10 * np.abs(f.coeffs).max())

    def test_fractional_laplacian_on_mode(self, grid64):
        """Lambda^gamma cos(3 x1) = 3^gamma cos(3 x1)."""
        x1, _ = grid64.mesh()
        f = ScalarField.from_physical(np.cos(3 * x1), grid64)
        out = fractional_laplacian(f, 1.5).physical()
        assert np.allclose(out, 3**1.5 * np.cos(3 * x1), atol=1e-10)

    def test_fractional_laplacian_range(self, grid32):
        """Powers outside [-2, 4] are refused."""
        f = ScalarField(grid=grid32, coeffs=np.zeros((32, 32)))
        with pytest.raises(ValueError):
            fractional_laplacian(f, 4.5)

    def test_negative_power_needs_mean_zero(self, grid32):
        """Lambda^-1 of a field with a mean raises."""
        c = np.zeros((32, 32), dtype=complex)
        c[0, 0] = 1.0
        with pytest.raises(NonMeanZeroNegativePower):
            fractional_laplacian(ScalarField(grid=grid32, coeffs=c), -1.0)

    def test_riesz_sign_convention(self, grid64):
        """R_1 sin(2 x1) = cos(2 x1) with multipliers i k / |k|."""
        x1, _ = grid64.mesh()
        c = to_spectral(np.sin(2 * x1), grid64)
        c[0, 0] = 0.0
        riesz, notes = riesz_and_perp(ScalarField(grid=grid64, coeffs=c))
        out = riesz.physical()
        assert np.allclose(out[0], np.cos(2 * x1), atol=1e-12)
        assert np.abs(out[1]).max() < 1e-12
        assert "i k/|k|" in notes

    def test_riesz_needs_mean_zero(self, grid32):
        c = np.zeros((32, 32), dtype=complex)
        c[0, 0] = 3.0
        with pytest.raises(NonMeanZeroNegativePower):
            riesz_and_perp(ScalarField(grid=grid32, coeffs=c))

    def test_nonlinearity_two_term_form(self, grid64, rng):
        """At gamma2 = 2 the nonlinearity is (u.grad)v - (grad v)^T u."""
        u, v = _vector(grid64, rng), _vector(grid64, rng)
        direct = two_term_nonlinearity(u, v).physical()
        bridged = nonlinear_term(u, v, 2.0).physical()
        assert np.abs(direct - bridged).max() < 1e-10 * np.abs(direct).max()

    def test_tensor_operator_norm(self):
        """diag(1, -3) has operator norm 3."""
        samples = np.array([1.0, 0.0, -3.0]).reshape(3, 1, 1)
        assert tensor_operator_norm(samples)[0, 0] == pytest.approx(3.0)


class TestFieldFlags:
    def test_divergence_free_flag_is_validated(self, grid32):
        """A gradient field cannot be flagged divergence free."""
        x1, _ = grid32.mesh()
        samples = np.stack([np.cos(x1), np.zeros_like(x1)])
        with pytest.raises(ValueError):
            VectorField2.from_physical(samples, grid32, divergence_free=True)

    def test_trace_free_flag_is_validated(self, grid32):
        ones = np.ones((32, 32))
        with pytest.raises(ValueError):
            SymTensorField2.from_physical(np.stack([ones, 0 * ones, ones]), grid32, trace_free=True)

    def test_time_slice(self, grid32, rng):
        """at() picks one slice and its time."""
        coeffs = random_band_limited(grid32, rng, 5.0, components=2, leading=(3,))
        v = VectorField2(grid=grid32, coeffs=coeffs, time_tag=np.array([0.0, 0.5, 1.0]))
        assert v.n_times == 3
        piece = v.at(1)
        assert piece.time_tag == 0.5
        assert np.array_equal(piece.coeffs, coeffs[1])


class TestProjectors:
    def test_band_symbol_overflow(self, grid32):
        """A band reaching N/2 raises."""
        with pytest.raises(NyquistOverflow):
            band_symbol(grid32, (1.0, 0.0), 15.0)

    def test_band_symbol_support(self, grid64):
        """The band symbol lives within lambda/8 of lambda k."""
        lam = 20.0
        symbol = band_symbol(grid64, (0.6, 0.8), lam)
        dist = np.hypot(grid64.k1 - 0.6 * lam, grid64.k2 - 0.8 * lam)
        assert np.all(symbol[dist > lam / 8.0 + 1e-12] == 0)
        assert symbol[12, 16] == pytest.approx(1.0)

    def test_annulus_symbol_overflow(self, grid32):
        with pytest.raises(NyquistOverflow):
            annulus_symbol(grid32, 4.0)

    def test_annulus_symbol_plateau(self, grid64):
        """Equal to one on [3 lam/8, 3 lam] and zero outside [lam/4, 4 lam]."""
        lam = 5.0
        symbol = annulus_symbol(grid64, lam)
        s = grid64.kmag / lam
        plateau = (s >= 0.375) & (s <= 3.0) & grid64.keep
        assert np.all(symbol[plateau] == 1.0)
        assert np.all(symbol[(s <= 0.25) | (s >= 4.0)] == 0.0)


class TestMollifiers:
    def test_space_mollifier_preserves_mean(self, grid32):
        c = np.zeros((32, 32), dtype=complex)
        c[0, 0] = 5.0
        out = mollify_space_coeffs(c, grid32, 0.5)
        assert out[0, 0].real == pytest.approx(5.0, rel=1e-12)

    def test_space_mollifier_resolution(self, grid32):
        """Scales below two cells raise unless the data is band limited."""
        c = np.zeros((32, 32), dtype=complex)
        with pytest.raises(ScaleTooFine):
            mollify_space_coeffs(c, grid32, 0.1)
        mollify_space_coeffs(c, grid32, 0.1, band_limited=True)

    def test_space_mollifier_scale_cap(self, grid32):
        with pytest.raises(ValueError):
            mollify_space_coeffs(np.zeros((32, 32)), grid32, 3.2)

    def test_temporal_weights_are_one_sided(self):
        """Rows sum to one and only touch (t - 2 ell, t - ell)."""
        times = np.arange(0.0, 1.0, 0.001)
        at = np.array([0.5, 0.8])
        ell = 0.05
        w = temporal_weights(times, ell, at)
        assert np.allclose(w.sum(axis=1), 1.0)
        for row, t in zip(w, at):
            touched = times[row > 0]
            assert touched.min() > t - 2 * ell - 1e-12
            assert touched.max() < t - ell + 1e-12

    def test_temporal_resolution_and_history(self):
        times = np.arange(0.0, 1.0, 0.01)
        with pytest.raises(ScaleTooFine):
            temporal_weights(times, 0.02, np.array([0.5]))
        with pytest.raises(InsufficientHistory):
            temporal_weights(times, 0.1, np.array([0.15]))

    def test_mollify_time_of_constant(self):
        times = np.arange(0.0, 1.0, 0.001)
        out = mollify_time(np.full(times.size, 2.5), 0.05, times=times, at=np.array([0.3, 0.9]))
        assert np.allclose(out, 2.5)

    def test_first_moment_is_centred(self):
        """The kernel is symmetric about 3/2 in units of ell."""
        assert temporal_first_moment(0.1, 0.001) == pytest.approx(1.5, abs=1e-6)


class TestNorms:
    def test_time_order_limited(self):
        with pytest.raises(ValueError):
            NormSpec(time_order=2)

    def test_l2_and_sobolev(self, grid64):
        """||cos 3x1||_L2 = sqrt(2) pi and its H^1 seminorm is 3 sqrt(2) pi."""
        x1, _ = grid64.mesh()
        f = ScalarField.from_physical(np.cos(3 * x1), grid64)
        assert float(norm_series(f, NormSpec(kind="L2"))) == pytest.approx(np.sqrt(2) * np.pi, rel=1e-12)
        hs = float(norm_series(f, NormSpec(kind="Hs", s=1.0)))
        assert hs == pytest.approx(3 * np.sqrt(2) * np.pi, rel=1e-12)
        lattice = float(norm_series(f, NormSpec(kind="Hs", s=1.0, convention="lattice")))
        assert lattice == pytest.approx(TWO_PI * hs, rel=1e-12)

    def test_sup_norm_over_window(self, grid32):
        """norms() takes the sup over the windowed samples only."""
        x1, _ = grid32.mesh()
        base = to_spectral(np.cos(x1), grid32)
        coeffs = np.stack([base, 2 * base, 4 * base])
        f = ScalarField(grid=grid32, coeffs=coeffs, time_tag=np.array([0.0, 1.0, 2.0]))
        assert norms(f, NormSpec(kind="C")) == pytest.approx(4.0, rel=1e-12)
        assert norms(f, NormSpec(kind="C", window=(0.0, 1.0))) == pytest.approx(2.0, rel=1e-12)

    def test_time_derivative_counts_toward_order(self):
        """A time derivative needs room in the total order."""
        with pytest.raises(ValueError):
            NormSpec(kind="C", order=0, time_order=1)

    def test_space_time_c1(self, grid32):
        """f = t cos x1 has C^1_{t,x} norm 2t + 1 at each sample."""
        x1, _ = grid32.mesh()
        base = to_spectral(np.cos(x1), grid32)
        times = np.array([0.0, 1.0, 2.0])
        f = ScalarField(grid=grid32, coeffs=times[:, None, None] * base, time_tag=times)
        series = norm_series(f, NormSpec(kind="C", order=1, time_order=1))
        assert np.allclose(series, 2 * times + 1, atol=1e-10)
        assert norms(f, NormSpec(kind="C", order=1)) == pytest.approx(4.0, rel=1e-10)

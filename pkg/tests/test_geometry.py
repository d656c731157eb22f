"""
Tests for direction families, the coefficient functionals and the
plane-wave identities.
"""

from fractions import Fraction

import numpy as np
import pytest

from convexlab.exceptions import GridBound, NonRealField, OutsideGeometricBall
from convexlab.geometry import (
    DirectionFamily,
    building_block,
    gamma_coefficients,
    joint_constants,
    nonlinearity_identity_residual,
    pairing_sum,
    standard_families,
    wavefield_identities_check,
)
from convexlab.spectral import VectorField2, random_band_limited


@pytest.fixture(scope="module")
def families():
    return standard_families()


@pytest.fixture(scope="module")
def coefficients(families):
    return [gamma_coefficients(f) for f in families]


def _paired_amplitudes(family, rng):
    amps = np.zeros(len(family.heights), dtype=complex)
    for i in family.representatives:
        a = complex(rng.standard_normal(), rng.standard_normal())
        amps[i], amps[family.partner(i)] = a, np.conj(a)
    return amps


class TestDirectionFamily:
    def test_standard_families(self, families):
        first, second = families
        assert first.label == 1 and second.label == 2
        assert (3, 4) in first.heights and (4, 3) in second.heights
        assert not set(first.heights) & set(second.heights)

    def test_pairs(self, families):
        first = families[0]
        assert first.representatives == [0, 2, 4]
        assert first.partner(3) == 2
        assert first.pair_of(5) == 2

    def test_separation(self, families):
        """|k + k'| >= 1/2 for distinct non-opposite members."""
        for family in families:
            assert family.min_separation() >= 0.5

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            DirectionFamily(label=3, heights=((1, 2), (-1, -2)))

    def test_rejects_missing_partner(self):
        with pytest.raises(ValueError):
            DirectionFamily(label=3, heights=((5, 0), (0, 5), (0, -5)))

    def test_rejects_close_directions(self):
        with pytest.raises(ValueError):
            DirectionFamily(label=3, heights=((3, 4), (-3, -4), (4, 3), (-4, -3)))


class TestGeometricCoefficients:
    def test_functionals_are_exact_duals(self, families, coefficients):
        """c_p(k_q^perp (x) k_q^perp) = delta_pq in exact arithmetic."""
        for family, coeffs in zip(families, coefficients):
            for q, index in enumerate(family.representatives):
                h = family.heights[index]
                a, b = Fraction(h[0], 5), Fraction(h[1], 5)
                column = (b * b, -a * b, a * a)
                for p, (alpha, beta, delta) in enumerate(coeffs.functionals):
                    value = alpha * column[0] + beta * column[1] + delta * column[2]
                    assert value == (1 if p == q else 0)

    def test_positive_at_identity(self, coefficients):
        for coeffs in coefficients:
            assert np.all(coeffs.at_identity() > 0)
            assert coeffs.epsilon_gamma > 0
            assert coeffs.gamma_sup >= np.sqrt(coeffs.at_identity().max())

    def test_reconstruct_inside_ball(self, coefficients, rng):
        """R = 1/2 sum gamma_k(R)^2 k^perp (x) k^perp near the identity."""
        for coeffs in coefficients:
            eps = 0.5 * coeffs.epsilon_gamma
            e = rng.uniform(-1, 1, size=(3, 5))
            e /= np.abs(e).sum(axis=0)
            r11, r12, r22 = 1 + eps * e[0], eps * e[1], 1 + eps * e[2]
            rebuilt = coeffs.reconstruct(r11, r12, r22)
            assert np.allclose(rebuilt, np.stack([r11, r12, r22]), atol=1e-12)

    def test_outside_ball_raises(self, coefficients):
        coeffs = coefficients[0]
        with pytest.raises(OutsideGeometricBall) as info:
            coeffs.gamma(np.array([1.0 + 2 * coeffs.epsilon_gamma]), np.array([0.0]), np.array([1.0]), time=0.25)
        assert info.value.time == 0.25
        assert info.value.family_index == 1

    def test_joint_constants(self, coefficients):
        eps, sup = joint_constants(*coefficients)
        assert eps == min(c.epsilon_gamma for c in coefficients)
        assert sup > 0

    def test_report_is_serializable(self, coefficients):
        report = coefficients[1].report()
        assert report["label"] == 2
        assert len(report["functionals"]) == 3


class TestWaveIdentities:
    def test_building_block(self):
        """b_k = i k^perp e^{ik.xi} and k . b_k = 0."""
        k = np.array([0.6, 0.8])
        xi = np.random.default_rng(0).uniform(0, 6, size=(2, 7))
        b, c = building_block(k, xi)
        assert np.allclose(np.abs(c), 1.0)
        assert np.allclose(k[0] * b[0] + k[1] * b[1], 0.0)

    def test_pairing_sum_recovers_identity(self, families, coefficients):
        """With a_k = gamma_k(Id) the pairing sum is 2 Id."""
        for family, coeffs in zip(families, coefficients):
            gammas = coeffs.gamma(1.0, 0.0, 1.0)
            amps = [gammas[family.pair_of(i)] for i in range(len(family.heights))]
            assert np.allclose(pairing_sum(family, amps), [2.0, 0.0, 2.0], atol=1e-12)

    def test_wavefield_identities(self, families, grid32, rng):
        for family in families:
            report = wavefield_identities_check(family, _paired_amplitudes(family, rng), grid32)
            assert report.divergence_identity_residual < 1e-10
            assert report.pairing_identity_residual < 1e-12

    def test_wavefield_needs_conjugate_pairs(self, families, grid32):
        family = families[0]
        amps = np.ones(len(family.heights), dtype=complex) * 1j
        with pytest.raises(NonRealField):
            wavefield_identities_check(family, amps, grid32)

    def test_wavefield_needs_lattice_frequency(self, families, grid32, rng):
        family = families[0]
        with pytest.raises(ValueError):
            wavefield_identities_check(family, _paired_amplitudes(family, rng), grid32, lam=7)

    def test_wavefield_needs_room_for_products(self, families, grid32, rng):
        """At lam = 10 the quadratic terms reach frequency 20, past N/2 = 16."""
        family = families[0]
        with pytest.raises(GridBound):
            wavefield_identities_check(family, _paired_amplitudes(family, rng), grid32, lam=10)

    def test_nonlinearity_identity(self, grid64, rng):
        u = VectorField2(grid=grid64, coeffs=random_band_limited(grid64, rng, 6.0, components=2))
        v = VectorField2(grid=grid64, coeffs=random_band_limited(grid64, rng, 6.0, components=2))
        assert nonlinearity_identity_residual(u, v) < 1e-10

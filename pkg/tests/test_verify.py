"""Tests for the verification suites and their report objects."""

import json
import math

import numpy as np
import pytest

from convexlab.spectral import Grid
from convexlab.verify import (
    CheckEntry,
    VerificationReport,
    base_half_norm_squared,
    energy_report,
    half_norm,
    hypothesis_report,
    identity_suite,
    step_report,
    transport_sanity,
)


class TestCheckEntry:
    def test_inclusive_threshold(self):
        assert CheckEntry(check_id="a", tag="t", measured=1.0, threshold=1.0).verdict

    def test_strict_threshold(self):
        assert not CheckEntry(check_id="a", tag="t", measured=1.0, threshold=1.0, strict=True).verdict

    @pytest.mark.parametrize("value", [math.nan, math.inf])
    def test_non_finite_is_red(self, value):
        assert not CheckEntry(check_id="a", tag="t", measured=value, threshold=1e300).verdict


class TestVerificationReport:
    @pytest.fixture
    def report(self):
        return VerificationReport(
            suite="demo",
            entries=[
                CheckEntry(check_id="exact", tag="t", measured=0.0, threshold=1e-12),
                CheckEntry(check_id="ratio", tag="t", measured=4.0, threshold=1.0, hard=False),
            ],
        )

    def test_soft_entries_do_not_decide(self, report):
        assert report.green
        assert report.entry("ratio").verdict is False

    def test_hard_failure_is_red(self, report):
        red = report.model_copy(
            update={"entries": report.entries + [CheckEntry(check_id="bad", tag="t", measured=2.0, threshold=1.0)]}
        )
        assert not red.green
        assert "RED" in red.render()

    def test_frame(self, report):
        frame = report.to_frame()
        assert list(frame["verdict"]) == ["green", "info"]

    def test_json(self, report):
        payload = json.loads(report.to_json())
        assert payload["green"] is True
        assert [e["check_id"] for e in payload["entries"]] == ["exact", "ratio"]

    def test_missing_entry(self, report):
        with pytest.raises(KeyError):
            report.entry("nope")


class TestIdentitySuite:
    def test_green_on_small_grid(self):
        report = identity_suite(Grid.create(32), seed=3, pairs=5)
        assert report.green, report.render()
        assert report.environment["N"] == 32
        ids = {e.check_id for e in report.entries}
        assert {"nonlinearity_identity", "anti_divergence_contract", "riesz_sign_convention"} <= ids

    def test_seeded(self):
        first = identity_suite(Grid.create(16), seed=1, pairs=2)
        second = identity_suite(Grid.create(16), seed=1, pairs=2)
        assert [e.measured for e in first.entries] == [e.measured for e in second.entries]

    def test_wavefield_checks_move_to_a_larger_grid(self):
        """N = 16 cannot hold the building-block products, so they run on N = 32."""
        report = identity_suite(Grid.create(16), seed=2, pairs=2)
        assert report.green, report.render()
        assert report.environment["N"] == 16
        assert report.environment["wave_N"] == 32


class TestHypotheses:
    def test_supports_are_hard_and_green(self, early_base, toy_params, ledger_constants):
        """At toy scale only the frequency supports decide the verdict."""
        level, noise = early_base
        report = hypothesis_report(level, toy_params, noise, ledger_constants)
        assert report.green
        hard = {e.check_id for e in report.entries if e.hard}
        assert hard == {"y_support", "R_support"}
        assert report.environment["mode"] == "toy"


class TestEnergy:
    def test_base_half_norm_closed_form(self, early_base):
        level, noise = early_base
        measured = half_norm(level.y.coeffs, level.grid) ** 2
        expected = base_half_norm_squared(noise.profile, level.time_grid)
        assert np.allclose(measured, expected, rtol=1e-10)

    def test_conventions_differ_by_four_pi_squared(self, early_base):
        _, noise = early_base
        ratio = base_half_norm_squared(noise.profile, 0.0, "lattice") / base_half_norm_squared(noise.profile, 0.0)
        assert float(ratio) == pytest.approx(4.0 * math.pi**2)

    def test_report_past_stopping_time(self, early_base, toy_params):
        """With T beyond T_L only the margin is evaluated."""
        level, noise = early_base
        report = energy_report([level], noise, toy_params, T=noise.T_L + 1.0)
        ids = {e.check_id for e in report.entries}
        assert {"base_half_norm_integral", "base_half_norm_lattice", "growth_margin"} <= ids
        assert "growth_ratio" not in ids
        assert report.environment["growth"] is None
        assert report.entry("base_half_norm_integral").verdict


@pytest.mark.slow
class TestStepReports:
    def test_step_hard_checks(self, toy_step):
        report = step_report(toy_step)
        assert report.suite == "step_q0"
        for check_id in ("partition_of_unity", "w_imaginary_part", "o1_cancellation", "equation_residual"):
            assert report.entry(check_id).verdict, check_id
        assert {f"ratio_{g}" for g in ("T", "N", "L", "O", "Com1", "Com2")} <= {e.check_id for e in report.entries}

    def test_transport_sanity(self, toy_step):
        report = transport_sanity(toy_step)
        assert report.entry("flow_gradient_ratio").verdict
        assert report.environment["max_deviation"] >= 0.0

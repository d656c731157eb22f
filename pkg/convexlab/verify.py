"""Verification suites: exact identities, level hypotheses and energy accounting.

Each suite returns a ``VerificationReport`` whose entries compare a measured
value with a threshold. Hard entries decide the overall verdict; the rest
are informational (ratios at toy scale, for instance).
"""

import json
import logging
import math
import time
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from convexlab.geometry import HEIGHT, nonlinearity_identity_residual, standard_families, wavefield_identities_check
from convexlab.iteration.base import IterationLevel, NoiseContext, base_velocity_coeffs
from convexlab.iteration.mollify import mollify_level
from convexlab.iteration.step import StepResult
from convexlab.params.constants import LedgerConstants
from convexlab.params.ledger import ParameterSet, sequences
from convexlab.spectral import (
    Grid,
    NormSpec,
    ScalarField,
    VectorField2,
    anti_divergence_coeffs,
    gradient_coeffs,
    lambda_power,
    leray_coeffs,
    norm_series,
    random_band_limited,
    resample_coeffs,
    riesz_and_perp,
    tensor_divergence_coeffs,
    to_physical,
    to_spectral,
    two_term_nonlinearity,
)

logger = logging.getLogger(__name__)

# time samples used for the material derivative of a level
MATERIAL_SAMPLES = 64


class CheckEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    check_id: str
    tag: str
    measured: float
    threshold: float
    hard: bool = True
    strict: bool = False

    @property
    def verdict(self) -> bool:
        if not math.isfinite(self.measured):
            return False
        return self.measured < self.threshold if self.strict else self.measured <= self.threshold


class VerificationReport(BaseModel):
    """Named collection of checks together with the run environment."""

    model_config = ConfigDict(frozen=True)

    suite: str
    entries: List[CheckEntry] = Field(default_factory=list)
    environment: Dict[str, Any] = Field(default_factory=dict)

    @property
    def green(self) -> bool:
        return all(e.verdict for e in self.entries if e.hard)

    def entry(self, check_id: str) -> CheckEntry:
        for e in self.entries:
            if e.check_id == check_id:
                return e
        raise KeyError(check_id)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "check_id": e.check_id,
                "tag": e.tag,
                "measured": e.measured,
                "threshold": e.threshold,
                "hard": e.hard,
                "verdict": "green" if e.verdict else ("red" if e.hard else "info"),
            }
            for e in self.entries
        ]
        return pd.DataFrame(rows, columns=["check_id", "tag", "measured", "threshold", "hard", "verdict"])

    def render(self) -> str:
        header = f"{self.suite}: {'GREEN' if self.green else 'RED'}"
        return header + "\n" + self.to_frame().to_string(index=False)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "green": self.green,
            "environment": self.environment,
            "entries": [{**e.model_dump(), "verdict": e.verdict} for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else (0.0 if num == 0 else math.inf)


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------

def identity_suite(grid: Grid, seed: int = 0, pairs: int = 50, gamma2: float = 1.0) -> VerificationReport:
    """Exact algebraic identities on seeded random band-limited fields."""
    start = time.time()
    rng = np.random.default_rng(seed)
    radius = grid.N / 8
    entries: List[CheckEntry] = []

    worst = 0.0
    for _ in range(pairs):
        u = VectorField2(grid=grid, coeffs=random_band_limited(grid, rng, radius, components=2))
        v = VectorField2(grid=grid, coeffs=random_band_limited(grid, rng, radius, components=2))
        worst = max(worst, nonlinearity_identity_residual(u, v))
    entries.append(CheckEntry(check_id="nonlinearity_identity", tag="nonlinearity", measured=worst, threshold=1e-10))

    worst = 0.0
    for _ in range(max(1, pairs // 5)):
        u = VectorField2(grid=grid, coeffs=random_band_limited(grid, rng, radius, components=2))
        v = VectorField2(grid=grid, coeffs=random_band_limited(grid, rng, radius, components=2))
        worst = max(worst, two_term_gap(u, v, gamma2))
    entries.append(CheckEntry(check_id="nonlinearity_fractional_form", tag="nonlinearity", measured=worst, threshold=1e-10))

    # (grad f)^T Lambda^(2-gamma2) f is a gradient for every shear f(x2)
    worst = 0.0
    shear_mask = (grid.k1 == 0).astype(float)
    for _ in range(pairs):
        g = random_band_limited(grid, rng, radius) * shear_mask
        f = np.stack([g, np.zeros_like(g)])
        grads = to_physical(gradient_coeffs(f, grid), grid)  # [m, i] = d_i f_m
        lf = to_physical(lambda_power(f, grid, 2.0 - gamma2), grid)
        field = to_spectral(grads[0] * lf[0] + grads[1] * lf[1], grid)
        curl = to_physical(-1j * grid.k2 * field[0] + 1j * grid.k1 * field[1], grid)
        scale = float(np.abs(to_physical(field, grid)).max())
        worst = max(worst, _ratio(float(np.abs(curl).max()), scale))
    entries.append(CheckEntry(check_id="shear_gradient_form", tag="shear nonlinearity", measured=worst, threshold=1e-11))

    worst, trace = 0.0, 0.0
    for _ in range(pairs):
        f = random_band_limited(grid, rng, radius, components=2)
        Bf = anti_divergence_coeffs(f, grid)
        target = to_physical(leray_coeffs(f, grid), grid)
        gap = to_physical(tensor_divergence_coeffs(Bf, grid), grid) - target
        worst = max(worst, _ratio(float(np.abs(gap).max()), float(np.abs(target).max())))
        samples = to_physical(Bf, grid)
        trace = max(trace, float(np.abs(samples[0] + samples[2]).max()))
    entries.append(CheckEntry(check_id="anti_divergence_contract", tag="anti-divergence", measured=worst, threshold=1e-11))
    entries.append(CheckEntry(check_id="anti_divergence_trace", tag="anti-divergence", measured=trace, threshold=1e-12))

    # plane waves at frequency HEIGHT need products at 2 HEIGHT below Nyquist
    wave_grid = grid if 2 * HEIGHT < grid.N // 2 else Grid.smallest_for(2 * HEIGHT)
    worst_div, worst_pair = 0.0, 0.0
    for family in standard_families():
        for _ in range(max(1, pairs // 10)):
            amps = np.zeros(len(family.heights), dtype=complex)
            for i in family.representatives:
                amps[i] = rng.standard_normal() + 1j * rng.standard_normal()
                amps[family.partner(i)] = np.conj(amps[i])
            report = wavefield_identities_check(family, amps, wave_grid)
            worst_div = max(worst_div, report.divergence_identity_residual)
            worst_pair = max(worst_pair, report.pairing_identity_residual)
    entries.append(CheckEntry(check_id="wavefield_divergence", tag="wave identities", measured=worst_div, threshold=1e-10))
    entries.append(CheckEntry(check_id="wavefield_pairing", tag="wave identities", measured=worst_pair, threshold=1e-12))

    # the Riesz multiplier i k/|k| maps sin x2 to (0, cos x2)
    _, x2 = grid.mesh()
    sin_hat = to_spectral(np.sin(x2), grid)
    sin_hat[0, 0] = 0.0
    riesz, _ = riesz_and_perp(ScalarField(grid=grid, coeffs=sin_hat))
    gap = float(np.abs(riesz.physical() - np.stack([np.zeros_like(x2), np.cos(x2)])).max())
    entries.append(CheckEntry(check_id="riesz_sign_convention", tag="convention", measured=gap, threshold=1e-12))

    report = VerificationReport(
        suite="identities",
        entries=entries,
        environment={"N": grid.N, "wave_N": wave_grid.N, "seed": seed, "pairs": pairs, "gamma2": gamma2},
    )
    logger.info(f"Identity suite completed in {time.time() - start:.4f} seconds: {'green' if report.green else 'red'}")
    return report


def two_term_gap(u: VectorField2, v: VectorField2, gamma2: float) -> float:
    """Relative gap between the two-term form with u replaced by Lambda^(2-gamma2) u and the perp form."""
    lu = u.replace(lambda_power(u.coeffs, u.grid, 2.0 - gamma2), divergence_free=False)
    direct = two_term_nonlinearity(lu, v).physical()
    curl = to_physical(-1j * v.grid.k2 * v.coeffs[..., 0, :, :] + 1j * v.grid.k1 * v.coeffs[..., 1, :, :], v.grid)
    lus = lu.physical()
    bridged = np.stack([-lus[..., 1, :, :] * curl, lus[..., 0, :, :] * curl], axis=-3)
    return _ratio(float(np.abs(direct - bridged).max()), float(np.abs(direct).max()))


# ---------------------------------------------------------------------------
# Level hypotheses
# ---------------------------------------------------------------------------

def _running_sup(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(np.atleast_1d(values))


def _interpolate_in_time(coeffs: np.ndarray, times: np.ndarray, at: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(times, at, side="right") - 1, 0, times.size - 2)
    theta = ((at - times[idx]) / (times[idx + 1] - times[idx]))[:, None, None, None]
    return (1.0 - theta) * coeffs[idx] + theta * coeffs[idx + 1]


def hypothesis_report(
    level: IterationLevel,
    params: ParameterSet,
    noise: NoiseContext,
    constants: LedgerConstants,
    step: Optional[StepResult] = None,
) -> VerificationReport:
    """Measured-over-bound ratios of the inductive estimates at level q.

    Frequency supports are always hard checks. The ratios are hard only for
    faithful-mode parameters at q = 0; at toy scale they are informational.
    With ``step`` the distance ||y_{q+1} - y_q|| is also reported.
    """
    start = time.time()
    q, grid, times = level.q, level.grid, level.time_grid
    profile = noise.profile
    M0 = profile.M0(times)
    mL, L = profile.mL, params.L
    gamma2 = params.gamma2
    log_lam = params.log_lambda(q)
    log_next = params.log_lambda(q + 1)
    lam_q = math.exp(log_lam)
    delta_q = math.exp(-2.0 * params.beta * log_lam)
    delta_next = math.exp(-2.0 * params.beta * log_next)
    partial = 1.0 + sum(math.exp(-params.beta * params.log_lambda(j)) for j in range(1, q + 1))
    hard = params.mode == "faithful" and q == 0
    C0 = constants.C0
    entries: List[CheckEntry] = []

    report = level.support_report()
    entries.append(CheckEntry(check_id="y_support", tag="frequency support", measured=report["y_outside"], threshold=1e-13))
    entries.append(CheckEntry(check_id="R_support", tag="frequency support", measured=report["R_outside"], threshold=1e-13))

    y_sup = _running_sup(norm_series(level.y, NormSpec(kind="C", order=0)))
    bound = C0 * partial * mL * np.sqrt(M0)
    entries.append(CheckEntry(check_id="y_sup_ratio", tag="velocity bound", measured=float((y_sup / bound).max()), threshold=1.0, hard=hard))

    order = max(1, math.ceil(2.0 - gamma2))
    ly = level.y.replace(lambda_power(level.y.coeffs, grid, 2.0 - gamma2), divergence_free=False)
    reg = norm_series(level.y, NormSpec(kind="C", order=order)) + norm_series(ly, NormSpec(kind="C", order=0))
    bound = C0 * mL * np.sqrt(M0) * lam_q ** (2.0 - gamma2) * math.sqrt(delta_q)
    entries.append(CheckEntry(check_id="y_regularity_ratio", tag="velocity regularity", measured=float((_running_sup(reg) / bound).max()), threshold=1.0, hard=hard))

    R_sup = _running_sup(norm_series(level.R, NormSpec(kind="C", order=0)))
    bound = constants.epsilon_gamma * M0 * math.exp((2.0 - gamma2) * log_next) * delta_next
    entries.append(CheckEntry(check_id="R_sup_ratio", tag="stress bound", measured=float((R_sup / bound).max()), threshold=1.0, hard=hard))

    material, measured_times = _material_derivative(level, params, noise)
    if material is not None:
        mat = _running_sup(norm_series(material, NormSpec(kind="C", order=0)))
        M0_mat = profile.M0(measured_times)
        bound = C0 * math.sqrt(L) * math.exp(2.0 * L**0.25) * M0_mat * lam_q ** (3.0 - gamma2) * delta_q
        entries.append(CheckEntry(check_id="material_derivative_ratio", tag="material derivative", measured=float((mat / bound).max()), threshold=1.0, hard=hard))

    if step is not None:
        out_times = step.level.time_grid
        y_prev = _interpolate_in_time(level.y.coeffs, times, out_times)
        y_prev = resample_coeffs(y_prev, grid, step.level.grid)
        gap = to_physical(step.level.y.coeffs - y_prev, step.level.grid)
        dist = np.sqrt(gap[:, 0] ** 2 + gap[:, 1] ** 2).max(axis=(-2, -1))
        bound = C0 * math.exp(0.5 * L**0.25) * profile.sqrt_M0(out_times) * math.sqrt(delta_next)
        entries.append(CheckEntry(check_id="step_distance_ratio", tag="step distance", measured=float((dist / bound).max()), threshold=1.0, hard=False))
        w_report = step.support_report()
        entries.append(CheckEntry(check_id="w_annulus_support", tag="perturbation support", measured=w_report["w_outside_annulus"], threshold=1e-13))

    verification = VerificationReport(
        suite=f"hypotheses_q{q}",
        entries=entries,
        environment={"N": grid.N, "seed": noise.path.seed, "mode": params.mode, "q": q, "T_L": noise.T_L},
    )
    logger.info(f"Hypothesis report for level {q} completed in {time.time() - start:.4f} seconds")
    return verification


def _material_derivative(level: IterationLevel, params: ParameterSet, noise: NoiseContext):
    """(d_t + Upsilon_l Lambda^(2-gamma2) y_l . grad) y_q at the level times with enough history."""
    times = level.time_grid
    if times.size < 3:
        return None, times
    y_dot = np.gradient(level.y.coeffs, times, axis=0, edge_order=2)
    ell = sequences(params, level.q).ell
    usable = times - 2.0 * ell >= times[0] - 1e-9 * level.dt
    if ell < 4.0 * level.dt or ell < 4.0 * noise.path.dt or not usable.any():
        logger.debug(f"Material derivative at level {level.q} measured without the transport term")
        return level.y.replace(y_dot, time_tag=times, divergence_free=False), times
    pick = np.flatnonzero(usable)
    if pick.size > MATERIAL_SAMPLES:
        pick = np.unique(pick[np.linspace(0, pick.size - 1, MATERIAL_SAMPLES).round().astype(int)])
    process = noise.process(ell)
    at = times[pick]
    state, _ = mollify_level(level, noise, process, at, params.gamma1, params.gamma2, with_stress=False)
    grid = level.grid
    V = to_physical(state.velocity_coeffs(params.gamma2), grid)
    grads = to_physical(gradient_coeffs(level.y.coeffs[pick], grid), grid)  # [n, i, m] = d_m y_i
    advect = V[:, 0:1] * grads[:, :, 0] + V[:, 1:2] * grads[:, :, 1]
    total = y_dot[pick] + to_spectral(advect, grid)
    return VectorField2(grid=grid, coeffs=total, time_tag=at), at


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def half_norm(coeffs: np.ndarray, grid: Grid, convention: str = "integral") -> np.ndarray:
    field = VectorField2(grid=grid, coeffs=coeffs)
    return norm_series(field, NormSpec(kind="Hs", s=0.5, convention=convention))


def base_half_norm_squared(profile, times: np.ndarray, convention: str = "integral") -> np.ndarray:
    """Closed form of ||Lambda^(1/2) y0(t)||^2: m_L^2 M0 / 2 (integral) or 2 pi^2 m_L^2 M0 (lattice)."""
    factor = 0.5 if convention == "integral" else 2.0 * math.pi**2
    return factor * profile.mL**2 * profile.M0(np.asarray(times, dtype=float))


def energy_report(
    levels: Sequence[IterationLevel],
    noise: NoiseContext,
    params: ParameterSet,
    K: Optional[float] = None,
    T: Optional[float] = None,
    convention: str = "integral",
) -> VerificationReport:
    """H^(1/2) bookkeeping of the levels against the base shear flow.

    The distance bound is half the norm of y0 under the declared convention,
    which is the constant m_L M0^(1/2) sqrt(2) pi^2 when ||y0|| is
    normalized to m_L M0^(1/2) sqrt(8) pi^2.
    """
    start = time.time()
    K = params.K if K is None else K
    T = params.T if T is None else T
    L = params.L
    profile = noise.profile
    hard = params.mode == "faithful"
    entries: List[CheckEntry] = []

    for level in levels:
        grid, times = level.grid, level.time_grid
        y0 = base_velocity_coeffs(profile, grid, times)
        if level.q == 0:
            for conv in ("integral", "lattice"):
                measured = half_norm(level.y.coeffs, grid, conv) ** 2
                expected = base_half_norm_squared(profile, times, conv)
                gap = float(np.abs(measured / expected - 1.0).max())
                entries.append(CheckEntry(check_id=f"base_half_norm_{conv}", tag="energy", measured=gap, threshold=1e-10))
            continue
        distance = half_norm(level.y.coeffs - y0, grid, convention)
        bound = 0.5 * half_norm(y0, grid, convention)
        entries.append(
            CheckEntry(
                check_id=f"distance_to_base_q{level.q}",
                tag="energy",
                measured=float((distance / bound).max()),
                threshold=1.0,
                hard=False,
            )
        )

    if T <= noise.T_L:
        norm_T = math.sqrt(float(base_half_norm_squared(profile, T, convention)))
        norm_0 = math.sqrt(float(base_half_norm_squared(profile, 0.0, convention)))
        upsilon_T = math.exp(noise.path.value_at(T))
        growth = upsilon_T * norm_T / (math.exp(T / 2.0) * norm_0)
        entries.append(CheckEntry(check_id="growth_ratio", tag="energy growth", measured=K / growth, threshold=1.0, hard=hard, strict=True))
        lhs = norm_T - 0.5 * norm_T
        rhs = math.exp(2.0 * math.sqrt(L)) * (norm_0 + 0.5 * norm_0)
        entries.append(CheckEntry(check_id="base_chain", tag="energy chain", measured=rhs / lhs, threshold=1.0, hard=hard, strict=True))
        environment_growth = growth
    else:
        logger.warning(f"T={T} exceeds T_L={noise.T_L:.4f}; growth ratio not evaluated")
        environment_growth = None
    margin = K * math.exp(T / 2.0) / math.exp(2.0 * math.sqrt(L) - L**0.25)
    entries.append(CheckEntry(check_id="growth_margin", tag="energy growth", measured=margin, threshold=1.0, hard=hard, strict=True))

    report = VerificationReport(
        suite="energy",
        entries=entries,
        environment={
            "seed": noise.path.seed,
            "K": K,
            "T": T,
            "L": L,
            "convention": convention,
            "growth": environment_growth,
        },
    )
    logger.info(f"Energy report completed in {time.time() - start:.4f} seconds")
    return report


def transport_sanity(step: StepResult) -> VerificationReport:
    """Flow-map gradient growth against e^{|t - tau j| ||grad V||} - 1 for every solved map."""
    report = step.flow_maps.gradient_report()
    entries = [
        CheckEntry(check_id="flow_gradient_ratio", tag="flow maps", measured=report["max_ratio"], threshold=1.0),
        CheckEntry(check_id="flow_transport_residual", tag="transport", measured=step.checks["flow_transport_residual"], threshold=1e-6, hard=False),
    ]
    return VerificationReport(suite="transport", entries=entries, environment={"max_deviation": report["max_deviation"]})


def step_report(step: StepResult) -> VerificationReport:
    """Hard and informational checks of one induction step."""
    c = step.checks
    entries = [
        CheckEntry(check_id="partition_of_unity", tag="cutoffs", measured=c["partition_residual"], threshold=1e-12),
        CheckEntry(check_id="w_imaginary_part", tag="perturbation", measured=c["w_imaginary_gap"], threshold=1e-12),
        CheckEntry(check_id="o1_cancellation", tag="oscillation cancellation", measured=c["o1_tracefree_residual"], threshold=1e-8),
        CheckEntry(check_id="perturbation_bound", tag="perturbation bound", measured=c["perturbation_bound_ratio"], threshold=1.0),
        CheckEntry(check_id="amplitude_bound", tag="amplitude bound", measured=c["amplitude_bound_ratio"], threshold=1.0),
        CheckEntry(check_id="equation_residual", tag="equation", measured=c["equation_residual"], threshold=1e-3),
        CheckEntry(check_id="transport_form_gap", tag="transport", measured=c["transport_form_gap"], threshold=1e-2, hard=False),
        CheckEntry(check_id="pressure_gap", tag="pressure", measured=c["pressure_gap"], threshold=1.0, hard=False),
        CheckEntry(check_id="mollified_equation", tag="mollification", measured=c["mollified_equation_residual"], threshold=1e-3, hard=False),
    ]
    for name, ratio in step.breakdown.ratios.items():
        entries.append(CheckEntry(check_id=f"ratio_{name}", tag="component ratio", measured=ratio, threshold=1.0, hard=False))
    return VerificationReport(
        suite=f"step_q{step.plan.q}",
        entries=entries,
        environment={"N": step.plan.grid_size, "dt": step.plan.dt, "window": list(step.plan.window)},
    )

"""One induction step q -> q+1 over an explicit output window."""

import logging
import math
import time
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from convexlab.exceptions import GridBound, OutOfWindow, ParameterRangeError
from convexlab.geometry import GeometricCoefficients, gamma_coefficients, joint_constants, standard_families
from convexlab.iteration.amplitudes import AmplitudeSet, build_amplitudes
from convexlab.iteration.base import IterationLevel, NoiseContext, time_grid
from convexlab.iteration.cutoffs import CutoffSystem, build_cutoffs
from convexlab.iteration.flow import FlowMapSet, VelocityField, solve_flow_maps, transport_residual, transport_stress
from convexlab.iteration.mollify import mollify_level
from convexlab.iteration.perturbation import Perturbation, build_perturbation
from convexlab.iteration.stresses import StressBreakdown, assemble_stresses
from convexlab.params.ledger import ParameterSet, sequences, start_time
from convexlab.spectral import Grid, band_kernel_l1_mass
from convexlab.stochastic import PATH_START

logger = logging.getLogger(__name__)


class StepConfig(BaseModel):
    """Numerical knobs of an induction step."""

    model_config = ConfigDict(frozen=True)

    steps_per_tau: int = Field(default=512, ge=8)
    samples_per_ell: int = Field(default=32, ge=4)
    grid_size: int = Field(default=256, ge=8)
    residual_tol: float = Field(default=1e-3, gt=0)
    check_residual: bool = True
    check_mollified: bool = True
    deep_oscillation: bool = False


class StepPlan(BaseModel):
    """Scales and time layout of one step.

    ``slice_times`` are the output times padded by one step on each side,
    ``output`` indexes the outputs inside the slices.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q: int
    lam: float
    lam_next: float
    delta_next: float
    tau: float
    ell: float
    dt: float
    level_dt: float
    grid_size: int
    window: Tuple[float, float]
    level_times: np.ndarray
    velocity_times: np.ndarray
    slice_times: np.ndarray
    output: Tuple[int, ...]
    ratio_scale: float

    @property
    def output_times(self) -> np.ndarray:
        return self.slice_times[list(self.output)]

    @property
    def horizon(self) -> float:
        """Latest time the step evaluates anything at."""
        return float(self.velocity_times[-1])


def step_dt(tau: float, steps_per_tau: int) -> float:
    """Largest dt <= tau / steps_per_tau with 2 / dt an integer."""
    return 2.0 / math.ceil(2.0 * steps_per_tau / tau)


def plan_step(
    params: ParameterSet,
    q: int,
    window_start: float,
    window_samples: int,
    steps_per_tau: int = 512,
    samples_per_ell: int = 32,
    grid_size: int = 256,
) -> StepPlan:
    """Lay out the time grids of step q -> q+1 for outputs starting at ``window_start``.

    The step grid has spacing dt <= tau_{q+1} / steps_per_tau on the path
    lattice; level q is sampled every ``level_dt`` (a multiple of dt) over
    [s0 - dt - tau - 2 ell, s1 + dt + tau].
    """
    if window_samples < 1:
        raise ParameterRangeError("window_samples must be positive")
    scales = sequences(params, q, grid_size=grid_size)
    lam_next = scales.lambda_next
    log_next = params.log_lambda(q + 1)
    log_after = params.log_lambda(q + 2)
    tau, ell = scales.tau, scales.ell
    dt = step_dt(tau, steps_per_tau)

    s0 = PATH_START + round((window_start - PATH_START) / dt) * dt
    s1 = s0 + (window_samples - 1) * dt
    t_next = start_time(params, q + 1)
    if s0 - dt < t_next:
        raise ParameterRangeError(f"window start {s0:.6f} precedes t_{q + 1}={t_next:.6f}")
    if tau > ell:
        logger.warning(f"tau={tau:.3e} exceeds ell={ell:.3e}; flow maps may look past the noise seen at t")

    level_dt = dt * max(1, math.floor(ell / (samples_per_ell * dt)))
    level_times = time_grid(s0 - dt - tau - 2.0 * ell - level_dt, s1 + dt + tau, level_dt)
    if level_times[0] < scales.t_q:
        raise ParameterRangeError(f"level {q} is needed from {level_times[0]:.6f}, before t_{q}={scales.t_q:.6f}")
    slice_times = s0 - dt + dt * np.arange(window_samples + 2)
    plan = StepPlan(
        q=q,
        lam=scales.lambda_q,
        lam_next=lam_next,
        delta_next=math.exp(-2.0 * params.beta * log_next),
        tau=tau,
        ell=ell,
        dt=dt,
        level_dt=level_dt,
        grid_size=grid_size,
        window=(s0, s1),
        level_times=level_times,
        velocity_times=time_grid(s0 - dt - tau, s1 + dt + tau, dt),
        slice_times=slice_times,
        output=tuple(range(1, window_samples + 1)),
        ratio_scale=math.exp(((2.0 - params.gamma2) - 2.0 * params.beta) * log_after),
    )
    logger.info(
        f"Step {q}->{q + 1}: lambda={lam_next:g}, tau={tau:.4e}, ell={ell:.4e}, dt={dt:.4e}, "
        f"level dt={level_dt:.4e}, {level_times.size} level samples, outputs on [{s0:.6f}, {s1:.6f}]"
    )
    return plan


class StepResult(BaseModel):
    """Everything an induction step produced, with its sanity reports."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    plan: StepPlan
    level: IterationLevel
    breakdown: StressBreakdown
    perturbation: Perturbation
    cutoffs: CutoffSystem
    flow_maps: FlowMapSet
    amplitudes: AmplitudeSet
    checks: Dict[str, float]

    def support_report(self) -> Dict[str, float]:
        report = self.level.support_report()
        report["w_outside_annulus"] = self.perturbation.annulus_outside
        return report


def perturbation_bound_ratio(
    perturbation: Perturbation,
    noise: NoiseContext,
    delta: float,
    gamma2: float,
    gamma_sup: float,
    C1: float,
) -> float:
    """max_t ||w(t)||_inf / (2 gamma_sup C1 e^{L^(1/4)/2} M0(t)^(1/2) delta^(1/2) / sqrt(gamma2))."""
    w = perturbation.w.physical()
    sup_w = np.sqrt(w[:, 0] ** 2 + w[:, 1] ** 2).max(axis=(-2, -1))
    L = noise.spec.L
    bound = 2.0 * gamma_sup * C1 * math.exp(0.5 * L**0.25) * noise.profile.sqrt_M0(perturbation.times)
    bound = bound * math.sqrt(delta / gamma2)
    return float((sup_w / bound).max())


def induction_step(
    level: IterationLevel,
    noise: NoiseContext,
    params: ParameterSet,
    plan: StepPlan,
    config: Optional[StepConfig] = None,
    C1: Optional[float] = None,
) -> StepResult:
    """Build level q+1 at the output times of ``plan``.

    Args:
        level: level q, sampled at least over ``plan.level_times``.
        noise: the path bundle every level of the run is built against.
        params: parameter tuple (toy mode for anything representable).
        plan: time layout from ``plan_step``.
        config: numerical knobs; defaults to ``StepConfig()``.
        C1: L^1 mass of the band-projector kernel, computed when omitted.

    Returns:
        StepResult holding the new level and every intermediate product.

    Raises:
        OutOfWindow: when the step would evaluate past T_L.
        GridBound: when 2 lambda_{q+1} does not fit on the step grid.
        ResidualCheckFailed: when the stress components do not close the equation.
    """
    config = config or StepConfig()
    start = time.time()
    gamma1, gamma2 = params.gamma1, params.gamma2
    if plan.horizon > noise.T_L:
        raise OutOfWindow(f"step needs times up to {plan.horizon:.6f}, past T_L={noise.T_L:.6f}")
    grid = Grid.create(plan.grid_size)
    if not 2.0 * plan.lam_next < grid.N / 2:
        raise GridBound(f"2 lambda_{plan.q + 1}={2 * plan.lam_next:g} does not fit below N/2={grid.N // 2}")

    process = noise.process(plan.ell)
    slices, com1 = mollify_level(
        level, noise, process, plan.slice_times, gamma1, gamma2, check_equation=config.check_mollified
    )
    driving, _ = mollify_level(level, noise, process, plan.velocity_times, gamma1, gamma2, with_stress=False)
    velocity = VelocityField.from_mollified(driving, gamma2)

    cutoffs = build_cutoffs(params, plan.q, noise.T_L, plan.dt)
    max_step = cutoffs.tau / 32.0
    flow_maps = solve_flow_maps(velocity, cutoffs, plan.slice_times, grid, max_step=max_step)
    anchor_times = np.array(sorted(flow_maps.anchors.values()))
    anchored, _ = mollify_level(level, noise, process, anchor_times, gamma1, gamma2)
    transported = transport_stress(anchored, flow_maps)

    families = {f.label: f for f in standard_families()}
    coefficients: Dict[int, GeometricCoefficients] = {
        label: gamma_coefficients(f) for label, f in families.items()
    }
    _, gamma_sup = joint_constants(coefficients[1], coefficients[2])
    amplitudes = build_amplitudes(
        transported,
        flow_maps,
        cutoffs,
        coefficients,
        noise.profile,
        slices.upsilon_l,
        plan.lam_next,
        plan.delta_next,
        gamma2,
        gamma_sup,
    )
    perturbation = build_perturbation(amplitudes, flow_maps, cutoffs, families, keep_packets=plan.output)

    next_level, breakdown = assemble_stresses(
        level,
        slices,
        com1,
        perturbation,
        amplitudes,
        flow_maps,
        transported,
        cutoffs,
        families,
        noise,
        gamma1,
        gamma2,
        plan.output,
        plan.ratio_scale,
        residual_tol=config.residual_tol,
        check=config.check_residual,
        deep_oscillation=config.deep_oscillation,
    )

    C1 = band_kernel_l1_mass() if C1 is None else C1
    t_mid = float(plan.output_times[0])
    anchor = cutoffs.anchor(cutoffs.active(t_mid)[0])
    checks = {
        "partition_residual": cutoffs.partition_residual(plan.slice_times),
        "mollified_equation_residual": slices.equation_residual or 0.0,
        "flow_gradient_ratio": flow_maps.gradient_report()["max_ratio"],
        "flow_transport_residual": transport_residual(
            velocity, t_mid, anchor, grid, max_step, delta=0.5 * plan.dt
        ) if t_mid != anchor else 0.0,
        "amplitude_bound_ratio": amplitudes.bound_ratio(),
        "perturbation_bound_ratio": perturbation_bound_ratio(
            perturbation, noise, plan.delta_next, gamma2, gamma_sup, C1
        ),
        "w_imaginary_gap": perturbation.imaginary_gap,
        "o1_tracefree_residual": breakdown.o1_tracefree_residual,
        "transport_form_gap": breakdown.transport_form_gap,
        "equation_residual": breakdown.residual,
        "pressure_gap": breakdown.pressure_gap,
    }
    logger.info(f"Induction step {plan.q}->{plan.q + 1} completed in {time.time() - start:.4f} seconds")
    return StepResult(
        plan=plan,
        level=next_level,
        breakdown=breakdown,
        perturbation=perturbation,
        cutoffs=cutoffs,
        flow_maps=flow_maps,
        amplitudes=amplitudes,
        checks=checks,
    )

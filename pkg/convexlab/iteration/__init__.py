"""The convex-integration machine: base level, mollification, cutoffs, flows, amplitudes, perturbation and stresses."""

from convexlab.iteration.amplitudes import AmplitudeSet, build_amplitudes
from convexlab.iteration.base import (
    BaseResidualStudy,
    IterationLevel,
    NoiseContext,
    ResidualReport,
    base_residual_study,
    build_noise,
    equation_residual,
    init_base,
    time_grid,
)
from convexlab.iteration.cutoffs import CutoffSystem, build_cutoffs
from convexlab.iteration.flow import (
    FlowMapSet,
    TransportedStress,
    VelocityField,
    characteristic_map,
    solve_flow_maps,
    transport_stress,
)
from convexlab.iteration.mollify import MollifiedState, mollify_level
from convexlab.iteration.oscillation import OscillationReport, OscillationSlice, decompose_oscillation
from convexlab.iteration.perturbation import Perturbation, build_perturbation
from convexlab.iteration.step import StepConfig, StepPlan, StepResult, induction_step, plan_step
from convexlab.iteration.stresses import StressBreakdown, assemble_stresses

__all__ = [
    "AmplitudeSet",
    "BaseResidualStudy",
    "CutoffSystem",
    "FlowMapSet",
    "IterationLevel",
    "MollifiedState",
    "NoiseContext",
    "OscillationReport",
    "OscillationSlice",
    "Perturbation",
    "ResidualReport",
    "StepConfig",
    "StepPlan",
    "StepResult",
    "StressBreakdown",
    "TransportedStress",
    "VelocityField",
    "assemble_stresses",
    "base_residual_study",
    "build_amplitudes",
    "build_cutoffs",
    "build_noise",
    "build_perturbation",
    "characteristic_map",
    "decompose_oscillation",
    "equation_residual",
    "induction_step",
    "init_base",
    "mollify_level",
    "plan_step",
    "solve_flow_maps",
    "time_grid",
    "transport_stress",
]

"""Assembly of the new Reynolds stress, its components and the new pressure."""

import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.exceptions import ResidualCheckFailed
from convexlab.geometry import DirectionFamily
from convexlab.iteration.amplitudes import AmplitudeSet
from convexlab.iteration.base import IterationLevel, NoiseContext, sup_vector
from convexlab.iteration.cutoffs import CutoffSystem
from convexlab.iteration.flow import FlowMapSet, TransportedStress
from convexlab.iteration.mollify import MollifiedState
from convexlab.iteration.oscillation import (
    OscillationReport,
    OscillationSlice,
    PacketGroup,
    decompose_oscillation,
)
from convexlab.iteration.perturbation import Perturbation, packet_samples, project_packet
from convexlab.spectral import (
    Grid,
    ScalarField,
    SymTensorField2,
    VectorField2,
    annulus_symbol,
    anti_divergence_coeffs,
    gradient_coeffs,
    lambda_power,
    leray_coeffs,
    nonlinear_coeffs,
    physical_gradient,
    realify,
    resample_coeffs,
    support_radius,
    tensor_divergence_coeffs,
    tensor_operator_norm,
    to_physical,
    to_spectral,
)

logger = logging.getLogger(__name__)

COMPONENTS = ("T", "N1", "N2", "L1", "L2", "O", "Com1", "Com2_1", "Com2_2", "Com2_3")
GROUPS = {
    "T": ("T",),
    "N": ("N1", "N2"),
    "L": ("L1", "L2"),
    "O": ("O",),
    "Com1": ("Com1",),
    "Com2": ("Com2_1", "Com2_2", "Com2_3"),
}


class StressBreakdown(BaseModel):
    """Components of R_{q+1} at the output times, each a trace-free tensor series."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    times: np.ndarray
    components: Dict[str, SymTensorField2]
    oscillation: Dict[str, SymTensorField2]
    o1_tracefree_residual: float
    transport_form_gap: float
    residual: float
    pressure_gap: float
    ratios: Dict[str, float]
    deep_gaps: Optional[Dict[str, float]] = None

    def group(self, name: str) -> SymTensorField2:
        parts = [self.components[c] for c in GROUPS[name]]
        return parts[0].replace(sum(p.coeffs for p in parts), trace_free=True)

    @property
    def R_T(self) -> SymTensorField2:
        return self.group("T")

    @property
    def R_N(self) -> SymTensorField2:
        return self.group("N")

    @property
    def R_L(self) -> SymTensorField2:
        return self.group("L")

    @property
    def R_O(self) -> SymTensorField2:
        return self.group("O")

    @property
    def R_Com1(self) -> SymTensorField2:
        return self.group("Com1")

    @property
    def R_Com2(self) -> SymTensorField2:
        return self.group("Com2")

    def total(self) -> SymTensorField2:
        first = self.components[COMPONENTS[0]]
        return first.replace(sum(self.components[c].coeffs for c in COMPONENTS), trace_free=True)

    def norm_table(self) -> Dict[str, float]:
        """Sup over time and space of every component and group."""
        table = {name: _sup_tensor(field) for name, field in self.components.items()}
        table.update({f"R_{name}": _sup_tensor(self.group(name)) for name in GROUPS})
        table["R_total"] = _sup_tensor(self.total())
        return table


def _sup_tensor(field: SymTensorField2) -> float:
    return float(tensor_operator_norm(field.physical()).max())


def _advect(v_phys: np.ndarray, coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Coefficients of (v . grad) u for (possibly complex) vector coefficients u."""
    grads = to_physical(gradient_coeffs(coeffs, grid), grid, real=False)  # [i, m] = d_m u_i
    return to_spectral(v_phys[0] * grads[:, 0] + v_phys[1] * grads[:, 1], grid)


def _transpose_gradient(u_coeffs: np.ndarray, w_coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Coefficients of (grad u)^T w, i.e. sum_m d_i u_m w_m."""
    grads = to_physical(gradient_coeffs(u_coeffs, grid), grid)  # [m, i] = d_i u_m
    w = to_physical(w_coeffs, grid)
    return to_spectral(grads[0] * w[0] + grads[1] * w[1], grid)


def _transport_density(
    n: int,
    v_phys: np.ndarray,
    upsilon_ratio: float,
    amplitudes: AmplitudeSet,
    flow_maps: FlowMapSet,
    perturbation: Perturbation,
    cutoffs: CutoffSystem,
    families: Dict[int, DirectionFamily],
) -> np.ndarray:
    """sum_{j,k} [V.grad, P_k] w~ + P_k(chi_j' a_bar b) + P_k(chi_j (d_t Upsilon_l^(-1/2) / Upsilon_l^(-1/2)) a_bar b)."""
    grid, lam = flow_maps.grid, amplitudes.lam
    t = float(flow_maps.times[n])
    total = np.zeros((2, grid.N, grid.N), dtype=complex)
    for j in flow_maps.active(n):
        chi = perturbation.chi[(n, j)]
        chi_dot = float(cutoffs.chi_dot(j, t))
        family = families[cutoffs.family_label(j)]
        phi = flow_maps.phi(n, j)
        for i, k in enumerate(family.directions):
            packet = perturbation.packets[(n, j, i)]
            samples = chi * packet_samples(amplitudes.a_bar[(n, j)], family, i, phi, lam)
            grads = physical_gradient(samples, grid)
            inner = project_packet(v_phys[0] * grads[:, 0] + v_phys[1] * grads[:, 1], grid, k, lam)
            commutator = _advect(v_phys, chi * packet, grid) - inner
            total += commutator + (chi_dot + chi * upsilon_ratio) * packet
    return realify(total)


def assemble_stresses(
    level: IterationLevel,
    mollified: MollifiedState,
    com1: SymTensorField2,
    perturbation: Perturbation,
    amplitudes: AmplitudeSet,
    flow_maps: FlowMapSet,
    transported: TransportedStress,
    cutoffs: CutoffSystem,
    families: Dict[int, DirectionFamily],
    noise: NoiseContext,
    gamma1: float,
    gamma2: float,
    output: Sequence[int],
    ratio_scale: float,
    residual_tol: float = 1e-3,
    check: bool = True,
    deep_oscillation: bool = False,
) -> Tuple[IterationLevel, StressBreakdown]:
    """Form R_{q+1} = R_T + R_N + R_L + R_O + R_Com1 + R_Com2 and p_{q+1} at the output slices.

    All slice-indexed inputs share the time axis of ``perturbation``; every
    output slice needs both neighbours for the centered time derivative.
    ``ratio_scale`` is lambda_{q+2}^(2-gamma2) delta_{q+2}, so component
    ratios are ||X|| / (M0(t) ratio_scale).
    """
    start_time = time.time()
    grid, lam = perturbation.w.grid, perturbation.lam
    src = mollified.grid
    times = perturbation.times
    dt = float(times[1] - times[0])
    upsilon = noise.upsilon(times[list(output)])
    annulus = annulus_symbol(grid, lam)

    def B(density):
        return anti_divergence_coeffs(density, grid)

    def y_l(n):
        return resample_coeffs(mollified.y.coeffs[n], src, grid)

    parts: Dict[str, List[np.ndarray]] = {name: [] for name in COMPONENTS}
    osc_parts: Dict[str, List[np.ndarray]] = {"O_approx": [], "O_low": [], "O_high": []}
    y_next, p_next = [], []
    residuals, pressure_gaps, transport_gaps = [], [], []
    o1_worst, deep = 0.0, {"pair": 0.0, "low": 0.0}
    term_norms: Dict[str, float] = {}

    for m, n in enumerate(output):
        t = float(times[n])
        ups, ups_l = float(upsilon[m]), float(mollified.upsilon_l[n])
        ratio = -0.5 * float(mollified.upsilon_l_dot[n]) / ups_l
        yl = y_l(n)
        Rl = resample_coeffs(mollified.R.coeffs[n], src, grid)
        pl = resample_coeffs(mollified.p.coeffs[n], src, grid)
        w = perturbation.w.coeffs[n]
        lyl = lambda_power(yl, grid, 2.0 - gamma2)
        v_phys = to_physical(ups_l * lyl, grid)

        density_T = _transport_density(n, v_phys, ratio, amplitudes, flow_maps, perturbation, cutoffs, families)
        R_T = B(annulus * density_T)
        w_dot = (perturbation.w.coeffs[n + 1] - perturbation.w.coeffs[n - 1]) / (2.0 * dt)
        R_T_direct = B(w_dot + _advect(v_phys, w, grid))
        scale_T = float(tensor_operator_norm(to_physical(R_T, grid)).max())
        gap_T = float(tensor_operator_norm(to_physical(R_T - R_T_direct, grid)).max())
        transport_gaps.append(gap_T / scale_T if scale_T > 0 else gap_T)

        R_O = B(tensor_divergence_coeffs(Rl, grid) + ups_l * nonlinear_coeffs(w, w, grid, gamma2))
        cross = nonlinear_coeffs(w, yl, grid, gamma2) + nonlinear_coeffs(yl, w, grid, gamma2)
        gap = ups - ups_l
        comps = {
            "T": R_T,
            "N1": ups_l * B(annulus * _transpose_gradient(lyl, w, grid)),
            "N2": ups_l * B(annulus * nonlinear_coeffs(w, yl, grid, gamma2)),
            "L1": B(lambda_power(w, grid, gamma1)),
            "L2": 0.5 * B(w),
            "O": R_O,
            "Com1": resample_coeffs(com1.coeffs[n], src, grid),
            "Com2_1": -(gap / ups_l) * Rl,
            "Com2_2": (gap / ups_l) * R_O,
            "Com2_3": gap * B(annulus * cross + nonlinear_coeffs(yl, yl, grid, gamma2)),
        }
        for name in COMPONENTS:
            parts[name].append(comps[name])
        R_next = sum(comps[name] for name in COMPONENTS)

        y = yl + w
        p = pl + ups_l * to_spectral((to_physical(w, grid) * to_physical(lyl, grid)).sum(axis=0), grid)
        y_next.append(y)
        p_next.append(p)

        if check:
            y_minus = y_l(n - 1) + perturbation.w.coeffs[n - 1]
            y_plus = y_l(n + 1) + perturbation.w.coeffs[n + 1]
            terms = {
                "time_derivative": (y_plus - y_minus) / (2.0 * dt),
                "half": 0.5 * y,
                "nonlinear": ups * nonlinear_coeffs(y, y, grid, gamma2),
                "dissipation": lambda_power(y, grid, gamma1),
                "div_R": tensor_divergence_coeffs(R_next, grid),
            }
            lhs = terms["time_derivative"] + terms["half"] + terms["nonlinear"] + terms["dissipation"]
            density = leray_coeffs(terms["div_R"] - lhs, grid)
            for name, c in terms.items():
                term_norms[name] = max(term_norms.get(name, 0.0), float(sup_vector(c, grid)))
            residuals.append(float(sup_vector(density, grid)))

            grad_rec = terms["div_R"] - terms["nonlinear"] - leray_coeffs(terms["div_R"] - terms["nonlinear"], grid)
            grad_exp = gradient_coeffs(p, grid)
            rec_scale = float(sup_vector(grad_rec, grid))
            gap_p = float(sup_vector(grad_rec - grad_exp, grid))
            pressure_gaps.append(gap_p / rec_scale if rec_scale > 0 else gap_p)

        piece = OscillationSlice(
            grid=grid,
            lam=lam,
            gamma2=gamma2,
            upsilon_l=ups_l,
            R_l=Rl,
            R_O=R_O,
            groups=[
                PacketGroup(
                    j=j,
                    chi=perturbation.chi[(n, j)],
                    family=families[cutoffs.family_label(j)],
                    R_qj=transported.at(n, j),
                    a=amplitudes.a[(n, j)],
                    packets={
                        i: perturbation.packets[(n, j, i)]
                        for i in range(len(families[cutoffs.family_label(j)].heights))
                    },
                )
                for j in flow_maps.active(n)
            ],
        )
        report: OscillationReport = decompose_oscillation(piece, deep=deep_oscillation)
        osc_parts["O_approx"].append(report.approx)
        osc_parts["O_low"].append(report.low)
        osc_parts["O_high"].append(report.high)
        o1_worst = max(o1_worst, report.o1_tracefree_residual)
        if deep_oscillation:
            deep["pair"] = max(deep["pair"], report.deep_pair_gap)
            deep["low"] = max(deep["low"], report.deep_low_gap)
        logger.debug(f"Assembled slice t={t:.6f}")

    out_times = times[list(output)]

    def series(stack, **flags):
        return SymTensorField2(grid=grid, coeffs=np.stack(stack), time_tag=out_times, **flags)

    components = {name: series(parts[name], trace_free=True) for name in COMPONENTS}
    oscillation = {name: series(stack) for name, stack in osc_parts.items()}
    total = sum(components[name].coeffs for name in COMPONENTS)

    residual = 0.0
    if check:
        scale = max(term_norms.values())
        residual = max(residuals) / scale if scale > 0 else max(residuals)
        if residual > residual_tol:
            component_norms = {name: _sup_tensor(field) for name, field in components.items()}
            raise ResidualCheckFailed(
                f"level {level.q + 1} residual {residual:.3e} exceeds {residual_tol:.1e}",
                component_norms=component_norms,
            )

    envelope = noise.profile.M0(out_times)
    ratios = {}
    for name in GROUPS:
        field = components[GROUPS[name][0]].replace(
            sum(components[c].coeffs for c in GROUPS[name]), trace_free=True
        )
        per_time = tensor_operator_norm(field.physical()).max(axis=(-2, -1))
        ratios[name] = float((per_time / (envelope * ratio_scale)).max())

    breakdown = StressBreakdown(
        times=out_times,
        components=components,
        oscillation=oscillation,
        o1_tracefree_residual=o1_worst,
        transport_form_gap=max(transport_gaps),
        residual=residual,
        pressure_gap=max(pressure_gaps) if pressure_gaps else 0.0,
        ratios=ratios,
        deep_gaps=deep if deep_oscillation else None,
    )

    y_coeffs = np.stack(y_next)
    next_level = IterationLevel(
        q=level.q + 1,
        lam=lam,
        time_grid=out_times,
        y=VectorField2(grid=grid, coeffs=y_coeffs, time_tag=out_times, divergence_free=True),
        R=SymTensorField2(grid=grid, coeffs=total, time_tag=out_times, trace_free=True),
        p=ScalarField(grid=grid, coeffs=np.stack(p_next), time_tag=out_times),
        freq_radius_y=support_radius(y_coeffs, grid),
        freq_radius_R=support_radius(total, grid),
    )
    logger.info(
        f"Assembled level {level.q + 1} stresses at {len(output)} times in {time.time() - start_time:.4f} seconds; "
        f"residual {residual:.3e}, O1 trace-free {o1_worst:.3e}, transport gap {breakdown.transport_form_gap:.3e}"
    )
    return next_level, breakdown
"""Backward characteristics Phi_j and the transported stresses R_{q,j}.

Phi_j(t, x) is the position at the anchor time tau j of the characteristic
of V = Upsilon_l Lambda^(2 - gamma2) y_l passing through x at time t, so
D_t Phi_j = 0 and Phi_j(tau j, x) = x. V is the trigonometric interpolant
of its Fourier coefficients in space and linear in time between samples.
"""

import logging
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.exceptions import CFLViolation, InsufficientHistory
from convexlab.iteration.cutoffs import CutoffSystem
from convexlab.iteration.mollify import MollifiedState
from convexlab.spectral import TWO_PI, Grid, physical_gradient, tensor_operator_norm

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.5
POINT_CHUNK = 4096


def evaluate_at_points(
    coeffs: np.ndarray,
    grid: Grid,
    x1: np.ndarray,
    x2: np.ndarray,
    rel_tol: float = 1e-15,
) -> np.ndarray:
    """Real trigonometric interpolant of ``coeffs`` at scattered points.

    Leading (component) axes of ``coeffs`` are kept; only modes above
    ``rel_tol`` times the largest coefficient are summed.
    """
    lead = coeffs.shape[:-2]
    flat = coeffs.reshape(-1, grid.N, grid.N)
    mags = np.abs(flat).max(axis=0)
    peak = mags.max(initial=0.0)
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    if peak == 0.0:
        return np.zeros(lead + x1.shape)
    active = mags > rel_tol * peak
    k1, k2 = grid.k1[active], grid.k2[active]
    c = flat[:, active]
    p1, p2 = x1.ravel(), x2.ravel()
    out = np.empty((flat.shape[0], p1.size))
    for start in range(0, p1.size, POINT_CHUNK):
        stop = start + POINT_CHUNK
        phase = np.exp(1j * (np.outer(p1[start:stop], k1) + np.outer(p2[start:stop], k2)))
        out[:, start:stop] = (c @ phase.T).real / TWO_PI**2
    return out.reshape(lead + x1.shape)


class VelocityField(BaseModel):
    """Velocity coefficients sampled on a uniform time grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    times: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def from_mollified(cls, state: MollifiedState, gamma2: float) -> "VelocityField":
        return cls(grid=state.grid, times=state.times, coeffs=state.velocity_coeffs(gamma2))

    @classmethod
    def constant(cls, grid: Grid, times: np.ndarray, c: Tuple[float, float]) -> "VelocityField":
        coeffs = np.zeros((times.size, 2, grid.N, grid.N), dtype=complex)
        coeffs[:, 0, 0, 0] = c[0] * TWO_PI**2
        coeffs[:, 1, 0, 0] = c[1] * TWO_PI**2
        return cls(grid=grid, times=np.asarray(times, dtype=float), coeffs=coeffs)

    def coeffs_at(self, s: float) -> np.ndarray:
        t0, h = self.times[0], self.times[1] - self.times[0]
        if s < t0 - 1e-9 * h or s > self.times[-1] + 1e-9 * h:
            raise InsufficientHistory(
                f"velocity needed at t={s:.6f}, sampled on [{t0:.6f}, {self.times[-1]:.6f}]"
            )
        i = min(max(int(np.floor((s - t0) / h)), 0), self.times.size - 2)
        theta = (s - self.times[i]) / h
        return (1.0 - theta) * self.coeffs[i] + theta * self.coeffs[i + 1]

    def evaluate(self, s: float, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        return evaluate_at_points(self.coeffs_at(s), self.grid, x1, x2)

    def gradient_bound(self) -> float:
        """sup_t sum_k |k| |V_hat(k)| / (2pi)^2, an upper bound for ||grad V||_inf."""
        mags = np.sqrt(np.abs(self.coeffs[:, 0]) ** 2 + np.abs(self.coeffs[:, 1]) ** 2)
        return float((mags * self.grid.kmag).sum(axis=(-2, -1)).max(initial=0.0) / TWO_PI**2)


def characteristic_map(
    velocity: VelocityField,
    t: float,
    anchor: float,
    grid: Grid,
    max_step: float,
    gradient_bound: Optional[float] = None,
) -> np.ndarray:
    """Phi(t, x) on the mesh of ``grid``: RK4 from s = t to s = anchor, shape (2, N, N)."""
    x1, x2 = grid.mesh()
    span = anchor - t
    steps = int(np.ceil(abs(span) / max_step - 1e-12))
    if steps == 0:
        return np.stack([x1, x2])
    h = span / steps
    bound = velocity.gradient_bound() if gradient_bound is None else gradient_bound
    if abs(h) * bound > CFL_LIMIT:
        raise CFLViolation(f"characteristic step {abs(h):.3e} times |grad V| {bound:.3e} exceeds {CFL_LIMIT}")
    X = np.stack([x1, x2])
    s = t
    for _ in range(steps):
        k1 = velocity.evaluate(s, X[0], X[1])
        mid = X + 0.5 * h * k1
        k2 = velocity.evaluate(s + 0.5 * h, mid[0], mid[1])
        mid = X + 0.5 * h * k2
        k3 = velocity.evaluate(s + 0.5 * h, mid[0], mid[1])
        end = X + h * k3
        k4 = velocity.evaluate(s + h, end[0], end[1])
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s += h
    return X


class FlowMapSet(BaseModel):
    """Phi_j at each slice time for every cutoff active there."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    times: np.ndarray
    anchors: Dict[int, float]
    maps: Dict[Tuple[int, int], np.ndarray]
    velocity_gradient_bound: float

    def active(self, n: int) -> List[int]:
        return sorted(j for (m, j) in self.maps if m == n)

    def phi(self, n: int, j: int) -> np.ndarray:
        return self.maps[(n, j)]

    def gradient_report(self) -> Dict[str, float]:
        """Worst ratio of sup_x |grad Phi_j - Id|_op to e^{|t - tau j| ||grad V||} - 1."""
        x1, x2 = self.grid.mesh()
        mesh = np.stack([x1, x2])
        worst, deviation = 0.0, 0.0
        for (n, j), phi in self.maps.items():
            lag = abs(self.times[n] - self.anchors[j])
            grad = physical_gradient(phi - mesh, self.grid)  # [i, m] = d_m (Phi_i - x_i)
            pointwise = np.moveaxis(grad, (0, 1), (-2, -1))
            dev = float(np.linalg.norm(pointwise, ord=2, axis=(-2, -1)).max())
            deviation = max(deviation, dev)
            bound = np.expm1(lag * self.velocity_gradient_bound)
            if bound > 0:
                worst = max(worst, dev / bound)
            elif dev > 0:
                worst = np.inf
        return {"max_deviation": deviation, "max_ratio": float(worst)}


def solve_flow_maps(
    velocity: VelocityField,
    cutoffs: CutoffSystem,
    times: np.ndarray,
    grid: Grid,
    max_step: Optional[float] = None,
) -> FlowMapSet:
    """Phi_j(t, .) for every slice time t and every j with chi_j(t) != 0."""
    start_time = time.time()
    max_step = max_step or cutoffs.tau / 32.0
    bound = velocity.gradient_bound()
    maps, anchors = {}, {}
    for n, t in enumerate(np.asarray(times, dtype=float)):
        for j in cutoffs.active(float(t)):
            anchors[j] = cutoffs.anchor(j)
            maps[(n, j)] = characteristic_map(velocity, float(t), anchors[j], grid, max_step, bound)
    logger.info(
        f"Solved {len(maps)} flow maps on N={grid.N} in {time.time() - start_time:.4f} seconds "
        f"(|grad V| <= {bound:.4e})"
    )
    return FlowMapSet(
        grid=grid,
        times=np.asarray(times, dtype=float),
        anchors=anchors,
        maps=maps,
        velocity_gradient_bound=bound,
    )


def transport_residual(
    velocity: VelocityField,
    t: float,
    anchor: float,
    grid: Grid,
    max_step: float,
    delta: float,
) -> float:
    """Relative sup of d_t Phi + (V . grad) Phi, with d_t by a centered difference of width ``delta``."""
    x1, x2 = grid.mesh()
    mesh = np.stack([x1, x2])
    plus = characteristic_map(velocity, t + delta, anchor, grid, max_step)
    minus = characteristic_map(velocity, t - delta, anchor, grid, max_step)
    centre = characteristic_map(velocity, t, anchor, grid, max_step)
    v = velocity.evaluate(t, x1, x2)
    grad = physical_gradient(centre - mesh, grid) + np.eye(2)[:, :, None, None]
    advect = v[0] * grad[:, 0] + v[1] * grad[:, 1]
    density = (plus - minus) / (2.0 * delta) + advect
    scale = max(float(np.abs(advect).max()), 1e-300)
    return float(np.abs(density).max()) / scale


class TransportedStress(BaseModel):
    """R_{q,j}(t, x) = R_l(tau j, Phi_j(t, x)) as physical (3, N, N) samples."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: Dict[Tuple[int, int], np.ndarray]

    def at(self, n: int, j: int) -> np.ndarray:
        return self.samples[(n, j)]

    def sup_norm(self) -> float:
        return max((float(tensor_operator_norm(s).max()) for s in self.samples.values()), default=0.0)


def transport_stress(anchor_state: MollifiedState, flow_maps: FlowMapSet) -> TransportedStress:
    """Compose R_l at each anchor with the flow maps of that anchor."""
    start_time = time.time()
    index = {j: int(np.argmin(np.abs(anchor_state.times - tau_j))) for j, tau_j in flow_maps.anchors.items()}
    for j, tau_j in flow_maps.anchors.items():
        if abs(anchor_state.times[index[j]] - tau_j) > 1e-12 * max(1.0, abs(tau_j)):
            raise ValueError(f"mollified stress is not sampled at the anchor of j={j}")
    samples = {}
    for (n, j), phi in flow_maps.maps.items():
        samples[(n, j)] = evaluate_at_points(
            anchor_state.R.coeffs[index[j]], anchor_state.grid, phi[0], phi[1]
        )
    logger.info(f"Transported {len(samples)} stresses in {time.time() - start_time:.4f} seconds")
    return TransportedStress(samples=samples)

"""Space-time mollification of a level and the commutator stress R_Com1."""

import logging
import time
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.iteration.base import IterationLevel, NoiseContext, sup_vector
from convexlab.spectral import (
    Grid,
    ScalarField,
    SymTensorField2,
    VectorField2,
    anti_divergence_coeffs,
    lambda_power,
    leray_coeffs,
    mollify_space_coeffs,
    nonlinear_coeffs,
    temporal_weights,
    tensor_divergence_coeffs,
)
from convexlab.stochastic import ExponentialProcess

logger = logging.getLogger(__name__)


class MollifiedState(BaseModel):
    """y_l, R_l, p_l and Upsilon_l at the requested times, on the level grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q: int
    ell: float
    times: np.ndarray
    y: VectorField2
    R: Optional[SymTensorField2] = None
    p: Optional[ScalarField] = None
    upsilon_l: np.ndarray
    upsilon_l_dot: np.ndarray
    equation_residual: Optional[float] = None

    @property
    def grid(self) -> Grid:
        return self.y.grid

    def velocity_coeffs(self, gamma2: float) -> np.ndarray:
        """Upsilon_l Lambda^(2 - gamma2) y_l, one slice per time."""
        return self.upsilon_l[:, None, None, None] * lambda_power(self.y.coeffs, self.grid, 2.0 - gamma2)


def _mollify(coeffs: np.ndarray, weights: np.ndarray, grid: Grid, ell: float) -> np.ndarray:
    smoothed = np.tensordot(weights, coeffs, axes=(1, 0))
    return mollify_space_coeffs(smoothed, grid, ell, band_limited=True)


def mollify_level(
    level: IterationLevel,
    noise: NoiseContext,
    process: ExponentialProcess,
    times: np.ndarray,
    gamma1: float,
    gamma2: float,
    with_stress: bool = True,
    check_equation: bool = False,
) -> Tuple[MollifiedState, Optional[SymTensorField2]]:
    """Mollify ``level`` at scale ``process.ell`` and evaluate at ``times``.

    The temporal kernel is one-sided, so values at t only use level samples
    in [t - 2 ell, t - ell]. Returns the mollified state and, when
    ``with_stress`` is set, R_Com1 = B[Upsilon_l N(y_l, y_l) - (Upsilon N(y_q, y_q))_l].
    """
    start_time = time.time()
    ell = process.ell
    grid = level.grid
    times = np.atleast_1d(np.asarray(times, dtype=float))
    weights = temporal_weights(level.time_grid, ell, times)
    upsilon_l = process.mollified_at(times)
    upsilon_l_dot = process.mollified_derivative_at(times)
    y_l = _mollify(level.y.coeffs, weights, grid, ell)

    R_l = p_l = com1 = None
    residual = None
    if with_stress:
        R_l = _mollify(level.R.coeffs, weights, grid, ell)
        p_l = _mollify(level.p.coeffs, weights, grid, ell)
        used = np.flatnonzero(weights.any(axis=0))
        upsilon_q = noise.upsilon(level.time_grid[used])
        y_q = level.y.coeffs[used]
        flux_q = upsilon_q[:, None, None, None] * nonlinear_coeffs(y_q, y_q, grid, gamma2)
        flux_q_l = _mollify(flux_q, weights[:, used], grid, ell)
        flux_l = upsilon_l[:, None, None, None] * nonlinear_coeffs(y_l, y_l, grid, gamma2)
        com1 = SymTensorField2(
            grid=grid,
            coeffs=anti_divergence_coeffs(flux_l - flux_q_l, grid),
            time_tag=times,
            trace_free=True,
        )
        if check_equation:
            residual = _mollified_equation_residual(
                level, process, times, y_l, R_l, com1.coeffs, upsilon_l, gamma1, gamma2
            )

    state = MollifiedState(
        q=level.q,
        ell=ell,
        times=times,
        y=VectorField2(grid=grid, coeffs=y_l, time_tag=times, divergence_free=True),
        R=None if R_l is None else SymTensorField2(grid=grid, coeffs=R_l, time_tag=times, trace_free=True),
        p=None if p_l is None else ScalarField(grid=grid, coeffs=p_l, time_tag=times),
        upsilon_l=upsilon_l,
        upsilon_l_dot=upsilon_l_dot,
        equation_residual=residual,
    )
    logger.info(
        f"Mollified level {level.q} at {times.size} times (ell={ell:.4e}) in {time.time() - start_time:.4f} seconds"
    )
    if residual is not None:
        logger.info(f"Mollified equation residual {residual:.3e}")
    return state, com1


def _mollified_equation_residual(
    level: IterationLevel,
    process: ExponentialProcess,
    times: np.ndarray,
    y_l: np.ndarray,
    R_l: np.ndarray,
    com1: np.ndarray,
    upsilon_l: np.ndarray,
    gamma1: float,
    gamma2: float,
) -> float:
    """Relative sup of P[d_t y_l + y_l/2 + Upsilon_l N(y_l, y_l) + Lambda^gamma1 y_l - div(R_l + R_Com1)]."""
    grid = level.grid
    h = process.ell / 64.0
    shifted = temporal_weights(level.time_grid, process.ell, np.concatenate([times + h, times - h]))
    y_shift = _mollify(level.y.coeffs, shifted, grid, process.ell)
    y_dot = (y_shift[: times.size] - y_shift[times.size:]) / (2.0 * h)
    terms = [
        y_dot,
        0.5 * y_l,
        upsilon_l[:, None, None, None] * nonlinear_coeffs(y_l, y_l, grid, gamma2),
        lambda_power(y_l, grid, gamma1),
        -tensor_divergence_coeffs(R_l + com1, grid),
    ]
    density = leray_coeffs(sum(terms), grid)
    scale = max(float(sup_vector(term, grid).max()) for term in terms)
    return float(sup_vector(density, grid).max()) / scale if scale > 0 else 0.0

"""Iteration levels, the noise bundle they are built against, and the base step."""

import logging
import time
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.exceptions import GridBound, OutOfWindow
from convexlab.params.ledger import ParameterSet
from convexlab.spectral import (
    TWO_PI,
    Grid,
    ScalarField,
    SymTensorField2,
    VectorField2,
    anti_divergence_coeffs,
    gradient_coeffs,
    lambda_power,
    leray_coeffs,
    nonlinear_coeffs,
    outside_fraction,
    support_radius,
    tensor_divergence_coeffs,
    to_physical,
    to_spectral,
)
from convexlab.stochastic import (
    PATH_START,
    ExponentialProcess,
    NoiseProfile,
    StoppingTimeResult,
    StoppingTimeSpec,
    WienerPath,
    exponential_process,
    m0_profile,
    stopping_time,
)

logger = logging.getLogger(__name__)


class NoiseContext(BaseModel):
    """A sampled path together with its stopping time and growth profile."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    path: WienerPath
    spec: StoppingTimeSpec
    stopping: StoppingTimeResult
    profile: NoiseProfile

    @property
    def T_L(self) -> float:
        return self.stopping.T_L

    def indices(self, times) -> np.ndarray:
        """Path indices of grid-aligned times."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        dt = self.path.dt
        idx = np.rint((times - PATH_START) / dt).astype(int)
        if np.any(np.abs(PATH_START + idx * dt - times) > 1e-6 * dt):
            raise ValueError("times must lie on the path grid")
        if np.any(times > self.T_L + 1e-9 * dt):
            raise OutOfWindow(f"evaluation at t={times.max():.6f} is past T_L={self.T_L:.6f}")
        return idx

    def upsilon(self, times) -> np.ndarray:
        """e^B at path-grid times, looked up by index."""
        return np.exp(self.path.values[self.indices(times)])

    def process(self, ell: float) -> ExponentialProcess:
        return exponential_process(self.path, ell, self.stopping, self.spec)


def build_noise(path: WienerPath, params: ParameterSet) -> NoiseContext:
    spec = StoppingTimeSpec(L=params.L, delta=params.delta_holder)
    stopping = stopping_time(path, spec)
    profile = m0_profile(params.L, params.T)
    logger.info(f"Noise seed={path.seed}: T_L={stopping.T_L:.6f} ({stopping.fired})")
    return NoiseContext(path=path, spec=spec, stopping=stopping, profile=profile)


def time_grid(start: float, stop: float, dt: float) -> np.ndarray:
    """Nodes PATH_START + n dt lying in [start, stop]."""
    first = int(np.ceil((start - PATH_START) / dt - 1e-9))
    last = int(np.floor((stop - PATH_START) / dt + 1e-9))
    return PATH_START + dt * np.arange(first, last + 1)


class IterationLevel(BaseModel):
    """Level q of the construction sampled on a uniform time grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q: int
    lam: float
    time_grid: np.ndarray
    y: VectorField2
    R: SymTensorField2
    p: ScalarField
    freq_radius_y: float
    freq_radius_R: float

    @property
    def grid(self) -> Grid:
        return self.y.grid

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0]) if self.time_grid.size > 1 else 0.0

    def support_report(self) -> Dict[str, float]:
        """Coefficient mass outside B(0, 2 lambda) for y and B(0, 4 lambda) for R."""
        kmag = self.grid.kmag
        return {
            "y_outside": outside_fraction(self.y.coeffs, kmag <= 2.0 * self.lam),
            "R_outside": outside_fraction(self.R.coeffs, kmag <= 4.0 * self.lam),
            "freq_radius_y": self.freq_radius_y,
            "freq_radius_R": self.freq_radius_R,
        }

    def window(self, start: float, stop: float) -> "IterationLevel":
        keep = (self.time_grid >= start - 1e-12) & (self.time_grid <= stop + 1e-12)
        times = self.time_grid[keep]
        return self.model_copy(update={
            "time_grid": times,
            "y": self.y.replace(self.y.coeffs[keep], time_tag=times),
            "R": self.R.replace(self.R.coeffs[keep], time_tag=times),
            "p": self.p.replace(self.p.coeffs[keep], time_tag=times),
        })


def _shear_coeffs(grid: Grid, kind: str) -> np.ndarray:
    """Exact coefficients of sin x2 or cos x2."""
    c = np.zeros((grid.N, grid.N), dtype=complex)
    half = 2.0 * np.pi**2
    if kind == "sin":
        c[0, 1], c[0, -1] = -1j * half, 1j * half
    else:
        c[0, 1] = c[0, -1] = half
    return c


def base_velocity_coeffs(profile: NoiseProfile, grid: Grid, times: np.ndarray) -> np.ndarray:
    """Coefficients of y0 = (m_L M0(t)^(1/2) / 2pi) (sin x2, 0) at ``times``."""
    amp = profile.mL * profile.sqrt_M0(np.asarray(times, dtype=float)) / TWO_PI
    sin_hat = _shear_coeffs(grid, "sin")
    shear = np.stack([sin_hat, np.zeros_like(sin_hat)])
    return amp[:, None, None, None] * shear


def init_base(
    params: ParameterSet,
    noise: NoiseContext,
    time_grid: np.ndarray,
    grid: Optional[Grid] = None,
) -> IterationLevel:
    """Level 0: a shear flow in x2 whose amplitude follows M0^(1/2).

    y0 = (m_L M0^(1/2) / 2pi) (sin x2, 0), R0 = B(d_t y0 + y0/2 + Lambda^gamma1 y0)
    and p0 = Upsilon m_L^2 M0 sin^2 x2 / (2 (2pi)^2). The shear makes the
    transport part of the nonlinearity vanish and its remainder a gradient.
    """
    start_time = time.time()
    lam0 = float(np.exp(params.log_lambda(0)))
    grid = grid or Grid.smallest_for(4.0 * lam0)
    if not 2.0 * lam0 < grid.N / 2:
        raise GridBound(f"2 lambda_0={2 * lam0:g} does not fit below N/2={grid.N // 2}")

    times = np.asarray(time_grid, dtype=float)
    profile = noise.profile
    mL = profile.mL
    amp = mL * profile.sqrt_M0(times) / TWO_PI
    amp_dot = mL * profile.sqrt_M0_prime(times) / TWO_PI
    sin_hat = _shear_coeffs(grid, "sin")
    zero = np.zeros_like(sin_hat)
    shear = np.stack([sin_hat, zero])

    y_coeffs = base_velocity_coeffs(profile, grid, times)
    forcing = (amp_dot + 0.5 * amp)[:, None, None, None] * shear + lambda_power(y_coeffs, grid, params.gamma1)
    R_coeffs = anti_divergence_coeffs(forcing, grid)

    upsilon = noise.upsilon(times)
    _, x2 = grid.mesh()
    sin_sq = np.sin(x2) ** 2
    pressure = (upsilon * mL**2 * profile.M0(times) / (2.0 * TWO_PI**2))[:, None, None] * sin_sq
    p_coeffs = to_spectral(pressure, grid)

    level = IterationLevel(
        q=0,
        lam=lam0,
        time_grid=times,
        y=VectorField2(grid=grid, coeffs=y_coeffs, time_tag=times, divergence_free=True),
        R=SymTensorField2(grid=grid, coeffs=R_coeffs, time_tag=times, trace_free=True),
        p=ScalarField(grid=grid, coeffs=p_coeffs, time_tag=times),
        freq_radius_y=support_radius(y_coeffs, grid),
        freq_radius_R=support_radius(R_coeffs, grid),
    )
    logger.info(
        f"Level 0 built on N={grid.N} over {times.size} times in {time.time() - start_time:.4f} seconds"
    )
    return level


class ResidualReport(BaseModel):
    """Sup-norm residual of the level equation, one value per time."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    times: np.ndarray
    residual: np.ndarray
    scale: float
    term_norms: Dict[str, float]
    pressure_free: bool

    @property
    def relative(self) -> float:
        return float(self.residual.max(initial=0.0) / self.scale) if self.scale > 0 else 0.0


def sup_vector(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    v = to_physical(coeffs, grid)
    return np.sqrt(v[..., 0, :, :] ** 2 + v[..., 1, :, :] ** 2).max(axis=(-2, -1))


def equation_terms(
    y_coeffs: np.ndarray,
    R_coeffs: np.ndarray,
    upsilon: np.ndarray,
    grid: Grid,
    gamma1: float,
    gamma2: float,
) -> Dict[str, np.ndarray]:
    """Coefficients of y/2, Upsilon N(y, y), Lambda^gamma1 y and div R."""
    shape = (-1,) + (1,) * 3
    return {
        "half": 0.5 * y_coeffs,
        "nonlinear": np.reshape(upsilon, shape) * nonlinear_coeffs(y_coeffs, y_coeffs, grid, gamma2),
        "dissipation": lambda_power(y_coeffs, grid, gamma1),
        "div_R": tensor_divergence_coeffs(R_coeffs, grid),
    }


def equation_residual(
    level: IterationLevel,
    upsilon: np.ndarray,
    gamma1: float,
    gamma2: float,
    pressure: bool = True,
    y_dot: Optional[np.ndarray] = None,
) -> ResidualReport:
    """Residual of d_t y + y/2 + Upsilon N(y, y) + grad p + Lambda^gamma1 y - div R.

    Time derivatives are centered differences (second-order one-sided at the
    ends) unless ``y_dot`` is given. With ``pressure=False`` the gradient part
    is projected out instead of using the stored p.
    """
    grid = level.grid
    y, R = level.y.coeffs, level.R.coeffs
    if y_dot is None:
        y_dot = np.gradient(y, level.time_grid, axis=0, edge_order=2)
    terms = equation_terms(y, R, upsilon, grid, gamma1, gamma2)
    terms["time_derivative"] = y_dot
    density = y_dot + terms["half"] + terms["nonlinear"] + terms["dissipation"] - terms["div_R"]
    if pressure:
        terms["grad_p"] = gradient_coeffs(level.p.coeffs, grid)
        density = density + terms["grad_p"]
    else:
        density = leray_coeffs(density, grid)
    norms = {name: float(sup_vector(c, grid).max()) for name, c in terms.items()}
    return ResidualReport(
        times=level.time_grid,
        residual=sup_vector(density, grid),
        scale=max(norms.values()),
        term_norms=norms,
        pressure_free=not pressure,
    )


def half_step_derivative(profile: NoiseProfile, grid: Grid, times: np.ndarray) -> np.ndarray:
    """d/dt y0 at ``times`` from differences on the time grid refined to half the step."""
    times = np.asarray(times, dtype=float)
    fine = np.linspace(times[0], times[-1], 2 * times.size - 1)
    y = base_velocity_coeffs(profile, grid, fine)
    return np.gradient(y, fine, axis=0, edge_order=2)[::2]


class BaseResidualStudy(BaseModel):
    """Level-0 residual at steps dt and dt/2, and with the O(dt^2) error extrapolated away."""

    model_config = ConfigDict(frozen=True)

    coarse: ResidualReport
    half_step: ResidualReport
    extrapolated: ResidualReport
    projected: ResidualReport

    @property
    def ratio(self) -> float:
        """Residual reduction under dt halving; close to 4 at second order."""
        if self.half_step.relative <= 0:
            return float("nan")
        return self.coarse.relative / self.half_step.relative


def base_residual_study(level: IterationLevel, noise: NoiseContext, gamma1: float, gamma2: float) -> BaseResidualStudy:
    """Residual of the base level with centred differences at dt and dt/2.

    The two derivatives are combined as (4 D_{dt/2} - D_dt) / 3, which removes
    the leading error term of both the centred and the one-sided end formulas.
    """
    if level.q != 0:
        raise ValueError("the residual study applies to the base level only")
    upsilon = noise.upsilon(level.time_grid)
    coarse_dot = np.gradient(level.y.coeffs, level.time_grid, axis=0, edge_order=2)
    fine_dot = half_step_derivative(noise.profile, level.grid, level.time_grid)
    extrapolated = (4.0 * fine_dot - coarse_dot) / 3.0
    return BaseResidualStudy(
        coarse=equation_residual(level, upsilon, gamma1, gamma2, y_dot=coarse_dot),
        half_step=equation_residual(level, upsilon, gamma1, gamma2, y_dot=fine_dot),
        extrapolated=equation_residual(level, upsilon, gamma1, gamma2, y_dot=extrapolated),
        projected=equation_residual(level, upsilon, gamma1, gamma2, pressure=False, y_dot=extrapolated),
    )

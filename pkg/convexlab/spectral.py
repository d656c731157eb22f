"""Exact Fourier-side operators on the 2-torus.

Coefficients follow f_hat(k) = integral of f(x) exp(-i k.x) over [0, 2pi)^2,
so the forward transform is ``fft2 * (2pi/N)^2`` and the inverse carries the
1/(2pi)^2 factor. Grid axis 0 is x1 and axis 1 is x2. Vector coefficients
are stored with a component axis of length 2 and symmetric tensors with an
axis of length 3 holding (t11, t12, t22); any further leading axes are time.

The Nyquist row and column are zero after every operation, so every
multiplier acts exactly on the represented frequencies.
"""

import logging
from functools import lru_cache
from typing import ClassVar, Literal, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.special import j0

from convexlab.exceptions import (
    GridBound,
    InsufficientHistory,
    NonMeanZeroNegativePower,
    NyquistOverflow,
    ScaleTooFine,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
TimeTag = Optional[Union[float, np.ndarray]]


# ---------------------------------------------------------------------------
# Smooth profiles shared by projectors, mollifiers and cutoffs
# ---------------------------------------------------------------------------

def _exp_ramp(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, and step(s) + step(1-s) = 1."""
    a = _exp_ramp(s)
    b = _exp_ramp(1.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def smooth_step_derivative(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    u = s[inside]
    f, g = np.exp(-1.0 / u), np.exp(-1.0 / (1.0 - u))
    df, dg = f / u**2, g / (1.0 - u) ** 2
    out[inside] = (df * g + f * dg) / (f + g) ** 2
    return out


def plateau_bump(r: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Radial bump equal to 1 on r <= inner and 0 on r >= outer."""
    return 1.0 - smooth_step((np.asarray(r, dtype=float) - inner) / (outer - inner))


def standard_bump(r: np.ndarray) -> np.ndarray:
    """exp(-1/(1 - r^2)) on |r| < 1, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _wavenumbers(N: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    k = np.fft.fftfreq(N, d=1.0 / N)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    kmag = np.sqrt(k1**2 + k2**2)
    keep = (np.abs(k1) != N // 2) & (np.abs(k2) != N // 2)
    for arr in (k1, k2, kmag, keep):
        arr.setflags(write=False)
    return k1, k2, kmag, keep


class Grid(BaseModel):
    """Uniform N x N grid on [0, 2pi)^2."""

    model_config = ConfigDict(frozen=True)

    N: int

    @field_validator("N")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 4 or value & (value - 1):
            raise ValueError(f"N must be a power of two (>= 4), got {value}")
        return value

    @classmethod
    def create(cls, N: int) -> "Grid":
        return cls(N=N)

    @classmethod
    def smallest_for(cls, radius: float, minimum: int = 8) -> "Grid":
        """Smallest power-of-two grid whose represented frequencies contain B(0, radius)."""
        N = minimum
        while not radius < N // 2:
            N *= 2
        return cls(N=N)

    @property
    def spacing(self) -> float:
        return TWO_PI / self.N

    @property
    def k1(self) -> np.ndarray:
        return _wavenumbers(self.N)[0]

    @property
    def k2(self) -> np.ndarray:
        return _wavenumbers(self.N)[1]

    @property
    def kmag(self) -> np.ndarray:
        return _wavenumbers(self.N)[2]

    @property
    def keep(self) -> np.ndarray:
        """Mask of non-Nyquist modes."""
        return _wavenumbers(self.N)[3]

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.N) * self.spacing
        return np.meshgrid(x, x, indexing="ij")


# ---------------------------------------------------------------------------
# Array-level transforms and multipliers
# ---------------------------------------------------------------------------

def to_spectral(samples: np.ndarray, grid: Grid) -> np.ndarray:
    coeffs = np.fft.fft2(samples, axes=(-2, -1)) * grid.spacing**2
    return coeffs * grid.keep


def to_physical(coeffs: np.ndarray, grid: Grid, real: bool = True) -> np.ndarray:
    samples = np.fft.ifft2(coeffs, axes=(-2, -1)) / grid.spacing**2
    return samples.real if real else samples


def conjugate_reflect(coeffs: np.ndarray) -> np.ndarray:
    """Array whose entry at k is conj(coeffs(-k))."""
    flipped = np.flip(coeffs, axis=(-2, -1))
    return np.conj(np.roll(flipped, 1, axis=(-2, -1)))


def realify(coeffs: np.ndarray) -> np.ndarray:
    """Project onto conjugate-symmetric coefficients (real fields)."""
    return 0.5 * (coeffs + conjugate_reflect(coeffs))


def lambda_symbol(grid: Grid, gamma: float) -> np.ndarray:
    kmag = grid.kmag
    symbol = np.ones_like(kmag)
    nonzero = kmag > 0
    symbol[nonzero] = kmag[nonzero] ** gamma
    return symbol * grid.keep


def lambda_power(coeffs: np.ndarray, grid: Grid, gamma: float) -> np.ndarray:
    """Apply Lambda^gamma = (-Delta)^(gamma/2) to scalar or componentwise data."""
    if gamma == 0.0:
        return coeffs * grid.keep
    return coeffs * lambda_symbol(grid, gamma)


def gradient_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient of scalar data; the new component axis sits before the spatial axes."""
    return np.stack([1j * grid.k1 * coeffs, 1j * grid.k2 * coeffs], axis=-3)


def divergence_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    return 1j * grid.k1 * coeffs[..., 0, :, :] + 1j * grid.k2 * coeffs[..., 1, :, :]


def perp_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """x^perp = (-x2, x1)."""
    return np.stack([-coeffs[..., 1, :, :], coeffs[..., 0, :, :]], axis=-3)


def perp_div_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """grad^perp . v = -d2 v1 + d1 v2."""
    return -1j * grid.k2 * coeffs[..., 0, :, :] + 1j * grid.k1 * coeffs[..., 1, :, :]


def leray_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    k1, k2, kmag = grid.k1, grid.k2, grid.kmag
    ksq = np.where(kmag > 0, kmag**2, 1.0)
    kdotv = (k1 * coeffs[..., 0, :, :] + k2 * coeffs[..., 1, :, :]) / ksq
    out = np.stack([coeffs[..., 0, :, :] - k1 * kdotv, coeffs[..., 1, :, :] - k2 * kdotv], axis=-3)
    return out * grid.keep


def tensor_divergence_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """(div R)_i = sum_j d_j R_ij for (t11, t12, t22) storage."""
    t11, t12, t22 = coeffs[..., 0, :, :], coeffs[..., 1, :, :], coeffs[..., 2, :, :]
    ik1, ik2 = 1j * grid.k1, 1j * grid.k2
    return np.stack([ik1 * t11 + ik2 * t12, ik1 * t12 + ik2 * t22], axis=-3)


def anti_divergence_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """(Bf)_ij = -d_j Lambda^-2 g_i - d_i Lambda^-2 g_j with g the Leray projection of f - mean."""
    g = leray_coeffs(coeffs, grid)
    kmag = grid.kmag
    inv = np.where(kmag > 0, 1.0 / np.where(kmag > 0, kmag, 1.0) ** 2, 0.0)
    g1, g2 = g[..., 0, :, :] * inv, g[..., 1, :, :] * inv
    k1, k2 = grid.k1, grid.k2
    # k.g = 0, so -2i k1 g1 = -i (k1 g1 - k2 g2); the second form is exactly trace-free
    t11 = -1j * (k1 * g1 - k2 * g2)
    t12 = -1j * (k2 * g1 + k1 * g2)
    return np.stack([t11, t12, -t11], axis=-3)


def trace_free_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Trace-free part of (t11, t12, t22) data."""
    half = 0.5 * (coeffs[..., 0, :, :] - coeffs[..., 2, :, :])
    return np.stack([half, coeffs[..., 1, :, :], -half], axis=-3)


def physical_gradient(samples: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral gradient of physical (possibly complex) samples, returned in physical space."""
    real = np.isrealobj(samples)
    coeffs = np.fft.fft2(samples, axes=(-2, -1)) * grid.spacing**2 * grid.keep
    return to_physical(gradient_coeffs(coeffs, grid), grid, real=real)


def support_radius(coeffs: np.ndarray, grid: Grid, rel_tol: float = 1e-13) -> float:
    """Largest |k| carrying a coefficient above rel_tol * max over all axes."""
    mags = np.abs(coeffs).reshape(-1, grid.N, grid.N).max(axis=0)
    peak = mags.max()
    if peak == 0.0:
        return 0.0
    active = mags > rel_tol * peak
    return float(grid.kmag[active].max())


def outside_fraction(coeffs: np.ndarray, mask: np.ndarray) -> float:
    """max |coeff| outside ``mask`` relative to the overall max (0 for the zero array)."""
    mags = np.abs(coeffs).reshape(-1, *mask.shape).max(axis=0)
    peak = mags.max()
    if peak == 0.0:
        return 0.0
    return float(mags[~mask].max(initial=0.0) / peak)


def resample_coeffs(coeffs: np.ndarray, source: Grid, target: Grid) -> np.ndarray:
    """Exact zero-padding (or lossless truncation) between grids."""
    if source.N == target.N:
        return coeffs
    if source.N < target.N:
        idx = (np.fft.fftfreq(source.N, d=1.0 / source.N).astype(int)) % target.N
        out = np.zeros(coeffs.shape[:-2] + (target.N, target.N), dtype=complex)
        out[..., idx[:, None], idx[None, :]] = coeffs
        return out * target.keep
    half = target.N // 2
    fits = (np.abs(source.k1) < half) & (np.abs(source.k2) < half)
    if outside_fraction(coeffs, fits) > 1e-13:
        raise GridBound(f"coefficients beyond |k_i| < {half} do not fit on N={target.N}")
    idx = (np.fft.fftfreq(target.N, d=1.0 / target.N).astype(int)) % source.N
    return coeffs[..., idx[:, None], idx[None, :]] * target.keep


def random_band_limited(
    grid: Grid,
    rng: np.random.Generator,
    radius: float,
    components: int = 0,
    leading: Tuple[int, ...] = (),
) -> np.ndarray:
    """Real, mean-zero random coefficients supported in 0 < |k| <= radius."""
    shape = leading + ((components,) if components else ()) + (grid.N, grid.N)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = (grid.kmag > 0) & (grid.kmag <= radius) & grid.keep
    decay = 1.0 / (1.0 + grid.kmag) ** 2
    return realify(raw * mask * decay) * (2.0 * np.pi) ** 2


# ---------------------------------------------------------------------------
# Field types
# ---------------------------------------------------------------------------

class _SpectralField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    coeffs: np.ndarray
    time_tag: TimeTag = None

    _components: ClassVar[int] = 0

    @field_validator("coeffs", mode="before")
    @classmethod
    def _as_complex(cls, value) -> np.ndarray:
        return np.asarray(value, dtype=complex)

    @model_validator(mode="after")
    def _check_shape(self):
        N = self.grid.N
        if self.coeffs.shape[-2:] != (N, N):
            raise ValueError(f"coefficients must end in ({N}, {N}), got {self.coeffs.shape}")
        if self._components:
            if self.coeffs.ndim < 3 or self.coeffs.shape[-3] != self._components:
                raise ValueError(f"expected {self._components} components, got shape {self.coeffs.shape}")
        return self

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        drop = 3 if self._components else 2
        return self.coeffs.shape[:-drop]

    @property
    def n_times(self) -> int:
        return self.batch_shape[0] if self.batch_shape else 1

    def physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.grid)

    def is_real(self, rel_tol: float = 1e-13) -> bool:
        gap = np.abs(self.coeffs - conjugate_reflect(self.coeffs)).max(initial=0.0)
        scale = np.abs(self.coeffs).max(initial=0.0)
        return bool(gap <= rel_tol * scale)

    def mean_coeff(self) -> np.ndarray:
        return self.coeffs[..., 0, 0]

    def is_mean_zero(self) -> bool:
        return bool(np.all(self.mean_coeff() == 0))

    def replace(self, coeffs: np.ndarray, **updates):
        data = {name: getattr(self, name) for name in type(self).model_fields}
        data.update(updates)
        data["coeffs"] = coeffs
        return type(self)(**data)

    def at(self, index: int):
        """Single time slice of a time series."""
        tag = self.time_tag
        if isinstance(tag, np.ndarray):
            tag = float(tag[index])
        return self.replace(self.coeffs[index], time_tag=tag)

    def pointwise_norm(self) -> np.ndarray:
        return np.abs(self.physical())


class ScalarField(_SpectralField):
    """Real scalar field on the torus."""

    _components: ClassVar[int] = 0

    @classmethod
    def from_physical(cls, samples: np.ndarray, grid: Grid, time_tag: TimeTag = None) -> "ScalarField":
        return cls(grid=grid, coeffs=to_spectral(np.asarray(samples, dtype=float), grid), time_tag=time_tag)

    def gradient(self) -> "VectorField2":
        return VectorField2(grid=self.grid, coeffs=gradient_coeffs(self.coeffs, self.grid), time_tag=self.time_tag)


class VectorField2(_SpectralField):
    """Real 2-vector field; ``divergence_free`` is validated when set."""

    _components: ClassVar[int] = 2
    divergence_free: bool = False

    @model_validator(mode="after")
    def _check_divergence(self):
        if self.divergence_free:
            kdotv = self.grid.k1 * self.coeffs[..., 0, :, :] + self.grid.k2 * self.coeffs[..., 1, :, :]
            scale = np.abs(self.coeffs).max(initial=0.0)
            if np.abs(kdotv).max(initial=0.0) > 1e-12 * scale:
                raise ValueError("field flagged divergence_free has nonzero k . v")
        return self

    @classmethod
    def from_physical(cls, samples: np.ndarray, grid: Grid, time_tag: TimeTag = None, **flags) -> "VectorField2":
        return cls(grid=grid, coeffs=to_spectral(np.asarray(samples, dtype=float), grid), time_tag=time_tag, **flags)

    def component(self, index: int) -> ScalarField:
        return ScalarField(grid=self.grid, coeffs=self.coeffs[..., index, :, :], time_tag=self.time_tag)

    def perp(self) -> "VectorField2":
        return self.replace(perp_coeffs(self.coeffs), divergence_free=False)

    def perp_div(self) -> ScalarField:
        return ScalarField(grid=self.grid, coeffs=perp_div_coeffs(self.coeffs, self.grid), time_tag=self.time_tag)

    def divergence(self) -> ScalarField:
        return ScalarField(grid=self.grid, coeffs=divergence_coeffs(self.coeffs, self.grid), time_tag=self.time_tag)

    def pointwise_norm(self) -> np.ndarray:
        v = self.physical()
        return np.sqrt(v[..., 0, :, :] ** 2 + v[..., 1, :, :] ** 2)


class SymTensorField2(_SpectralField):
    """Symmetric 2x2 tensor field stored as (t11, t12, t22)."""

    _components: ClassVar[int] = 3
    trace_free: bool = False

    @model_validator(mode="after")
    def _check_trace(self):
        if self.trace_free:
            trace = self.coeffs[..., 0, :, :] + self.coeffs[..., 2, :, :]
            scale = np.abs(self.coeffs[..., 0, :, :]).max(initial=0.0) + np.abs(self.coeffs[..., 2, :, :]).max(initial=0.0)
            if np.abs(trace).max(initial=0.0) > 1e-12 * scale + 1e-300:
                raise ValueError("tensor flagged trace_free has nonzero trace")
        return self

    @classmethod
    def from_physical(cls, samples: np.ndarray, grid: Grid, time_tag: TimeTag = None, **flags) -> "SymTensorField2":
        return cls(grid=grid, coeffs=to_spectral(np.asarray(samples, dtype=float), grid), time_tag=time_tag, **flags)

    def entry(self, i: int, j: int) -> ScalarField:
        index = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}[(i, j)]
        return ScalarField(grid=self.grid, coeffs=self.coeffs[..., index, :, :], time_tag=self.time_tag)

    def divergence(self) -> VectorField2:
        return VectorField2(grid=self.grid, coeffs=tensor_divergence_coeffs(self.coeffs, self.grid), time_tag=self.time_tag)

    def trace_residual(self) -> float:
        """||t11 + t22||_inf / (||t11||_inf + ||t22||_inf + eps)."""
        t = self.physical()
        trace = np.abs(t[..., 0, :, :] + t[..., 2, :, :]).max()
        scale = np.abs(t[..., 0, :, :]).max() + np.abs(t[..., 2, :, :]).max() + np.finfo(float).eps
        return float(trace / scale)

    def pointwise_norm(self) -> np.ndarray:
        return tensor_operator_norm(self.physical())


AnyField = Union[ScalarField, VectorField2, SymTensorField2]


def tensor_operator_norm(samples: np.ndarray) -> np.ndarray:
    """Pointwise operator norm of (t11, t12, t22) samples."""
    t11, t12, t22 = samples[..., 0, :, :], samples[..., 1, :, :], samples[..., 2, :, :]
    mean = 0.5 * (t11 + t22)
    radius = np.sqrt((0.5 * (t11 - t22)) ** 2 + t12**2)
    return np.abs(mean) + radius


def tensor_from_matrix(m11: np.ndarray, m12: np.ndarray, m22: np.ndarray) -> np.ndarray:
    return np.stack([m11, m12, m22], axis=-3)


# ---------------------------------------------------------------------------
# Field-level operators
# ---------------------------------------------------------------------------

def fractional_laplacian(f: Union[ScalarField, VectorField2], gamma: float):
    """Lambda^gamma with symbol |k|^gamma; the zero mode is left unchanged."""
    if not -2.0 <= gamma <= 4.0:
        raise ValueError(f"gamma must lie in [-2, 4], got {gamma}")
    if gamma < 0 and np.any(f.mean_coeff() != 0):
        raise NonMeanZeroNegativePower(f"Lambda^{gamma} needs a mean-zero input")
    return f.replace(lambda_power(f.coeffs, f.grid, gamma))


def riesz_and_perp(f: ScalarField) -> Tuple[VectorField2, str]:
    """Riesz vector with multipliers i k_m / |k|.

    Returns the transform together with a note on the convention in use.
    """
    if np.any(f.mean_coeff() != 0):
        raise NonMeanZeroNegativePower("the Riesz transform needs a mean-zero input")
    grid = f.grid
    kmag = np.where(grid.kmag > 0, grid.kmag, 1.0)
    c = f.coeffs * (grid.kmag > 0)
    riesz = np.stack([1j * grid.k1 / kmag * c, 1j * grid.k2 / kmag * c], axis=-3) * grid.keep
    notes = "multiplier i k/|k|; perp(v) = (-v2, v1); perp_div(v) = -d2 v1 + d1 v2"
    return VectorField2(grid=grid, coeffs=riesz, time_tag=f.time_tag), notes


def leray_project(v: VectorField2) -> VectorField2:
    return v.replace(leray_coeffs(v.coeffs, v.grid), divergence_free=True)


def anti_divergence(f: VectorField2) -> SymTensorField2:
    return SymTensorField2(
        grid=f.grid,
        coeffs=anti_divergence_coeffs(f.coeffs, f.grid),
        time_tag=f.time_tag,
        trace_free=True,
    )


def nonlinear_coeffs(
    u_coeffs: np.ndarray, v_coeffs: np.ndarray, grid: Grid, gamma2: float, real: bool = True
) -> np.ndarray:
    """Coefficients of (Lambda^(2-gamma2) u)^perp (grad^perp . v), formed in physical space.

    Pass ``real=False`` for complex (single wave-packet) inputs.
    """
    lu = to_physical(lambda_power(u_coeffs, grid, 2.0 - gamma2), grid, real=real)
    curl = to_physical(perp_div_coeffs(v_coeffs, grid), grid, real=real)
    product = np.stack([-lu[..., 1, :, :] * curl, lu[..., 0, :, :] * curl], axis=-3)
    return to_spectral(product, grid)


def nonlinear_term(u: VectorField2, v: VectorField2, gamma2: float) -> VectorField2:
    return VectorField2(grid=u.grid, coeffs=nonlinear_coeffs(u.coeffs, v.coeffs, u.grid, gamma2), time_tag=u.time_tag)


def two_term_nonlinearity(u: VectorField2, v: VectorField2) -> VectorField2:
    """(u . grad) v - (grad v)^T u evaluated directly from both terms."""
    grid = u.grid
    us = u.physical()
    grads = to_physical(gradient_coeffs(v.coeffs, grid), grid)  # [..., i, j] = d_j v_i
    advect = us[..., 0:1, :, :] * grads[..., :, 0, :, :] + us[..., 1:2, :, :] * grads[..., :, 1, :, :]
    transpose = us[..., 0:1, :, :] * grads[..., 0, :, :, :] + us[..., 1:2, :, :] * grads[..., 1, :, :, :]
    return VectorField2.from_physical(advect - transpose, grid, time_tag=u.time_tag)


# ---------------------------------------------------------------------------
# Frequency projectors
# ---------------------------------------------------------------------------

BAND_INNER = 1.0 / 16.0
BAND_OUTER = 1.0 / 8.0


@lru_cache(maxsize=64)
def _band_symbol(N: int, k1: float, k2: float, lam: float) -> np.ndarray:
    grid = Grid(N=N)
    r = np.sqrt((grid.k1 / lam - k1) ** 2 + (grid.k2 / lam - k2) ** 2)
    symbol = plateau_bump(r, BAND_INNER, BAND_OUTER) * grid.keep
    symbol.setflags(write=False)
    return symbol


def band_symbol(grid: Grid, k_dir: Tuple[float, float], lam: float) -> np.ndarray:
    """Symbol K_hat(xi / lambda - k) of the band projector around lambda * k."""
    if not 9.0 * lam / 8.0 < grid.N / 2:
        raise NyquistOverflow(f"band around lambda={lam} exceeds the Nyquist frequency of N={grid.N}")
    if not np.isclose(k_dir[0] ** 2 + k_dir[1] ** 2, 1.0, atol=1e-12):
        raise ValueError(f"k_dir must be a unit vector, got {k_dir}")
    return _band_symbol(grid.N, float(k_dir[0]), float(k_dir[1]), float(lam))


@lru_cache(maxsize=16)
def _annulus_symbol(N: int, lam: float) -> np.ndarray:
    grid = Grid(N=N)
    s = grid.kmag / lam
    rise = smooth_step((s - 0.25) / 0.125)
    fall = 1.0 - smooth_step(s - 3.0)
    symbol = rise * fall * grid.keep
    symbol.setflags(write=False)
    return symbol


def annulus_symbol(grid: Grid, lam: float) -> np.ndarray:
    """Symbol supported in lambda/4 <= |xi| <= 4 lambda and equal to 1 on [3 lambda/8, 3 lambda]."""
    if not 4.0 * lam < grid.N / 2:
        raise NyquistOverflow(f"annulus at lambda={lam} exceeds the Nyquist frequency of N={grid.N}")
    return _annulus_symbol(grid.N, float(lam))


def band_projector(v: AnyField, k_dir: Tuple[float, float], lam: float) -> AnyField:
    return v.replace(v.coeffs * band_symbol(v.grid, k_dir, lam), **_cleared_flags(v))


def annulus_projector(v: AnyField, lam: float) -> AnyField:
    return v.replace(v.coeffs * annulus_symbol(v.grid, lam))


def _cleared_flags(v: AnyField) -> dict:
    return {"divergence_free": False} if isinstance(v, VectorField2) else {}


@lru_cache(maxsize=1)
def band_kernel_l1_mass(r_max: float = 4000.0, dr: float = 0.25) -> float:
    """Upper estimate of the L1 norm of the band-projector kernel.

    The kernel of K_hat(xi/lambda - k) is a modulated dilate of the radial
    kernel K, so its L1 mass does not depend on lambda or k. K(r) is computed
    by Hankel quadrature and |K| r is integrated up to ``r_max``; the tail is
    bounded assuming |K(r)| <= |K(r_max)| (r_max / r)^3 and a 1e-3 relative
    margin is added.
    """
    nodes, weights = leggauss(512)
    rho_parts, w_parts = [], []
    for lo, hi in ((0.0, BAND_INNER), (BAND_INNER, BAND_OUTER)):
        rho_parts.append(0.5 * (hi - lo) * nodes + 0.5 * (hi + lo))
        w_parts.append(0.5 * (hi - lo) * weights)
    rho = np.concatenate(rho_parts)
    w = np.concatenate(w_parts) * plateau_bump(rho, BAND_INNER, BAND_OUTER) * rho

    r = np.arange(0.0, r_max + dr, dr)
    kernel = np.empty_like(r)
    for start in range(0, r.size, 2048):
        chunk = r[start:start + 2048]
        kernel[start:start + 2048] = j0(np.outer(chunk, rho)) @ w / TWO_PI
    integrand = np.abs(kernel) * r
    mass = TWO_PI * float(np.sum(0.5 * (integrand[1:] + integrand[:-1])) * dr)
    tail_level = np.abs(kernel[-int(50 / dr):]).max()
    tail = TWO_PI * tail_level * r_max**2
    bound = mass * (1.0 + 1e-3) + tail
    logger.debug(f"Band kernel L1 mass {mass:.6f}, tail {tail:.2e}, bound {bound:.6f}")
    return bound


# ---------------------------------------------------------------------------
# Mollifiers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1)
def _bump_radial_quadrature() -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(256)
    r = 0.5 * (nodes + 1.0)
    w = 0.5 * weights * standard_bump(r) * r
    return r, w / w.sum()


def spatial_mollifier_transform(rho: np.ndarray) -> np.ndarray:
    """phi_hat(rho) of the mass-one radial bump, normalized so phi_hat(0) = 1."""
    r, w = _bump_radial_quadrature()
    rho = np.asarray(rho, dtype=float)
    flat = rho.reshape(-1)
    values, inverse = np.unique(flat, return_inverse=True)
    transform = j0(np.outer(values, r)) @ w
    return transform[inverse].reshape(rho.shape)


def mollify_space(f: AnyField, ell: float, band_limited: bool = False) -> AnyField:
    """Convolution with the bump scaled to radius ``ell`` (a Fourier multiplier)."""
    return f.replace(mollify_space_coeffs(f.coeffs, f.grid, ell, band_limited=band_limited))


def mollify_space_coeffs(coeffs: np.ndarray, grid: Grid, ell: float, band_limited: bool = False) -> np.ndarray:
    """Multiply by phi_hat(ell |k|).

    With ``band_limited`` the data is taken to be exactly its represented
    modes, so the multiplier is exact at any ell and the two-cell resolution
    check is skipped.
    """
    if not band_limited and ell < 2.0 * grid.spacing:
        raise ScaleTooFine(f"ell={ell:.3e} is below two grid cells ({2 * grid.spacing:.3e})")
    if ell >= np.pi:
        raise ValueError(f"ell={ell} must stay below pi so the kernel fits in one period")
    return coeffs * spatial_mollifier_transform(ell * grid.kmag) * grid.keep


def temporal_kernel(s: np.ndarray) -> np.ndarray:
    """One-sided bump supported in (1, 2), symmetric about 3/2."""
    return standard_bump(2.0 * np.asarray(s, dtype=float) - 3.0)


def temporal_weights(times: np.ndarray, ell: float, at: np.ndarray) -> np.ndarray:
    """Row-normalized weights W with (W @ series)(t) = series mollified at t.

    Row i only touches samples with at[i] - 2 ell <= t_m < at[i] - ell.
    """
    times = np.asarray(times, dtype=float)
    at = np.atleast_1d(np.asarray(at, dtype=float))
    dt = times[1] - times[0]
    if ell < 4.0 * dt:
        raise ScaleTooFine(f"temporal scale ell={ell:.3e} needs at least four steps of {dt:.3e}")
    slack = 1e-9 * dt
    short = at - 2.0 * ell < times[0] - slack
    if np.any(short):
        raise InsufficientHistory(
            f"mollification at t={at[short][0]:.6f} needs history from {at[short][0] - 2 * ell:.6f}, "
            f"series starts at {times[0]:.6f}"
        )
    lags = (at[:, None] - times[None, :]) / ell
    weights = temporal_kernel(lags)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights


def mollify_time(series, ell: float, times: Optional[np.ndarray] = None, at: Optional[np.ndarray] = None):
    """One-sided temporal mollification.

    ``series`` is either an array whose leading axis is time (then ``times``
    is required) or a field carrying an array ``time_tag``. Output times
    default to the input times.
    """
    if isinstance(series, _SpectralField):
        times = np.asarray(series.time_tag, dtype=float)
        at = times if at is None else np.atleast_1d(at)
        weights = temporal_weights(times, ell, at)
        coeffs = np.tensordot(weights, series.coeffs, axes=(1, 0))
        return series.replace(coeffs, time_tag=np.asarray(at, dtype=float))
    if times is None:
        raise ValueError("times are required for array input")
    at = np.asarray(times, dtype=float) if at is None else np.atleast_1d(at)
    weights = temporal_weights(times, ell, at)
    return np.tensordot(weights, np.asarray(series), axes=(1, 0))


def temporal_first_moment(ell: float, dt: float) -> float:
    """First moment (in units of ell) of the discrete kernel at grid-aligned times."""
    times = np.arange(0.0, 3.0 * ell + dt, dt)
    at = np.array([times[-1]])
    w = temporal_weights(times, ell, at)[0]
    return float(np.sum(w * (at[0] - times)) / ell)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

class NormSpec(BaseModel):
    """Descriptor for ``norms``.

    kind "C": sum over time orders j <= time_order and spatial multi-indices
    with j + |alpha| <= order of sup |d_t^j D^alpha f|.
    kind "L2": (integral |f|^2)^(1/2).
    kind "Hs": homogeneous Sobolev seminorm of order s, "integral" meaning
    integral |Lambda^s f|^2 dx and "lattice" meaning sum |k|^(2s) |f_hat|^2.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["C", "L2", "Hs"] = "C"
    order: int = 0
    time_order: int = 0
    s: float = 0.0
    convention: Literal["integral", "lattice"] = "integral"
    window: Optional[Tuple[float, float]] = None

    @field_validator("time_order")
    @classmethod
    def _time_order(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError("time derivatives are limited to first order")
        return value

    @model_validator(mode="after")
    def _orders(self) -> "NormSpec":
        if self.kind == "C" and self.time_order > self.order:
            raise ValueError(f"time_order {self.time_order} exceeds the total order {self.order}")
        return self


def _window_mask(f: AnyField, window: Optional[Tuple[float, float]]) -> Optional[np.ndarray]:
    if window is None or not isinstance(f.time_tag, np.ndarray):
        return None
    t = f.time_tag
    return (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)


def _sup_pointwise(samples: np.ndarray, kind: type) -> np.ndarray:
    """Spatial sup of the pointwise norm, one value per batch entry."""
    if kind is VectorField2:
        mags = np.sqrt(samples[..., 0, :, :] ** 2 + samples[..., 1, :, :] ** 2)
    elif kind is SymTensorField2:
        mags = tensor_operator_norm(samples)
    else:
        mags = np.abs(samples)
    return mags.max(axis=(-2, -1))


def _spatial_c_norm(coeffs: np.ndarray, grid: Grid, order: int, kind: type) -> np.ndarray:
    total = 0.0
    for a1 in range(order + 1):
        for a2 in range(order + 1 - a1):
            deriv = coeffs * (1j * grid.k1) ** a1 * (1j * grid.k2) ** a2
            total = total + _sup_pointwise(to_physical(deriv, grid), kind)
    return total


def norm_series(f: AnyField, spec: NormSpec) -> np.ndarray:
    """Per-time values of the requested norm (a 0-d array for a single slice)."""
    grid = f.grid
    coeffs = f.coeffs
    kind = type(f)
    if spec.kind == "L2":
        comp_axes = (-3, -2, -1) if f._components else (-2, -1)
        return np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=comp_axes)) / TWO_PI
    if spec.kind == "Hs":
        weight = lambda_symbol(grid, spec.s) ** 2 * (grid.kmag > 0)
        comp_axes = (-3, -2, -1) if f._components else (-2, -1)
        total = np.sum(weight * np.abs(coeffs) ** 2, axis=comp_axes)
        if spec.convention == "integral":
            total = total / TWO_PI**2
        return np.sqrt(total)
    values = _spatial_c_norm(coeffs, grid, spec.order, kind)
    if spec.time_order:
        times = np.asarray(f.time_tag, dtype=float)
        dcoeffs = np.gradient(coeffs, times, axis=0, edge_order=2)
        values = values + _spatial_c_norm(dcoeffs, grid, spec.order - 1, kind)
    return values


def norms(f: AnyField, spec: NormSpec) -> float:
    """Sup over the (windowed) time samples of ``norm_series``."""
    values = np.atleast_1d(norm_series(f, spec))
    mask = _window_mask(f, spec.window)
    if mask is not None:
        values = values[mask]
    return float(values.max(initial=0.0))

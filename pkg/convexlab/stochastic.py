"""Brownian paths, the stopping time T_L, the exponential process and M0.

Paths live on the uniform grid t_n = -2 + n dt and are extended flat on
[-2, 0], so B(t) = B(0) = 0 there. All evaluation is pathwise.
"""

import logging
import time
from functools import lru_cache
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from convexlab.exceptions import HorizonTooShort, OutOfWindow, ProfileBoundViolation, ScaleTooFine
from convexlab.spectral import smooth_step, standard_bump, temporal_kernel, temporal_weights

logger = logging.getLogger(__name__)

PATH_START = -2.0
EXACT_PAIR_LIMIT = 2048
NEAR_LAGS = 512


class WienerPath(BaseModel):
    """Sampled scalar Brownian path on [-2, horizon]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    seed: Optional[int] = None
    dt: float = Field(gt=0)
    horizon: float = Field(gt=0)
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_float(cls, value) -> np.ndarray:
        return np.asarray(value, dtype=float)

    @model_validator(mode="after")
    def _check_grid(self):
        steps_back = -PATH_START / self.dt
        if abs(steps_back - round(steps_back)) > 1e-9 * steps_back:
            raise ValueError(f"2/dt must be an integer, got dt={self.dt}")
        if self.values.shape != (self.n_back + self.n_forward + 1,):
            raise ValueError(f"expected {self.n_back + self.n_forward + 1} samples, got {self.values.shape}")
        if np.any(self.values[: self.n_back + 1] != self.values[self.n_back]):
            raise ValueError("path must be flat on [-2, 0]")
        return self

    @property
    def n_back(self) -> int:
        return int(round(-PATH_START / self.dt))

    @property
    def n_forward(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def times(self) -> np.ndarray:
        return PATH_START + self.dt * np.arange(self.values.size)

    def index_of(self, t: float) -> int:
        return int(round((t - PATH_START) / self.dt))

    def value_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def window(self, start: float, end: float) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = max(self.index_of(start), 0), min(self.index_of(end), self.values.size - 1)
        return self.times[lo:hi + 1], self.values[lo:hi + 1]

    def modified_after(self, t: float, values_after: np.ndarray) -> "WienerPath":
        """Copy whose samples strictly after ``t`` are replaced."""
        values = self.values.copy()
        start = self.index_of(t) + 1
        values[start:] = np.asarray(values_after)[: values.size - start]
        return WienerPath(seed=None, dt=self.dt, horizon=self.horizon, values=values)

    @classmethod
    def from_function(cls, fn, dt: float, horizon: float) -> "WienerPath":
        n_back = int(round(-PATH_START / dt))
        t = PATH_START + dt * np.arange(n_back + int(round(horizon / dt)) + 1)
        values = np.where(t > 0, fn(np.maximum(t, 0.0)), fn(0.0))
        return cls(dt=dt, horizon=horizon, values=values)


def sample_path(seed: int, dt: float, horizon: float) -> WienerPath:
    """Seeded path: N(0, dt) increments on [0, horizon], flat on [-2, 0]."""
    n_back = int(round(-PATH_START / dt))
    n_forward = int(round(horizon / dt))
    rng = np.random.default_rng(seed)
    increments = rng.standard_normal(n_forward) * np.sqrt(dt)
    values = np.concatenate([np.zeros(n_back + 1), np.cumsum(increments)])
    logger.debug(f"Sampled path seed={seed}, dt={dt}, horizon={horizon}, {values.size} samples")
    return WienerPath(seed=seed, dt=dt, horizon=horizon, values=values)


def _lag_set(n: int) -> np.ndarray:
    if n <= EXACT_PAIR_LIMIT:
        return np.arange(1, n)
    # n-independent below n, so runs over nested windows agree on shared samples
    dyadic = 2 ** np.arange(int(np.log2(n - 1)) + 1)
    quarter = (np.sqrt(2.0) ** np.arange(int(2 * np.log2(n - 1)) + 1)).astype(int)
    lags = np.concatenate([np.arange(1, NEAR_LAGS + 1), dyadic, quarter])
    return np.unique(lags[lags < n])


def running_holder_seminorm(values: np.ndarray, dt: float, exponent: float) -> np.ndarray:
    """S[j] = max over sampled pairs i < i' <= j of |v[i'] - v[i]| / ((i' - i) dt)^exponent.

    Exact (all pairs) up to 2048 samples. Longer series use every lag up to
    512, a geometric ladder of long lags and every pair anchored at the
    window start, which makes S an under-estimate that is exact for linear
    paths.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    best = np.zeros(n)
    if n < 2:
        return best
    for m in _lag_set(n):
        ratios = np.abs(values[m:] - values[:-m]) / (m * dt) ** exponent
        np.maximum(best[m:], ratios, out=best[m:])
    anchored = np.abs(values[1:] - values[0]) / (np.arange(1, n) * dt) ** exponent
    np.maximum(best[1:], anchored, out=best[1:])
    return np.maximum.accumulate(best)


def holder_seminorm(path: WienerPath, exponent: float, window: Tuple[float, float]) -> float:
    """Hölder seminorm of the sampled path over ``window``."""
    if not 0.0 < exponent < 1.0:
        raise ValueError(f"exponent must lie in (0, 1), got {exponent}")
    _, values = path.window(*window)
    return float(running_holder_seminorm(values, path.dt, exponent)[-1]) if values.size else 0.0


class StoppingTimeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    L: float = Field(gt=1.0)
    delta: float = Field(default=1.0 / 16.0, gt=0.0, lt=0.25)

    @property
    def exponent(self) -> float:
        return 0.5 - 2.0 * self.delta

    @property
    def amplitude_threshold(self) -> float:
        return self.L**0.25

    @property
    def holder_threshold(self) -> float:
        return self.L**0.5


class StoppingTimeResult(BaseModel):
    T_L: float
    fired: Literal["amplitude", "holder", "cap"]
    seed: Optional[int] = None
    L: float
    delta: float


def stopping_time(path: WienerPath, spec: StoppingTimeSpec) -> StoppingTimeResult:
    """First grid time t >= 0 where |B| or the running seminorm reaches its threshold, capped at L."""
    start = path.index_of(0.0)
    stop = min(path.values.size - 1, path.index_of(spec.L))
    values = path.values[start:stop + 1]
    amplitude_hit = np.abs(values) >= spec.amplitude_threshold
    holder_hit = running_holder_seminorm(values, path.dt, spec.exponent) >= spec.holder_threshold
    hits = np.flatnonzero(amplitude_hit | holder_hit)
    if hits.size:
        i = int(hits[0])
        fired = "amplitude" if amplitude_hit[i] else "holder"
        T = i * path.dt
    else:
        if path.horizon < spec.L - 1e-12:
            raise HorizonTooShort(f"no threshold met before horizon {path.horizon} < L={spec.L}")
        fired, T = "cap", spec.L
    return StoppingTimeResult(T_L=float(T), fired=fired, seed=path.seed, L=spec.L, delta=spec.delta)


def linear_path_stopping_time(c: float, spec: StoppingTimeSpec) -> float:
    """Closed form of T_L for B(t) = c t."""
    candidates = [spec.L]
    if c > 0:
        candidates.append(spec.amplitude_threshold / c)
        candidates.append((spec.holder_threshold / c) ** (1.0 / (1.0 - spec.exponent)))
    return float(min(candidates))


# ---------------------------------------------------------------------------
# Growth profile
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1)
def _bump_integral() -> float:
    nodes, weights = leggauss(256)
    u = 0.5 * (nodes + 1.0)
    return float(0.5 * np.sum(weights * standard_bump(2.0 * u - 1.0)))


def ramp_rate(u: np.ndarray) -> np.ndarray:
    """h(u) = step(u) + c bump(u) with c chosen so that the integral of h over [0, 1] is 1."""
    u = np.asarray(u, dtype=float)
    c = 1.0 / (2.0 * _bump_integral())
    return np.clip(smooth_step(u) + c * standard_bump(2.0 * u - 1.0), 0.0, None)


def ramp_integral(u: np.ndarray, nodes: int = 128) -> np.ndarray:
    """H(u) = integral of h over [0, u] for u in [0, 1]; H(1) = 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    x, w = leggauss(nodes)
    pts = 0.5 * np.multiply.outer(u, x + 1.0)
    return 0.5 * u * (ramp_rate(pts) @ w)


class NoiseProfile(BaseModel):
    """M0(t) = exp(2L + 4L rho(t)) with rho a smooth monotone ramp."""

    model_config = ConfigDict(frozen=True)

    L: float = Field(gt=1.0)
    T: float = Field(gt=0.0)

    @property
    def t_star(self) -> float:
        return min(self.T, self.L)

    @property
    def mL(self) -> float:
        return float(np.sqrt(3.0) * self.L**0.25 * np.exp(0.5 * self.L**0.25))

    def rho(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = t / self.t_star
        inside = self.t_star * ramp_integral(u)
        return np.where(t <= 0, 0.0, np.where(t >= self.t_star, t, inside))

    def rho_prime(self, t) -> np.ndarray:
        return ramp_rate(np.asarray(t, dtype=float) / self.t_star)

    def M0(self, t) -> np.ndarray:
        return np.exp(2.0 * self.L + 4.0 * self.L * self.rho(t))

    def sqrt_M0(self, t) -> np.ndarray:
        return np.exp(self.L + 2.0 * self.L * self.rho(t))

    def sqrt_M0_prime(self, t) -> np.ndarray:
        """d/dt M0^(1/2) = 2L rho'(t) M0^(1/2)."""
        return 2.0 * self.L * self.rho_prime(t) * self.sqrt_M0(t)

    def log_derivative(self, t) -> np.ndarray:
        """M0'/M0 = 4L rho'(t)."""
        return 4.0 * self.L * self.rho_prime(t)

    def verify_bound(self, samples: int = 10_000) -> float:
        t = np.linspace(-0.1 * self.t_star, 1.1 * self.t_star, samples)
        ratio = self.log_derivative(t)
        peak = float(ratio.max())
        if ratio.min() < 0.0 or peak > 8.0 * self.L:
            raise ProfileBoundViolation(f"M0'/M0 ranges over [{ratio.min():.4f}, {peak:.4f}], bound 8L={8 * self.L}")
        return peak


def m0_profile(L: float, T: float) -> NoiseProfile:
    profile = NoiseProfile(L=L, T=T)
    peak = profile.verify_bound()
    logger.info(f"M0 profile L={L}, T={T}: max M0'/M0 = {peak:.4f} <= {8 * L:.4f}, m_L = {profile.mL:.6f}")
    return profile


# ---------------------------------------------------------------------------
# Exponential process
# ---------------------------------------------------------------------------

class ExponentialProcess(BaseModel):
    """Upsilon = e^B on the path grid, with its one-sided mollification."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    path: WienerPath
    ell: float
    T_L: float
    upsilon: np.ndarray
    upsilon_inv: np.ndarray
    upsilon_mollified: np.ndarray
    mollified_from: int
    bounds: Dict[str, float]

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    def _check(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t > self.T_L + 1e-9 * self.path.dt):
            raise OutOfWindow(f"evaluation at t={t.max():.6f} is past T_L={self.T_L:.6f}")
        return t

    def at(self, t) -> np.ndarray:
        t = self._check(t)
        return np.exp(np.interp(t, self.path.times, self.path.values))

    def _mollify(self, t: np.ndarray) -> np.ndarray:
        # restrict to the samples any row can touch
        lo = max(self.path.index_of(t.min() - 2.0 * self.ell) - 1, 0)
        hi = min(self.path.index_of(t.max() - self.ell) + 1, self.upsilon.size - 1)
        hi = max(hi, lo + 1)
        times = self.path.times[lo:hi + 1]
        return temporal_weights(times, self.ell, t) @ self.upsilon[lo:hi + 1]

    def mollified_at(self, t) -> np.ndarray:
        """Upsilon_l at arbitrary times; only path values before t - ell enter."""
        return self._mollify(self._check(t))

    def mollified_derivative_at(self, t, step: Optional[float] = None) -> np.ndarray:
        """Centered difference of Upsilon_l (a smooth function of t)."""
        h = step or 0.25 * self.path.dt
        t = np.atleast_1d(np.asarray(t, dtype=float))
        values = self._mollify(np.concatenate([t + h, t - h]))
        return (values[: t.size] - values[t.size:]) / (2.0 * h)


def exponential_process(path: WienerPath, ell: float, stopping: StoppingTimeResult, spec: StoppingTimeSpec) -> ExponentialProcess:
    """Upsilon, its inverse, its mollification and the pathwise bounds on [-2, T_L]."""
    start_time = time.time()
    if ell < 4.0 * path.dt:
        raise ScaleTooFine(f"temporal scale ell={ell:.3e} needs at least four path steps of {path.dt:.3e}")
    upsilon = np.exp(path.values)
    upsilon_inv = np.exp(-path.values)
    first = int(np.ceil(2.0 * ell / path.dt - 1e-9))
    stop = path.index_of(stopping.T_L)
    at = path.times[first:stop + 1]
    mollified = np.full_like(upsilon, np.nan)
    if at.size:
        # grid-aligned rows share one lag profile, so the mollification is a convolution
        lags = np.arange(1, int(np.ceil(2.0 * ell / path.dt)) + 1)
        kernel = temporal_kernel(lags * path.dt / ell)
        kernel /= kernel.sum()
        acc = np.zeros(at.size)
        for m, weight in zip(lags, kernel):
            if weight > 0.0:
                acc += weight * upsilon[first - m:stop + 1 - m]
        mollified[first:stop + 1] = acc

    window = slice(path.index_of(0.0), stop + 1)
    h = spec.exponent
    amp_bound = float(np.exp(spec.L**0.25))
    mL_squared = 3.0 * spec.L**0.5 * np.exp(spec.L**0.25)
    holder_up = float(running_holder_seminorm(upsilon[window], path.dt, h)[-1])
    holder_inv = float(running_holder_seminorm(upsilon_inv[window], path.dt, h)[-1])
    valid = slice(first, stop + 1)
    gap = float(np.nanmax(np.abs(upsilon[valid] - mollified[valid]))) if at.size else 0.0
    bounds = {
        "sup_upsilon": float(upsilon[: stop + 1].max()),
        "sup_upsilon_inv": float(upsilon_inv[: stop + 1].max()),
        "amplitude_bound": amp_bound,
        "holder_upsilon": holder_up,
        "holder_upsilon_inv": holder_inv,
        "holder_bound": float(mL_squared),
        "mollification_gap": gap,
        "mollification_gap_bound": holder_up * (2.0 * ell) ** h,
    }
    logger.info(
        f"Exponential process on [-2, {stopping.T_L:.4f}] built in {time.time() - start_time:.4f} seconds; "
        f"sup Upsilon={bounds['sup_upsilon']:.4f}, gap={gap:.3e}"
    )
    return ExponentialProcess(
        path=path,
        ell=ell,
        T_L=stopping.T_L,
        upsilon=upsilon,
        upsilon_inv=upsilon_inv,
        upsilon_mollified=mollified,
        mollified_from=first,
        bounds=bounds,
    )


def survival_probability(spec: StoppingTimeSpec, T: float, samples: int, seed: int, dt: float = 1e-3) -> float:
    """Monte-Carlo estimate of P(T_L >= T) over seeds seed, seed + 1, ..."""
    horizon = max(spec.L, T)
    hits = 0
    for i in range(samples):
        result = stopping_time(sample_path(seed + i, dt, horizon), spec)
        hits += result.T_L >= T
    return hits / samples


def stopping_times_for(paths: Sequence[WienerPath], specs: Sequence[StoppingTimeSpec]) -> np.ndarray:
    """Matrix of T_L values, rows over paths and columns over specs."""
    return np.array([[stopping_time(p, s).T_L for s in specs] for p in paths])

"""Parameter tuples and the frequency, amplitude and time-scale sequences."""

import logging
import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from convexlab.exceptions import GridBound, ParameterRangeError

logger = logging.getLogger(__name__)

Mode = Literal["faithful", "toy"]

EXACT_BITS = 64


class ParameterSet(BaseModel):
    """One full parameter tuple.

    Only structural constraints are validated here. The open ranges on the
    exponents are ledger entries, so an out-of-range tuple can still be
    certified (and reported red); ``check_ranges`` raises on them instead.
    """

    model_config = ConfigDict(frozen=True)

    gamma1: float = Field(gt=0)
    gamma2: float
    L: float = Field(gt=1)
    b: int = Field(ge=2)
    beta: float = Field(gt=0)
    alpha: Optional[float] = None
    a: int = Field(ge=2)
    delta_holder: float = Field(default=1.0 / 16.0, gt=0, lt=0.25)
    q_max: int = Field(default=3, ge=0)
    K: float = Field(default=2.0, ge=1)
    T: float = Field(default=1.0, gt=0)
    mode: Mode = "faithful"

    @model_validator(mode="before")
    @classmethod
    def _fill_alpha(cls, data):
        if isinstance(data, dict) and data.get("alpha") is None and "beta" in data:
            data = {**data, "alpha": 1.0 + float(data["beta"]) / 2.0}
        return data

    @field_validator("gamma2")
    @classmethod
    def _gamma2_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("gamma2 must be finite")
        return value

    @classmethod
    def toy(cls, **overrides) -> "ParameterSet":
        """Grid-representable defaults for running the construction."""
        values = dict(gamma1=1.0, gamma2=1.0, L=4.0, b=2, beta=0.51, a=5, T=1.0, q_max=2, mode="toy")
        values.update(overrides)
        return cls(**values)

    @property
    def beta_range(self):
        return 1.0 - self.gamma2 / 2.0, (12.0 - 6.0 * self.gamma2) / 11.0

    def check_ranges(self) -> None:
        """Raise ParameterRangeError unless the exponent ranges hold."""
        if not 1.0 <= self.gamma2 < 2.0:
            raise ParameterRangeError(f"gamma2={self.gamma2} outside [1, 2)")
        if not 0.0 < self.gamma1 < 2.0 - self.gamma2 / 2.0:
            raise ParameterRangeError(f"gamma1={self.gamma1} outside (0, {2.0 - self.gamma2 / 2.0})")
        lo, hi = self.beta_range
        if not lo < self.beta < hi:
            raise ParameterRangeError(f"beta={self.beta} outside ({lo}, {hi})")
        if abs(self.alpha - (1.0 + self.beta / 2.0)) > 1e-15:
            raise ParameterRangeError(f"alpha={self.alpha} differs from 1 + beta/2")

    def on_lattice(self) -> bool:
        return self.a % 5 == 0

    def log_lambda(self, q: int) -> float:
        return float(self.b) ** q * math.log(self.a)


def _exp(x: float) -> float:
    if x > 709.0:
        return math.inf
    if x < -745.0:
        return 0.0
    return math.exp(x)


class LevelScales(BaseModel):
    """Scales attached to level q: lambda_q, delta_q, t_q, and the step scales ell, tau_{q+1}.

    Values are carried as logarithms; the float fields saturate to 0 or inf.
    """

    model_config = ConfigDict(frozen=True)

    q: int
    log_lambda: float
    log_lambda_next: float
    log_delta: float
    t_q: float
    log_ell: float
    log_tau: float
    lambda_exact: Optional[int] = None
    lambda_next_exact: Optional[int] = None

    @property
    def lambda_q(self) -> float:
        return _exp(self.log_lambda)

    @property
    def delta_q(self) -> float:
        return _exp(self.log_delta)

    @property
    def ell(self) -> float:
        return _exp(self.log_ell)

    @property
    def tau(self) -> float:
        return _exp(self.log_tau)

    @property
    def lambda_next(self) -> float:
        return _exp(self.log_lambda_next)


def _exact_power(a: int, b: int, q: int) -> Optional[int]:
    if b ** q * math.log2(a) > EXACT_BITS:
        return None
    return a ** (b ** q)


def start_time(params: ParameterSet, q: int) -> float:
    """t_q = -2 + sum_{1 <= i <= q} delta_i^(1/2)."""
    return -2.0 + sum(_exp(-params.beta * params.log_lambda(i)) for i in range(1, q + 1))


def sequences(params: ParameterSet, q: int, grid_size: Optional[int] = None) -> LevelScales:
    """Scales of level q.

    ell = lambda_{q+1}^(-alpha) and
    tau_{q+1}^(-1) = ell^(-1/2) lambda_{q+1}^((3 - gamma2)/2) delta_{q+1}^(1/4).
    With ``grid_size`` the next stress support B(0, 4 lambda_{q+1}) must fit
    below the Nyquist frequency.
    """
    if q < 0 or q > params.q_max:
        raise ParameterRangeError(f"q={q} outside [0, {params.q_max}]")
    log_lam = params.log_lambda(q)
    log_next = params.log_lambda(q + 1)
    t_q = start_time(params, q)
    if not t_q < -1.0:
        raise ParameterRangeError(f"t_{q}={t_q} is not below -1; a^(b beta) is too small")
    if grid_size is not None and 4.0 * _exp(log_next) >= grid_size / 2:
        raise GridBound(f"4 lambda_{q + 1}={4.0 * _exp(log_next):.6g} does not fit below N/2={grid_size // 2}")

    log_ell = -params.alpha * log_next
    log_tau_inverse = -0.5 * log_ell + 0.5 * (3.0 - params.gamma2) * log_next - 0.5 * params.beta * log_next
    scales = LevelScales(
        q=q,
        log_lambda=log_lam,
        log_lambda_next=log_next,
        log_delta=-2.0 * params.beta * log_lam,
        t_q=t_q,
        log_ell=log_ell,
        log_tau=-log_tau_inverse,
        lambda_exact=_exact_power(params.a, params.b, q),
        lambda_next_exact=_exact_power(params.a, params.b, q + 1),
    )
    logger.debug(
        f"Level {q}: log lambda={log_lam:.6g}, t_q={t_q:.6f}, log ell={log_ell:.6g}, log tau={scales.log_tau:.6g}"
    )
    return scales

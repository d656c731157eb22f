from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from convexlab.exceptions import ConfigError
from convexlab.params.ledger import ParameterSet
from lab import config as defaults

RunMode = Literal["certify", "base", "step", "verify", "noise"]
ExportKind = Literal["spectra", "norms", "path", "snapshots"]


class RunConfig(BaseModel):
    """Validated configuration of one run."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: RunMode
    N: int = Field(default=defaults.DEFAULT_N, ge=8)
    seed: int = Field(default=defaults.DEFAULT_SEED, ge=0)
    output_dir: str = defaults.OUTPUT_DIR
    toy: bool = False
    deep_oscillation: bool = False
    threads: int = Field(default=defaults.THREADS, ge=1)
    residual_tol: float = Field(default=defaults.RESIDUAL_TOL, gt=0)
    base_residual_tol: float = Field(default=defaults.BASE_RESIDUAL_TOL, gt=0)
    precision: int = Field(default=defaults.INTERVAL_PREC, ge=24)

    # parameters: explicit values, or inputs to the feasible search
    gamma1: float = Field(default=1.0, gt=0)
    gamma2: float = Field(default=1.0, ge=1, lt=2)
    K: float = Field(default=2.0, ge=1)
    T: float = Field(default=1.0, gt=0)
    kappa: Optional[float] = Field(default=None, gt=0, lt=1)
    survival_samples: int = Field(default=0, ge=0)
    L: Optional[float] = Field(default=None, gt=1)
    a: Optional[int] = Field(default=None, ge=2)
    b: Optional[int] = Field(default=None, ge=2)
    beta: Optional[float] = Field(default=None, gt=0)

    # time layout
    dt: float = Field(default=1e-3, gt=0)
    base_start: float = -0.1
    base_stop: float = 0.4
    q: int = Field(default=0, ge=0)
    window_start: float = -1.0
    window_samples: int = Field(default=4, ge=1)
    steps_per_tau: int = Field(default=512, ge=8)

    @field_validator("N")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"N={value} is not a power of two")
        return value

    @field_validator("dt")
    @classmethod
    def _dt_on_lattice(cls, value: float) -> float:
        steps = 2.0 / value
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ValueError(f"2/dt must be an integer, got dt={value}")
        return value

    @model_validator(mode="after")
    def _consistent(self):
        given = [v is not None for v in (self.L, self.a, self.b, self.beta)]
        if self.base_stop <= self.base_start:
            raise ValueError("base_stop must exceed base_start")
        if not self.toy and any(given) and not all(given):
            raise ValueError("L, a, b and beta must be given together (or pass --toy to override single values)")
        if self.mode in ("base", "step", "verify", "noise") and not self.toy and not all(given):
            raise ValueError(f"mode {self.mode} needs --toy or an explicit (L, a, b, beta)")
        return self

    @property
    def explicit(self) -> bool:
        return self.L is not None

    def parameters(self) -> ParameterSet:
        """The parameter tuple this run is built from (not used by a search)."""
        if self.toy:
            overrides = {k: getattr(self, k) for k in ("L", "a", "b", "beta") if getattr(self, k) is not None}
            return ParameterSet.toy(gamma1=self.gamma1, gamma2=self.gamma2, K=self.K, T=self.T, **overrides)
        if self.explicit:
            return ParameterSet(
                gamma1=self.gamma1,
                gamma2=self.gamma2,
                L=self.L,
                b=self.b,
                beta=self.beta,
                a=self.a,
                K=self.K,
                T=self.T,
            )
        raise ConfigError("no parameter tuple: pass --toy or (L, a, b, beta)")


def parse_config_file(path: str) -> Dict[str, str]:
    """Read ``key = value`` lines; blank lines and lines starting with # are skipped."""
    values: Dict[str, str] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def build_run_config(file_values: Optional[Dict[str, Any]] = None, flag_values: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge the config file with CLI flags (flags win); unset keys fall back to environment defaults."""
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {e}") from e


# Artifacts written by a run
class LevelSummary(BaseModel):
    q: int
    N: int
    times: int
    window: List[float]
    norms: Dict[str, float]


class RunManifest(BaseModel):
    version: str
    mode: RunMode
    config: Dict[str, Any]
    seed: int
    params: Optional[Dict[str, Any]] = None
    T_L: Optional[float] = None
    levels: List[LevelSummary] = []
    component_ratios: Dict[str, float] = {}
    reports: Dict[str, str] = {}
    snapshots: List[str] = []
    fields: Dict[str, str] = {}
    green: bool
    exit_code: int

"""Temporal cutoffs chi_j whose squares form a partition of unity."""

import logging
import math
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from convexlab.exceptions import TimeGridTooCoarse
from convexlab.params.ledger import ParameterSet, sequences, start_time
from convexlab.spectral import smooth_step, smooth_step_derivative

logger = logging.getLogger(__name__)


class CutoffSystem(BaseModel):
    """chi_j(t) = cos(pi/2 step(2 |t/tau - j| - 1/2)).

    chi_j is 1 on |t/tau - j| <= 1/4 and 0 on |t/tau - j| >= 3/4, and
    chi_j^2 + chi_{j+1}^2 = 1 between the two anchors because the step
    satisfies step(s) + step(1 - s) = 1.
    """

    model_config = ConfigDict(frozen=True)

    tau: float = Field(gt=0)
    j_min: int
    j_max: int

    @property
    def j_range(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def anchor(self, j: int) -> float:
        return j * self.tau

    @staticmethod
    def family_label(j: int) -> int:
        """Odd cutoffs carry the first direction family, even ones the second."""
        return 1 if j % 2 else 2

    def _argument(self, j: int, t) -> Tuple[np.ndarray, np.ndarray]:
        s = np.asarray(t, dtype=float) / self.tau - j
        return 2.0 * np.abs(s) - 0.5, np.sign(s)

    def chi(self, j: int, t) -> np.ndarray:
        u, _ = self._argument(j, t)
        values = np.cos(0.5 * np.pi * smooth_step(u))
        return np.where(u <= 0.0, 1.0, np.where(u >= 1.0, 0.0, values))

    def chi_dot(self, j: int, t) -> np.ndarray:
        u, sign = self._argument(j, t)
        rate = -np.sin(0.5 * np.pi * smooth_step(u)) * 0.5 * np.pi * smooth_step_derivative(u)
        return np.where((u <= 0.0) | (u >= 1.0), 0.0, rate * 2.0 * sign / self.tau)

    def active(self, t: float) -> List[int]:
        """Indices with chi_j(t) != 0, in increasing order."""
        centre = t / self.tau
        candidates = range(math.floor(centre) - 1, math.ceil(centre) + 2)
        return [j for j in candidates if self.j_min <= j <= self.j_max and abs(centre - j) < 0.75]

    def partition_residual(self, t: np.ndarray) -> float:
        """max |sum_j chi_j^2 - 1| over the sample times."""
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for j in self.j_range:
            total += self.chi(j, t) ** 2
        return float(np.abs(total - 1.0).max(initial=0.0))


def build_cutoffs(params: ParameterSet, q: int, T_L: float, dt: float) -> CutoffSystem:
    """Cutoffs at scale tau_{q+1} covering [t_{q+1}, T_L]."""
    tau = sequences(params, q).tau
    if tau < 4.0 * dt:
        raise TimeGridTooCoarse(f"tau={tau:.3e} is below four time steps of {dt:.3e}")
    t_next = start_time(params, q + 1)
    cutoffs = CutoffSystem(tau=tau, j_min=math.floor(t_next / tau), j_max=math.ceil(T_L / tau))
    logger.info(f"Cutoffs for level {q + 1}: tau={tau:.6e}, j in [{cutoffs.j_min}, {cutoffs.j_max}]")
    return cutoffs

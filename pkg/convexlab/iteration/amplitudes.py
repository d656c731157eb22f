"""Wave amplitudes a_{k,j} from the geometric coefficients of the transported stress."""

import logging
import time
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.exceptions import OutsideGeometricBall
from convexlab.geometry import GeometricCoefficients
from convexlab.iteration.cutoffs import CutoffSystem
from convexlab.iteration.flow import FlowMapSet, TransportedStress
from convexlab.stochastic import NoiseProfile

logger = logging.getLogger(__name__)


class AmplitudeSet(BaseModel):
    """Per (slice, j): pair amplitudes a_p (3, N, N) and a_bar = Upsilon_l^(-1/2) a.

    Amplitudes are stored per +/- pair of the family of j, since a_{-k} = a_k.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lam: float
    delta: float
    gamma2: float
    times: np.ndarray
    upsilon_l: np.ndarray
    a: Dict[Tuple[int, int], np.ndarray]
    a_bar: Dict[Tuple[int, int], np.ndarray]
    prefactor: Dict[int, float]
    gamma_sup: float

    def bound_ratio(self) -> float:
        """max |a_{k,j}| / (gamma_sup M0(tau j)^(1/2) delta^(1/2) / sqrt(gamma2))."""
        worst = 0.0
        for (n, j), a in self.a.items():
            worst = max(worst, float(np.abs(a).max()) / (self.gamma_sup * self.prefactor[j]))
        return worst


def build_amplitudes(
    transported: TransportedStress,
    flow_maps: FlowMapSet,
    cutoffs: CutoffSystem,
    coefficients: Dict[int, GeometricCoefficients],
    profile: NoiseProfile,
    upsilon_l: np.ndarray,
    lam: float,
    delta: float,
    gamma2: float,
    gamma_sup: float,
) -> AmplitudeSet:
    """a_{k,j} = (M0(tau j)^(1/2) / sqrt(gamma2)) delta^(1/2) gamma_k(Id - R_{q,j} / (lam^(2-gamma2) delta M0(tau j))).

    ``coefficients`` maps a family label (1 or 2) to its coefficient
    functionals; ``upsilon_l`` holds Upsilon_l at the flow-map slice times.
    """
    start_time = time.time()
    a, a_bar, prefactor = {}, {}, {}
    for (n, j), R in transported.samples.items():
        tau_j = cutoffs.anchor(j)
        M = float(profile.M0(tau_j))
        scale = lam ** (2.0 - gamma2) * delta * M
        coeffs = coefficients[cutoffs.family_label(j)]
        t = float(flow_maps.times[n])
        try:
            gammas = coeffs.gamma(1.0 - R[0] / scale, -R[1] / scale, 1.0 - R[2] / scale, time=t)
        except OutsideGeometricBall as exc:
            raise OutsideGeometricBall(
                f"cutoff j={j}: {exc}", time=t, index=exc.index, family_index=exc.family_index
            ) from exc
        prefactor[j] = float(np.sqrt(M * delta / gamma2))
        a[(n, j)] = prefactor[j] * gammas
        a_bar[(n, j)] = a[(n, j)] / np.sqrt(upsilon_l[n])
    amplitudes = AmplitudeSet(
        lam=lam,
        delta=delta,
        gamma2=gamma2,
        times=flow_maps.times,
        upsilon_l=np.asarray(upsilon_l, dtype=float),
        a=a,
        a_bar=a_bar,
        prefactor=prefactor,
        gamma_sup=gamma_sup,
    )
    logger.info(
        f"Built {len(a)} amplitude sets in {time.time() - start_time:.4f} seconds, "
        f"bound ratio {amplitudes.bound_ratio():.4f}"
    )
    return amplitudes

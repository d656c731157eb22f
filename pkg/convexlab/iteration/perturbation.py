"""The perturbation w_{q+1}: band-projected wave packets carried by the flow maps."""

import logging
import time
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.exceptions import GridBound, NonRealOutput, OffLattice
from convexlab.geometry import HEIGHT, DirectionFamily, building_block
from convexlab.iteration.amplitudes import AmplitudeSet
from convexlab.iteration.cutoffs import CutoffSystem
from convexlab.iteration.flow import FlowMapSet
from convexlab.spectral import (
    Grid,
    VectorField2,
    band_symbol,
    conjugate_reflect,
    leray_coeffs,
    outside_fraction,
    realify,
    to_spectral,
)

logger = logging.getLogger(__name__)

IMAG_TOL = 1e-12


class Perturbation(BaseModel):
    """w_{q+1} at the flow-map slice times.

    ``packets[(n, j, i)]`` holds the coefficients of P_{q+1,k}(a_bar b_k(lam Phi_j))
    for direction i of the family of j, without the cutoff factor.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lam: float
    w: VectorField2
    packets: Dict[Tuple[int, int, int], np.ndarray]
    chi: Dict[Tuple[int, int], float]
    annulus_outside: float
    imaginary_gap: float

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.w.time_tag, dtype=float)


def check_lattice(families: Iterable[DirectionFamily], lam: float) -> None:
    """lam k must be an integer wavevector for every direction in use."""
    for family in families:
        for h in family.heights:
            for component in h:
                value = lam * component / HEIGHT
                if abs(value - round(value)) > 1e-9 * max(1.0, abs(value)):
                    raise OffLattice(f"lambda={lam:g} times k={h}/{HEIGHT} is not an integer wavevector")


def packet_samples(a_bar: np.ndarray, family: DirectionFamily, index: int, phi: np.ndarray, lam: float) -> np.ndarray:
    """a_bar_k b_k(lam Phi) in physical space (complex, shape (2, N, N))."""
    k = family.directions[index]
    b, _ = building_block(k, lam * phi)
    return a_bar[family.pair_of(index)] * b


def project_packet(samples: np.ndarray, grid: Grid, k: np.ndarray, lam: float) -> np.ndarray:
    """Coefficients of the Leray projection of the band projection around lam k."""
    coeffs = to_spectral(samples, grid) * band_symbol(grid, (float(k[0]), float(k[1])), lam)
    return leray_coeffs(coeffs, grid)


def build_perturbation(
    amplitudes: AmplitudeSet,
    flow_maps: FlowMapSet,
    cutoffs: CutoffSystem,
    families: Dict[int, DirectionFamily],
    keep_packets: Optional[Iterable[int]] = None,
) -> Perturbation:
    """w = sum_j chi_j sum_{k in family(j)} P_{q+1,k}(a_bar_{k,j} b_k(lam Phi_j)).

    Packets are formed from complex samples and summed; the sum must be
    conjugate-symmetric to 1e-12 before it is made exactly real.
    """
    start_time = time.time()
    grid, lam = flow_maps.grid, amplitudes.lam
    if not 2.0 * lam < grid.N / 2:
        raise GridBound(f"2 lambda={2 * lam:g} does not fit below N/2={grid.N // 2}")
    check_lattice(families.values(), lam)
    keep = set(range(flow_maps.times.size)) if keep_packets is None else set(keep_packets)

    slices, packets, chi = [], {}, {}
    worst_gap = 0.0
    for n, t in enumerate(flow_maps.times):
        total = np.zeros((2, grid.N, grid.N), dtype=complex)
        for j in flow_maps.active(n):
            chi[(n, j)] = float(cutoffs.chi(j, float(t)))
            family = families[cutoffs.family_label(j)]
            phi = flow_maps.phi(n, j)
            for i, k in enumerate(family.directions):
                samples = packet_samples(amplitudes.a_bar[(n, j)], family, i, phi, lam)
                coeffs = project_packet(samples, grid, k, lam)
                if n in keep:
                    packets[(n, j, i)] = coeffs
                total += chi[(n, j)] * coeffs
        scale = np.abs(total).max(initial=0.0)
        gap = float(np.abs(total - conjugate_reflect(total)).max(initial=0.0))
        if gap > IMAG_TOL * scale:
            raise NonRealOutput(f"perturbation at t={t:.6f} has imaginary part {gap:.3e} (scale {scale:.3e})")
        worst_gap = max(worst_gap, gap / scale if scale > 0 else 0.0)
        slices.append(realify(total))

    coeffs = np.stack(slices)
    annulus = (grid.kmag >= 0.5 * lam) & (grid.kmag <= 2.0 * lam)
    outside = outside_fraction(coeffs, annulus)
    logger.info(
        f"Perturbation at {len(slices)} times built in {time.time() - start_time:.4f} seconds; "
        f"outside annulus {outside:.2e}, imaginary gap {worst_gap:.2e}"
    )
    return Perturbation(
        lam=lam,
        w=VectorField2(grid=grid, coeffs=coeffs, time_tag=flow_maps.times, divergence_free=True),
        packets=packets,
        chi=chi,
        annulus_outside=outside,
        imaginary_gap=worst_gap,
    )

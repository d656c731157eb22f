"""Universal constants used by the parameter ledger.

None of these have published numerical values; they are computed from the
constructions in this package and carried in every certificate.
"""

import logging
import math
import time
from functools import lru_cache
from typing import Literal, Tuple

import numpy as np
from mpmath import iv
from pydantic import BaseModel, ConfigDict, Field

from convexlab.geometry import gamma_coefficients, joint_constants, standard_families
from convexlab.params.intervals import enclose, imax, interval_precision, lower_float, upper_float
from convexlab.spectral import band_kernel_l1_mass

logger = logging.getLogger(__name__)

SumConvention = Literal["series", "integral", "lattice"]

LATTICE_RADIUS = 1000
UNIT_ROUNDOFF = 2.0 ** -53


class LedgerConstants(BaseModel):
    """Enclosed constants; every value is an upper bound except ``epsilon_gamma``."""

    model_config = ConfigDict(frozen=True)

    gamma1: float
    norm_convention: SumConvention
    epsilon_gamma: float = Field(gt=0)
    gamma_sup: float = Field(gt=0)
    C1: float = Field(gt=0)
    C0: float = Field(gt=0)
    CS: float = Field(gt=0)
    CG: float = Field(gt=0)
    lattice_sum: Tuple[float, float]
    lattice_radius: int = LATTICE_RADIUS
    precision: int = 53


def _disc_tail(radius: float, s):
    """Enclosure of an upper bound for sum_{|k| > R} |k|^(-2s), s > 1.

    Every lattice point outside the disc owns a unit square contained in
    {|x| > R - sqrt(2)/2}, on which |k| <= |x| (1 + sqrt(2)/(2R)).
    """
    R = enclose(radius)
    half_diag = iv.sqrt(2) / 2
    inner = R - half_diag
    return (1 + half_diag / R) ** (2 * s) * 2 * iv.pi * inner ** (2 - 2 * s) / (2 * s - 2)


@lru_cache(maxsize=8)
def _shell_counts(radius: int) -> np.ndarray:
    """counts[n] = #{k in Z^2 : |k|^2 = n} for n <= radius^2."""
    k = np.arange(-radius, radius + 1, dtype=np.int64)
    sq = (k[:, None] ** 2 + k[None, :] ** 2).ravel()
    sq = sq[sq <= radius * radius]
    return np.bincount(sq, minlength=radius * radius + 1)


def lattice_power_sum(s: float, radius: int = LATTICE_RADIUS):
    """Enclosure of sum over k != 0 of |k|^(-2s).

    The disc part is summed in double precision by shells |k|^2 = n, with the
    accumulated rounding error bounded by (terms + 8) u times the sum; the
    remainder outside the disc is bounded by ``_disc_tail``.
    """
    counts = _shell_counts(radius)
    n = np.nonzero(counts)[0]
    n = n[n > 0]
    terms = counts[n] * np.power(n.astype(float), -float(s))
    partial = float(np.sum(terms))
    rel = (n.size + 8) * UNIT_ROUNDOFF * 1.01
    body = iv.mpf([partial * (1.0 - rel), partial * (1.0 + rel)])
    tail = _disc_tail(radius, enclose(s))
    return body + iv.mpf([0, tail.b])


def sobolev_constant(gamma1: float, convention: SumConvention = "series"):
    """Enclosure of C_S with ||f||_inf <= C_S ||f||_{H^(3 - gamma1)} for mean-zero f.

    "series" measures the seminorm on Fourier-series coefficients, where
    C_S = (sum |k|^(2(gamma1 - 3)))^(1/2). "integral" and "lattice" follow the
    two conventions of ``NormSpec`` and divide by 2pi and (2pi)^2.
    """
    total = lattice_power_sum(3.0 - gamma1)
    root = iv.sqrt(total)
    if convention == "integral":
        root = root / (2 * iv.pi)
    elif convention == "lattice":
        root = root / (2 * iv.pi) ** 2
    return total, root


def gagliardo_nirenberg_constant(gamma2: float):
    """Admissible C_G for ||f||_{C^t} + ||Lambda^t f||_inf <= C_G ||f||_2^(g/3) ||Lambda^3 f||_2^(1-g/3).

    Here t = 2 - gamma2. Every term on the left is bounded by
    (2 + 2^(1-t)) sum |k|^t |c_k|. Splitting at R = (||Lambda^3 f|| / ||f||)^(1/3) >= 1
    and using Cauchy-Schwarz on both sides gives the constant
    (2 + 2^(1-t)) / (2 pi) * [sqrt(pi) (1 + sqrt(2)/2) + sqrt(tail(1))],
    where both lattice sums are bounded by their worst case R = 1.
    """
    t = 2 - enclose(gamma2)
    weight = 2 + iv.exp((1 - t) * iv.log(2))
    low = iv.sqrt(iv.pi) * (1 + iv.sqrt(2) / 2)
    high = iv.sqrt(_disc_tail(1, 3 - t))
    return weight / (2 * iv.pi) * (low + high)


def derive_constants(
    gamma1: float,
    norm_convention: SumConvention = "series",
    gamma2: float = 1.0,
    precision: int = 53,
) -> LedgerConstants:
    """Compute epsilon_gamma, gamma_sup, C1, C0, C_S and C_G.

    C0 = max{pi/2, 16 gamma_sup C1} is taken at the upper end of its
    enclosure.
    """
    start = time.time()
    first, second = (gamma_coefficients(f) for f in standard_families())
    epsilon_gamma, gamma_sup = joint_constants(first, second)
    # stored values are bumped one ulp up; C0 is enclosed from the stored ones
    gamma_sup = math.nextafter(float(gamma_sup), math.inf)
    c1 = math.nextafter(float(band_kernel_l1_mass()), math.inf)

    with interval_precision(precision):
        c0 = imax(iv.pi / 2, 16 * enclose(gamma_sup) * enclose(c1))
        total, cs = sobolev_constant(gamma1, norm_convention)
        cg = gagliardo_nirenberg_constant(gamma2)
        constants = LedgerConstants(
            gamma1=gamma1,
            norm_convention=norm_convention,
            epsilon_gamma=epsilon_gamma,
            gamma_sup=gamma_sup,
            C1=c1,
            C0=upper_float(c0),
            CS=upper_float(cs),
            CG=upper_float(cg),
            lattice_sum=(lower_float(total), upper_float(total)),
            precision=precision,
        )
    logger.info(
        f"Constants for gamma1={gamma1}: C1={constants.C1:.6f}, C0={constants.C0:.6f}, "
        f"CS={constants.CS:.6f}, CG={constants.CG:.4f} in {time.time() - start:.4f} seconds"
    )
    return constants

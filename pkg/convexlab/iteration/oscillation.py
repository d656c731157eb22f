"""Verification layer splitting the oscillation stress R_O into its parts.

R_O is computed directly by ``assemble_stresses``; this module rebuilds
R_O,approx, the low-frequency cancellation O1 and the high-frequency
interactions from the wave packets, and infers R_O,low as the remainder.
"""

import logging
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from convexlab.exceptions import DeepModeTooLarge
from convexlab.geometry import DirectionFamily
from convexlab.spectral import (
    TWO_PI,
    Grid,
    annulus_symbol,
    anti_divergence_coeffs,
    lambda_symbol,
    nonlinear_coeffs,
    realify,
    tensor_divergence_coeffs,
    tensor_operator_norm,
    to_physical,
    to_spectral,
)

logger = logging.getLogger(__name__)

DEEP_MAX_N = 64


class PacketGroup(BaseModel):
    """Everything one active cutoff j contributes at a single time."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    j: int
    chi: float
    family: DirectionFamily
    R_qj: np.ndarray
    a: np.ndarray
    packets: Dict[int, np.ndarray]


class OscillationSlice(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    lam: float
    gamma2: float
    upsilon_l: float
    R_l: np.ndarray
    R_O: np.ndarray
    groups: List[PacketGroup]


class OscillationReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    approx: np.ndarray
    high: np.ndarray
    low: np.ndarray
    o1_tracefree_residual: float
    o1_scale: float
    norms: Dict[str, float]
    deep_pair_gap: Optional[float] = None
    deep_low_gap: Optional[float] = None


def _sup_tensor(coeffs: np.ndarray, grid: Grid) -> float:
    return float(tensor_operator_norm(to_physical(coeffs, grid)).max())


def _rank_one(k: np.ndarray) -> np.ndarray:
    # k^perp (x) k^perp as (r11, r12, r22)
    return np.array([k[1] ** 2, -k[0] * k[1], k[0] ** 2])


def o1_tensor(piece: OscillationSlice) -> np.ndarray:
    """sum chi_j^2 R_{q,j} + (gamma2 lam^(2-gamma2)/2) sum chi_j^2 a_{k,j}^2 (k^perp (x) k^perp - Id)."""
    N = piece.grid.N
    total = np.zeros((3, N, N))
    weight = 0.5 * piece.gamma2 * piece.lam ** (2.0 - piece.gamma2)
    identity = np.array([1.0, 0.0, 1.0])
    for group in piece.groups:
        c2 = group.chi**2
        total += c2 * group.R_qj
        for i, k in enumerate(group.family.directions):
            amp_sq = group.a[group.family.pair_of(i)] ** 2
            total += (c2 * weight) * (_rank_one(k) - identity)[:, None, None] * amp_sq
    return total


def _weighted_packets(piece: OscillationSlice):
    """W_{j,i} = Upsilon_l^(1/2) chi_j P_k(a_bar b_k), so that sum W = Upsilon_l^(1/2) w."""
    root = np.sqrt(piece.upsilon_l)
    return {(g.j, i): root * g.chi * c for g in piece.groups for i, c in g.packets.items()}


def _pair_terms(piece: OscillationSlice, weighted, bilinear) -> np.ndarray:
    """sum over j and k of N(W_{j,k}, W_{j,-k})."""
    total = np.zeros((2, piece.grid.N, piece.grid.N), dtype=complex)
    for g in piece.groups:
        for i in g.packets:
            total += bilinear(weighted[(g.j, i)], weighted[(g.j, g.family.partner(i))])
    return realify(total)


def direct_bilinear(u: np.ndarray, v: np.ndarray, grid: Grid, gamma2: float, rel_tol: float = 1e-14) -> np.ndarray:
    """(Lambda^(2-gamma2) u)^perp (grad^perp . v) by a direct sum over active mode pairs.

    Output frequencies wrap modulo N, which is the discrete convolution the
    pseudo-spectral product computes.
    """
    N = grid.N
    lu = u * lambda_symbol(grid, 2.0 - gamma2)
    lu_perp = np.stack([-lu[1], lu[0]])
    curl = -1j * grid.k2 * v[0] + 1j * grid.k1 * v[1]

    def active(c):
        mags = np.abs(c).reshape(-1, N, N).max(axis=0)
        peak = mags.max(initial=0.0)
        return np.argwhere(mags > rel_tol * peak) if peak > 0 else np.zeros((0, 2), dtype=int)

    left, right = active(lu_perp), active(curl)
    out = np.zeros((2, N, N), dtype=complex)
    if not left.size or not right.size:
        return out
    rows = (left[:, None, 0] + right[None, :, 0]) % N
    cols = (left[:, None, 1] + right[None, :, 1]) % N
    c_right = curl[right[:, 0], right[:, 1]]
    for comp in range(2):
        c_left = lu_perp[comp][left[:, 0], left[:, 1]]
        np.add.at(out[comp], (rows.ravel(), cols.ravel()), np.outer(c_left, c_right).ravel() / TWO_PI**2)
    return out * grid.keep


def decompose_oscillation(piece: OscillationSlice, deep: bool = False) -> OscillationReport:
    """Split R_O = R_O,approx + R_O,low + R_O,high at one time.

    R_O,approx = sum chi_j^2 (R_l - R_{q,j}); R_O,high = B P_annulus of the
    interactions with k + k' != 0; R_O,low is the remainder. The trace-free
    part of O1 must vanish by the geometric decomposition. ``deep`` re-evaluates
    the k + k' = 0 interactions by direct double sums (N <= 64 only).
    """
    grid = piece.grid
    if deep and grid.N > DEEP_MAX_N:
        raise DeepModeTooLarge(f"deep oscillation check needs N <= {DEEP_MAX_N}, got N={grid.N}")

    R_l_phys = to_physical(piece.R_l, grid)
    transported = sum(g.chi**2 * g.R_qj for g in piece.groups)
    approx = to_spectral(R_l_phys - transported, grid)

    o1 = o1_tensor(piece)
    tracefree = np.sqrt((0.5 * (o1[0] - o1[2])) ** 2 + o1[1] ** 2)
    o1_scale = float(tensor_operator_norm(transported).max())
    o1_residual = float(tracefree.max()) / o1_scale if o1_scale > 0 else float(tracefree.max())

    def fft_bilinear(u, v):
        return nonlinear_coeffs(u, v, grid, piece.gamma2, real=False)

    weighted = _weighted_packets(piece)
    W = realify(sum(weighted.values())) if weighted else np.zeros((2, grid.N, grid.N), dtype=complex)
    full = nonlinear_coeffs(W, W, grid, piece.gamma2)
    pairs = _pair_terms(piece, weighted, fft_bilinear)
    annulus = annulus_symbol(grid, piece.lam)
    high = anti_divergence_coeffs(annulus * (full - pairs), grid)
    low = piece.R_O - approx - high

    norms = {
        "O": _sup_tensor(piece.R_O, grid),
        "O_approx": _sup_tensor(approx, grid),
        "O_high": _sup_tensor(high, grid),
        "O_low": _sup_tensor(low, grid),
    }
    pair_gap = low_gap = None
    if deep:
        pairs_direct = _pair_terms(
            piece, weighted, lambda u, v: direct_bilinear(u, v, grid, piece.gamma2)
        )
        B_pairs = anti_divergence_coeffs(pairs, grid)
        pair_scale = _sup_tensor(B_pairs, grid)
        pair_gap = _sup_tensor(B_pairs - anti_divergence_coeffs(pairs_direct, grid), grid) / max(pair_scale, 1e-300)
        kernel_low = (
            anti_divergence_coeffs(tensor_divergence_coeffs(to_spectral(transported, grid), grid), grid)
            + anti_divergence_coeffs(pairs_direct, grid)
            + anti_divergence_coeffs((1.0 - annulus) * (full - pairs), grid)
        )
        inferred_low = anti_divergence_coeffs(tensor_divergence_coeffs(low, grid), grid)
        low_gap = _sup_tensor(inferred_low - kernel_low, grid) / max(_sup_tensor(inferred_low, grid), 1e-300)
        logger.info(f"Deep oscillation check: pair gap {pair_gap:.3e}, low gap {low_gap:.3e}")

    logger.debug(f"Oscillation split: O1 trace-free residual {o1_residual:.3e}, norms {norms}")
    return OscillationReport(
        approx=approx,
        high=high,
        low=low,
        o1_tracefree_residual=o1_residual,
        o1_scale=o1_scale,
        norms=norms,
        deep_pair_gap=pair_gap,
        deep_low_gap=low_gap,
    )

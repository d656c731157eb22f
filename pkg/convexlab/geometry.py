"""Direction families, coefficient functionals and plane-wave building blocks.

A family holds three +/- pairs of unit directions k with 5k integer. For a
symmetric matrix R the coefficients c_p(R) solve

    R = sum_p c_p(R) k_p^perp (x) k_p^perp,

and gamma_k(R) = sqrt(c_p(R)) for both members of pair p, so that
R = 1/2 sum_k gamma_k(R)^2 k^perp (x) k^perp over the whole family.
"""

import logging
from fractions import Fraction
from itertools import combinations
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from convexlab.exceptions import DegenerateFamily, GridBound, NonRealField, OutsideGeometricBall
from convexlab.spectral import (
    Grid,
    VectorField2,
    nonlinear_term,
    tensor_divergence_coeffs,
    to_physical,
    to_spectral,
    two_term_nonlinearity,
)

logger = logging.getLogger(__name__)

HEIGHT = 5
BALL_FLOOR = 1e-3


class DirectionFamily(BaseModel):
    """Unit directions stored as integer heights 5k."""

    model_config = ConfigDict(frozen=True)

    label: int
    heights: Tuple[Tuple[int, int], ...]

    @field_validator("heights")
    @classmethod
    def _unit_and_symmetric(cls, value):
        for h in value:
            if h[0] ** 2 + h[1] ** 2 != HEIGHT**2:
                raise ValueError(f"height {h} is not 5 times a unit vector")
        if any((-h[0], -h[1]) not in value for h in value):
            raise ValueError("family must be closed under k -> -k")
        return value

    @model_validator(mode="after")
    def _separated(self):
        for h, g in combinations(self.heights, 2):
            s = (h[0] + g[0], h[1] + g[1])
            if s != (0, 0) and 4 * (s[0] ** 2 + s[1] ** 2) < HEIGHT**2:
                raise ValueError(f"|k + k'| < 1/2 for {h}, {g}")
        return self

    @property
    def directions(self) -> np.ndarray:
        return np.asarray(self.heights, dtype=float) / HEIGHT

    @property
    def representatives(self) -> List[int]:
        """Index of the first member of every +/- pair, in storage order."""
        seen, reps = set(), []
        for i, h in enumerate(self.heights):
            if (-h[0], -h[1]) not in seen:
                reps.append(i)
            seen.add(h)
        return reps

    def partner(self, index: int) -> int:
        h = self.heights[index]
        return self.heights.index((-h[0], -h[1]))

    def pair_of(self, index: int) -> int:
        """Position in ``representatives`` of the pair containing ``index``."""
        reps = self.representatives
        return reps.index(index) if index in reps else reps.index(self.partner(index))

    def min_separation(self) -> float:
        values = [
            np.hypot(h[0] + g[0], h[1] + g[1]) / HEIGHT
            for h, g in combinations(self.heights, 2)
            if (h[0] + g[0], h[1] + g[1]) != (0, 0)
        ]
        return float(min(values))


def standard_families() -> Tuple[DirectionFamily, DirectionFamily]:
    """The 3-4-5 families used throughout the construction."""
    gamma1 = DirectionFamily(label=1, heights=((5, 0), (-5, 0), (3, 4), (-3, -4), (3, -4), (-3, 4)))
    gamma2 = DirectionFamily(label=2, heights=((0, 5), (0, -5), (4, 3), (-4, -3), (-4, 3), (4, -3)))
    if set(gamma1.heights) & set(gamma2.heights):
        raise DegenerateFamily("standard families overlap")
    return gamma1, gamma2


def _rank_one_column(h: Tuple[int, int]) -> List[Fraction]:
    # k^perp (x) k^perp for k = h / 5, as (r11, r12, r22)
    a, b = Fraction(h[0], HEIGHT), Fraction(h[1], HEIGHT)
    return [b * b, -a * b, a * a]


def _solve_exact(matrix: List[List[Fraction]]) -> List[List[Fraction]]:
    """Inverse of a 3x3 rational matrix by Gauss-Jordan elimination."""
    n = len(matrix)
    aug = [row[:] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            raise DegenerateFamily("rank-one tensors of the family do not span Sym(2)")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        scale = aug[col][col]
        aug[col] = [x / scale for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [x - factor * y for x, y in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def _nuclear_norm(g11: float, g12: float, g22: float) -> float:
    trace, det = g11 + g22, g11 * g22 - g12 * g12
    return abs(trace) if det >= 0 else float(np.sqrt(trace * trace - 4.0 * det))


class GeometricCoefficients(BaseModel):
    """Linear coefficient functionals of one family and their ball of validity.

    ``functionals[p]`` holds (alpha, beta, delta) with
    c_p(R) = alpha r11 + beta r12 + delta r22.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    family: DirectionFamily
    functionals: Tuple[Tuple[Fraction, Fraction, Fraction], ...]
    epsilon_gamma: float
    gamma_sup: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.functionals])

    def at_identity(self) -> np.ndarray:
        return np.array([float(row[0] + row[2]) for row in self.functionals])

    def c_values(self, r11, r12, r22) -> np.ndarray:
        m = self.matrix
        return np.stack([m[p, 0] * r11 + m[p, 1] * r12 + m[p, 2] * r22 for p in range(3)])

    def distance_from_identity(self, r11, r12, r22) -> np.ndarray:
        """Pointwise operator norm of R - Id."""
        e11, e22 = np.asarray(r11) - 1.0, np.asarray(r22) - 1.0
        return np.abs(0.5 * (e11 + e22)) + np.sqrt((0.5 * (e11 - e22)) ** 2 + np.asarray(r12) ** 2)

    def gamma(self, r11, r12, r22, time: float = None) -> np.ndarray:
        """gamma values of the three pairs; raises outside B(Id, epsilon_gamma)."""
        dist = self.distance_from_identity(r11, r12, r22)
        worst = float(np.max(dist))
        if worst > self.epsilon_gamma:
            index = np.unravel_index(int(np.argmax(dist)), np.shape(dist)) if np.ndim(dist) else ()
            raise OutsideGeometricBall(
                f"argument at distance {worst:.4e} from Id exceeds epsilon_gamma={self.epsilon_gamma:.4e}",
                time=time,
                index=tuple(int(i) for i in index),
                family_index=self.family.label,
            )
        return np.sqrt(self.c_values(r11, r12, r22))

    def reconstruct(self, r11, r12, r22) -> np.ndarray:
        """1/2 sum_k gamma_k^2 k^perp (x) k^perp over the family, as (r11, r12, r22)."""
        gammas = self.gamma(r11, r12, r22)
        total = 0.0
        for i, h in enumerate(self.family.heights):
            col = np.array([float(x) for x in _rank_one_column(h)])
            total = total + 0.5 * np.multiply.outer(col, gammas[self.family.pair_of(i)] ** 2)
        return total

    def report(self) -> dict:
        return {
            "label": self.family.label,
            "heights": [list(h) for h in self.family.heights],
            "functionals": [[str(x) for x in row] for row in self.functionals],
            "c_at_identity": self.at_identity().tolist(),
            "epsilon_gamma": self.epsilon_gamma,
            "gamma_sup": self.gamma_sup,
        }


def gamma_coefficients(family: DirectionFamily, floor: float = BALL_FLOOR) -> GeometricCoefficients:
    """Solve for the coefficient functionals and the largest admissible ball.

    With c_p(E) = <G_p, E>, the minimum of c_p over the operator-norm ball of
    radius r around Id is c_p(Id) - r ||G_p||_*, so the largest radius keeping
    c_p >= floor * c_p(Id) is (1 - floor) c_p(Id) / ||G_p||_*.
    """
    reps = family.representatives
    if len(reps) != 3:
        raise DegenerateFamily(f"family {family.label} has {len(reps)} pairs, expected 3")
    columns = [_rank_one_column(family.heights[i]) for i in reps]
    system = [[columns[p][row] for p in range(3)] for row in range(3)]
    inverse = _solve_exact(system)
    functionals = tuple(tuple(row) for row in inverse)

    radii, peaks = [], []
    for alpha, beta, delta in functionals:
        at_id = float(alpha + delta)
        if at_id <= 0:
            raise DegenerateFamily(f"c_p(Id) = {at_id} is not positive")
        nuclear = _nuclear_norm(float(alpha), float(beta) / 2.0, float(delta))
        radii.append((1.0 - floor) * at_id / nuclear)
        peaks.append((at_id, nuclear))
    epsilon = min(radii)
    gamma_sup = max(np.sqrt(at_id + epsilon * nuclear) for at_id, nuclear in peaks)
    logger.info(f"Family {family.label}: c(Id)={[p[0] for p in peaks]}, epsilon_gamma={epsilon:.6f}")
    return GeometricCoefficients(
        family=family,
        functionals=functionals,
        epsilon_gamma=float(epsilon),
        gamma_sup=float(gamma_sup),
    )


def joint_constants(
    first: GeometricCoefficients, second: GeometricCoefficients
) -> Tuple[float, float]:
    """(epsilon_gamma, gamma_sup) valid for both families on a common ball."""
    epsilon = min(first.epsilon_gamma, second.epsilon_gamma)
    sup = 0.0
    for coeffs in (first, second):
        for alpha, beta, delta in coeffs.functionals:
            at_id = float(alpha + delta)
            nuclear = _nuclear_norm(float(alpha), float(beta) / 2.0, float(delta))
            sup = max(sup, float(np.sqrt(at_id + epsilon * nuclear)))
    return float(epsilon), sup


def building_block(k: Sequence[float], xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """b_k(xi) = i k^perp e^{i k.xi} and c_k(xi) = e^{i k.xi}.

    ``xi`` carries its two coordinates on the leading axis; b_k does too.
    """
    xi = np.asarray(xi, dtype=float)
    c = np.exp(1j * (k[0] * xi[0] + k[1] * xi[1]))
    b = np.stack([-1j * k[1] * c, 1j * k[0] * c])
    return b, c


class WavefieldReport(BaseModel):
    divergence_identity_residual: float
    pairing_identity_residual: float
    scale: float


def wavefield_identities_check(
    family: DirectionFamily,
    amplitudes: Sequence[complex],
    grid: Grid,
    lam: int = HEIGHT,
) -> WavefieldReport:
    """Check div(W x W) = 1/2 grad|W|^2 + (curl W) W^perp and the pairing sum.

    W(x) = sum_k a_k b_k(lam x) with lam k integer, so W is a trigonometric
    polynomial and both sides are evaluated spectrally.
    """
    amplitudes = np.asarray(amplitudes, dtype=complex)
    if amplitudes.shape != (len(family.heights),):
        raise ValueError("one amplitude per direction is required")
    for i in range(len(family.heights)):
        j = family.partner(i)
        if not np.isclose(amplitudes[j], np.conj(amplitudes[i]), rtol=0.0, atol=1e-14 * max(1.0, abs(amplitudes[i]))):
            raise NonRealField(f"a_(-k) != conj(a_k) for direction {family.heights[i]}")
    if lam % HEIGHT:
        raise ValueError(f"lam={lam} must be a multiple of {HEIGHT} so lam k is an integer wavevector")
    if not 2 * lam < grid.N // 2:
        raise GridBound(f"grid N={grid.N} cannot hold products at frequency {2 * lam}")

    x1, x2 = grid.mesh()
    W = np.zeros((2, grid.N, grid.N), dtype=complex)
    for a_k, k in zip(amplitudes, family.directions):
        b, _ = building_block(k, np.stack([lam * x1, lam * x2]))
        W += a_k * b
    W = W.real
    W_hat = to_spectral(W, grid)

    WW = np.stack([W[0] * W[0], W[0] * W[1], W[1] * W[1]])
    lhs = to_physical(tensor_divergence_coeffs(to_spectral(WW, grid), grid), grid)
    energy_hat = to_spectral(0.5 * (W[0] ** 2 + W[1] ** 2), grid)
    grad_energy = to_physical(np.stack([1j * grid.k1 * energy_hat, 1j * grid.k2 * energy_hat]), grid)
    curl = to_physical(-1j * grid.k2 * W_hat[0] + 1j * grid.k1 * W_hat[1], grid)
    rhs = grad_energy + curl * np.stack([-W[1], W[0]])
    scale = max(float(np.abs(lhs).max()), float(np.abs(rhs).max()), 1e-300)
    div_residual = float(np.abs(lhs - rhs).max()) / scale if np.abs(W).max() > 0 else 0.0

    # the grid mean of W (x) W keeps only the (k, -k) products
    pairing = np.array([np.mean(W[0] * W[0]), np.mean(W[0] * W[1]), np.mean(W[1] * W[1])])
    expected = np.zeros(3)
    for i, k in enumerate(family.directions):
        kp = np.array([-k[1], k[0]])
        expected = expected + abs(amplitudes[i]) ** 2 * np.array([kp[0] ** 2, kp[0] * kp[1], kp[1] ** 2])
    pair_scale = max(float(np.abs(expected).max()), 1e-300)
    pair_residual = float(np.abs(pairing - expected).max()) / pair_scale if np.abs(expected).max() > 0 else 0.0
    return WavefieldReport(
        divergence_identity_residual=div_residual,
        pairing_identity_residual=pair_residual,
        scale=scale,
    )


def nonlinearity_identity_residual(u: VectorField2, v: VectorField2) -> float:
    """Relative gap between (u.grad)v - (grad v)^T u and u^perp (grad^perp . v)."""
    direct = two_term_nonlinearity(u, v).physical()
    # gamma2 = 2 makes Lambda^(2 - gamma2) the identity
    bridged = nonlinear_term(u, v, gamma2=2.0).physical()
    scale = max(float(np.abs(direct).max()), 1e-300)
    return float(np.abs(direct - bridged).max()) / scale


def pairing_sum(family: DirectionFamily, amplitudes: Union[Sequence[complex], np.ndarray]) -> np.ndarray:
    """sum_k |a_k|^2 k^perp (x) k^perp as (r11, r12, r22)."""
    total = np.zeros(3)
    for a_k, h in zip(amplitudes, family.heights):
        total = total + abs(a_k) ** 2 * np.array([float(x) for x in _rank_one_column(h)])
    return total

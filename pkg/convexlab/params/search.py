"""Deterministic search for a certified parameter tuple.

The order mirrors how the constraints depend on each other: L first (it only
meets constants), then the smallest admissible b, then beta on a rational
grid just above 1 - gamma2/2, and finally the smallest a in 5N inside the
amplitude window.
"""

import logging
import math
import time
from fractions import Fraction
from typing import List, Optional

from mpmath import mp

from convexlab.exceptions import SearchExhausted
from convexlab.params.certify import LEDGER_SOURCES, LedgerEntry, certify, certify_group, window_bounds
from convexlab.params.constants import LedgerConstants, derive_constants
from convexlab.params.intervals import exact
from convexlab.params.ledger import ParameterSet
from convexlab.stochastic import StoppingTimeSpec, survival_probability

logger = logging.getLogger(__name__)

BETA_DENOMINATOR = 10_000
A_NUDGES = 16


def _binding(entries: List[LedgerEntry]) -> Optional[str]:
    for e in entries:
        if not e.green:
            return e.label
    return None


def smallest_b(L: float, gamma2: float) -> int:
    """Smallest integer b with b > 11 L^2 / (2 - gamma2) + 5."""
    bound = 11 * exact(L) ** 2 / (2 - exact(gamma2)) + 5
    return math.floor(bound) + 1


def smallest_a(log_lower: float, exponent: float) -> int:
    """Smallest a in 5N with a >= e^8 and log(a) * exponent > log_lower (in double precision)."""
    with mp.workdps(30):
        log_a = max(mp.mpf(8), mp.mpf(log_lower) / mp.mpf(exponent))
        a = int(mp.ceil(mp.exp(log_a)))
    return 5 * (-(-a // 5))


def estimate_survival(L: float, T: float, samples: int, seed: int, delta: float = 1.0 / 16.0, dt: float = 1e-3) -> float:
    """Monte-Carlo estimate of P(T_L >= T); not part of the rigorous ledger."""
    return survival_probability(StoppingTimeSpec(L=L, delta=delta), T, samples, seed, dt)


def search_feasible(
    gamma1: float,
    gamma2: float,
    K: float = 2.0,
    T: float = 1.0,
    kappa: Optional[float] = None,
    constants: Optional[LedgerConstants] = None,
    beta: Optional[float] = None,
    max_L: int = 200,
    survival_samples: int = 0,
    seed: int = 0,
    precision: int = 53,
    delta_holder: float = 1.0 / 16.0,
) -> ParameterSet:
    """Lexicographically smallest (L, b, beta, a) whose certificate is green.

    With ``survival_samples`` > 0 and ``kappa`` set, L is also pushed up until
    the estimated P(T_L >= T) exceeds kappa. Raises SearchExhausted naming the
    ledger tag that blocked the search.
    """
    start = time.time()
    constants = constants or derive_constants(gamma1, gamma2=gamma2, precision=precision)
    lo = 1 - exact(gamma2) / 2
    first_beta = exact(beta) if beta is not None else lo + Fraction(1, BETA_DENOMINATOR)
    trial = ParameterSet(
        gamma1=gamma1, gamma2=gamma2, L=2.0, b=2, beta=float(first_beta), a=5,
        K=K, T=T, delta_holder=delta_holder,
    )

    ranges = certify_group(trial, constants, "r", precision)
    blocked = _binding(ranges)
    if blocked is not None:
        raise SearchExhausted(f"parameter ranges fail before the search starts ({blocked})", binding=blocked)

    chosen_L = None
    blocked = None
    for L in range(2, max_L + 1):
        candidate = trial.model_copy(update={"L": float(L)})
        blocked = _binding(certify_group(candidate, constants, "L", precision))
        if blocked is not None:
            continue
        if survival_samples > 0 and kappa is not None:
            survival = estimate_survival(float(L), T, survival_samples, seed, delta_holder)
            logger.debug(f"L={L}: survival estimate {survival:.4f} against kappa={kappa}")
            if survival <= kappa:
                blocked = "survival"
                continue
        chosen_L = L
        break
    if chosen_L is None:
        raise SearchExhausted(f"no L <= {max_L} satisfies the L constraints", binding=blocked or f"L ratio [{LEDGER_SOURCES['L_ratio']}]")

    b = smallest_b(chosen_L, gamma2)
    upper = (12 - 6 * exact(gamma2)) / 11
    if beta is not None:
        betas = [first_beta]
    else:
        count = math.ceil((upper - lo) * BETA_DENOMINATOR)
        betas = [lo + Fraction(m, BETA_DENOMINATOR) for m in range(1, count)]

    blocked = f"beta range [{LEDGER_SOURCES['beta_upper']}]"
    for beta_value in betas:
        params = trial.model_copy(update={"L": float(chosen_L), "b": b})
        params = ParameterSet(**{**params.model_dump(), "beta": float(beta_value), "alpha": None})
        b_block = _binding(certify_group(params, constants, "b", precision))
        if b_block is not None:
            blocked = b_block
            continue
        log_lower, _, exponent = window_bounds(params, constants, precision)
        if exponent <= 0:
            blocked = f"a window [{LEDGER_SOURCES['a_window_lower']}]"
            continue
        a = smallest_a(log_lower, exponent)
        for _ in range(A_NUDGES):
            params = params.model_copy(update={"a": a})
            a_entries = [e for e in certify_group(params, constants, "a", precision) if e.a_dependence == "lower_bound"]
            if all(e.green for e in a_entries):
                break
            a += 5
        report = certify(params, constants, precision)
        if report.overall:
            logger.info(
                f"Feasible tuple L={chosen_L}, b={b}, beta={beta_value}, a={a} "
                f"found in {time.time() - start:.4f} seconds"
            )
            return params
        blocked = _binding(report.entries) or blocked
        logger.debug(f"beta={beta_value} rejected by {blocked}")

    raise SearchExhausted(f"no beta on the 1/{BETA_DENOMINATOR} grid completes the tuple", binding=blocked)

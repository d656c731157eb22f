"""Interval-arithmetic certificate for a parameter tuple.

Every inequality the construction needs is evaluated with outward rounding,
once at the working precision and once at twice that precision. An entry is
green only when both evaluations decide it. Constants enter through their
upper bounds (``epsilon_gamma`` through its lower bound), which only makes
each entry harder to satisfy.
"""

import json
import logging
import os
import time
from typing import Dict, List, Literal, Optional, Tuple

from mpmath import iv
from pydantic import BaseModel, ConfigDict

from convexlab.params.constants import LedgerConstants
from convexlab.params.intervals import (
    Relation,
    Verdict,
    decide,
    enclose,
    exact,
    float_bounds,
    imax,
    interval_precision,
)
from convexlab.params.ledger import ParameterSet

logger = logging.getLogger(__name__)

ADependence = Literal["none", "lower_bound", "upper_bound"]

B_BOUND_TAG = "b bound"

# entry id -> label of the inequality it transcribes
with open(os.path.join(os.path.dirname(__file__), "ledger_sources.json")) as _fh:
    LEDGER_SOURCES: Dict[str, str] = json.load(_fh)


class LedgerEntry(BaseModel):
    """One inequality ``lhs relation rhs``; ``scale="log"`` means both sides are logarithms."""

    model_config = ConfigDict(frozen=True)

    id: str
    tag: str
    statement: str
    relation: Relation
    scale: Literal["linear", "log"] = "linear"
    lhs: Tuple[float, float]
    rhs: Tuple[float, float]
    verdict: Verdict
    verdict_doubled: Verdict
    a_dependence: ADependence = "none"
    implied_by_b_bound: bool = False
    source: Optional[str] = None

    @property
    def label(self) -> str:
        """Tag followed by the source inequality, when there is one."""
        return f"{self.tag} [{self.source}]" if self.source else self.tag

    @property
    def green(self) -> bool:
        return self.verdict == "green" and self.verdict_doubled == "green"


class FeasibilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["faithful", "toy"]
    params: ParameterSet
    constants: LedgerConstants
    precision: int
    entries: List[LedgerEntry]
    overall: bool
    implication_gaps: List[str] = []
    survival_estimate: Optional[float] = None
    kappa: Optional[float] = None

    @property
    def hard_fail(self) -> bool:
        return self.mode == "faithful" and not self.overall

    def failing(self) -> List[LedgerEntry]:
        return [e for e in self.entries if not e.green]

    def entry(self, entry_id: str) -> LedgerEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_certificate(self) -> dict:
        """Certificate JSON payload."""
        return {
            "mode": self.mode,
            "params": self.params.model_dump(),
            "constants": self.constants.model_dump(),
            "precision": {"working": self.precision, "recheck": 2 * self.precision},
            "entries": [
                {
                    "id": e.id,
                    "tag": e.tag,
                    "source": e.source,
                    "statement": e.statement,
                    "scale": e.scale,
                    "lhs": list(e.lhs),
                    "rhs": list(e.rhs),
                    "verdict": e.verdict if e.verdict == e.verdict_doubled else "undecided",
                    "verdict_working": e.verdict,
                    "verdict_doubled": e.verdict_doubled,
                    "a_dependence": e.a_dependence,
                }
                for e in self.entries
            ],
            "implication_gaps": self.implication_gaps,
            "survival": {"estimate": self.survival_estimate, "kappa": self.kappa},
            "overall": self.overall,
        }


class _Row(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str
    tag: str
    statement: str
    lhs: object
    rhs: object
    relation: Relation
    scale: Literal["linear", "log"] = "linear"
    a_dependence: ADependence = "none"
    implied_by_b_bound: bool = False


class _Enclosed:
    """Parameter and constant enclosures at the current ``iv.prec``."""

    def __init__(self, params: ParameterSet, constants: LedgerConstants):
        beta = exact(params.beta)
        self.g1 = enclose(params.gamma1)
        self.g2 = enclose(params.gamma2)
        self.L = enclose(params.L)
        self.b = enclose(params.b)
        self.beta = enclose(beta)
        self.alpha = enclose(1 + beta / 2)
        self.alpha_given = enclose(params.alpha)
        self.log_a = iv.log(enclose(params.a))
        self.delta = enclose(params.delta_holder)
        self.K = enclose(params.K)
        self.T = enclose(params.T)
        self.C0 = enclose(constants.C0)
        self.CS = enclose(constants.CS)
        self.eps = enclose(constants.epsilon_gamma)

    @property
    def window_exponent(self):
        """b (-1 + gamma2/2 + beta), the exponent of a in the amplitude window."""
        return self.b * (self.g2 / 2 - 1 + self.beta)

    def log_window_lower(self):
        """log max{2, 2^(5/2 - gamma2/2) C0 / pi}."""
        scaled = iv.exp((iv.mpf(5) / 2 - self.g2 / 2) * iv.log(2)) * self.C0 / iv.pi
        return iv.log(imax(iv.mpf(2), scaled))

    def log_window_upper(self):
        """log of sqrt(eps) e^(L/2) / (sqrt(m_L) sqrt((4L + 1/2)/pi + C_S 2^(-1/2)))."""
        quarter = iv.exp(iv.log(self.L) / 4)
        log_mL = iv.log(3) / 2 + iv.log(quarter) + quarter / 2
        inner = (4 * self.L + iv.mpf(1) / 2) / iv.pi + self.CS / iv.sqrt(2)
        return iv.log(self.eps) / 2 + self.L / 2 - log_mL / 2 - iv.log(inner) / 2


def _b_lower(num, den):
    """num/den when den is certainly positive, else +inf (the entry is then red)."""
    if (den > 0) is True:
        return num / den
    return iv.inf


def _range_rows(e: _Enclosed) -> List[_Row]:
    two = iv.mpf(2)
    return [
        _Row(id="gamma2_lower", tag="gamma2 range", statement="1 <= gamma2", lhs=iv.mpf(1), rhs=e.g2, relation="<="),
        _Row(id="gamma2_upper", tag="gamma2 range", statement="gamma2 < 2", lhs=e.g2, rhs=two, relation="<"),
        _Row(id="gamma1_lower", tag="gamma1 range", statement="0 < gamma1", lhs=iv.mpf(0), rhs=e.g1, relation="<"),
        _Row(id="gamma1_upper", tag="gamma1 range", statement="gamma1 < 2 - gamma2/2",
             lhs=e.g1, rhs=2 - e.g2 / 2, relation="<"),
        _Row(id="beta_lower", tag="beta range", statement="1 - gamma2/2 < beta",
             lhs=1 - e.g2 / 2, rhs=e.beta, relation="<"),
        _Row(id="beta_upper", tag="beta range", statement="beta < (12 - 6 gamma2)/11",
             lhs=e.beta, rhs=(12 - 6 * e.g2) / 11, relation="<"),
        _Row(id="alpha_relation", tag="alpha relation", statement="|alpha - (1 + beta/2)| <= 1e-12",
             lhs=abs(e.alpha_given - e.alpha), rhs=enclose("1e-12"), relation="<="),
        _Row(id="delta_range", tag="holder exponent", statement="delta < 1/8",
             lhs=e.delta, rhs=iv.mpf(1) / 8, relation="<"),
    ]


def _L_rows(e: _Enclosed) -> List[_Row]:
    return [
        _Row(id="L_ratio", tag="L ratio", statement="44/(10 - 5 gamma2) <= L",
             lhs=_b_lower(iv.mpf(44), 10 - 5 * e.g2), rhs=e.L, relation="<="),
        _Row(id="L_window", tag="L window", scale="log",
             statement="max{2, 2^(5/2-gamma2/2) C0/pi} < sqrt(eps) e^(L/2) / (sqrt(m_L) sqrt((4L+1/2)/pi + C_S/sqrt 2))",
             lhs=e.log_window_lower(), rhs=e.log_window_upper(), relation="<"),
        _Row(id="L_growth", tag="energy growth", scale="log",
             statement="(sqrt 8 + sqrt 2) e^(2 sqrt L) < sqrt 2 e^(2 L T)",
             lhs=iv.log(iv.sqrt(8) + iv.sqrt(2)) + 2 * iv.sqrt(e.L),
             rhs=iv.log(2) / 2 + 2 * e.L * e.T, relation="<"),
        _Row(id="L_survival", tag="energy growth", statement="[ln(K e^(T/2))]^2 < L",
             lhs=(iv.log(e.K) + e.T / 2) ** 2, rhs=e.L, relation="<"),
    ]


def _b_rows(e: _Enclosed) -> List[_Row]:
    L, g2, beta, alpha, b = e.L, e.g2, e.beta, e.alpha, e.b
    L2 = L * L
    shrunk = alpha * (iv.mpf(1) / 2 - 2 * e.delta)
    member: List[Tuple[str, str, str, object, object]] = [
        ("b_member_01", "b bound (implied)", "b > 2(2 - g2 - beta + L^2)/(1 - g2 + alpha - beta)",
         2 * (2 - g2 - beta + L2), 1 - g2 + alpha - beta),
        ("b_member_02", "b bound (implied)", "b > 22(L^2 + 1)/(5 + 3 g2)", 22 * (L2 + 1), 5 + 3 * g2),
        ("b_member_03", "b bound (implied)", "b > 2(L^2 + 3 - g2 - beta)/(alpha + 3 - g2 - beta)",
         2 * (L2 + 3 - g2 - beta), alpha + 3 - g2 - beta),
        ("b_member_04", "b bound (implied)", "b > 2 L^2/(-alpha + 3 - g2 - beta)", 2 * L2, -alpha + 3 - g2 - beta),
        ("b_member_05", "b bound (implied)", "b > (L + 2 - g2 - beta)/(2 - g2 - beta)", L + 2 - g2 - beta, 2 - g2 - beta),
        ("b_member_06", "b bound (implied)", "b > 2(L^2 + 3 - g2 - beta)/(alpha + 3 - g2 - beta)",
         2 * (L2 + 3 - g2 - beta), alpha + 3 - g2 - beta),
        ("b_member_07", "b bound (implied)", "b > (3 - g2 - beta + L)/(1 + beta)", 3 - g2 - beta + L, 1 + beta),
        ("b_member_08", "b bound (implied)", "b > (3 - g2 - beta + L)/(1 + beta)", 3 - g2 - beta + L, 1 + beta),
        ("b_member_09", "b bound (implied)", "b > (L^2 + 3 - g2 - beta)/alpha", L2 + 3 - g2 - beta, alpha),
        ("b_member_10", "b bound (implied)", "b > 2L/(-alpha - 1 + g2 + 3 beta)", 2 * L, -alpha - 1 + g2 + 3 * beta),
        ("b_member_11", "b bound (implied)", "b > (1 + L)/(-1 + g2 + 2 beta)", 1 + L, -1 + g2 + 2 * beta),
        ("b_member_12", "b bound (implied)", "b > (L^2 + (9 - 3 g2 - 5 beta)/2)/alpha",
         L2 + (9 - 3 * g2 - 5 * beta) / 2, alpha),
        ("b_member_13", "b bound (implied)", "b > (L^2 + 9 - 3 g2 - 4 beta)/(2 alpha)", L2 + 9 - 3 * g2 - 4 * beta, 2 * alpha),
        ("b_member_14", "b bound (implied)", "b > L/(alpha(1/2 - 2 delta) - 2 + g2 + 2 beta)", L, shrunk - 2 + g2 + 2 * beta),
        ("b_member_15", "b bound (implied)", "b > (2 - g2 - beta + L)/(alpha(1/2 - 2 delta) + beta)",
         2 - g2 - beta + L, shrunk + beta),
        ("b_member_16", "b bound (implied)", "b > (3 - g2 - 2 beta + L)/(alpha(1/2 - 2 delta))", 3 - g2 - 2 * beta + L, shrunk),
        ("b_member_17", "b bound (implied)", "b > (2 - beta + L)/(g2 + beta)", 2 - beta + L, g2 + beta),
    ]
    rows = [
        _Row(id="b_lower", tag=B_BOUND_TAG, statement="b > 11 L^2/(2 - gamma2) + 5",
             lhs=_b_lower(11 * L2, 2 - g2) + 5, rhs=b, relation="<"),
    ]
    for row_id, tag, statement, num, den in member:
        rows.append(_Row(id=row_id, tag=tag, statement=statement, lhs=_b_lower(num, den), rhs=b,
                         relation="<", implied_by_b_bound=True))
    return rows


def _a_rows(e: _Enclosed, a: int) -> List[_Row]:
    window = e.window_exponent * e.log_a
    ratio = iv.exp(-e.b * e.beta * e.log_a)
    tail = ratio / (1 - ratio) if (ratio < 1) is True else iv.inf
    return [
        _Row(id="a_lattice", tag="a lattice", statement="a in 5N",
             lhs=iv.mpf(a % 5), rhs=iv.mpf(0), relation="=="),
        _Row(id="a_floor", tag="a floor", scale="log", statement="e^8 <= a",
             lhs=iv.mpf(8), rhs=e.log_a, relation="<=", a_dependence="lower_bound"),
        _Row(id="a_window_lower", tag="a window", scale="log",
             statement="max{2, 2^(5/2-gamma2/2) C0/pi} < a^(b(-1+gamma2/2+beta))",
             lhs=e.log_window_lower(), rhs=window, relation="<", a_dependence="lower_bound"),
        _Row(id="a_window_upper", tag="a window", scale="log",
             statement="a^(b(-1+gamma2/2+beta)) <= sqrt(eps) e^(L/2) / (sqrt(m_L) sqrt((4L+1/2)/pi + C_S/sqrt 2))",
             lhs=window, rhs=e.log_window_upper(), relation="<=", a_dependence="upper_bound"),
        _Row(id="a_doubling", tag="a doubling", scale="log", statement="2 <= a^(b beta)",
             lhs=iv.log(2), rhs=e.b * e.beta * e.log_a, relation="<=", a_dependence="lower_bound"),
        _Row(id="start_times", tag="start times",
             statement="t_q <= -2 + r/(1 - r) < -1 with r = a^(-b beta)",
             lhs=-2 + tail, rhs=iv.mpf(-1), relation="<", a_dependence="lower_bound"),
    ]


def _evaluate(params: ParameterSet, constants: LedgerConstants, precision: int, groups: str) -> List[Tuple[_Row, Verdict]]:
    with interval_precision(precision):
        e = _Enclosed(params, constants)
        rows: List[_Row] = []
        if "r" in groups:
            rows += _range_rows(e)
        if "L" in groups:
            rows += _L_rows(e)
        if "b" in groups:
            rows += _b_rows(e)
        if "a" in groups:
            rows += _a_rows(e, params.a)
        return [(row, decide(row.lhs, row.rhs, row.relation)) for row in rows]


def _entries(params: ParameterSet, constants: LedgerConstants, precision: int, groups: str) -> List[LedgerEntry]:
    working = _evaluate(params, constants, precision, groups)
    doubled = {row.id: verdict for row, verdict in _evaluate(params, constants, 2 * precision, groups)}
    entries = []
    with interval_precision(precision):
        for row, verdict in working:
            entries.append(LedgerEntry(
                id=row.id,
                tag=row.tag,
                statement=row.statement,
                relation=row.relation,
                scale=row.scale,
                lhs=float_bounds(row.lhs),
                rhs=float_bounds(row.rhs),
                verdict=verdict,
                verdict_doubled=doubled[row.id],
                a_dependence=row.a_dependence,
                implied_by_b_bound=row.implied_by_b_bound,
                source=LEDGER_SOURCES.get(row.id),
            ))
    return entries


def certify_group(params: ParameterSet, constants: LedgerConstants, groups: str, precision: int = 53) -> List[LedgerEntry]:
    """Evaluate a subset of the ledger: "r" ranges, "L", "b" and "a" rows."""
    return _entries(params, constants, precision, groups)


def certify(
    params: ParameterSet,
    constants: LedgerConstants,
    precision: int = 53,
    survival_estimate: Optional[float] = None,
    kappa: Optional[float] = None,
) -> FeasibilityReport:
    """Evaluate the full ledger. Infeasibility is reported, never raised."""
    start = time.time()
    entries = _entries(params, constants, precision, "rLba")
    overall = all(e.green for e in entries)

    by_id: Dict[str, LedgerEntry] = {e.id: e for e in entries}
    gaps = []
    if by_id["b_lower"].green:
        gaps = [e.id for e in entries if e.implied_by_b_bound and not e.green]
        for gap in gaps:
            logger.warning(f"Entry {gap} fails although {B_BOUND_TAG} holds")

    for e in entries:
        if not e.green:
            message = f"Ledger entry {e.id} ({e.tag}) is {e.verdict}/{e.verdict_doubled}: {e.statement}"
            if params.mode == "toy":
                logger.warning(message)
            else:
                logger.info(message)

    logger.info(
        f"Certified {len(entries)} entries in {params.mode} mode: overall={'green' if overall else 'red'} "
        f"in {time.time() - start:.4f} seconds"
    )
    return FeasibilityReport(
        mode=params.mode,
        params=params,
        constants=constants,
        precision=precision,
        entries=entries,
        overall=overall,
        implication_gaps=gaps,
        survival_estimate=survival_estimate,
        kappa=kappa,
    )



def window_bounds(params: ParameterSet, constants: LedgerConstants, precision: int = 53) -> Tuple[float, float, float]:
    """(upper end of log lower, lower end of log upper, lower end of the exponent) for the a-window.

    A search uses these to place a; the certificate decides.
    """
    with interval_precision(precision):
        e = _Enclosed(params, constants)
        lower = float_bounds(e.log_window_lower())[1]
        upper = float_bounds(e.log_window_upper())[0]
        exponent = float_bounds(e.window_exponent)[0]
    return lower, upper, exponent

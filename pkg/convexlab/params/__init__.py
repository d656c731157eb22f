"""Parameter ledger: constants, sequences, certification and search."""

from convexlab.params.certify import FeasibilityReport, LedgerEntry, certify
from convexlab.params.constants import LedgerConstants, derive_constants
from convexlab.params.ledger import LevelScales, ParameterSet, sequences
from convexlab.params.search import search_feasible

__all__ = [
    "FeasibilityReport",
    "LedgerEntry",
    "LevelScales",
    "LedgerConstants",
    "ParameterSet",
    "certify",
    "derive_constants",
    "search_feasible",
    "sequences",
]

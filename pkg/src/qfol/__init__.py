"""Quantum first-order logic workbench.

Parse quantum formulas, check well-formedness, evaluate sentences over
explicit structures by dense statevector simulation, simulate logtime
quantum Turing machines, and compile machines into equivalent sentences.
"""

from .numutil import ilog, iloglog, lex_rank, lex_string, n_hat
from .syntax import Structure
from .parser import desugar, parse_formula, parse_formula_strict, pretty

__all__ = [
    "ilog", "iloglog", "lex_rank", "lex_string", "n_hat",
    "Structure", "desugar", "parse_formula", "parse_formula_strict", "pretty",
]

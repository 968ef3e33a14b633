"""Abstract syntax for quantum terms and formulas, plus the structure model.

All nodes are immutable. Names are unique per binder after parsing
(alpha-renaming happens in the parser), so scope analyses never have to
worry about shadowing. ``alpha_normalize`` gives canonical bound names for
structural comparison.

Classical terms evaluate to natural numbers via ``eval_cterm``; quantum
terms have a structural qubit size via ``qubit_size``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Union

import numpy as np

from .gates import Angle
from .numutil import ilog, iloglog

# ---------------------------------------------------------------------------
# Classical terms


@dataclass(frozen=True)
class CVar:
    name: str


@dataclass(frozen=True)
class CInt:
    value: int


@dataclass(frozen=True)
class CConst:
    kind: str  # 'n' | 'ilog_n' | 'iloglog_n'


@dataclass(frozen=True)
class Suc:
    inner: "CTerm"


@dataclass(frozen=True)
class SizeOf:
    var: str  # |y| for a quantum variable y


@dataclass(frozen=True)
class CAdd:
    left: "CTerm"
    right: "CTerm"


@dataclass(frozen=True)
class CMul:
    coeff: int
    term: "CTerm"


CTerm = Union[CVar, CInt, CConst, Suc, SizeOf, CAdd, CMul]

# ---------------------------------------------------------------------------
# Quantum terms


@dataclass(frozen=True)
class QVar:
    name: str


@dataclass(frozen=True)
class FuncApp:
    """Instance Y(t) of a functional quantum variable; a pure-state variable per index."""

    fname: str
    index: CTerm


@dataclass(frozen=True)
class QBit:
    target: "QTerm"
    index: "CTerm | QTerm"


@dataclass(frozen=True)
class QRange:
    target: "QTerm"
    lo: CTerm
    hi: CTerm


@dataclass(frozen=True)
class Tensor:
    left: "QTerm"
    right: "QTerm"


@dataclass(frozen=True)
class InstanceQuery:
    index: "QTerm"


@dataclass(frozen=True)
class BitConst:
    bit: int


@dataclass(frozen=True)
class PlusConst:
    """Fresh 1-qubit wire initialized to |+>; produced by the <=> desugaring."""


QTerm = Union[QVar, FuncApp, QBit, QRange, Tensor, InstanceQuery, BitConst, PlusConst]

CLASSICAL_TERM_TYPES = (CVar, CInt, CConst, Suc, SizeOf, CAdd, CMul)


def is_classical(t) -> bool:
    return isinstance(t, CLASSICAL_TERM_TYPES)


# ---------------------------------------------------------------------------
# Gates as they appear in predicates


@dataclass(frozen=True)
class GateRef:
    name: str  # 'I' | 'ROT' | extension 'S' | 'T'
    angle: Angle | None = None

    def render(self) -> str:
        if self.name == "ROT":
            return f"P_ROT({self.angle.render()}; "
        return f"P_{self.name}("


GATE_I = GateRef("I")


# ---------------------------------------------------------------------------
# Formulas


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    line: int
    col: int


def _span_field():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Cmp:
    op: str  # '=' | '<=' | '<'
    lhs: CTerm
    rhs: CTerm
    span: Span | None = _span_field()


@dataclass(frozen=True)
class QPred:
    gate: GateRef
    first: QTerm
    second: QTerm
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Measure:
    term: QTerm
    eps: float
    bits: str  # one char per qubit of term
    span: Span | None = _span_field()


@dataclass(frozen=True)
class QAnd:
    lhs: "Formula"
    rhs: "Formula"
    span: Span | None = _span_field()


@dataclass(frozen=True)
class QOr:
    antecedents: tuple[QTerm, ...]  # desugared form: exactly one, of size 1
    branches: tuple["Formula", ...]  # desugared form: exactly two
    span: Span | None = _span_field()


@dataclass(frozen=True)
class QNot:
    inner: "Formula"
    span: Span | None = _span_field()


@dataclass(frozen=True)
class CQuant:
    kind: str  # 'E' | 'A'
    var: str
    lo: CTerm | None  # two-sided form (A i, lo <= i <= hi); None means 0
    hi: CTerm
    body: "Formula"
    lo_strict: bool = False
    hi_strict: bool = False
    span: Span | None = _span_field()


@dataclass(frozen=True)
class QQuant:
    kind: str  # 'EQ' | 'AQ'
    var: str
    size: CTerm
    body: "Formula"
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Qtc:
    relation: "Formula"  # free classical vars i, j; quantum args by name
    start: CTerm
    start_args: tuple[str, ...]
    end: CTerm
    end_args: tuple[str, ...]
    log: bool = False
    span: Span | None = _span_field()


@dataclass(frozen=True)
class FuncQuant:
    fname: str
    domain: CTerm  # instances indexed over [0, domain]
    codomain: CTerm  # qubit size of each instance
    body: "Formula"
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Iff:
    lhs: "Formula"
    rhs: "Formula"
    span: Span | None = _span_field()


Formula = Union[Cmp, QPred, Measure, QAnd, QOr, QNot, CQuant, QQuant, Qtc, FuncQuant, Iff]


# ---------------------------------------------------------------------------
# Structure (model): what a sentence is evaluated against


@dataclass
class Structure:
    n: int
    input: str = ""
    free_classical: dict = field(default_factory=dict)
    free_quantum: dict = field(default_factory=dict)  # name -> (size, np vector)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("structure requires n >= 1")
        if self.input and len(self.input) != self.n:
            raise ValueError(f"input length {len(self.input)} != n = {self.n}")
        for name, (size, vec) in self.free_quantum.items():
            v = np.asarray(vec, dtype=complex)
            if v.shape != (1 << size,):
                raise ValueError(f"assignment for {name} is not a {size}-qubit vector")
            if abs(np.vdot(v, v).real - 1.0) > 1e-9:
                raise ValueError(f"assignment for {name} is not unit norm")

    def input_bit(self, pos: int) -> int:
        """x_(pos), 1-based; 0 outside [1, n] (the paper's lambda convention)."""
        if 1 <= pos <= len(self.input):
            return int(self.input[pos - 1])
        return 0


# ---------------------------------------------------------------------------
# Term utilities


def eval_cterm(t: CTerm, n: int, env: dict | None = None, sizes: dict | None = None) -> int:
    env = env or {}
    sizes = sizes or {}
    if isinstance(t, CInt):
        return t.value
    if isinstance(t, CVar):
        if t.name not in env:
            raise UnboundTermError(f"classical variable {t.name} is unbound")
        return env[t.name]
    if isinstance(t, CConst):
        if t.kind == "n":
            return n
        if t.kind == "ilog_n":
            return ilog(n)
        if t.kind == "iloglog_n":
            return iloglog(n)
        raise ValueError(f"unknown constant kind {t.kind}")
    if isinstance(t, Suc):
        return eval_cterm(t.inner, n, env, sizes) + 1
    if isinstance(t, SizeOf):
        if t.var not in sizes:
            raise UnboundTermError(f"|{t.var}| used but {t.var} has no declared size")
        return sizes[t.var]
    if isinstance(t, CAdd):
        return eval_cterm(t.left, n, env, sizes) + eval_cterm(t.right, n, env, sizes)
    if isinstance(t, CMul):
        return t.coeff * eval_cterm(t.term, n, env, sizes)
    raise TypeError(f"not a classical term: {t!r}")


class UnboundTermError(Exception):
    pass


class SizeError(Exception):
    pass


def qubit_size(t: QTerm, sizes: dict, n: int | None = None, env: dict | None = None) -> int:
    """Structural qubit size: declared for variables, 1 for components/queries/bits,
    sum for tensors, hi-lo+1 for ranges."""
    if isinstance(t, QVar):
        if t.name not in sizes:
            raise SizeError(f"quantum variable {t.name} has no declared size")
        return sizes[t.name]
    if isinstance(t, FuncApp):
        key = ("func", t.fname)
        if key not in sizes:
            raise SizeError(f"functional variable {t.fname} has no declared size")
        return sizes[key]
    if isinstance(t, (QBit, InstanceQuery, BitConst, PlusConst)):
        return 1
    if isinstance(t, Tensor):
        return qubit_size(t.left, sizes, n, env) + qubit_size(t.right, sizes, n, env)
    if isinstance(t, QRange):
        if n is None:
            raise SizeError("range term size needs a structure (n) to evaluate bounds")
        lo = eval_cterm(t.lo, n, env, _plain_sizes(sizes))
        hi = eval_cterm(t.hi, n, env, _plain_sizes(sizes))
        if hi < lo:
            raise SizeError(f"empty range [{lo},{hi}]")
        return hi - lo + 1
    raise TypeError(f"not a quantum term: {t!r}")


def _plain_sizes(sizes: dict) -> dict:
    return {k: v for k, v in sizes.items() if isinstance(k, str)}


def qvars_of_term(t: QTerm) -> set:
    """Var(t): base quantum variables (and functional instances) in a term."""
    if isinstance(t, QVar):
        return {t.name}
    if isinstance(t, FuncApp):
        return {(t.fname, render_cterm(t.index))}
    if isinstance(t, QBit):
        out = qvars_of_term(t.target)
        if not is_classical(t.index):
            out |= qvars_of_term(t.index)
        return out
    if isinstance(t, QRange):
        return qvars_of_term(t.target)
    if isinstance(t, Tensor):
        return qvars_of_term(t.left) | qvars_of_term(t.right)
    if isinstance(t, InstanceQuery):
        return qvars_of_term(t.index)
    return set()


# ---------------------------------------------------------------------------
# Rendering of terms (the pretty-printer for formulas lives in parser.py)


def render_cterm(t: CTerm) -> str:
    if isinstance(t, CInt):
        return str(t.value)
    if isinstance(t, CVar):
        return t.name
    if isinstance(t, CConst):
        return {"n": "n", "ilog_n": "ilog(n)", "iloglog_n": "iloglog(n)"}[t.kind]
    if isinstance(t, Suc):
        # collapse suc-chains onto + literals for readability
        k, inner = 1, t.inner
        while isinstance(inner, Suc):
            k, inner = k + 1, inner.inner
        if isinstance(inner, CInt):
            return str(inner.value + k)
        return f"{render_cterm(inner)} + {k}"
    if isinstance(t, SizeOf):
        return f"|{t.var}|"
    if isinstance(t, CAdd):
        return f"{render_cterm(t.left)} + {render_cterm(t.right)}"
    if isinstance(t, CMul):
        inner = render_cterm(t.term)
        if isinstance(t.term, (CAdd, Suc)):
            inner = f"({inner})"
        return f"{t.coeff}*{inner}"
    raise TypeError(f"not a classical term: {t!r}")


def render_qterm(t: QTerm) -> str:
    if isinstance(t, QVar):
        return t.name
    if isinstance(t, FuncApp):
        return f"{t.fname}({render_cterm(t.index)})"
    if isinstance(t, QBit):
        idx = render_cterm(t.index) if is_classical(t.index) else render_qterm(t.index)
        return f"{render_qterm(t.target)}[{idx}]"
    if isinstance(t, QRange):
        return f"{render_qterm(t.target)}[{render_cterm(t.lo)},{render_cterm(t.hi)}]"
    if isinstance(t, Tensor):
        return f"{render_qterm(t.left)} (*) {render_qterm(t.right)}"
    if isinstance(t, InstanceQuery):
        return f"X({render_qterm(t.index)})"
    if isinstance(t, BitConst):
        return str(t.bit)
    if isinstance(t, PlusConst):
        return "plus"
    raise TypeError(f"not a quantum term: {t!r}")


# ---------------------------------------------------------------------------
# Generic traversal / substitution


def sub_formulas(f: Formula) -> Iterator[Formula]:
    if isinstance(f, QAnd):
        yield f.lhs
        yield f.rhs
    elif isinstance(f, QOr):
        yield from f.branches
    elif isinstance(f, (QNot, CQuant, QQuant, FuncQuant)):
        yield f.body if not isinstance(f, QNot) else f.inner
    elif isinstance(f, Qtc):
        yield f.relation
    elif isinstance(f, Iff):
        yield f.lhs
        yield f.rhs


def walk(f: Formula) -> Iterator[Formula]:
    yield f
    for child in sub_formulas(f):
        yield from walk(child)


def _sub_cterm(t: CTerm, mapping: dict) -> CTerm:
    if isinstance(t, CVar):
        return mapping.get(("c", t.name), t)
    if isinstance(t, Suc):
        return Suc(_sub_cterm(t.inner, mapping))
    if isinstance(t, SizeOf):
        repl = mapping.get(("q", t.var))
        return SizeOf(repl) if repl else t
    if isinstance(t, CAdd):
        return CAdd(_sub_cterm(t.left, mapping), _sub_cterm(t.right, mapping))
    if isinstance(t, CMul):
        return CMul(t.coeff, _sub_cterm(t.term, mapping))
    return t


def _sub_qterm(t: QTerm, mapping: dict) -> QTerm:
    if isinstance(t, QVar):
        repl = mapping.get(("q", t.name))
        return QVar(repl) if repl else t
    if isinstance(t, FuncApp):
        repl = mapping.get(("f", t.fname))
        return FuncApp(repl or t.fname, _sub_cterm(t.index, mapping))
    if isinstance(t, QBit):
        idx = _sub_cterm(t.index, mapping) if is_classical(t.index) else _sub_qterm(t.index, mapping)
        return QBit(_sub_qterm(t.target, mapping), idx)
    if isinstance(t, QRange):
        return QRange(_sub_qterm(t.target, mapping), _sub_cterm(t.lo, mapping), _sub_cterm(t.hi, mapping))
    if isinstance(t, Tensor):
        return Tensor(_sub_qterm(t.left, mapping), _sub_qterm(t.right, mapping))
    if isinstance(t, InstanceQuery):
        return InstanceQuery(_sub_qterm(t.index, mapping))
    return t


def rename_vars(f: Formula, mapping: dict) -> Formula:
    """Simultaneous renaming; keys ('c'|'q'|'f', old_name) -> new_name.
    Binders in f that rebind a mapped name shadow it (callers rename unique names)."""
    if isinstance(f, Cmp):
        return replace(f, lhs=_sub_cterm(f.lhs, mapping), rhs=_sub_cterm(f.rhs, mapping))
    if isinstance(f, QPred):
        return replace(f, first=_sub_qterm(f.first, mapping), second=_sub_qterm(f.second, mapping))
    if isinstance(f, Measure):
        return replace(f, term=_sub_qterm(f.term, mapping))
    if isinstance(f, QAnd):
        return replace(f, lhs=rename_vars(f.lhs, mapping), rhs=rename_vars(f.rhs, mapping))
    if isinstance(f, QOr):
        return replace(
            f,
            antecedents=tuple(_sub_qterm(a, mapping) for a in f.antecedents),
            branches=tuple(rename_vars(b, mapping) for b in f.branches),
        )
    if isinstance(f, QNot):
        return replace(f, inner=rename_vars(f.inner, mapping))
    if isinstance(f, CQuant):
        m = {k: v for k, v in mapping.items() if k != ("c", f.var)}
        return replace(
            f,
            lo=_sub_cterm(f.lo, m) if f.lo is not None else None,
            hi=_sub_cterm(f.hi, m),
            body=rename_vars(f.body, m),
        )
    if isinstance(f, QQuant):
        m = {k: v for k, v in mapping.items() if k != ("q", f.var)}
        return replace(f, size=_sub_cterm(f.size, m), body=rename_vars(f.body, m))
    if isinstance(f, Qtc):
        return replace(f, relation=rename_vars(f.relation, mapping),
                       start=_sub_cterm(f.start, mapping), end=_sub_cterm(f.end, mapping))
    if isinstance(f, FuncQuant):
        m = {k: v for k, v in mapping.items() if k != ("f", f.fname)}
        return replace(f, domain=_sub_cterm(f.domain, m), codomain=_sub_cterm(f.codomain, m),
                       body=rename_vars(f.body, m))
    if isinstance(f, Iff):
        return replace(f, lhs=rename_vars(f.lhs, mapping), rhs=rename_vars(f.rhs, mapping))
    raise TypeError(f"not a formula: {f!r}")


def alpha_normalize(f: Formula) -> Formula:
    """Rename bound variables to canonical c1.., q1.., F1.. in traversal order."""
    counter = {"c": 0, "q": 0, "f": 0}

    def fresh(kind: str) -> str:
        counter[kind] += 1
        return {"c": "c", "q": "q", "f": "F"}[kind] + str(counter[kind])

    def go(g: Formula) -> Formula:
        if isinstance(g, CQuant):
            nv = fresh("c")
            body = rename_vars(g.body, {("c", g.var): nv})
            return replace(g, var=nv, body=go(body))
        if isinstance(g, QQuant):
            nv = fresh("q")
            body = rename_vars(g.body, {("q", g.var): nv})
            return replace(g, var=nv, body=go(body))
        if isinstance(g, FuncQuant):
            nv = fresh("f")
            body = rename_vars(g.body, {("f", g.fname): nv})
            return replace(g, fname=nv, body=go(body))
        if isinstance(g, QAnd):
            return replace(g, lhs=go(g.lhs), rhs=go(g.rhs))
        if isinstance(g, QOr):
            return replace(g, branches=tuple(go(b) for b in g.branches))
        if isinstance(g, QNot):
            return replace(g, inner=go(g.inner))
        if isinstance(g, Qtc):
            return replace(g, relation=go(g.relation))
        if isinstance(g, Iff):
            return replace(g, lhs=go(g.lhs), rhs=go(g.rhs))
        return g

    return go(f)


def alpha_equivalent(f: Formula, g: Formula) -> bool:
    return alpha_normalize(f) == alpha_normalize(g)

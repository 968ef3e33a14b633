"""Concrete syntax: tokenizer, recursive-descent parser, pretty-printer, desugarer.

Token inventory (bit-exact, one-token lookahead plus local backtracking):
    /\      quantum AND                 ||      branch separator in (g)[A || B]
    !q      quantum NOT                 <=>     biconditional (sugar)
    (E i <= t) (A i <= t)               (A i, a <= i <= b)   classical quantifiers
    (EQ y, |y| = t) (AQ y, |y| = t)     quantum quantifiers
    (EQF Y : [d] -> Q(s))               functional quantifier
    P_I(s : t)  P_ROT(angle; s : t)     predicates
    t ~={eps} b                         measurement
    X(s)    instance query              y[i]  y[i,j]  (*)  tensor
    QTC[rel](i, args : j, args)         logQTC[...](...)
    #       comment to end of line

Files may start with pragmas: `@n = <int>` fixes the input size and
`@free y : <size-term>` declares a free quantum variable's qubit size.

Bound variable names are uniquified during parsing (alpha-renaming), so a
parsed formula never contains shadowed binders. ``pretty`` output re-parses
to an alpha-equivalent tree; ``desugar`` removes the surface forms
(multi quantum OR, range antecedents, <=>) and is idempotent.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .gates import Angle
from .syntax import (
    BitConst, CAdd, CConst, CInt, CMul, CQuant, CVar, Cmp, Formula, FuncApp,
    FuncQuant, GateRef, Iff, InstanceQuery, Measure, PlusConst, QAnd, QBit,
    QNot, QOr, QPred, QQuant, QRange, QTerm, QVar, Qtc, SizeOf, Span, Suc,
    Tensor, is_classical, render_cterm, render_qterm,
)

KEYWORDS = {
    "E", "A", "EQ", "AQ", "EQF", "Q", "X", "QTC", "logQTC",
    "suc", "n", "pi", "plus", "ilog", "iloglog", "P_I", "P_ROT",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<float>\d+\.\d+(?:[eE][+-]?\d+)?)
  | (?P<num>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<sym><=>|\(\*\)|/\\|\|\||~=|<=|->|!q|[()\[\]{},:;=<|*+@/])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'num' | 'float' | 'name' | symbol text | 'eof'
    text: str
    pos: int
    line: int
    col: int

    def span(self) -> Span:
        return Span(self.pos, self.pos + len(self.text), self.line, self.col)


@dataclass
class Diagnostic:
    message: str
    span: Span

    def render(self) -> str:
        return f"{self.span.line}:{self.span.col}: {self.message}"


class ParseError(Exception):
    def __init__(self, message: str, token: Token):
        super().__init__(message)
        self.diagnostic = Diagnostic(message, token.span())


@dataclass
class FileMeta:
    n: int | None = None
    free_sizes: dict = field(default_factory=dict)  # name -> CTerm


@dataclass
class ParseResult:
    formula: Formula | None
    meta: FileMeta
    diagnostics: list

    @property
    def ok(self) -> bool:
        return self.formula is not None and not self.diagnostics


def _mk_add(lhs, rhs):
    """Canonicalize additions: `t + k` with an integer side becomes a suc-chain,
    so pretty-printed suc-chains re-parse to equal trees."""
    if isinstance(lhs, CInt) and isinstance(rhs, CInt):
        return CInt(lhs.value + rhs.value)
    if isinstance(rhs, CInt):
        t = lhs
        for _ in range(rhs.value):
            t = Suc(t)
        return t
    if isinstance(lhs, CInt):
        t = rhs
        for _ in range(lhs.value):
            t = Suc(t)
        return t
    return CAdd(lhs, rhs)


def tokenize(src: str) -> list[Token]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(
                f"unexpected character {src[pos]!r}",
                Token("error", src[pos], pos, line, pos - line_start + 1),
            )
        text = m.group(0)
        if m.lastgroup != "ws":
            if m.lastgroup == "name":
                kind = text if text in KEYWORDS else "name"
            elif m.lastgroup in ("num", "float"):
                kind = m.lastgroup
            else:
                kind = text
            toks.append(Token(kind, text, pos, line, pos - line_start + 1))
        line += text.count("\n")
        if "\n" in text:
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    toks.append(Token("eof", "", len(src), line, len(src) - line_start + 1))
    return toks


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0
        self.used_names: set[str] = set()
        self.scopes: list[dict] = [{}]

    # -- token plumbing ----------------------------------------------------
    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.peek()
        self.i += 1
        return t

    def at(self, kind: str) -> bool:
        return self.peek().kind == kind

    def expect(self, kind: str) -> Token:
        if not self.at(kind):
            raise ParseError(f"expected {kind!r}, found {self.peek().text!r}", self.peek())
        return self.next()

    def accept(self, kind: str) -> Token | None:
        return self.next() if self.at(kind) else None

    # -- scoping / alpha renaming ------------------------------------------
    def bind(self, name: str) -> str:
        unique = name
        k = 2
        while unique in self.used_names:
            unique = f"{name}_{k}"
            k += 1
        self.used_names.add(unique)
        self.scopes[-1][name] = unique
        return unique

    def resolve(self, name: str) -> str:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        self.used_names.add(name)
        return name

    def push_scope(self):
        self.scopes.append({})

    def pop_scope(self):
        self.scopes.pop()

    # -- pragmas -----------------------------------------------------------
    def parse_pragmas(self) -> FileMeta:
        meta = FileMeta()
        while self.at("@"):
            self.next()
            key = self.next().text
            if key == "n":
                self.expect("=")
                meta.n = int(self.expect("num").text)
            elif key == "free":
                var = self.expect("name").text
                self.expect(":")
                meta.free_sizes[var] = self.parse_cterm()
            else:
                raise ParseError(f"unknown pragma @{key}", self.peek())
        return meta

    # -- classical terms ----------------------------------------------------
    def parse_cterm(self) -> "CTerm":
        t = self.parse_cfactor()
        while self.at("+"):
            self.next()
            rhs = self.parse_cfactor()
            t = _mk_add(t, rhs)
        return t

    def parse_cfactor(self):
        tok = self.peek()
        if tok.kind == "num":
            self.next()
            if self.at("*"):
                self.next()
                return CMul(int(tok.text), self.parse_cfactor())
            return CInt(int(tok.text))
        if tok.kind == "n":
            self.next()
            return CConst("n")
        if tok.kind in ("ilog", "iloglog"):
            self.next()
            self.expect("(")
            self.expect("n")
            self.expect(")")
            return CConst("ilog_n" if tok.kind == "ilog" else "iloglog_n")
        if tok.kind == "suc":
            self.next()
            self.expect("(")
            inner = self.parse_cterm()
            self.expect(")")
            return Suc(inner)
        if tok.kind == "|":
            self.next()
            name = self.expect("name").text
            self.expect("|")
            return SizeOf(self.resolve(name))
        if tok.kind == "name":
            self.next()
            return CVar(self.resolve(tok.text))
        if tok.kind == "(":
            self.next()
            inner = self.parse_cterm()
            self.expect(")")
            return inner
        raise ParseError(f"expected classical term, found {tok.text!r}", tok)

    # -- quantum terms -------------------------------------------------------
    def parse_qterm(self) -> QTerm:
        t = self.parse_qatom()
        while self.at("(*)"):
            self.next()
            t = Tensor(t, self.parse_qatom())
        return t

    def parse_qatom(self) -> QTerm:
        tok = self.peek()
        if tok.kind == "num" and tok.text in ("0", "1"):
            self.next()
            return self._maybe_indexed(BitConst(int(tok.text)))
        if tok.kind == "plus":
            self.next()
            return PlusConst()
        if tok.kind == "X":
            self.next()
            self.expect("(")
            inner = self.parse_qterm()
            self.expect(")")
            return self._maybe_indexed(InstanceQuery(inner))
        if tok.kind == "name":
            if tok.text.startswith("P_"):
                raise ParseError(f"unknown predicate symbol {tok.text}", tok)
            self.next()
            base: QTerm
            if self.at("("):
                self.next()
                idx = self.parse_cterm()
                self.expect(")")
                base = FuncApp(self.resolve(tok.text), idx)
            else:
                base = QVar(self.resolve(tok.text))
            return self._maybe_indexed(base)
        if tok.kind == "(":
            self.next()
            inner = self.parse_qterm()
            self.expect(")")
            return inner
        raise ParseError(f"expected quantum term, found {tok.text!r}", tok)

    def _maybe_indexed(self, base: QTerm) -> QTerm:
        while self.at("["):
            self.next()
            save = self.i
            try:
                first = self.parse_cterm()
                first_classical = True
            except ParseError:
                self.i = save
                first = self.parse_qterm()
                first_classical = False
            if first_classical and self.at(","):
                self.next()
                hi = self.parse_cterm()
                self.expect("]")
                base = QRange(base, first, hi)
            else:
                self.expect("]")
                base = QBit(base, first)
        return base

    # -- angles ---------------------------------------------------------------
    def parse_angle(self) -> Angle:
        tok = self.peek()
        if tok.kind == "float":
            self.next()
            return Angle.radians(float(tok.text))
        if tok.kind == "num":
            self.next()
            if self.at("*"):
                self.next()
                self.expect("pi")
                return self._angle_den(int(tok.text))
            return Angle.radians(float(tok.text))
        if tok.kind == "pi":
            self.next()
            return self._angle_den(1)
        raise ParseError(f"expected angle, found {tok.text!r}", tok)

    def _angle_den(self, num: int) -> Angle:
        if self.at("/"):
            self.next()
            den = int(self.expect("num").text)
            return Angle.pi_mult(num, den)
        return Angle.pi_mult(num)

    # -- formulas ---------------------------------------------------------------
    def parse_formula(self) -> Formula:
        lhs = self.parse_conj()
        if self.at("<=>"):
            tok = self.next()
            rhs = self.parse_conj()
            return Iff(lhs, rhs, span=tok.span())
        return lhs

    def parse_conj(self) -> Formula:
        f = self.parse_prefix()
        while self.at("/\\"):
            tok = self.next()
            rhs = self.parse_prefix()
            f = QAnd(f, rhs, span=tok.span())
        return f

    def parse_prefix(self) -> Formula:
        tok = self.peek()
        if tok.kind == "!q":
            self.next()
            return QNot(self.parse_prefix(), span=tok.span())
        if tok.kind == "(" and self.peek(1).kind in ("E", "A", "EQ", "AQ", "EQF"):
            return self.parse_quantifier()
        return self.parse_primary()

    def parse_quantifier(self) -> Formula:
        lparen = self.expect("(")
        kind = self.next().kind
        self.push_scope()
        try:
            if kind in ("E", "A"):
                var = self.bind(self.expect("name").text)
                lo, lo_strict = None, False
                if self.at(","):
                    self.next()
                    lo = self.parse_cterm()
                    if self.at("<"):
                        self.next()
                        lo_strict = True
                    else:
                        self.expect("<=")
                    mid = self.expect("name").text
                    if self.resolve(mid) != var:
                        raise ParseError(f"range must bound {var!r}, found {mid!r}", self.peek())
                if self.at("<"):
                    self.next()
                    hi_strict = True
                else:
                    self.expect("<=")
                    hi_strict = False
                hi = self.parse_cterm()
                self.expect(")")
                body = self.parse_prefix()
                return CQuant(kind, var, lo, hi, body, lo_strict=lo_strict,
                              hi_strict=hi_strict, span=lparen.span())
            if kind in ("EQ", "AQ"):
                var = self.bind(self.expect("name").text)
                self.expect(",")
                self.expect("|")
                inner = self.expect("name").text
                if self.resolve(inner) != var:
                    raise ParseError(f"size must declare {var!r}, found {inner!r}", self.peek())
                self.expect("|")
                self.expect("=")
                size = self.parse_cterm()
                self.expect(")")
                body = self.parse_prefix()
                return QQuant(kind, var, size, body, span=lparen.span())
            # EQF Y : [d] -> Q(s)
            var = self.bind(self.expect("name").text)
            self.expect(":")
            self.expect("[")
            domain = self.parse_cterm()
            self.expect("]")
            self.expect("->")
            self.expect("Q")
            self.expect("(")
            codomain = self.parse_cterm()
            self.expect(")")
            self.expect(")")
            body = self.parse_prefix()
            return FuncQuant(var, domain, codomain, body, span=lparen.span())
        finally:
            self.pop_scope()

    def parse_primary(self) -> Formula:
        tok = self.peek()
        if tok.kind in ("QTC", "logQTC"):
            return self.parse_qtc()
        if tok.kind in ("P_I", "P_ROT") or (tok.kind == "name" and tok.text.startswith("P_")):
            return self.parse_predicate()
        if tok.kind == "(":
            save = self.i
            try:
                return self.parse_qor()
            except ParseError:
                self.i = save
            self.next()
            inner = self.parse_formula()
            self.expect(")")
            return inner
        if tok.kind == "[":
            self.next()
            inner = self.parse_formula()
            self.expect("]")
            return inner
        return self.parse_atom()

    def parse_qor(self) -> Formula:
        lparen = self.expect("(")
        antecedents = [self.parse_qterm()]
        while self.at(","):
            self.next()
            antecedents.append(self.parse_qterm())
        self.expect(")")
        self.expect("[")
        branches = [self.parse_formula()]
        while self.at("||"):
            self.next()
            branches.append(self.parse_formula())
        self.expect("]")
        return QOr(tuple(antecedents), tuple(branches), span=lparen.span())

    def parse_predicate(self) -> Formula:
        tok = self.next()
        if tok.kind == "P_I":
            gate = GateRef("I")
            self.expect("(")
        elif tok.kind == "P_ROT":
            self.expect("(")
            angle = self.parse_angle()
            self.expect(";")
            gate = GateRef("ROT", angle)
        else:
            raise ParseError(f"unknown predicate symbol {tok.text}", tok)
        first = self.parse_qterm()
        if self.at(")"):
            raise ParseError(f"{tok.text} takes two arguments separated by ':'", self.peek())
        self.expect(":")
        second = self.parse_qterm()
        self.expect(")")
        return QPred(gate, first, second, span=tok.span())

    def parse_qtc(self) -> Formula:
        tok = self.next()
        self.expect("[")
        # the relation's index parameters are the designated names i and j,
        # shadowing any outer binders of the same names
        self.push_scope()
        self.scopes[-1]["i"] = "i"
        self.scopes[-1]["j"] = "j"
        relation = self.parse_formula()
        self.pop_scope()
        self.expect("]")
        self.expect("(")
        start = self.parse_cterm()
        start_args = []
        while self.at(","):
            self.next()
            start_args.append(self.resolve(self.expect("name").text))
        self.expect(":")
        end = self.parse_cterm()
        end_args = []
        while self.at(","):
            self.next()
            end_args.append(self.resolve(self.expect("name").text))
        self.expect(")")
        return Qtc(relation, start, tuple(start_args), end, tuple(end_args),
                   log=(tok.kind == "logQTC"), span=tok.span())

    def parse_atom(self) -> Formula:
        save = self.i
        try:
            lhs = self.parse_cterm()
            if self.peek().kind in ("=", "<=", "<"):
                f = None
                while self.peek().kind in ("=", "<=", "<"):
                    op = self.next()
                    rhs = self.parse_cterm()
                    cmp = Cmp(op.kind, lhs, rhs, span=op.span())
                    f = cmp if f is None else QAnd(f, cmp, span=op.span())
                    lhs = rhs
                return f
        except ParseError:
            pass
        self.i = save
        term = self.parse_qterm()
        tok = self.expect("~=")
        self.expect("{")
        eps_tok = self.peek()
        if eps_tok.kind in ("num", "float"):
            self.next()
            eps = float(eps_tok.text)
        else:
            raise ParseError(f"expected measurement error bound, found {eps_tok.text!r}", eps_tok)
        self.expect("}")
        bits_tok = self.expect("num")
        if set(bits_tok.text) - {"0", "1"}:
            raise ParseError(f"measurement outcome must be bits, found {bits_tok.text!r}", bits_tok)
        return Measure(term, eps, bits_tok.text, span=tok.span())


def parse_formula(src: str) -> ParseResult:
    """Parse one formula (with optional pragmas). Diagnostics instead of raising."""
    try:
        toks = tokenize(src)
        p = _Parser(toks)
        meta = p.parse_pragmas()
        f = p.parse_formula()
        if not p.at("eof"):
            raise ParseError(f"unexpected trailing input {p.peek().text!r}", p.peek())
        return ParseResult(f, meta, [])
    except ParseError as e:
        return ParseResult(None, FileMeta(), [e.diagnostic])


def parse_formula_strict(src: str) -> Formula:
    res = parse_formula(src)
    if not res.ok:
        raise ValueError("; ".join(d.render() for d in res.diagnostics))
    return res.formula


# ---------------------------------------------------------------------------
# Pretty-printer


def _wrap_operand(f: Formula) -> bool:
    return isinstance(f, (CQuant, QQuant, FuncQuant, QNot, Iff))


def pretty(f: Formula) -> str:
    if isinstance(f, Cmp):
        return f"{render_cterm(f.lhs)} {f.op} {render_cterm(f.rhs)}"
    if isinstance(f, QPred):
        return f"{f.gate.render()}{render_qterm(f.first)} : {render_qterm(f.second)})"
    if isinstance(f, Measure):
        return f"{render_qterm(f.term)} ~={{{_render_eps(f.eps)}}} {f.bits}"
    if isinstance(f, QAnd):
        parts = []
        stack = [f]
        flat: list[Formula] = []
        while stack:
            g = stack.pop()
            if isinstance(g, QAnd):
                stack.extend([g.rhs, g.lhs])
            else:
                flat.append(g)
        for k, g in enumerate(flat):
            s = pretty(g)
            if _wrap_operand(g) and k < len(flat) - 1 or isinstance(g, Iff):
                s = f"({s})"
            parts.append(s)
        return " /\\ ".join(parts)
    if isinstance(f, QOr):
        ante = ", ".join(render_qterm(a) for a in f.antecedents)
        branches = " || ".join(pretty(b) for b in f.branches)
        return f"({ante})[ {branches} ]"
    if isinstance(f, QNot):
        inner = pretty(f.inner)
        if not isinstance(f.inner, QOr):
            inner = f"({inner})"
        return f"!q {inner}"
    if isinstance(f, CQuant):
        hi_op = "<" if f.hi_strict else "<="
        if f.lo is not None:
            lo_op = "<" if f.lo_strict else "<="
            head = (f"({f.kind} {f.var}, {render_cterm(f.lo)} {lo_op} {f.var} "
                    f"{hi_op} {render_cterm(f.hi)})")
        else:
            head = f"({f.kind} {f.var} {hi_op} {render_cterm(f.hi)})"
        return f"{head} {_pretty_body(f.body)}"
    if isinstance(f, QQuant):
        return f"({f.kind} {f.var}, |{f.var}| = {render_cterm(f.size)}) {_pretty_body(f.body)}"
    if isinstance(f, FuncQuant):
        return (f"(EQF {f.fname} : [{render_cterm(f.domain)}] -> Q({render_cterm(f.codomain)})) "
                f"{_pretty_body(f.body)}")
    if isinstance(f, Qtc):
        head = "logQTC" if f.log else "QTC"
        s_args = "".join(f", {a}" for a in f.start_args)
        e_args = "".join(f", {a}" for a in f.end_args)
        return (f"{head}[ {pretty(f.relation)} ]({render_cterm(f.start)}{s_args} : "
                f"{render_cterm(f.end)}{e_args})")
    if isinstance(f, Iff):
        l, r = pretty(f.lhs), pretty(f.rhs)
        if isinstance(f.lhs, Iff):
            l = f"({l})"
        if isinstance(f.rhs, Iff):
            r = f"({r})"
        return f"{l} <=> {r}"
    raise TypeError(f"not a formula: {f!r}")


def _pretty_body(body: Formula) -> str:
    s = pretty(body)
    if isinstance(body, (QAnd, Iff)):
        return f"[ {s} ]"
    return s


def _render_eps(eps: float) -> str:
    return repr(eps) if eps != int(eps) else str(int(eps))


# ---------------------------------------------------------------------------
# Desugaring


class DesugarError(Exception):
    def __init__(self, message: str, span: Span | None = None):
        super().__init__(message)
        self.diagnostic = Diagnostic(message, span or Span(0, 0, 0, 0))


_FRESH_IFF = [0]


def desugar(f: Formula) -> Formula:
    """Lower surface forms to the core: binary quantum OR over 1-qubit
    antecedents, <=> expanded with a fresh |+> antecedent. Idempotent."""
    if isinstance(f, Iff):
        lhs, rhs = desugar(f.lhs), desugar(f.rhs)
        both = QAnd(lhs, rhs, span=f.span)
        neither = QAnd(QNot(lhs, span=f.span), QNot(rhs, span=f.span), span=f.span)
        return QOr((PlusConst(),), (both, neither), span=f.span)
    if isinstance(f, QOr):
        branches = tuple(desugar(b) for b in f.branches)
        antecedents = _expand_antecedents(f.antecedents, f.span)
        m = len(antecedents)
        if len(branches) != (1 << m):
            raise DesugarError(
                f"quantum OR with {m}-qubit antecedent needs {1 << m} branches, got {len(branches)}",
                f.span,
            )
        return _nest_qor(antecedents, branches, f.span)
    if isinstance(f, QAnd):
        return replace(f, lhs=desugar(f.lhs), rhs=desugar(f.rhs))
    if isinstance(f, QNot):
        return replace(f, inner=desugar(f.inner))
    if isinstance(f, (CQuant, QQuant, FuncQuant)):
        return replace(f, body=desugar(f.body))
    if isinstance(f, Qtc):
        return replace(f, relation=desugar(f.relation))
    return f


def _expand_antecedents(antecedents: tuple, span) -> list:
    out = []
    for a in antecedents:
        if isinstance(a, QRange):
            if not (isinstance(a.lo, CInt) and isinstance(a.hi, CInt)):
                raise DesugarError("range antecedents need literal bounds", span)
            if a.hi.value < a.lo.value:
                raise DesugarError(f"empty antecedent range [{a.lo.value},{a.hi.value}]", span)
            out.extend(QBit(a.target, CInt(i)) for i in range(a.lo.value, a.hi.value + 1))
        else:
            out.append(a)
    return out


def _nest_qor(antecedents: list, branches: tuple, span) -> Formula:
    if len(antecedents) == 1:
        return QOr((antecedents[0],), branches, span=span)
    half = len(branches) // 2
    lo = _nest_qor(antecedents[1:], branches[:half], span)
    hi = _nest_qor(antecedents[1:], branches[half:], span)
    return QOr((antecedents[0],), (lo, hi), span=span)

"""Static analysis of quantum formulas.

Builds the variable connection graph, enforces the four well-formedness
conditions plus the quantum-OR antecedent restriction, classifies formulas
(iqq-free, measurement-free, negation-free, query-free, sentence,
predecessor-dependent), sums measurement error budgets, and rewrites
formulas into negation-free form.

Occurrences in different branches of one quantum OR live in parallel
scopes and never conflict with each other (the controlled-NOT pattern
depends on this). Components indexed by classically quantified variables
are tracked as families; two variable-indexed families of the same
variable in the same argument place conflict unless their index ranges
are provably disjoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .syntax import (
    BitConst, CAdd, CInt, CMul, CQuant, CVar, Cmp, Formula, FuncApp,
    FuncQuant, Iff, InstanceQuery, Measure, PlusConst, QAnd, QBit, QNot, QOr,
    QPred, QQuant, QRange, QVar, Qtc, SizeOf, Span, Suc, Tensor, is_classical,
    render_cterm,
)

RULES = (
    "order_consistency",
    "const_in_second_arg",
    "duplicate_first_or_second_use",
    "quantified_component_reuse",
    "qor_antecedent_in_second_arg",
)


@dataclass
class Violation:
    rule: str
    span: Span | None
    message: str

    def render(self) -> str:
        loc = f"{self.span.line}:{self.span.col}" if self.span else "-"
        return f"{self.rule} at {loc}: {self.message}"


@dataclass
class Classification:
    iqq_free: bool = True
    measurement_free: bool = True
    negation_free: bool = True
    query_free: bool = True
    sentence: bool = True
    predecessor_dependent: bool = True


@dataclass
class WfReport:
    violations: list = field(default_factory=list)
    classification: Classification = field(default_factory=Classification)
    mes: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def render_text(self) -> str:
        lines = [f"wellformed: {'ok' if self.ok else 'VIOLATIONS'}"]
        lines += ["  " + v.render() for v in self.violations]
        c = self.classification
        lines.append(
            "  flags: "
            + " ".join(
                f"{k}={'yes' if v else 'no'}"
                for k, v in (
                    ("iqq_free", c.iqq_free),
                    ("measurement_free", c.measurement_free),
                    ("negation_free", c.negation_free),
                    ("query_free", c.query_free),
                    ("sentence", c.sentence),
                    ("predecessor_dependent", c.predecessor_dependent),
                )
            )
        )
        lines.append(f"  mes: {self.mes:.12g}")
        return "\n".join(lines)

    def render_kv(self) -> str:
        lines = [f"ok {str(self.ok).lower()}"]
        for v in self.violations:
            loc = f"{v.span.line}:{v.span.col}" if v.span else "-"
            lines.append(f"violation {v.rule} {loc} {v.message}")
        c = self.classification
        for k in ("iqq_free", "measurement_free", "negation_free", "query_free",
                  "sentence", "predecessor_dependent"):
            lines.append(f"flag {k} {str(getattr(c, k)).lower()}")
        lines.append(f"mes {self.mes:.12g}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Occurrence collection


@dataclass(frozen=True)
class _Range:
    """Index range of a quantified component; each end is (base term rendering,
    integer offset), base None meaning a literal."""

    lo_base: str | None
    lo_off: int
    hi_base: str | None
    hi_off: int


@dataclass
class _Occ:
    var: object  # var name | ('func', fname, index rendering)
    comp: str | None  # None = whole variable; else rendered index/range
    place: str  # 'first' | 'second'
    path: tuple  # ((or_node_id, branch_index), ...)
    binder_dep: str | None  # single binder name if comp is exactly a bound classical var
    rng: _Range | None  # index range when binder_dep or literal component
    span: Span | None


def _term_offset(t) -> tuple[str | None, int] | None:
    """Render a classical term as (base, offset) for cheap comparisons."""
    off = 0
    while isinstance(t, Suc):
        off += 1
        t = t.inner
    if isinstance(t, CInt):
        return (None, t.value + off)
    return (render_cterm(t), off)


def _paths_compatible(p1: tuple, p2: tuple) -> bool:
    for (o1, b1), (o2, b2) in zip(p1, p2):
        if o1 != o2:
            return True  # different OR nodes: treat as unrelated nesting
        if b1 != b2:
            return False  # sibling branches of the same OR: parallel scopes
    return True


def _ranges_disjoint(r1: _Range | None, r2: _Range | None) -> bool:
    if r1 is None or r2 is None:
        return False
    if r1.hi_base == r2.lo_base and r1.hi_off < r2.lo_off:
        return True
    return r2.hi_base == r1.lo_base and r2.hi_off < r1.lo_off


class _Analyzer:
    def __init__(self):
        self.occs: list[_Occ] = []
        self.edges: list[tuple] = []  # (from_var, to_var, span)
        self.first_use: dict = {}
        self.use_counter = 0
        self.violations: list[Violation] = []
        self.or_ids = 0

    # -- term decomposition --------------------------------------------------

    def _components(self, t, binders: dict):
        """Yield (var_key, comp_key, binder_dep, range) for a quantum term."""
        if isinstance(t, QVar):
            yield (t.name, None, None, None)
        elif isinstance(t, FuncApp):
            # the index is part of the instance identity; instances collide only
            # on syntactically equal (normalized) index expressions
            yield (("func", t.fname, render_cterm(t.index)), None, None, None)
        elif isinstance(t, QBit):
            if is_classical(t.index):
                dep, rng = self._index_info(t.index, binders)
                for var, _, _, _ in self._components(t.target, binders):
                    yield (var, render_cterm(t.index), dep, rng)
            else:
                # quantum-indexed access reads both the index and the target
                yield from self._components(t.index, binders)
                for var, _, _, _ in self._components(t.target, binders):
                    yield (var, None, None, None)
        elif isinstance(t, QRange):
            r = self._range_of(t.lo, t.hi, binders)
            for var, _, _, _ in self._components(t.target, binders):
                yield (var, f"[{render_cterm(t.lo)},{render_cterm(t.hi)}]", None, r)
        elif isinstance(t, Tensor):
            yield from self._components(t.left, binders)
            yield from self._components(t.right, binders)
        elif isinstance(t, InstanceQuery):
            yield from self._components(t.index, binders)
        # constants contribute nothing

    def _index_info(self, idx, binders: dict):
        """(binder name, index range) for a classical component index."""
        info = _term_offset(idx)
        if info is None:
            return None, None
        base, off = info
        if base is None:
            return None, _Range(None, off, None, off)
        if base in binders:
            rng = binders[base]
            if rng is not None:
                return base, _Range(rng.lo_base, rng.lo_off + off,
                                    rng.hi_base, rng.hi_off + off)
            return base, None
        return None, None

    def _range_of(self, lo, hi, binders):
        lo_i, hi_i = _term_offset(lo), _term_offset(hi)
        if lo_i and hi_i and lo_i[0] == hi_i[0]:
            return _Range(lo_i[0], lo_i[1], hi_i[1])
        return None

    # -- main walk -------------------------------------------------------------

    def walk(self, f: Formula, path: tuple = (), binders: dict | None = None):
        binders = binders if binders is not None else {}
        if isinstance(f, (Cmp,)):
            return
        if isinstance(f, QPred):
            self._record_term(f.first, "first", path, binders, f.span)
            self._record_term(f.second, "second", path, binders, f.span)
            self._check_second_arg(f.second, f.span)
            for u, _, _, _ in self._components(f.first, binders):
                for v, _, _, _ in self._components(f.second, binders):
                    self.edges.append((u, v, f.span))
            return
        if isinstance(f, Measure):
            # measurement reads wires declaratively; uses are tracked for
            # first-use ordering but do not consume
            for var, *_ in self._components(f.term, binders):
                self._touch(var)
            return
        if isinstance(f, QAnd):
            self.walk(f.lhs, path, binders)
            self.walk(f.rhs, path, binders)
            return
        if isinstance(f, QOr):
            self.or_ids += 1
            oid = self.or_ids
            ante_comps = []
            for a in f.antecedents:
                for var, comp, *_ in self._components(a, binders):
                    self._touch(var)
                    ante_comps.append((var, comp))
            for bi, branch in enumerate(f.branches):
                self.walk(branch, path + ((oid, bi),), binders)
            # antecedent restriction: the antecedent component must not be
            # produced inside the branches
            for occ in self.occs:
                if occ.place != "second" or len(occ.path) <= len(path):
                    continue
                if occ.path[: len(path)] != path or occ.path[len(path)][0] != oid:
                    continue
                for var, comp in ante_comps:
                    if occ.var == var and (occ.comp == comp or comp is None or occ.comp is None):
                        self.violations.append(Violation(
                            "qor_antecedent_in_second_arg", occ.span,
                            f"antecedent {self._vname(var)}{'' if comp is None else '[' + comp + ']'}"
                            " is written inside a branch"))
            return
        if isinstance(f, QNot):
            self.walk(f.inner, path, binders)
            return
        if isinstance(f, CQuant):
            lo = _term_offset(f.lo) if f.lo is not None else (None, 0)
            hi = _term_offset(f.hi)
            rng = None
            if lo is not None and hi is not None:
                rng = _Range(lo[0], lo[1] + (1 if f.lo_strict else 0),
                             hi[0], hi[1] - (1 if f.hi_strict else 0))
            b2 = dict(binders)
            b2[f.var] = rng
            self.walk(f.body, path, b2)
            return
        if isinstance(f, QQuant):
            self.walk(f.body, path, binders)
            return
        if isinstance(f, Qtc):
            # the relation's variables are per-iteration instances living in
            # their own scope; only its violations surface here
            sub = _Analyzer()
            sub.walk(f.relation, (), {"i": None, "j": None})
            sub.check_rules()
            self.violations.extend(sub.violations)
            for a in f.start_args:
                self._touch(a)
                self.occs.append(_Occ(a, None, "first", path, None, None, f.span))
            for u in f.start_args:
                for v in f.end_args:
                    self.edges.append((u, v, f.span))
            for v in f.end_args:
                self._touch(v)
                self.occs.append(_Occ(v, None, "second", path, None, None, f.span))
            return
        if isinstance(f, FuncQuant):
            self.walk(f.body, path, binders)
            return
        if isinstance(f, Iff):
            self.walk(f.lhs, path, binders)
            self.walk(f.rhs, path, binders)
            return
        raise TypeError(f"not a formula: {f!r}")

    def _record_term(self, t, place, path, binders, span):
        for var, comp, dep, rng in self._components(t, binders):
            self._touch(var)
            self.occs.append(_Occ(var, comp, place, path, dep, rng, span))

    def _touch(self, var):
        if var not in self.first_use:
            self.first_use[var] = self.use_counter
            self.use_counter += 1

    def _check_second_arg(self, t, span):
        bad = None
        stack = [t]
        while stack:
            x = stack.pop()
            if isinstance(x, (BitConst, PlusConst)):
                bad = "constant"
            elif isinstance(x, InstanceQuery):
                bad = "instance function symbol X"
            elif isinstance(x, QBit):
                stack.append(x.target)
                if not is_classical(x.index):
                    stack.append(x.index)
            elif isinstance(x, (QRange,)):
                stack.append(x.target)
            elif isinstance(x, Tensor):
                stack.extend([x.left, x.right])
        if bad:
            self.violations.append(Violation(
                "const_in_second_arg", span,
                f"second argument place contains a {bad}"))

    @staticmethod
    def _vname(var) -> str:
        if isinstance(var, tuple):
            return f"{var[1]}({var[2]})"
        return str(var)

    # -- rule enforcement -------------------------------------------------------

    def check_rules(self):
        # rule (1): edges must respect first-use order; no self-edges
        for u, v, span in self.edges:
            if u == v:
                self.violations.append(Violation(
                    "order_consistency", span,
                    f"{self._vname(u)} feeds itself"))
            elif self.first_use.get(u, 0) >= self.first_use.get(v, 0):
                self.violations.append(Violation(
                    "order_consistency", span,
                    f"edge {self._vname(u)} -> {self._vname(v)} breaks the topological order"))
        # rules (3) and (4): duplicate use of a variable/component per place
        by_key: dict = {}
        for occ in self.occs:
            by_key.setdefault((occ.var, occ.place), []).append(occ)
        for (var, place), occs in by_key.items():
            for a in range(len(occs)):
                for b in range(a + 1, len(occs)):
                    o1, o2 = occs[a], occs[b]
                    if not _paths_compatible(o1.path, o2.path):
                        continue
                    if o1.comp is not None and o2.comp is not None and o1.comp != o2.comp:
                        # distinct component families: conflict only when both are
                        # plain quantified indexes with non-disjoint ranges
                        if o1.binder_dep and o2.binder_dep:
                            if not _ranges_disjoint(o1.rng, o2.rng):
                                self.violations.append(Violation(
                                    "quantified_component_reuse", o2.span,
                                    f"components {self._vname(var)}[{o1.comp}] and "
                                    f"{self._vname(var)}[{o2.comp}] may coincide in the "
                                    f"{place} argument place"))
                        continue
                    rule = ("quantified_component_reuse"
                            if (o1.binder_dep or o2.binder_dep)
                            else "duplicate_first_or_second_use")
                    what = self._vname(var) + (f"[{o1.comp}]" if o1.comp else "")
                    self.violations.append(Violation(
                        rule, o2.span,
                        f"{what} appears twice in {place} argument places"))


# ---------------------------------------------------------------------------
# Public operations


@dataclass
class VarGraph:
    vertices: set
    edges: set  # (from, to) with multiplicity collapsed


def build_var_graph(f: Formula) -> VarGraph:
    a = _Analyzer()
    a.walk(f)
    return VarGraph(set(a.first_use), {(u, v) for u, v, _ in a.edges})


def predecessor_dependent_vars(f: Formula) -> set:
    """Quantum variables appearing in some second argument place (or produced
    by a QTC closure) within f."""
    a = _Analyzer()
    a.walk(f)
    out = set()
    for occ in a.occs:
        if occ.place == "second":
            out.add(occ.var if not isinstance(occ.var, tuple) else occ.var[1])
    return out


def check_wellformed(f: Formula) -> WfReport:
    a = _Analyzer()
    a.walk(f)
    a.check_rules()
    report = WfReport(violations=a.violations)
    report.classification = classify(f)
    report.mes = mes(f)
    return report


def mes(f: Formula) -> float:
    total = 0.0
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Measure):
            total += g.eps
        stack.extend(_children(g))
    return total


def _children(f: Formula) -> list:
    if isinstance(f, QAnd):
        return [f.lhs, f.rhs]
    if isinstance(f, QOr):
        return list(f.branches)
    if isinstance(f, QNot):
        return [f.inner]
    if isinstance(f, (CQuant, QQuant, FuncQuant)):
        return [f.body]
    if isinstance(f, Qtc):
        return [f.relation]
    if isinstance(f, Iff):
        return [f.lhs, f.rhs]
    return []


def _terms_of(f: Formula) -> list:
    if isinstance(f, QPred):
        return [f.first, f.second]
    if isinstance(f, Measure):
        return [f.term]
    if isinstance(f, QOr):
        return list(f.antecedents)
    return []


def _query_in_term(t) -> bool:
    stack = [t]
    while stack:
        x = stack.pop()
        if isinstance(x, InstanceQuery):
            return True
        if isinstance(x, QBit):
            stack.append(x.target)
            if not is_classical(x.index):
                stack.append(x.index)
        elif isinstance(x, QRange):
            stack.append(x.target)
        elif isinstance(x, Tensor):
            stack.extend([x.left, x.right])
    return False


def free_variables(f: Formula) -> tuple[set, set]:
    """(free classical names, free quantum names). Functional instances are
    free iff the functional name is unbound."""
    free_c, free_q = set(), set()

    def go(g: Formula, bound_c: set, bound_q: set, bound_f: set):
        for t in _terms_of(g):
            _term_frees(t, bound_c, bound_q, bound_f, free_c, free_q)
        if isinstance(g, Cmp):
            _cterm_frees(g.lhs, bound_c, bound_q, free_c, free_q)
            _cterm_frees(g.rhs, bound_c, bound_q, free_c, free_q)
        if isinstance(g, CQuant):
            for b in (g.lo, g.hi):
                if b is not None:
                    _cterm_frees(b, bound_c, bound_q, free_c, free_q)
            go(g.body, bound_c | {g.var}, bound_q, bound_f)
            return
        if isinstance(g, QQuant):
            _cterm_frees(g.size, bound_c, bound_q, free_c, free_q)
            go(g.body, bound_c, bound_q | {g.var}, bound_f)
            return
        if isinstance(g, FuncQuant):
            go(g.body, bound_c, bound_q, bound_f | {g.fname})
            return
        if isinstance(g, Qtc):
            _cterm_frees(g.start, bound_c, bound_q, free_c, free_q)
            _cterm_frees(g.end, bound_c, bound_q, free_c, free_q)
            for name in (*g.start_args, *g.end_args):
                if name not in bound_q:
                    free_q.add(name)
            go(g.relation, bound_c | {"i", "j"},
               bound_q | set(g.start_args) | set(g.end_args), bound_f)
            return
        for child in _children(g):
            go(child, bound_c, bound_q, bound_f)

    def _term_frees(t, bound_c, bound_q, bound_f, free_c, free_q):
        if isinstance(t, QVar):
            if t.name not in bound_q:
                free_q.add(t.name)
        elif isinstance(t, FuncApp):
            if t.fname not in bound_f:
                free_q.add(t.fname)
            _cterm_frees(t.index, bound_c, bound_q, free_c, free_q)
        elif isinstance(t, QBit):
            _term_frees(t.target, bound_c, bound_q, bound_f, free_c, free_q)
            if is_classical(t.index):
                _cterm_frees(t.index, bound_c, bound_q, free_c, free_q)
            else:
                _term_frees(t.index, bound_c, bound_q, bound_f, free_c, free_q)
        elif isinstance(t, QRange):
            _term_frees(t.target, bound_c, bound_q, bound_f, free_c, free_q)
            _cterm_frees(t.lo, bound_c, bound_q, free_c, free_q)
            _cterm_frees(t.hi, bound_c, bound_q, free_c, free_q)
        elif isinstance(t, Tensor):
            _term_frees(t.left, bound_c, bound_q, bound_f, free_c, free_q)
            _term_frees(t.right, bound_c, bound_q, bound_f, free_c, free_q)
        elif isinstance(t, InstanceQuery):
            _term_frees(t.index, bound_c, bound_q, bound_f, free_c, free_q)

    def _cterm_frees(t, bound_c, bound_q, free_c, free_q):
        if isinstance(t, CVar):
            if t.name not in bound_c:
                free_c.add(t.name)
        elif isinstance(t, Suc):
            _cterm_frees(t.inner, bound_c, bound_q, free_c, free_q)
        elif isinstance(t, SizeOf):
            if t.var not in bound_q:
                free_q.add(t.var)
        elif isinstance(t, CAdd):
            _cterm_frees(t.left, bound_c, bound_q, free_c, free_q)
            _cterm_frees(t.right, bound_c, bound_q, free_c, free_q)
        elif isinstance(t, CMul):
            _cterm_frees(t.term, bound_c, bound_q, free_c, free_q)

    go(f, set(), set(), set())
    return free_c, free_q


def classify(f: Formula) -> Classification:
    c = Classification()
    for g in _walk_all(f):
        if isinstance(g, Measure):
            c.measurement_free = False
        if isinstance(g, QNot):
            c.negation_free = False
        for t in _terms_of(g):
            if _query_in_term(t):
                c.query_free = False
        if isinstance(g, QQuant):
            if g.kind == "AQ":
                c.iqq_free = False
            elif g.var not in predecessor_dependent_vars(g.body):
                c.iqq_free = False
    free_c, free_q = free_variables(f)
    c.sentence = not free_c and not free_q
    pd = predecessor_dependent_vars(f)
    graph = build_var_graph(f)
    qnames = {v if not isinstance(v, tuple) else v[1] for v in graph.vertices}
    c.predecessor_dependent = qnames <= pd if qnames else True
    return c


def _walk_all(f: Formula):
    stack = [f]
    while stack:
        g = stack.pop()
        yield g
        stack.extend(_children(g))


# ---------------------------------------------------------------------------
# Negation-free normalization


def negation_normalize(f: Formula) -> Formula:
    """Semantically equivalent negation-free formula (Evaluation Def. (5))."""
    if isinstance(f, QNot):
        return _negate(f.inner)
    if isinstance(f, QAnd):
        return replace(f, lhs=negation_normalize(f.lhs), rhs=negation_normalize(f.rhs))
    if isinstance(f, QOr):
        return replace(f, branches=tuple(negation_normalize(b) for b in f.branches))
    if isinstance(f, (CQuant, QQuant, FuncQuant)):
        return replace(f, body=negation_normalize(f.body))
    if isinstance(f, Qtc):
        return replace(f, relation=negation_normalize(f.relation))
    if isinstance(f, Iff):
        raise ValueError("normalize after desugaring (<=> is surface syntax)")
    return f


def _negate(f: Formula) -> Formula:
    if isinstance(f, QNot):
        return negation_normalize(f.inner)  # double negation
    if isinstance(f, (Cmp, QPred)):
        return f  # negation is erased on predicates and classical comparisons
    if isinstance(f, Qtc):
        return negation_normalize(f)  # bare relations are measurement-free
    if isinstance(f, Measure):
        flipped = "".join("1" if b == "0" else "0" for b in f.bits)
        return replace(f, bits=flipped)
    if isinstance(f, QAnd):
        return replace(f, lhs=_negate(f.lhs), rhs=_negate(f.rhs))
    if isinstance(f, QOr):
        return replace(f, branches=tuple(_negate(b) for b in f.branches))
    if isinstance(f, CQuant):
        return replace(f, body=_negate(f.body))  # (5)(iv): no dualization
    if isinstance(f, QQuant):
        if f.kind == "AQ":
            return replace(f, kind="EQ", body=_negate(f.body))
        if f.var in predecessor_dependent_vars(f.body):
            return replace(f, body=_negate(f.body))  # consequential: stays EQ
        return replace(f, kind="AQ", body=_negate(f.body))
    if isinstance(f, FuncQuant):
        return replace(f, body=_negate(f.body))  # instances are consequential
    if isinstance(f, Iff):
        raise ValueError("normalize after desugaring (<=> is surface syntax)")
    raise TypeError(f"not a formula: {f!r}")

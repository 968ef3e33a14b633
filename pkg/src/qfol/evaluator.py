"""Evaluation of well-formed quantum formulas over structures.

Lowering turns a desugared, negation-normalized formula into a flat circuit
IR: allocations, guarded gates, guarded wire permutations, query ops, and
declarative checks. Guards carry the quantum-OR branch conditions; a branch
body's ops are masked rather than nested (the spec's controlled regions in
flattened form). Execution interprets the IR over a JointState.

Predicates are read forward: P_C(s : t) consumes s's wires into t with the
gate applied when t is not yet bound, and is an equality check when both
sides are bound. Quantum-OR branches binding the same consumer are unified:
same producer wires -> masked gates on shared wires (CNOT); pure-copy wire
permutations -> a masked content permutation (Fredkin); anything else ->
fresh target wires written under branch masks (the paper's own idiom for
conditional constants). Cross-branch copies from distinct source wires
assume basis-valued sources, the regime of all tape-machine constructions.

Classical existentials and introductory quantum quantifiers cannot be
lowered statically; the evaluator handles them by forking (greedy, in
textual order) and by the spectral method respectively. The spectral path
decides an introductory quantifier exactly when its body lowers to a
circuit with a single measurement check: the witness pass-probability is a
quadratic form whose extreme eigenvalues decide both EQ and AQ, and an
accepting witness is re-executed to certify the answer. Anything else falls
back to seeded sampling and may return undetermined.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .gates import PLUS, Angle, rot_matrix, I2, X
from .numutil import ilog
from .state import CapacityError, Guard, JointState, RegistryError, Table, swap_front_order
from .syntax import (
    BitConst, CQuant, Cmp, Formula, FuncApp, FuncQuant, Iff, InstanceQuery,
    Measure, PlusConst, QAnd, QBit, QNot, QOr, QPred, QQuant, QRange, QVar,
    Qtc, Structure, Tensor, UnboundTermError, eval_cterm, is_classical,
    render_qterm,
)
from .parser import desugar
from .wellformed import classify, negation_normalize, predecessor_dependent_vars


@dataclass
class RunConfig:
    tolerance: float = 1e-9
    wire_cap: int = 20
    qcap: int = 3  # introductory quantifier qubit-size cap
    seed: int = 0
    qtc_log_c: int = 4  # logQTC start bound coefficient
    samples: int = 64  # fallback witness search budget

    def __post_init__(self):
        if not 0 < self.tolerance <= 1e-3:
            raise ValueError("tolerance must be in (0, 1e-3]")
        if self.wire_cap <= 0 or self.qcap <= 0:
            raise ValueError("caps must be positive")


class LoweringError(Exception):
    pass


class StaticError(Exception):
    pass


class GuardError(Exception):
    pass


class _NeedsSearch(LoweringError):
    """Raised when lowering meets a construct only the evaluator can handle."""


# ---------------------------------------------------------------------------
# Circuit IR


@dataclass
class AllocOp:
    wires: tuple
    bits: str | None = None  # basis init
    vector: np.ndarray | None = None  # general init (free-variable assignment)
    plus: bool = False


@dataclass
class GateOp:
    matrix: np.ndarray
    wire: object
    guard: Guard | None = None


@dataclass
class PermOp:
    perm: dict  # dest wire -> source wire
    guard: Guard | None = None


@dataclass
class QueryOp:
    addr: tuple
    ans: object
    guard: Guard | None = None


@dataclass
class QueryAtom:
    """Guard component resolved against the structure input at execution:
    the input bit addressed by the value of `addr` must equal `bit`."""

    addr: tuple
    bit: int


@dataclass
class CheckMeasure:
    wires: tuple
    bits: str
    eps: float
    guard: Guard | None = None
    qguards: tuple = ()
    label: str = ""


@dataclass
class CheckStateEq:
    wires_a: tuple
    wires_b: tuple
    gate: np.ndarray
    label: str = ""


@dataclass
class CheckZero:
    guard: Guard | None = None
    qguards: tuple = ()
    label: str = ""


@dataclass
class AnyOf:
    groups: list  # list of op lists; passes when some group's checks all pass
    label: str = ""


@dataclass
class CSwapOp:
    index: tuple
    target: tuple
    inverse: bool = False
    guard: Guard | None = None


@dataclass
class CircuitIR:
    ops: list
    alloc: dict  # var key -> wire tuple
    sizes: dict
    wire_count: int
    gate_count: int


# ---------------------------------------------------------------------------
# Execution outcome bookkeeping


@dataclass
class CheckResult:
    kind: str
    passed: bool
    label: str
    total: float = 0.0
    match: float = 0.0
    eps: float = 0.0

    @property
    def margin(self) -> float:
        return self.eps - (self.total - self.match)


@dataclass
class Outcome:
    ok: bool
    state: JointState | None
    checks: list
    probability: float | None = None  # match mass of the final measurement
    incomplete: bool = False  # a search path gave up (one-sided answer)

    def gate_count(self) -> int:
        return sum(1 for c in self.checks if c.kind == "gate")


@dataclass
class Verdict:
    kind: str  # 'accept' | 'reject' | 'undetermined'
    acceptance_probability: float | None = None
    wire_count: int = 0
    gate_count: int = 0
    margins: list = field(default_factory=list)

    def render(self) -> str:
        out = [self.kind]
        if self.acceptance_probability is not None:
            out.append(f"p={self.acceptance_probability:.12g}")
        out.append(f"wires={self.wire_count}")
        out.append(f"gates={self.gate_count}")
        return " ".join(out)


_VACUOUS = object()


# ---------------------------------------------------------------------------
# The machine: shared lowering / evaluation engine


class Machine:
    def __init__(self, st: Structure, cfg: RunConfig, mode: str = "run",
                 counter=None, state: JointState | None = None):
        self.st = st
        self.cfg = cfg
        self.mode = mode  # 'run' | 'lower'
        self.counter = counter if counter is not None else itertools.count()
        self.state = state if state is not None else JointState.empty(cap=cfg.wire_cap)
        self.ops: list = []
        self.guard_atoms: tuple = ()
        self.guard_tables: tuple = ()
        self.guard_queries: tuple = ()
        self.bindings: dict = {}  # var key -> list of wires (None holes)
        self.sizes: dict = {name: sz for name, (sz, _) in st.free_quantum.items()}
        self.cenv: dict = {}
        self.fresh_targets: dict = {}
        self.func_domains: dict = {}
        self.checks: list = []
        self.failed = False
        self.incomplete = False
        self.gate_count = 0

    # -- plumbing -------------------------------------------------------------

    def fork(self) -> "Machine":
        m = Machine(self.st, self.cfg, self.mode, self.counter, self.state)
        m.ops = list(self.ops)
        m.guard_atoms = self.guard_atoms
        m.guard_tables = self.guard_tables
        m.guard_queries = self.guard_queries
        m.bindings = {k: list(v) for k, v in self.bindings.items()}
        m.sizes = dict(self.sizes)
        m.cenv = dict(self.cenv)
        m.fresh_targets = dict(self.fresh_targets)
        m.func_domains = dict(self.func_domains)
        m.checks = list(self.checks)
        m.failed = self.failed
        m.incomplete = self.incomplete
        m.gate_count = self.gate_count
        return m

    def adopt(self, other: "Machine"):
        self.state = other.state
        self.ops = other.ops
        self.bindings = other.bindings
        self.sizes = other.sizes
        self.cenv = other.cenv
        self.fresh_targets = other.fresh_targets
        self.func_domains = other.func_domains
        self.checks = other.checks
        self.failed = other.failed
        self.incomplete = other.incomplete
        self.gate_count = other.gate_count

    def guard(self) -> Guard | None:
        if not (self.guard_atoms or self.guard_tables):
            return None
        return Guard(self.guard_atoms, self.guard_tables)

    def fresh_wires(self, k: int) -> tuple:
        return tuple(next(self.counter) for _ in range(k))

    def cterm(self, t) -> int:
        return eval_cterm(t, self.st.n, self.cenv, self._plain_sizes())

    def _plain_sizes(self) -> dict:
        return {k: v for k, v in self.sizes.items() if isinstance(k, str)}

    # -- op emission ------------------------------------------------------------

    def emit(self, op):
        if self.mode == "lower":
            self.ops.append(op)
            if isinstance(op, GateOp):
                self.gate_count += 1
            return
        self._apply(op)

    def _apply(self, op):
        x = self.st.input
        if isinstance(op, AllocOp):
            if op.vector is not None:
                self.state = self.state.adjoin_state(op.wires, op.vector)
            elif op.plus:
                self.state = self.state.adjoin_state(op.wires, PLUS)
            else:
                self.state = self.state.adjoin_bits(zip(op.wires, map(int, op.bits)))
        elif isinstance(op, GateOp):
            self.state = self.state.apply_gate(op.matrix, op.wire, _resolve(op.guard, x))
            self.gate_count += 1
        elif isinstance(op, PermOp):
            self.state = self.state.apply_permutation(op.perm, _resolve(op.guard, x))
        elif isinstance(op, QueryOp):
            self.state = self.state.query_xor(op.addr, op.ans, x, _resolve(op.guard, x))
        elif isinstance(op, CSwapOp):
            from .state import controlled_swap_inverse, controlled_swap_to_front
            fn = controlled_swap_inverse if op.inverse else controlled_swap_to_front
            self.state = fn(self.state, op.index, op.target)
        elif isinstance(op, CheckMeasure):
            g = _resolve_full(op.guard, op.qguards, x)
            total, match = self.state.measure_masses(op.wires, op.bits, g)
            passed = (total - match) <= op.eps + self.cfg.tolerance
            self._record(CheckResult("measure", passed, op.label, total, match, op.eps))
        elif isinstance(op, CheckStateEq):
            passed = _state_eq(self.state, op.wires_a, op.wires_b, op.gate, self.cfg.tolerance)
            self._record(CheckResult("state_eq", passed, op.label))
        elif isinstance(op, CheckZero):
            g = _resolve_full(op.guard, op.qguards, x)
            m = self.state.mass(g)
            self._record(CheckResult("zero", m <= self.cfg.tolerance, op.label, total=m))
        elif isinstance(op, AnyOf):
            passed = False
            for group in op.groups:
                sub = self.fork()
                sub.checks = []
                for o in group:
                    sub._apply(o)
                if not sub.failed and all(c.passed for c in sub.checks):
                    passed = True
                    break
            self._record(CheckResult("any_of", passed, op.label))
        else:
            raise TypeError(f"unknown op {op!r}")

    def _record(self, res: CheckResult):
        self.checks.append(res)
        if not res.passed:
            self.failed = True

    # -- allocation helpers -------------------------------------------------------

    def alloc_bits(self, bits: str) -> tuple:
        ws = self.fresh_wires(len(bits))
        self.emit(AllocOp(ws, bits=bits))
        return ws

    def alloc_plus(self) -> tuple:
        ws = self.fresh_wires(1)
        self.emit(AllocOp(ws, plus=True))
        return ws

    def var_key(self, t):
        if isinstance(t, QVar):
            return t.name
        if isinstance(t, FuncApp):
            return ("inst", t.fname, self.cterm(t.index))
        raise StaticError(f"not a variable term: {render_qterm(t)}")

    def declared_size(self, key) -> int:
        if isinstance(key, tuple):
            fkey = ("func", key[1])
            if fkey not in self.sizes:
                raise StaticError(f"functional variable {key[1]} is not declared")
            return self.sizes[fkey]
        if key in self.sizes:
            return self.sizes[key]
        if key in self.st.free_quantum:
            return self.st.free_quantum[key][0]
        raise StaticError(f"quantum variable {key} has no declared size")

    def binding(self, key) -> list:
        if key not in self.bindings:
            self.bindings[key] = [None] * self.declared_size(key)
        return self.bindings[key]

    def _materialize_free(self, key):
        """Adjoin a free variable's assigned state on first use."""
        if not isinstance(key, str) or key not in self.st.free_quantum:
            return False
        size, vec = self.st.free_quantum[key]
        ws = self.fresh_wires(size)
        self.emit(AllocOp(ws, vector=np.asarray(vec, dtype=complex)))
        self.bindings[key] = list(ws)
        self.sizes.setdefault(key, size)
        return True

    # -- term resolution (reads) ---------------------------------------------------

    def resolve(self, t, cleanup: list):
        """Ordered wire list for a quantum term; may allocate constants/queries
        and schedule inverse swaps in `cleanup`. Returns _VACUOUS for
        out-of-range component selections (the lambda convention)."""
        if isinstance(t, (QVar, FuncApp)):
            key = self.var_key(t)
            if key not in self.bindings and not self._materialize_free(key):
                if isinstance(key, tuple):
                    raise StaticError(
                        f"instance {key[1]}({key[2]}) is predecessor-independent "
                        "(used before being produced)")
                raise StaticError(f"variable {key} used before being produced")
            ws = self.bindings[key]
            if any(w is None for w in ws):
                raise StaticError(f"variable {key} is only partially produced")
            return list(ws)
        if isinstance(t, QBit):
            if is_classical(t.index):
                i = self.cterm(t.index)
                base = self.resolve(t.target, cleanup)
                if base is _VACUOUS:
                    return _VACUOUS
                if i == 0 or i > len(base):
                    return _VACUOUS
                return [base[i - 1]]
            idx = self.resolve(t.index, cleanup)
            base = self.resolve(t.target, cleanup)
            if idx is _VACUOUS or base is _VACUOUS:
                return _VACUOUS
            self.emit(CSwapOp(tuple(idx), tuple(base)))
            cleanup.append(CSwapOp(tuple(idx), tuple(base), inverse=True))
            return [base[0]]
        if isinstance(t, QRange):
            base = self.resolve(t.target, cleanup)
            if base is _VACUOUS:
                return _VACUOUS
            lo, hi = self.cterm(t.lo), self.cterm(t.hi)
            if not (1 <= lo <= hi <= len(base)):
                raise StaticError(f"range [{lo},{hi}] out of bounds for {render_qterm(t)}")
            return base[lo - 1:hi]
        if isinstance(t, Tensor):
            l = self.resolve(t.left, cleanup)
            r = self.resolve(t.right, cleanup)
            if l is _VACUOUS or r is _VACUOUS:
                return _VACUOUS
            return l + r
        if isinstance(t, InstanceQuery):
            addr = self.resolve(t.index, cleanup)
            if addr is _VACUOUS:
                return _VACUOUS
            ans = self.alloc_bits("0")
            self.emit(QueryOp(tuple(addr), ans[0], self.guard()))
            return [ans[0]]
        if isinstance(t, BitConst):
            return list(self.alloc_bits(str(t.bit)))
        if isinstance(t, PlusConst):
            return list(self.alloc_plus())
        raise TypeError(f"not a quantum term: {t!r}")

    # -- predicate lowering -----------------------------------------------------------

    def _second_pieces(self, t):
        """Flatten a second-argument term into (var key, slot index) pieces."""
        if isinstance(t, (QVar, FuncApp)):
            key = self.var_key(t)
            return [(key, i) for i in range(self.declared_size(key))]
        if isinstance(t, QBit):
            if not is_classical(t.index):
                raise _NeedsSearch("quantum-indexed second argument")
            i = self.cterm(t.index)
            if not isinstance(t.target, (QVar, FuncApp)):
                raise StaticError("component of a non-variable second argument")
            key = self.var_key(t.target)
            size = self.declared_size(key)
            if i == 0 or i > size:
                return _VACUOUS
            return [(key, i - 1)]
        if isinstance(t, QRange):
            if not isinstance(t.target, (QVar, FuncApp)):
                raise StaticError("range of a non-variable second argument")
            key = self.var_key(t.target)
            lo, hi = self.cterm(t.lo), self.cterm(t.hi)
            if not (1 <= lo <= hi <= self.declared_size(key)):
                raise StaticError(f"range [{lo},{hi}] out of bounds")
            return [(key, i) for i in range(lo - 1, hi)]
        if isinstance(t, Tensor):
            l = self._second_pieces(t.left)
            r = self._second_pieces(t.right)
            if l is _VACUOUS or r is _VACUOUS:
                return _VACUOUS
            return l + r
        raise StaticError(f"invalid second argument {render_qterm(t)}")

    def lower_pred(self, f: QPred):
        gate = I2 if f.gate.name == "I" else rot_matrix(f.gate.angle)
        cleanup: list = []
        src = self.resolve(f.first, cleanup)
        try:
            pieces = self._second_pieces(f.second)
        except StaticError:
            if src is _VACUOUS:
                return  # both sides vacuous
            raise
        if src is _VACUOUS or pieces is _VACUOUS:
            return
        if len(src) != len(pieces):
            raise StaticError(
                f"size mismatch in predicate: {len(src)} vs {len(pieces)} qubits")
        bound = [self.binding(key)[slot] for key, slot in pieces]
        is_const_src = isinstance(f.first, (BitConst, PlusConst)) or (
            isinstance(f.first, Tensor) and _all_consts(f.first))
        in_targets = [slot in self.fresh_targets.get(key, {}) for key, slot in pieces]
        if any(in_targets):
            if not all(in_targets):
                raise StaticError("mixed fresh/bound production in one predicate")
            # branch-masked production into preallocated target wires
            self._masked_write(pieces, src, gate, is_const_src)
        elif all(w is None for w in bound):
            if f.gate.name != "I":
                self.emit(GateOp(gate, src[0], self.guard()))
            for (key, slot), w in zip(pieces, src):
                self.binding(key)[slot] = w
        elif all(w is not None for w in bound):
            if bound == src:
                if f.gate.name != "I":
                    self.emit(GateOp(gate, src[0], self.guard()))
            else:
                self.emit(CheckStateEq(tuple(src), tuple(bound), gate,
                                       label=render_qterm(f.second)))
        else:
            raise StaticError("second argument is partially produced")
        for op in reversed(cleanup):
            self.emit(op)

    def _masked_write(self, pieces, src, gate, is_const_src):
        g = self.guard()
        for (key, slot), s in zip(pieces, src):
            target = self.fresh_targets[key][slot]
            b = self.state.bit_value(s) if self.mode == "run" else None
            if is_const_src and self.mode == "lower":
                b = self._lowered_const_bit(s)
            if is_const_src and b is not None:
                if b == 1:
                    self.emit(GateOp(X, target, g))
            else:
                # basis-faithful copy: target ^= source under the branch mask
                atoms = (g.atoms if g else ()) + ((s, 1),)
                self.emit(GateOp(X, target, Guard(atoms, g.tables if g else ())))
            self.binding(key)[slot] = target
        if not _is_identity(gate):
            key, slot = pieces[0]
            self.emit(GateOp(gate, self.fresh_targets[key][slot], g))

    def _lowered_const_bit(self, wire):
        for op in reversed(self.ops):
            if isinstance(op, AllocOp) and wire in op.wires and op.bits is not None:
                return int(op.bits[op.wires.index(wire)])
        return None

    # -- formula dispatch ---------------------------------------------------------------

    def lower(self, f: Formula):
        if isinstance(f, Cmp):
            ok = _cmp(f.op, self.cterm(f.lhs), self.cterm(f.rhs))
            if not ok:
                self.emit(CheckZero(self.guard(), self.guard_queries,
                                    label=f"{f.op}-comparison"))
            return
        if isinstance(f, QPred):
            self.lower_pred(f)
            return
        if isinstance(f, Measure):
            cleanup: list = []
            ws = self.resolve(f.term, cleanup)
            if ws is _VACUOUS:
                raise StaticError("measurement of a vacuous term")
            if len(ws) != len(f.bits):
                raise StaticError(
                    f"measuring {len(ws)} qubits against {len(f.bits)} outcome bits")
            self.emit(CheckMeasure(tuple(ws), f.bits, f.eps, self.guard(),
                                   self.guard_queries, label=render_qterm(f.term)))
            for op in reversed(cleanup):
                self.emit(op)
            return
        if isinstance(f, QAnd):
            self.lower(f.lhs)
            self.lower(f.rhs)
            return
        if isinstance(f, QOr):
            self.lower_qor(f)
            return
        if isinstance(f, QNot):
            raise LoweringError("negation must be normalized away before lowering")
        if isinstance(f, CQuant):
            self.lower_cquant(f)
            return
        if isinstance(f, QQuant):
            self.lower_qquant(f)
            return
        if isinstance(f, Qtc):
            self.lower_qtc(f)
            return
        if isinstance(f, FuncQuant):
            size = self.cterm(f.codomain)
            self.sizes[("func", f.fname)] = size
            self.func_domains[f.fname] = self.cterm(f.domain)
            self.lower(f.body)
            return
        if isinstance(f, Iff):
            raise LoweringError("desugar before lowering (<=> is surface syntax)")
        raise TypeError(f"not a formula: {f!r}")

    # -- classical quantifiers ----------------------------------------------------------

    def _bounds(self, f: CQuant):
        lo = self.cterm(f.lo) if f.lo is not None else 0
        hi = self.cterm(f.hi)
        if f.lo_strict:
            lo += 1
        if f.hi_strict:
            hi -= 1
        return lo, hi

    def lower_cquant(self, f: CQuant):
        lo, hi = self._bounds(f)
        values = range(lo, hi + 1)
        if f.kind == "A":
            for v in values:
                self.cenv[f.var] = v
                self.lower(f.body)
            self.cenv.pop(f.var, None)
            return
        # existential
        if self.mode == "lower":
            groups = []
            for v in values:
                probe = self.fork()
                probe.mode = "lower"
                probe.ops = []
                probe.cenv[f.var] = v
                before = {k: list(ws) for k, ws in probe.bindings.items()}
                probe.lower(f.body)
                if probe.bindings.keys() != before.keys() or any(
                        probe.bindings[k] != before[k] for k in before):
                    raise _NeedsSearch("classical existential with definitions")
                if any(isinstance(o, (AllocOp, GateOp, PermOp, QueryOp)) for o in probe.ops):
                    raise _NeedsSearch("classical existential with state effects")
                groups.append(probe.ops)
            self.emit(AnyOf(groups, label=f"exists {f.var}"))
            return
        # run mode: greedy in textual order
        last = None
        for v in values:
            trial = self.fork()
            trial.checks = []
            trial.failed = False
            trial.cenv[f.var] = v
            try:
                trial.lower(f.body)
            except (StaticError, GuardError):
                continue
            if not trial.failed:
                trial.checks = self.checks + trial.checks
                trial.cenv.pop(f.var, None)
                self.adopt(trial)
                return
            last = trial
        if last is None:
            self._record(CheckResult("exists", False, f"exists {f.var} (no evaluable value)"))
            return
        last.checks = self.checks + last.checks
        last.cenv.pop(f.var, None)
        self.adopt(last)

    # -- quantum quantifiers ---------------------------------------------------------------

    def lower_qquant(self, f: QQuant):
        size = self.cterm(f.size)
        self.sizes[f.var] = size
        consequential = f.kind == "EQ" and f.var in predecessor_dependent_vars(f.body)
        if consequential:
            self.lower(f.body)
            return
        if self.mode == "lower":
            raise _NeedsSearch("introductory quantum quantifier")
        self.eval_introductory(f, size)

    def eval_introductory(self, f: QQuant, size: int):
        if size > self.cfg.qcap:
            raise CapacityError(
                f"introductory quantifier over {size} qubits exceeds cap {self.cfg.qcap}")
        witness_wires = self.fresh_wires(size)
        sub = Machine(self.st, self.cfg, "lower", self.counter, self.state)
        sub.bindings = {k: list(v) for k, v in self.bindings.items()}
        sub.bindings[f.var] = list(witness_wires)
        sub.sizes = dict(self.sizes)
        sub.cenv = dict(self.cenv)
        sub.func_domains = dict(self.func_domains)
        spectral = True
        try:
            sub.lower(f.body)
        except (_NeedsSearch, LoweringError):
            spectral = False
        if spectral:
            measures = [o for o in sub.ops if isinstance(o, CheckMeasure)]
            others = [o for o in sub.ops if isinstance(o, (CheckStateEq, CheckZero, AnyOf))]
            spectral = len(measures) == 1 and not others
        if spectral:
            self._spectral_decide(f, size, witness_wires, sub.ops, measures[0])
        else:
            self._sampled_decide(f, size, witness_wires)

    def _run_witness(self, wires, vec, ops) -> "Machine":
        m = Machine(self.st, self.cfg, "run", self.counter, self.state)
        m.state = m.state.adjoin_state(wires, vec)
        for op in ops:
            m._apply(op)
        return m

    def _spectral_decide(self, f: QQuant, size, wires, body_ops, meas: CheckMeasure):
        # failure mass is a quadratic form in the witness: build it columnwise
        # from the guard-projected and outcome-projected basis runs
        dim = 1 << size
        outs_total, outs_match = [], []
        order = None
        g = _resolve_full(meas.guard, meas.qguards, self.st.input)
        for u in range(dim):
            vec = np.zeros(dim, dtype=complex)
            vec[u] = 1.0
            m = self._run_witness(wires, vec, body_ops)
            total = m.state.project_guard(g)
            match = total.project_bits(meas.wires, meas.bits)
            if order is None:
                order = m.state.order
            outs_total.append(total.to_vector(order))
            outs_match.append(match.to_vector(order))
        F = np.zeros((dim, dim), dtype=complex)
        for a in range(dim):
            for b in range(dim):
                F[a, b] = (np.vdot(outs_total[a], outs_total[b])
                           - np.vdot(outs_match[a], outs_match[b]))
        vals, vecs = np.linalg.eigh((F + F.conj().T) / 2)
        threshold = meas.eps + self.cfg.tolerance
        if f.kind == "EQ":
            lam, witness = vals[0], vecs[:, 0]  # minimal failure mass
            decided = lam <= threshold
        else:
            lam, witness = vals[-1], vecs[:, -1]  # worst-case failure mass
            decided = lam <= threshold
        if decided:
            final = self._run_witness(wires, witness, body_ops)
            if final.failed:
                # numerical edge: fall back honestly
                self._record(CheckResult("quantifier", False,
                                         f"{f.kind} {f.var} (witness re-check failed)"))
                return
            final.checks = self.checks + final.checks
            self.adopt(final)
            self.bindings[f.var] = list(wires)
        else:
            # quantifier fails; keep the extremal run for margin reporting
            final = self._run_witness(wires, witness, body_ops)
            final.failed = True
            final.checks = self.checks + final.checks + [
                CheckResult("quantifier", False, f"{f.kind} {f.var} (lambda={lam:.6g})")]
            self.adopt(final)

    def _sampled_decide(self, f: QQuant, size, wires):
        rng = np.random.default_rng(self.cfg.seed)
        dim = 1 << size
        candidates = [np.eye(dim, dtype=complex)[:, k] for k in range(dim)]
        for _ in range(self.cfg.samples):
            v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            candidates.append(v / np.linalg.norm(v))
        for vec in candidates:
            trial = Machine(self.st, self.cfg, "run", self.counter, self.state)
            trial.bindings = {k: list(v) for k, v in self.bindings.items()}
            trial.bindings[f.var] = list(wires)
            trial.sizes = dict(self.sizes)
            trial.cenv = dict(self.cenv)
            trial.func_domains = dict(self.func_domains)
            trial.state = trial.state.adjoin_state(wires, vec)
            try:
                trial.lower(f.body)
            except (StaticError, GuardError, _NeedsSearch):
                continue
            ok = not trial.failed
            if f.kind == "EQ" and ok:
                trial.checks = self.checks + trial.checks
                self.adopt(trial)  # certified by the found witness
                return
            if f.kind == "AQ" and not ok:
                trial.checks = self.checks + trial.checks
                self.adopt(trial)  # certified counterexample
                return
        # search exhausted: one-sided, give up
        self._record(CheckResult("quantifier", False,
                                 f"{f.kind} {f.var} (search exhausted)"))
        self.checks[-1] = replace(self.checks[-1])
        self.failed = True
        self.incomplete = True

    # -- quantum OR --------------------------------------------------------------------------

    def _antecedent_atom(self, t):
        """Resolve a 1-qubit antecedent into guard material per branch bit."""
        if isinstance(t, InstanceQuery):
            cleanup: list = []
            addr = self.resolve(t.index, cleanup)
            if cleanup:
                raise _NeedsSearch("query antecedent with quantum-indexed address")
            if addr is _VACUOUS:
                raise StaticError("vacuous query antecedent")
            return ("query", tuple(addr))
        if isinstance(t, PlusConst):
            w = self.alloc_plus()[0]
            return ("wire", w)
        cleanup = []
        ws = self.resolve(t, cleanup)
        if ws is _VACUOUS:
            raise StaticError("vacuous quantum-OR antecedent")
        if len(ws) != 1:
            raise StaticError("quantum-OR antecedent must be one qubit")
        for op in reversed(cleanup):
            self.emit(op)
        return ("wire", ws[0])

    def _branch_guard_parts(self, atom, bit):
        if atom[0] == "wire":
            return ((atom[1], bit),), ()
        return (), (QueryAtom(atom[1], bit),)

    def lower_qor(self, f: QOr):
        ante = f.antecedents[0]
        atom = self._antecedent_atom(ante)
        deltas, op_lists = [], []
        for bi in (0, 1):
            probe = self.fork()
            probe.mode = "lower"
            probe.ops = []
            probe.checks = []
            a_atoms, a_queries = probe._branch_guard_parts(atom, bi)
            probe.guard_atoms = self.guard_atoms + a_atoms
            probe.guard_queries = self.guard_queries + a_queries
            before = {k: tuple(ws) for k, ws in self.bindings.items()}
            probe.lower(f.branches[bi])
            delta = {}
            for k, ws in probe.bindings.items():
                prev = before.get(k)
                if prev is None or tuple(ws) != prev:
                    delta[k] = tuple(ws)
            deltas.append(delta)
            op_lists.append(probe.ops)
        mode = self._or_mode(deltas, op_lists)
        if mode == "shared":
            self._emit_shared(f, atom)
        elif mode == "perm":
            self._emit_perm(f, atom, deltas)
        else:
            self._emit_fresh(f, atom, deltas)

    def _or_mode(self, deltas, op_lists):
        d0, d1 = deltas
        if d0.keys() == d1.keys() and all(
                None not in d0[k] and d0[k] == d1[k] for k in d0):
            return "shared"
        if (d0.keys() == d1.keys() and d0
                and not any(op_lists[0]) and not any(op_lists[1])):
            w0 = [w for k in sorted(d0, key=str) for w in d0[k]]
            w1 = [w for k in sorted(d1, key=str) for w in d1[k]]
            if (None not in w0 and None not in w1 and set(w0) == set(w1)
                    and w0 != w1):
                return "perm"
        return "fresh"

    def _with_branch_guard(self, atom, bit):
        a_atoms, a_queries = self._branch_guard_parts(atom, bit)
        return a_atoms, a_queries

    def _emit_shared(self, f: QOr, atom):
        for bi in (0, 1):
            a_atoms, a_queries = self._with_branch_guard(atom, bi)
            saved = (self.guard_atoms, self.guard_queries)
            self.guard_atoms += a_atoms
            self.guard_queries += a_queries
            self.lower(f.branches[bi])
            self.guard_atoms, self.guard_queries = saved

    def _emit_perm(self, f: QOr, atom, deltas):
        # branch 0 is the binding convention; branch 1 becomes a masked
        # content permutation (the controlled-SWAP pattern)
        a_atoms, a_queries = self._with_branch_guard(atom, 0)
        saved = (self.guard_atoms, self.guard_queries)
        self.guard_atoms += a_atoms
        self.guard_queries += a_queries
        self.lower(f.branches[0])
        self.guard_atoms, self.guard_queries = saved
        d0, d1 = deltas
        perm = {}
        for k in d0:
            for w_dest, w_src in zip(d0[k], d1[k]):
                if w_dest != w_src:
                    perm[w_dest] = w_src
        a_atoms, a_queries = self._with_branch_guard(atom, 1)
        guard = Guard(self.guard_atoms + a_atoms, self.guard_tables)
        if a_queries or self.guard_queries:
            raise _NeedsSearch("permutation branch under query guard")
        self.emit(PermOp(perm, guard))

    def _emit_fresh(self, f: QOr, atom, deltas):
        # only slots whose branch bindings differ (or are produced in one
        # branch only) need fresh targets; identically-consumed slots keep
        # the shared-wire treatment
        d0, d1 = deltas
        differing: dict = {}
        for k in set(d0) | set(d1):
            ws0, ws1 = d0.get(k), d1.get(k)
            size = len(ws0 if ws0 is not None else ws1)
            prev = self.bindings.get(k) or [None] * size
            for slot in range(size):
                a = ws0[slot] if ws0 is not None else prev[slot]
                b = ws1[slot] if ws1 is not None else prev[slot]
                if a != b:
                    differing.setdefault(k, set()).add(slot)
        targets: dict = {}
        for k, slots in differing.items():
            slotmap = dict(self.fresh_targets.get(k, {}))
            for slot in slots:
                if slot not in slotmap:
                    slotmap[slot] = self.alloc_bits("0")[0]
            targets[k] = slotmap
        saved_targets = dict(self.fresh_targets)
        self.fresh_targets.update(targets)
        for bi in (0, 1):
            a_atoms, a_queries = self._with_branch_guard(atom, bi)
            saved = (self.guard_atoms, self.guard_queries)
            self.guard_atoms += a_atoms
            self.guard_queries += a_queries
            self.lower(f.branches[bi])
            self.guard_atoms, self.guard_queries = saved
        self.fresh_targets = saved_targets
        for k, slotmap in targets.items():
            binding = self.binding(k)
            for slot, w in slotmap.items():
                binding[slot] = w

    # -- transitive closure ---------------------------------------------------------------------

    def lower_qtc(self, f: Qtc):
        cls = classify(f.relation)
        if not cls.measurement_free or not cls.iqq_free:
            raise StaticError("QTC relation must be a quantum bare relation "
                              "(measurement-free and iqq-free)")
        start, end = self.cterm(f.start), self.cterm(f.end)
        if start < end:
            raise GuardError(f"QTC requires start >= end, got {start} < {end}")
        if f.log and start > self.cfg.qtc_log_c * ilog(self.st.n):
            raise GuardError(
                f"logQTC start {start} exceeds {self.cfg.qtc_log_c}*ilog(n)")
        current = {}
        for name in f.start_args:
            cleanup: list = []
            ws = self.resolve(QVar(name), cleanup)
            current[name] = list(ws)
        if start == end:
            for s_name, e_name in zip(f.start_args, f.end_args):
                self.bindings[e_name] = list(current[s_name])
                self.sizes.setdefault(e_name, len(current[s_name]))
            return
        for k in range(start, end, -1):
            sub = Machine(self.st, self.cfg, self.mode, self.counter, self.state)
            sub.ops = self.ops
            sub.guard_atoms = self.guard_atoms
            sub.guard_tables = self.guard_tables
            sub.guard_queries = self.guard_queries
            sub.checks = self.checks
            sub.gate_count = self.gate_count
            sub.failed = self.failed
            sub.cenv = {"i": k, "j": k - 1}
            sub.sizes = dict(self._plain_sizes())
            for s_name, e_name in zip(f.start_args, f.end_args):
                sub.bindings[s_name] = list(current[s_name])
                sub.sizes[s_name] = len(current[s_name])
                sub.sizes.setdefault(e_name, len(current[s_name]))
            sub.lower(f.relation)
            self.state = sub.state
            self.gate_count = sub.gate_count
            self.failed = sub.failed
            nxt = {}
            for s_name, e_name in zip(f.start_args, f.end_args):
                ws = sub.bindings.get(e_name)
                if ws is None:
                    nxt[s_name] = current[s_name]
                else:
                    nxt[s_name] = [
                        w if w is not None else current[s_name][slot]
                        for slot, w in enumerate(ws)
                    ]
            current = nxt
        for s_name, e_name in zip(f.start_args, f.end_args):
            self.bindings[e_name] = list(current[s_name])
            self.sizes.setdefault(e_name, len(current[s_name]))


def _all_consts(t) -> bool:
    if isinstance(t, (BitConst, PlusConst)):
        return True
    if isinstance(t, Tensor):
        return _all_consts(t.left) and _all_consts(t.right)
    return False


def _is_identity(m: np.ndarray) -> bool:
    return bool(np.allclose(m, I2))


def _cmp(op: str, a: int, b: int) -> bool:
    if op == "=":
        return a == b
    if op == "<=":
        return a <= b
    return a < b


# ---------------------------------------------------------------------------
# Guard resolution against the structure input


def _resolve(guard: Guard | None, input_bits: str) -> Guard | None:
    return guard


def _resolve_full(guard: Guard | None, qguards: tuple, input_bits: str) -> Guard | None:
    if not qguards:
        return guard
    tables = []
    for qa in qguards:
        accept = set()
        for v in range(1 << len(qa.addr)):
            pos = v + 1
            bit = int(input_bits[pos - 1]) if 1 <= pos <= len(input_bits) else 0
            if bit == qa.bit:
                accept.add(v)
        tables.append(Table(tuple(qa.addr), frozenset(accept)))
    base = guard if guard is not None else Guard()
    return Guard(base.atoms, base.tables + tuple(tables))


def _state_eq(state: JointState, wires_a, wires_b, gate, tol: float) -> bool:
    if tuple(wires_a) == tuple(wires_b):
        return _is_identity(gate)
    others = [w for w in state.order if w not in wires_a and w not in wires_b]
    try:
        v = state.to_vector(tuple(wires_a) + tuple(wires_b) + tuple(others))
    except CapacityError:
        return False
    da, db = 1 << len(wires_a), 1 << len(wires_b)
    T = v.reshape(da, db, -1)
    flat = np.abs(T)
    a0, b0, r0 = np.unravel_index(np.argmax(flat), T.shape)
    anchor = T[a0, b0, r0]
    if abs(anchor) < tol:
        return False
    psi_a = T[:, b0, r0]
    psi_b = T[a0, :, r0]
    psi_r = T[a0, b0, :]
    recon = np.einsum("a,b,r->abr", psi_a, psi_b, psi_r) / (anchor * anchor)
    if not np.allclose(recon, T, atol=tol * 10):
        return False
    na, nb = np.linalg.norm(psi_a), np.linalg.norm(psi_b)
    if na < tol or nb < tol:
        return False
    lhs = gate @ (psi_a / na)
    rhs = psi_b / nb
    overlap = abs(np.vdot(lhs, rhs))
    return overlap >= 1.0 - tol * 10


# ---------------------------------------------------------------------------
# Public entry points


def lower(f: Formula, st: Structure, cfg: RunConfig | None = None) -> CircuitIR:
    """Lower a well-formed, desugared, negation-normalized formula. Raises
    LoweringError on constructs that need the searching evaluator."""
    cfg = cfg or RunConfig()
    m = Machine(st, cfg, "lower")
    m.lower(f)
    return CircuitIR(m.ops, {k: tuple(v) for k, v in m.bindings.items()},
                     dict(m.sizes), wire_count=_count_wires(m.ops),
                     gate_count=sum(1 for o in m.ops if isinstance(o, GateOp)))


def _count_wires(ops) -> int:
    n = 0
    for op in ops:
        if isinstance(op, AllocOp):
            n += len(op.wires)
    return n


def execute(ir: CircuitIR, st: Structure, cfg: RunConfig | None = None) -> Outcome:
    cfg = cfg or RunConfig()
    m = Machine(st, cfg, "run")
    for op in ir.ops:
        m._apply(op)
    return _outcome(m)


def _outcome(m: Machine) -> Outcome:
    prob = None
    for c in m.checks:
        if c.kind == "measure":
            prob = c.match
    return Outcome(ok=not m.failed, state=m.state, checks=m.checks, probability=prob,
                   incomplete=getattr(m, "incomplete", False))


def run_formula(f: Formula, st: Structure, cfg: RunConfig | None = None,
                declare: dict | None = None) -> tuple[Outcome, Machine]:
    """Evaluate a desugared, negation-normalized formula, handling classical
    existentials and introductory quantifiers. `declare` seeds qubit sizes of
    free variables that are produced rather than assigned."""
    cfg = cfg or RunConfig()
    m = Machine(st, cfg, "run")
    if declare:
        m.sizes.update(declare)
    m.lower(f)
    return _outcome(m), m


def evaluate(f: Formula, st: Structure, cfg: RunConfig | None = None,
             declare: dict | None = None) -> Verdict:
    """Three-valued verdict: accept if the formula's checks all pass, reject
    if the normalized negation's checks all pass, else undetermined."""
    cfg = cfg or RunConfig()
    core = desugar(f)
    pos = negation_normalize(core)
    neg = negation_normalize(QNot(core))
    acc, m_acc = run_formula(pos, st, cfg, declare)
    try:
        rej, _ = run_formula(neg, st, cfg, declare)
    except (StaticError, GuardError, CapacityError, LoweringError):
        rej = Outcome(ok=False, state=None, checks=[])
    if acc.ok:
        kind = "accept"
    elif rej.ok and not rej.incomplete:
        kind = "reject"
    else:
        kind = "undetermined"
    prob = acc.probability
    if prob is None and rej.probability is not None:
        prob = 1.0 - rej.probability
    wire_count = len(m_acc.state.order) if m_acc.state is not None else 0
    return Verdict(kind, prob, wire_count, m_acc.gate_count,
                   margins=[c for c in acc.checks if c.kind == "measure"])


def bundle_vector(state: JointState, wires) -> np.ndarray:
    """State restricted to `wires`; every other wire must be classical."""
    others = [w for w in state.order if w not in wires]
    for w in others:
        if state.bit_value(w) is None:
            raise RegistryError(f"wire {w!r} is entangled with the requested bundle")
    v = state.to_vector(tuple(wires) + tuple(others))
    cols = 1 << len(others)
    M = v.reshape(-1, cols)
    col = 0
    for w in others:
        col = (col << 1) | state.bit_value(w)
    return M[:, col]


def formula_matrix(f: Formula, n: int, in_vars: list, out_vars: list,
                   cfg: RunConfig | None = None, input_str: str | None = None,
                   declare: dict | None = None) -> np.ndarray:
    """Reconstruct the linear action of a (measurement-free, deterministic)
    formula by running all basis inputs: column u is the out-bundle state for
    basis input u across the in-variables (concatenated MSB first)."""
    cfg = cfg or RunConfig()
    core = negation_normalize(desugar(f))
    total = sum(s for _, s in in_vars)
    cols = []
    for u in range(1 << total):
        bits = format(u, f"0{total}b")
        at = 0
        free_q = {}
        for (name, s) in in_vars:
            piece = bits[at:at + s]
            at += s
            vec = np.zeros(1 << s, dtype=complex)
            vec[int(piece, 2)] = 1.0
            free_q[name] = (s, vec)
        st = Structure(n=n, input=input_str or "0" * n, free_quantum=free_q)
        out, m = run_formula(core, st, cfg, declare)
        if not out.ok:
            raise StaticError(f"formula rejected basis input {bits}")
        wires = []
        for name in out_vars:
            ws = m.bindings.get(name)
            if ws is None or any(w is None for w in ws):
                raise StaticError(f"output variable {name} not fully produced")
            wires.extend(ws)
        cols.append(bundle_vector(out.state, wires))
    return np.stack(cols, axis=1)

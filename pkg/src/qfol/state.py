"""Unnormalized complex state vectors over a registry of named qubit wires.

Semantically a JointState is one dense amplitude vector over all wires in
registry order. Internally, wires that are in a definite basis state and
unentangled are tracked as classical bits; only wires carrying superposition
occupy the dense vector. Every public operation (gates, swaps, projections,
measurement checks, dumps) behaves exactly as on the full dense vector; the
split is what keeps machine-simulation formulas with dozens of named wires
tractable, since their live superposed core stays small. The wire cap bounds
the dense core.

States start normalized and only projections shrink the norm; all operations
return new values (copy-on-write of the amplitude vector).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9


class RegistryError(Exception):
    pass


class CapacityError(Exception):
    pass


@dataclass(frozen=True)
class Table:
    """Guard component: the joint value of `wires` (MSB first) must be in `accept`."""

    wires: tuple
    accept: frozenset


@dataclass(frozen=True)
class Guard:
    """Conjunction of per-wire bit conditions and table conditions."""

    atoms: tuple = ()  # ((wire, bit), ...)
    tables: tuple = ()  # (Table, ...)

    def conj(self, other: "Guard | None") -> "Guard":
        if other is None:
            return self
        return Guard(self.atoms + other.atoms, self.tables + other.tables)

    def wires(self) -> set:
        out = {w for w, _ in self.atoms}
        for t in self.tables:
            out |= set(t.wires)
        return out


TRUE_GUARD = Guard()

_KEEP = object()


class JointState:
    """Immutable unnormalized state over named wires."""

    __slots__ = ("classical", "dense", "vec", "scalar", "order", "cap")

    def __init__(self, classical=None, dense=(), vec=None, scalar=1.0 + 0j, order=(), cap=20):
        self.classical = dict(classical or {})
        self.dense = tuple(dense)
        self.vec = vec
        self.scalar = complex(scalar)
        self.order = tuple(order)
        self.cap = cap

    # -- construction / registry --------------------------------------------

    @staticmethod
    def empty(cap: int = 20) -> "JointState":
        return JointState(cap=cap)

    def _clone(self, classical=_KEEP, dense=_KEEP, vec=_KEEP, scalar=_KEEP, order=_KEEP):
        return JointState(
            classical=self.classical if classical is _KEEP else classical,
            dense=self.dense if dense is _KEEP else dense,
            vec=self.vec if vec is _KEEP else vec,
            scalar=self.scalar if scalar is _KEEP else scalar,
            order=self.order if order is _KEEP else order,
            cap=self.cap,
        )

    @property
    def wire_count(self) -> int:
        return len(self.order)

    def has_wire(self, w) -> bool:
        return w in self.classical or w in self.dense

    def _require(self, wires):
        for w in wires:
            if not self.has_wire(w):
                raise RegistryError(f"unknown wire {w!r}")

    def adjoin_bits(self, pairs) -> "JointState":
        classical = dict(self.classical)
        order = list(self.order)
        for w, b in pairs:
            if self.has_wire(w) or w in classical:
                raise RegistryError(f"wire collision on {w!r}")
            classical[w] = int(b)
            order.append(w)
        return self._clone(classical=classical, order=tuple(order))

    def adjoin_state(self, wires, vector) -> "JointState":
        """Tensor `vector` (length 2^len(wires)) onto the state on fresh wires."""
        vector = np.asarray(vector, dtype=complex)
        if vector.shape != (1 << len(wires),):
            raise RegistryError(f"vector of dim {vector.shape} for {len(wires)} wires")
        nz = np.flatnonzero(vector)
        if len(nz) == 1 and abs(abs(vector[nz[0]]) - 1.0) < 1e-15 and vector[nz[0]].real > 0 \
                and abs(vector[nz[0]].imag) < 1e-15:
            bits = format(nz[0], f"0{len(wires)}b")
            return self.adjoin_bits(zip(wires, (int(b) for b in bits)))
        for w in wires:
            if self.has_wire(w):
                raise RegistryError(f"wire collision on {w!r}")
        dense = self.dense + tuple(wires)
        self._check_cap(len(dense))
        base = self.vec if self.vec is not None else np.array([self.scalar])
        vec = np.kron(base, vector)
        scalar = 1.0 if self.vec is None else self.scalar
        return self._clone(dense=dense, vec=vec, scalar=scalar, order=self.order + tuple(wires))

    def _check_cap(self, width: int):
        if width > self.cap:
            raise CapacityError(f"dense core of {width} wires exceeds cap {self.cap}")

    # -- internals ------------------------------------------------------------

    def _axis(self, w) -> int:
        return self.dense.index(w)

    def _shift(self, w) -> int:
        return len(self.dense) - 1 - self.dense.index(w)

    def _promote(self, wires) -> "JointState":
        todo = [w for w in wires if w in self.classical]
        if not todo:
            return self
        self._require(wires)
        dense = self.dense + tuple(todo)
        self._check_cap(len(dense))
        base = self.vec if self.vec is not None else np.array([self.scalar])
        offset = 0
        for w in todo:
            offset = (offset << 1) | self.classical[w]
        block = np.zeros(1 << len(todo), dtype=complex)
        block[offset] = 1.0
        vec = np.kron(base, block)
        classical = {w: b for w, b in self.classical.items() if w not in todo}
        return self._clone(classical=classical, dense=dense, vec=vec, scalar=1.0)

    def _demote(self) -> "JointState":
        """Move dense wires with a structurally constant bit back to classical."""
        if self.vec is None:
            return self
        if not np.any(self.vec):
            classical = dict(self.classical)
            for w in self.dense:
                classical[w] = 0
            return self._clone(classical=classical, dense=(), vec=None, scalar=0.0)
        vec, dense, classical = self.vec, list(self.dense), dict(self.classical)
        changed = True
        while changed and dense:
            changed = False
            shaped = vec.reshape([2] * len(dense))
            for k in range(len(dense)):
                other = tuple(a for a in range(len(dense)) if a != k)
                nz = np.any(shaped, axis=other) if other else np.array(
                    [bool(shaped[0]), bool(shaped[1])])
                if not (nz[0] and nz[1]):
                    bit = 1 if nz[1] else 0
                    classical[dense[k]] = bit
                    vec = np.take(shaped, bit, axis=k).reshape(-1)
                    dense.pop(k)
                    changed = True
                    break
        if not dense:
            return self._clone(classical=classical, dense=(), vec=None,
                               scalar=vec[0] if len(vec) else 0.0)
        return self._clone(classical=classical, dense=tuple(dense), vec=vec, scalar=1.0)

    def _static_and_mask(self, guard: Guard | None):
        """Split a guard against classical wires; returns (alive, mask) where mask is
        None (vacuous) or a bool array over the dense index space."""
        if guard is None:
            return True, None
        size = 1 << len(self.dense)
        mask = None
        for w, b in guard.atoms:
            if w in self.classical:
                if self.classical[w] != b:
                    return False, None
            else:
                bits = (np.arange(size) >> self._shift(w)) & 1
                cond = bits == b
                mask = cond if mask is None else (mask & cond)
        for t in guard.tables:
            lut = np.zeros(1 << len(t.wires), dtype=bool)
            for v in t.accept:
                lut[v] = True
            static_val, dyn = 0, []
            for w in t.wires:
                if w in self.classical:
                    dyn.append(("c", self.classical[w]))
                else:
                    dyn.append(("d", self._shift(w)))
            if all(kind == "c" for kind, _ in dyn):
                val = 0
                for _, b in dyn:
                    val = (val << 1) | b
                if not lut[val]:
                    return False, None
                continue
            vals = np.zeros(size, dtype=np.int64)
            for kind, x in dyn:
                bit = x if kind == "c" else ((np.arange(size) >> x) & 1)
                vals = (vals << 1) | bit
            cond = lut[vals]
            mask = cond if mask is None else (mask & cond)
        return True, mask

    # -- gates -----------------------------------------------------------------

    def apply_gate(self, matrix: np.ndarray, wire, guard: Guard | None = None) -> "JointState":
        """2x2 gate on `wire`, restricted to the guard-true subspace."""
        self._require([wire])
        if guard is not None:
            self._require(guard.wires())
            if wire in guard.wires():
                raise RegistryError("controlled bodies never touch their control wire")
        st = self
        alive, mask = st._static_and_mask(guard)
        if not alive:
            return st
        if wire in st.classical and mask is None:
            b = st.classical[wire]
            col = matrix[:, b]
            nz = np.flatnonzero(np.abs(col) > 0)
            if len(nz) == 1:
                out = int(nz[0])
                classical = dict(st.classical)
                classical[wire] = out
                return st._clone(classical=classical,
                                 scalar=st.scalar * col[out] if st.vec is None else st.scalar,
                                 vec=None if st.vec is None else st.vec * col[out])
            st = st._promote([wire])
        elif wire in st.classical:
            st = st._promote([wire])
            alive, mask = st._static_and_mask(guard)
        vec = st.vec.copy()
        size = len(vec)
        shift = st._shift(wire)
        idx = np.arange(size)
        sel = ((idx >> shift) & 1) == 0
        if mask is not None:
            sel &= mask
        i0 = idx[sel]
        i1 = i0 | (1 << shift)
        a0, a1 = vec[i0], vec[i1]
        vec[i0] = matrix[0, 0] * a0 + matrix[0, 1] * a1
        vec[i1] = matrix[1, 0] * a0 + matrix[1, 1] * a1
        return st._clone(vec=vec)

    def apply_phase(self, phase: complex, guard: Guard | None = None) -> "JointState":
        alive, mask = self._static_and_mask(guard)
        if not alive:
            return self
        if mask is None:
            if self.vec is None:
                return self._clone(scalar=self.scalar * phase)
            return self._clone(vec=self.vec * phase)
        vec = self.vec.copy()
        vec[mask] *= phase
        return self._clone(vec=vec)

    def apply_permutation(self, perm: dict, guard: Guard | None = None) -> "JointState":
        """Wire-content permutation: new bit at wire d = old bit at perm[d]."""
        self._require(perm)
        alive, mask = self._static_and_mask(guard)
        if not alive:
            return self
        st = self
        if mask is None and all(w in st.classical for w in perm):
            classical = dict(st.classical)
            for d, s in perm.items():
                classical[d] = st.classical[s]
            return st._clone(classical=classical)
        st = st._promote(set(perm) | set(perm.values()))
        alive, mask = st._static_and_mask(guard)
        size = len(st.vec)
        idx = np.arange(size)
        keep = idx
        for d in perm:
            keep = keep & ~(1 << st._shift(perm[d]))
        j = keep
        for d, s in perm.items():
            bit_d = (idx >> st._shift(d)) & 1
            j = j | (bit_d << st._shift(s))
        vec = st.vec[j]
        if mask is not None:
            vec = np.where(mask, vec, st.vec)
        return st._clone(vec=vec)

    def query_xor(self, addr_wires, ans_wire, input_bits: str, guard: Guard | None = None
                  ) -> "JointState":
        """ans ^= x_(v+1) where v is the value of the address wires (MSB first);
        positions outside the input contribute 0."""
        self._require(list(addr_wires) + [ans_wire])
        alive, mask = self._static_and_mask(guard)
        if not alive:
            return self
        x = [0] * (1 << len(addr_wires))
        for v in range(len(x)):
            pos = v + 1
            x[v] = int(input_bits[pos - 1]) if 1 <= pos <= len(input_bits) else 0
        if mask is None and all(w in self.classical for w in addr_wires):
            v = 0
            for w in addr_wires:
                v = (v << 1) | self.classical[w]
            if not x[v]:
                return self
            return self.apply_gate(np.array([[0, 1], [1, 0]], dtype=complex), ans_wire, guard)
        st = self._promote(list(addr_wires) + [ans_wire])
        alive, mask = st._static_and_mask(guard)
        size = len(st.vec)
        idx = np.arange(size)
        vals = np.zeros(size, dtype=np.int64)
        for w in addr_wires:
            vals = (vals << 1) | ((idx >> st._shift(w)) & 1)
        flip = np.asarray(x, dtype=bool)[vals]
        if mask is not None:
            flip &= mask
        j = np.where(flip, idx ^ (1 << st._shift(ans_wire)), idx)
        return st._clone(vec=st.vec[j])

    # -- projections and checks -------------------------------------------------

    def project_bits(self, wires, bits, guard: Guard | None = None) -> "JointState":
        """Zero every amplitude (in the guard-true subspace) whose `wires` differ
        from `bits`. Does not renormalize."""
        self._require(wires)
        alive, mask = self._static_and_mask(guard)
        if not alive:
            return self
        st = self
        for w, b in zip(wires, bits):
            b = int(b)
            if w in st.classical:
                if st.classical[w] != b:
                    if mask is None:
                        return st._zero()
                    vec = st.vec.copy()
                    vec[mask] = 0.0
                    return st._clone(vec=vec)._demote()
            else:
                cond = ((np.arange(len(st.vec)) >> st._shift(w)) & 1) != b
                if mask is not None:
                    cond &= mask
                vec = st.vec.copy()
                vec[cond] = 0.0
                st = st._clone(vec=vec)
        return st._demote()

    def _zero(self) -> "JointState":
        if self.vec is not None:
            return self._clone(vec=np.zeros_like(self.vec))
        return self._clone(scalar=0.0)

    def project_guard(self, guard: Guard | None) -> "JointState":
        """Zero every amplitude outside the guard-true subspace."""
        if guard is None:
            return self
        alive, mask = self._static_and_mask(guard)
        if not alive:
            return self._zero()
        if mask is None:
            return self
        vec = self.vec.copy()
        vec[~mask] = 0.0
        return self._clone(vec=vec)._demote()

    def mass(self, guard: Guard | None = None) -> float:
        alive, mask = self._static_and_mask(guard)
        if not alive:
            return 0.0
        if self.vec is None:
            return abs(self.scalar) ** 2
        if mask is None:
            return float(np.sum(np.abs(self.vec) ** 2))
        return float(np.sum(np.abs(self.vec[mask]) ** 2))

    @property
    def norm_sq(self) -> float:
        return self.mass()

    def measure_masses(self, wires, bits, guard: Guard | None = None):
        """(total mass, mass matching `bits` on `wires`) within the guard subspace."""
        total = self.mass(guard)
        atoms = tuple((w, int(b)) for w, b in zip(wires, bits))
        match = self.mass(Guard(atoms=atoms).conj(guard))
        return total, match

    def bit_value(self, wire):
        return self.classical.get(wire)

    # -- views ------------------------------------------------------------------

    def to_vector(self, wire_order=None) -> np.ndarray:
        """Full dense vector over `wire_order` (default: registry order)."""
        wire_order = tuple(wire_order) if wire_order is not None else self.order
        self._require(wire_order)
        if set(wire_order) != set(self.order):
            raise RegistryError("wire_order must cover exactly the registry")
        k = len(wire_order)
        if k > 26:
            raise CapacityError("to_vector beyond 26 wires")
        out = np.zeros(1 << k, dtype=complex)
        dense_size = 1 << len(self.dense)
        shifts = {w: k - 1 - i for i, w in enumerate(wire_order)}
        base = 0
        for w, b in self.classical.items():
            base |= b << shifts[w]
        if self.vec is None:
            out[base] = self.scalar
            return out
        idx = np.full(dense_size, base, dtype=np.int64)
        for w in self.dense:
            bits = (np.arange(dense_size) >> self._shift(w)) & 1
            idx |= bits << shifts[w]
        out[idx] = self.vec
        return out

    def dump(self, sig: int = 12) -> str:
        """One line per nonzero amplitude: |bitstring> re imag, registry order."""
        vec = self.to_vector()
        k = len(self.order)
        lines = []
        for i in np.flatnonzero(np.abs(vec) > 0):
            a = vec[i]
            lines.append(f"|{format(i, f'0{k}b') if k else ''}> {a.real:.{sig}g} {a.imag:.{sig}g}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Module-level operations in the vocabulary of the evaluator


def apply_1q(state: JointState, matrix: np.ndarray, wire) -> JointState:
    return state.apply_gate(matrix, wire)


def swap_front_order(i: int, bundle) -> list:
    if not 1 <= i <= len(bundle):
        raise ValueError(f"swap index {i} out of range for bundle of {len(bundle)}")
    return [bundle[i - 1], *bundle[: i - 1], *bundle[i:]]


def swap_to_front(state: JointState, i: int, bundle) -> JointState:
    """Move the i-th qubit's content to the bundle front, shifting the prefix right."""
    new_order = swap_front_order(i, bundle)
    perm = {d: s for d, s in zip(bundle, new_order) if d != s}
    return state.apply_permutation(perm)


def swap_inverse(state: JointState, i: int, bundle) -> JointState:
    new_order = swap_front_order(i, bundle)
    perm = {s: d for d, s in zip(bundle, new_order) if d != s}
    return state.apply_permutation(perm)


def controlled_swap_to_front(state: JointState, index_bundle, target_bundle) -> JointState:
    """For each value v of the index bundle, swap_to_front(v) on the target;
    v = 0 selects no qubit and acts as identity."""
    if set(index_bundle) & set(target_bundle):
        raise RegistryError("index and target bundles must be disjoint")
    m = len(target_bundle)
    out = state
    for v in range(1, 1 << len(index_bundle)):
        if v > m:
            continue  # lambda convention: out-of-range index selects nothing
        bits = format(v, f"0{len(index_bundle)}b")
        guard = Guard(atoms=tuple(zip(index_bundle, map(int, bits))))
        new_order = swap_front_order(v, target_bundle)
        perm = {d: s for d, s in zip(target_bundle, new_order) if d != s}
        out = out.apply_permutation(perm, guard)
    return out


def controlled_swap_inverse(state: JointState, index_bundle, target_bundle) -> JointState:
    if set(index_bundle) & set(target_bundle):
        raise RegistryError("index and target bundles must be disjoint")
    m = len(target_bundle)
    out = state
    for v in range(1, 1 << len(index_bundle)):
        if v > m:
            continue  # lambda convention: out-of-range index selects nothing
        bits = format(v, f"0{len(index_bundle)}b")
        guard = Guard(atoms=tuple(zip(index_bundle, map(int, bits))))
        new_order = swap_front_order(v, target_bundle)
        perm = {s: d for d, s in zip(target_bundle, new_order) if d != s}
        out = out.apply_permutation(perm, guard)
    return out


def project_bit(state: JointState, wire, b: int) -> JointState:
    return state.project_bits([wire], str(b))


def measure_check(state: JointState, bundle, bits: str, eps: float) -> bool:
    """Declarative check: failure mass (total - matching) is at most eps."""
    total, match = state.measure_masses(bundle, bits)
    return (total - match) <= eps + 1e-12


def adjoin(state: JointState, wires, init: str) -> JointState:
    return state.adjoin_bits(zip(wires, (int(b) for b in init)))

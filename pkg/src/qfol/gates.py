"""Angles and single-qubit gate matrices.

Angles written as rational multiples of pi keep their exact fraction so the
named-gate identities NOT = ROT_pi and WH = ROT_{pi/4} hold exactly; any
other angle falls back to the generic rotation
    |a> -> cos(t)|a> + (-1)^a sin(t)|1-a>,
i.e. the matrix [[cos t, -sin t], [sin t, cos t]]. The two conventions agree
on |0> inputs, which is the only place generic angles occur in practice
(transition-amplitude preparation), and the identity table is what makes the
CNOT/Hadamard reconstructions exact.

The optional extension gates S and T (complex phases) sit behind
``extension_gate`` and are not part of the default predicate alphabet.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)

_S = np.array([[1, 0], [0, 1j]], dtype=complex)
_T = np.array([[1, 0], [0, np.exp(1j * math.pi / 4)]], dtype=complex)


@dataclass(frozen=True)
class Angle:
    """Rotation angle: exact fraction of pi, or raw radians."""

    pi_num: int | None = None
    pi_den: int = 1
    radians_value: float | None = None

    @staticmethod
    def pi_mult(num: int, den: int = 1) -> "Angle":
        f = Fraction(num, den)
        return Angle(pi_num=f.numerator, pi_den=f.denominator)

    @staticmethod
    def radians(x: float) -> "Angle":
        return Angle(radians_value=float(x))

    @property
    def is_exact(self) -> bool:
        return self.pi_num is not None

    def value(self) -> float:
        if self.is_exact:
            return math.pi * self.pi_num / self.pi_den
        return self.radians_value

    def is_fraction(self, num: int, den: int = 1) -> bool:
        return self.is_exact and Fraction(self.pi_num, self.pi_den) == Fraction(num, den)

    def render(self) -> str:
        if self.is_exact:
            if self.pi_num == 0:
                return "0"
            if self.pi_num == 1 and self.pi_den == 1:
                return "pi"
            if self.pi_den == 1:
                return f"{self.pi_num}*pi"
            if self.pi_num == 1:
                return f"pi/{self.pi_den}"
            return f"{self.pi_num}*pi/{self.pi_den}"
        return repr(self.radians_value)


def rot_matrix(angle: Angle) -> np.ndarray:
    if angle.is_fraction(1):
        return X
    if angle.is_fraction(1, 4):
        return H
    if angle.is_fraction(0):
        return I2
    t = angle.value()
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]], dtype=complex)


def extension_gate(name: str) -> np.ndarray:
    """S and T from the universal set, behind a feature flag in the evaluator."""
    if name == "S":
        return _S
    if name == "T":
        return _T
    raise KeyError(name)

"""Integer helpers shared by every layer: ceiling logs and lexicographic strings.

Ranks are 1-based: lex_string(k, 1) is the all-zeros string. The rank order
is plain binary counting (000, 001, 010, ...).
"""
from __future__ import annotations


def ilog(n: int) -> int:
    """Ceiling of log2(n); ilog(1) == 0."""
    if n < 1:
        raise ValueError(f"ilog requires n >= 1, got {n}")
    return (n - 1).bit_length()


def iloglog(n: int) -> int:
    """Ceiling of log2(log2(n)); defined for n >= 2."""
    if n < 2:
        raise ValueError(f"iloglog requires n >= 2, got {n}")
    return ilog(max(ilog(n), 1))


def n_hat(n: int) -> int:
    """Smallest power of two >= n; satisfies n <= n_hat(n) < 2n."""
    if n < 1:
        raise ValueError(f"n_hat requires n >= 1, got {n}")
    return 1 << ilog(n)


def lex_string(length: int, rank: int) -> str:
    """The rank-th string of {0,1}^length in counting order (rank 1 = 0^length)."""
    if length < 0:
        raise ValueError(f"negative length {length}")
    if not 1 <= rank <= (1 << length):
        raise ValueError(f"rank {rank} out of range for length {length}")
    return format(rank - 1, f"0{length}b") if length else ""


def lex_rank(bits: str) -> int:
    """Inverse of lex_string: 1-based rank of a binary string."""
    if bits and set(bits) - {"0", "1"}:
        raise ValueError(f"not a binary string: {bits!r}")
    return (int(bits, 2) if bits else 0) + 1

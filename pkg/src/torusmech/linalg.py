"""Sparse column reduction over GF(2) and GF(p).

Columns are reduced left to right; a column's pivot is its highest nonzero
row index.  GF(2) columns are Python ints used as bitsets, GF(p) columns
are ``{row: coefficient}`` dicts.
"""

from __future__ import annotations

from typing import Iterable, Sequence


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    i = 2
    while i * i <= p:
        if p % i == 0:
            return False
        i += 1
    return True


def gf2_pack(rows: Iterable[int]) -> int:
    col = 0
    for r in rows:
        col ^= 1 << int(r)
    return col


def reduce_gf2(columns: Sequence[int], skip: frozenset | set = frozenset()) -> dict[int, int]:
    """Column-reduce bitset columns over GF(2).

    Returns ``{pivot_row: column_index}``; its size is the rank.  Columns whose
    index is in ``skip`` are known to reduce to zero and are not touched.
    """
    reduced: dict[int, int] = {}
    owner: dict[int, int] = {}
    for j, col in enumerate(columns):
        if j in skip:
            continue
        while col:
            low = col.bit_length() - 1
            other = reduced.get(low)
            if other is None:
                reduced[low] = col
                owner[low] = j
                break
            col ^= other
    return owner


def reduce_gfp(columns: Sequence[dict], p: int, skip: frozenset | set = frozenset()) -> dict[int, int]:
    """Column-reduce sparse ``{row: coeff}`` columns over GF(p); same contract as :func:`reduce_gf2`."""
    if not is_prime(p):
        raise ValueError(f"field characteristic must be prime, got {p}")
    reduced: dict[int, dict] = {}
    owner: dict[int, int] = {}
    for j, col in enumerate(columns):
        if j in skip:
            continue
        col = {r: c % p for r, c in col.items() if c % p}
        while col:
            low = max(col)
            other = reduced.get(low)
            if other is None:
                inv = pow(col[low], p - 2, p)
                reduced[low] = {r: (c * inv) % p for r, c in col.items()}
                owner[low] = j
                break
            f = col[low]
            for r, c in other.items():
                v = (col.get(r, 0) - f * c) % p
                if v:
                    col[r] = v
                else:
                    col.pop(r, None)
    return owner


def rank_gf2_dense(rows: Sequence[Sequence[int]]) -> int:
    """Rank of a small dense 0/1 matrix (independent row-echelon oracle for tests)."""
    work = [gf2_pack(i for i, v in enumerate(r) if v % 2) for r in rows]
    rank = 0
    for bit in range(max((w.bit_length() for w in work), default=0)):
        piv = next((k for k in range(rank, len(work)) if (work[k] >> bit) & 1), None)
        if piv is None:
            continue
        work[rank], work[piv] = work[piv], work[rank]
        for k in range(len(work)):
            if k != rank and (work[k] >> bit) & 1:
                work[k] ^= work[rank]
        rank += 1
    return rank

"""Brute-force checks of the composition identity behind the shift formula.

The identity says, for ``0 <= j <= k``::

    (j!/k!) * sum_{0<t_1<...<t_{k-j}<k} t_1...t_{k-j}
        = sum_{i_1+...+i_j = k, i_r >= 1} 1/(i_1...i_j)

Both sides are computed by plain enumeration with exact fractions.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ArgOrder, ScaleExceeded

LUBELL_MAX_N = 12
LUBELL_MAX_J = 4


def _check(k: int, j: int):
    if k < 0 or j < 0:
        raise ArgOrder("k and j must be nonnegative")
    if j > k:
        raise ArgOrder(f"need j <= k, got j={j}, k={k}")


def lhs_ordered(k: int, j: int) -> Fraction:
    _check(k, j)
    total = 0
    for ts in itertools.combinations(range(1, k), k - j):
        total += math.prod(ts)
    return Fraction(math.factorial(j) * total, math.factorial(k))


def compositions(k: int, j: int):
    """Ordered tuples of ``j`` positive integers summing to ``k``."""
    if j == 0:
        if k == 0:
            yield ()
        return
    for cuts in itertools.combinations(range(1, k), j - 1):
        bounds = (0,) + cuts + (k,)
        yield tuple(bounds[r + 1] - bounds[r] for r in range(j))


def rhs_compositions(k: int, j: int) -> Fraction:
    _check(k, j)
    return sum((Fraction(1, math.prod(c)) for c in compositions(k, j)), Fraction(0))


@dataclass(frozen=True)
class LubellResult:
    s: Fraction
    t: Fraction
    per_k: tuple  # ((S_k sum, T_k sum), ...) for k = 1..N


def lubell_sums(N: int, j: int) -> LubellResult:
    """Both sides of Lubell's problem and the refinement by ``k``.

    ``S_k`` holds tuples of positive integers with ``w_1 + ... + w_j = k``;
    ``T_k`` holds tuples of distinct integers with maximum exactly ``k``.
    Every tuple is weighted by ``1/(w_1...w_j)``.
    """
    if N < 1 or j < 1:
        raise ArgOrder("N and j must be positive")
    if N > LUBELL_MAX_N or j > LUBELL_MAX_J:
        raise ScaleExceeded(f"enumeration limited to N <= {LUBELL_MAX_N}, j <= {LUBELL_MAX_J}")
    s_k = [Fraction(0)] * (N + 1)
    t_k = [Fraction(0)] * (N + 1)
    for w in itertools.product(range(1, N + 1), repeat=j):
        total = sum(w)
        if total <= N:
            s_k[total] += Fraction(1, math.prod(w))
    for w in itertools.permutations(range(1, N + 1), j):
        t_k[max(w)] += Fraction(1, math.prod(w))
    per_k = tuple((s_k[k], t_k[k]) for k in range(1, N + 1))
    return LubellResult(sum(s_k), sum(t_k), per_k)


def identity_table(kmax: int) -> list[dict]:
    rows = []
    for k in range(kmax + 1):
        for j in range(k + 1):
            a, b = lhs_ordered(k, j), rhs_compositions(k, j)
            rows.append({"k": k, "j": j, "lhs": a, "rhs": b, "equal": a == b})
    return rows


def format_table(rows: list[dict], fmt: str = "tsv") -> str:
    def q(v):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"

    if fmt == "json":
        return json.dumps([{**r, "lhs": q(r["lhs"]), "rhs": q(r["rhs"])} for r in rows],
                          sort_keys=True, indent=1)
    lines = ["k\tj\tlhs\trhs\tequal"]
    for r in rows:
        lines.append(f"{r['k']}\t{r['j']}\t{q(r['lhs'])}\t{q(r['rhs'])}\t{str(r['equal']).lower()}")
    return "\n".join(lines)

from fractions import Fraction as F

import pytest

from logtensor.combinatorial import (
    format_table,
    identity_table,
    lhs_ordered,
    lubell_sums,
    rhs_compositions,
)
from logtensor.errors import ArgOrder, ScaleExceeded
from logtensor.formal_series import LogSeries, derive, mono, subst_shift


def test_lhs_examples():
    assert lhs_ordered(1, 1) == 1
    assert lhs_ordered(4, 2) == F(11, 12)
    assert lhs_ordered(3, 0) == 0


def test_rhs_examples():
    for k in range(6):
        assert rhs_compositions(k, k) == 1
    assert rhs_compositions(4, 2) == F(11, 12)
    assert rhs_compositions(5, 0) == 0


def test_argument_order():
    with pytest.raises(ArgOrder):
        lhs_ordered(2, 3)
    with pytest.raises(ArgOrder):
        rhs_compositions(1, 2)


@pytest.mark.parametrize("k", range(13))
def test_identity_holds(k):
    for j in range(k + 1):
        assert lhs_ordered(k, j) == rhs_compositions(k, j)


def test_lubell_examples():
    r = lubell_sums(1, 1)
    assert r.s == r.t == 1
    r = lubell_sums(4, 2)
    assert r.per_k[3] == (F(11, 12), F(11, 12))
    r = lubell_sums(3, 3)
    assert r.s == r.t


def _brute_s_t(N, j):
    # independent direct enumeration of S and T without the refinement
    import itertools
    s = sum(F(1, w[0] * w[1]) for w in itertools.product(range(1, N + 1), repeat=2) if sum(w) <= N) if j == 2 else None
    t = sum(F(1, a * b) for a in range(1, N + 1) for b in range(1, N + 1) if a != b) if j == 2 else None
    return s, t


@pytest.mark.parametrize("N", [2, 5, 8])
def test_lubell_against_direct_sums(N):
    r = lubell_sums(N, 2)
    assert (r.s, r.t) == _brute_s_t(N, 2)


@pytest.mark.parametrize("N,j", [(6, 1), (7, 2), (8, 3), (6, 4)])
def test_lubell_refinement(N, j):
    r = lubell_sums(N, j)
    assert r.s == r.t
    for k, (sk, tk) in enumerate(r.per_k, start=1):
        assert sk == tk == (rhs_compositions(k, j) if j <= k else 0)


def test_lubell_scale_guard():
    with pytest.raises(ScaleExceeded):
        lubell_sums(13, 2)
    with pytest.raises(ScaleExceeded):
        lubell_sums(4, 5)


@pytest.mark.parametrize("j", range(0, 5))
def test_cross_check_with_shift(j):
    # the log-free part of (log(x+y))^j at y^k x^-k is (-1)^(k-j) * rhs(k, j)
    f = LogSeries.log("x", j) if j else LogSeries.const(F(1), variables=("x",))
    g = subst_shift(f, "x", "y", 8)
    for k in range(j, 9):
        want = (-1) ** (k - j) * rhs_compositions(k, j)
        if k == 0:
            want = F(1) if j == 0 else 0
        assert g.coeff(mono(x=-k, y=k)) == want


@pytest.mark.parametrize("j", range(1, 5))
def test_cross_check_with_derivatives(j):
    # y^k/k! (d/dx)^k (log x)^j at x^-k (log x)^0 reproduces the left side
    from math import factorial
    f = LogSeries.log("x", j)
    for k in range(j, 9):
        d = f
        for _ in range(k):
            d = derive(d, "x")
        c = d.coeff(mono(x=-k)) / factorial(k)
        assert c * (-1) ** (k - j) == lhs_ordered(k, j)


def test_table_rows():
    rows = identity_table(12)
    assert len(rows) == 91
    assert all(r["equal"] for r in rows)
    tsv = format_table(rows)
    assert tsv.splitlines()[0] == "k\tj\tlhs\trhs\tequal"
    assert "4\t2\t11/12\t11/12\ttrue" in tsv

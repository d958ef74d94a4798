from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logtensor.errors import ScaleExceeded
from logtensor.graded_modules import (nilpotency_index, nilpotent_part, split_l0, validate_module,
                                      virasoro_failures)
from logtensor.heisenberg import build_fock, build_intertwiner, build_voa, partitions
from logtensor.log_intertwiner import validate_axioms
from logtensor.scalars import QVec


def partition_count(n):
    # Euler's pentagonal recurrence, independent of the enumerator
    p = [1] + [0] * n
    for k in range(1, n + 1):
        j, sign, total = 1, 1, 0
        while True:
            for g in (j * (3 * j - 1) // 2, j * (3 * j + 1) // 2):
                if g <= k:
                    total += sign * p[k - g]
            if j * (3 * j - 1) // 2 > k:
                break
            j += 1
            sign = -sign
        p[k] = total
    return p


def test_voa_weight_space_dimensions(voa4):
    assert [len(voa4.weight_space(h)) for h in range(5)] == [1, 1, 2, 3, 5]


@pytest.mark.parametrize("n", range(9))
def test_partitions_match_pentagonal_count(n):
    assert len(partitions(n)) == partition_count(n)[n]


def test_scale_guards(voa4):
    with pytest.raises(ScaleExceeded):
        build_voa(9)
    with pytest.raises(ScaleExceeded):
        build_fock(voa4, 1, 3, 2)
    with pytest.raises(ScaleExceeded):
        build_fock(voa4, 1, 1, 5)


def _bracket_ok(W, m, n):
    a_m, a_n = W.mode("a", m), W.mode("a", n)
    for i in range(W.dim):
        # only columns whose intermediate vectors stay inside the truncation
        if W.weight(i) - min(m, 0) - min(n, 0) > W.wmax:
            continue
        e = W.unit(i)
        lhs = a_m.apply(a_n.apply(e)) - a_n.apply(a_m.apply(e))
        rhs = e * Fraction(m) if m + n == 0 else QVec()
        if lhs != rhs:
            return False
    return True


@pytest.mark.parametrize("m,n", [(1, -1), (2, -2), (1, 2), (-1, -2), (3, -3), (0, -1), (2, -1)])
def test_heisenberg_bracket(voa4, fock_jordan, m, n):
    assert _bracket_ok(voa4, m, n)
    assert _bracket_ok(fock_jordan, m, n)


def test_conformal_vector_is_quasi_primary_with_c1(voa4):
    omega = voa4.conformal_vector
    assert not voa4.L(1).apply(omega)
    assert voa4.central_charge == 1
    assert virasoro_failures(voa4) == []


def test_plain_fock_is_semisimple(fock_plain):
    validate_module(fock_plain)
    _, N = split_l0(fock_plain)
    assert N.is_zero()


def test_jordan_fock_doubles_dimensions(fock_plain, fock_jordan):
    for h in fock_plain.weights():
        assert len(fock_jordan.weight_space(h)) == 2 * len(fock_plain.weight_space(h))


def test_jordan_nilpotent_part_commutes(fock_jordan):
    validate_module(fock_jordan)
    _, N = split_l0(fock_jordan)
    assert not N.is_zero()


@pytest.mark.parametrize("lam,index", [(0, 1), ("1/2", 2), (1, 2), ("-2/3", 2)])
def test_l0_jordan_index(voa4, lam, index):
    # L(0) - weight is lam * J here, so a Jordan zero mode at lam = 0 leaves L(0) semisimple
    W = build_fock(voa4, lam, 2, 4)
    N = nilpotent_part(W)
    for h in W.weights():
        assert max(nilpotency_index(N, W.unit(i)) for i in W.weight_space(h)) == index


def test_top_weight_is_half_momentum_squared(voa4):
    W = build_fock(voa4, "2/3", 1, 2)
    assert W.wmin == Fraction(2, 9)


@settings(max_examples=10, deadline=None)
@given(st.fractions(min_value=-2, max_value=2, max_denominator=4),
       st.fractions(min_value=-2, max_value=2, max_denominator=4))
def test_rank_one_intertwiners_validate_without_logs(lam, mu):
    Y = build_intertwiner(build_voa(3), lam, mu, 1, 1, 2)
    assert all(r.passed for r in validate_axioms(Y, count=3, seed=0))
    assert Y.max_log_degree() == 0

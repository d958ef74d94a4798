import json
from fractions import Fraction as F

import pytest

from logtensor.errors import CommutationFailure, ModuleDataError, NotHomogeneous
from logtensor.formal_series import LogSeries, derive, mono
from logtensor.graded_modules import (
    BasisVector,
    CompletionElement,
    Generator,
    GradedModule,
    apply_matrix_series,
    c1_quotient_dims,
    contragredient,
    module_from_json,
    module_to_json,
    nilpotent_part,
    opposite_op,
    power_l0,
    project,
    same_structure,
    split_l0,
    strong_grading_check,
)
from logtensor.linalg import SparseMatrix
from logtensor.scalars import QVec


def tiny(l0_rows, extra_modes=None, window=("3/2", "3/2")):
    n = len(l0_rows)
    basis = [BasisVector(f"e{i}", F(3, 2)) for i in range(n)]
    return GradedModule("T", basis, window, {"b": Generator(F(1))}, extra_modes or {},
                        {0: SparseMatrix.from_dense(l0_rows)})


def test_split_jordan_block():
    h = F(3, 2)
    W = tiny([[h, 1], [0, h]])
    S, N = split_l0(W)
    assert S.to_dense() == [[h, 0], [0, h]]
    assert N.to_dense() == [[0, 1], [0, 0]]


def test_split_semisimple(fock_plain):
    _, N = split_l0(fock_plain)
    assert N.is_zero()


def test_commutation_failure_detected():
    h = F(3, 2)
    bad = {("b", 0): SparseMatrix.from_dense([[1, 0], [0, 0]])}
    with pytest.raises(CommutationFailure):
        tiny([[h, 1], [0, h]], bad)


def test_jordan_module_nilpotent_commutes(fock_jordan):
    _, N = split_l0(fock_jordan)
    assert not N.is_zero()


def test_power_l0_jordan():
    h = F(3, 2)
    W = tiny([[h, 1], [0, h]])
    w, u = QVec({1: F(1)}), QVec({0: F(1)})
    assert power_l0(W, w, +1) == LogSeries({mono(x=h): w, mono(x=(h, 1)): u})
    assert power_l0(W, u, +1) == LogSeries({mono(x=h): u})


def test_power_l0_inverse(fock_jordan):
    W = fock_jordan
    N = nilpotent_part(W)
    for i in W.weight_space(W.wmin + 1):
        w = W.unit(i)
        plus = power_l0(W, w, +1)
        # x^{-L(0)} applied coefficientwise then multiplied out
        total = LogSeries.zero()
        for m, c in plus.items():
            total = total + power_l0(W, c, -1).times_monomial(m)
        assert total == LogSeries({(): w})


def test_power_l0_derivative(fock_jordan):
    W = fock_jordan
    L0 = W.L(0)
    for sign in (1, -1):
        for i in range(0, W.dim, 5):
            w = W.unit(i)
            lhs = derive(power_l0(W, w, sign), "x")
            rhs = apply_matrix_series(L0, power_l0(W, w, sign)).times_monomial(mono(x=-1), F(sign))
            assert lhs == rhs


def test_not_homogeneous(fock_jordan):
    W = fock_jordan
    v = W.unit(0) + W.unit(W.dim - 1)
    with pytest.raises(NotHomogeneous):
        power_l0(W, v)


def test_projection():
    c = CompletionElement({F(1): QVec({0: F(1)}), F(2): QVec({1: F(3)})})
    assert project(c, 7) == QVec()
    assert project(c, 2) == QVec({1: F(3)})
    assert project(c, 1) + project(c, 2) == c.total()


def test_l0_bracket(voa4, fock_jordan):
    V, W = voa4, fock_jordan
    L0 = W.L(0)
    for b in range(V.dim):
        if V.weight(b) > 2:
            continue
        l0v = V.L(0).apply(V.unit(b))
        for n in range(-2, 3):
            vn = W.vertex_mode(b, n)
            rhs = W.vertex_mode(l0v, n) + vn * (-n - 1)
            for c in vn.cols:
                if W.weight(c) + V.weight(b) - n - 1 > W.wmax:
                    continue
                e = W.unit(c)
                assert L0.apply(vn.apply(e)) - vn.apply(L0.apply(e)) == rhs.apply(e)


def test_opposite_heisenberg(voa4, fock_jordan):
    a = voa4.generator_vectors["a"]
    for n in range(-3, 4):
        assert opposite_op(fock_jordan, a, n) == -fock_jordan.mode("a", -n).restrict_columns(
            fock_jordan.defined_columns(n))


def test_opposite_conformal(voa4, fock_jordan):
    om = voa4.conformal_vector
    W = fock_jordan
    for n in range(-2, 3):
        # omega^o_n = omega_{-n+2}, i.e. L(-n+1)
        got = opposite_op(W, om, n)
        assert got == W.L(-n + 1).restrict_columns(W.defined_columns(n - 1))


def test_opposite_vacuum(voa4, fock_jordan):
    W = fock_jordan
    assert opposite_op(W, voa4.vacuum, -1) == SparseMatrix.identity(W.dim)
    assert opposite_op(W, voa4.vacuum, 0).is_zero()


def test_contragredient_twice(fock_jordan):
    W2 = contragredient(contragredient(fock_jordan))
    assert same_structure(fock_jordan, W2)


def test_contragredient_jordan_transpose(fock_jordan):
    D = contragredient(fock_jordan)
    assert nilpotent_part(D) == nilpotent_part(fock_jordan).transpose()
    assert [b.weight for b in D.basis] == [b.weight for b in fock_jordan.basis]


def test_contragredient_pairing(voa4, fock_jordan):
    # <Y'(v,x) w', w> = <w', Y^o(v,x) w> for a few algebra vectors
    W = fock_jordan
    D = contragredient(W)
    for b in range(min(V_dim(voa4), 6)):
        for n in range(-2, 3):
            lhs = D.vertex_mode(b, n)
            rhs = opposite_op(W, b, n)
            for c, col in rhs.cols.items():
                for r, val in col.items():
                    if D.weight(r) - (voa4.weight(b) - n - 1) >= D.wmin and r in lhs.cols:
                        assert lhs.column(r).get(c, 0) == val


def V_dim(V):
    return V.dim


def test_strong_grading(fock_jordan):
    assert strong_grading_check(fock_jordan).passed
    unbounded = GradedModule("U", [BasisVector("u", F(-5))], (None, 0), {}, {}, {})
    r = strong_grading_check(unbounded)
    assert not r.passed and r.violations


def test_c1_quotient(voa4):
    dims = c1_quotient_dims(voa4)
    assert sum(dims.values()) <= 2
    assert dims[F(0)] == 1


def test_c1_degenerate():
    W = GradedModule("Z", [BasisVector("z", F(0))], (0, 0), {}, {}, {})
    assert c1_quotient_dims(W) == {F(0): 1}
    empty = GradedModule("E", [], (0, 0), {}, {}, {})
    assert c1_quotient_dims(empty) == {}


def test_json_roundtrip(voa4, fock_jordan):
    text = module_to_json(fock_jordan)
    back = module_from_json(text, voa4)
    assert same_structure(back, fock_jordan)
    vtext = module_to_json(voa4)
    vback = module_from_json(vtext)
    assert same_structure(vback, voa4) and vback.creation == voa4.creation


def test_json_errors_located(fock_jordan, voa4):
    doc = json.loads(module_to_json(fock_jordan))
    doc["modes"][0]["triplets"][0][0] = 10_000
    with pytest.raises(ModuleDataError) as e:
        module_from_json(json.dumps(doc), voa4)
    assert "modes[0]" in str(e.value)
    doc = json.loads(module_to_json(fock_jordan))
    doc["basis"][1]["weight"] = "oops"
    with pytest.raises(ModuleDataError) as e:
        module_from_json(json.dumps(doc), voa4)
    assert "basis[1]" in str(e.value)


def test_weight_shift_violation():
    basis = [BasisVector("p", F(0)), BasisVector("q", F(1))]
    bad = {("b", 0): SparseMatrix.from_dense([[0, 0], [1, 0]])}
    with pytest.raises(ModuleDataError):
        GradedModule("B", basis, (0, 1), {"b": Generator(F(1))}, bad, {})

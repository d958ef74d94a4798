import json
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from logtensor.errors import WindowTooSmall
from logtensor.graded_modules import contragredient
from logtensor.heisenberg import build_fock, build_intertwiner
from logtensor.log_intertwiner import (
    LogIntertwiner,
    a_transform,
    coefficients_close,
    conjugation_checks,
    degree_bounds_check,
    intertwiner_from_json,
    intertwiner_to_json,
    jacobi_check,
    l0_transport_check,
    module_action,
    omega_transform,
    recover_coefficients,
    structure_check,
    validate_axioms,
    xt_transform,
)
from logtensor.scalars import QVec
from logtensor.errors import SingularRecovery


@pytest.fixture(scope="module")
def plain(voa):
    return build_intertwiner(voa, 1, 1, 1, 1, 4)


@pytest.fixture(scope="module")
def jordan21(voa):
    return build_intertwiner(voa, "1/2", "1/3", 2, 1, 4)


@pytest.fixture(scope="module")
def jordan22(voa):
    return build_intertwiner(voa, 1, 1, 2, 2, 4)


def idx(W, partition, slot=0):
    return W.fock.index[(tuple(partition), slot)]


def passed(reports):
    return all(r.passed for r in reports)


# -- construction ----------------------------------------------------------------


def test_top_coefficient_is_plain_power(plain):
    W3 = plain.W3
    table = plain.coeffs(0, 0)
    assert table[(F(-2), 0)] == W3.unit(idx(W3, ()))
    assert plain.max_log_degree() == 0


def test_low_levels_match_normal_ordered_exponential(voa):
    # Y(e_l, x) e_m = x^{lm} exp(l sum a(-n) x^n / n) e_{l+m}, read off by hand
    lam, mu = F(1, 2), F(1, 3)
    Y = build_intertwiner(voa, lam, mu, 1, 1, 3)
    W3 = Y.W3
    n0 = -lam * mu - 1
    table = Y.coeffs(0, 0)
    assert table[(n0 - 1, 0)] == QVec({idx(W3, (1,)): lam})
    assert table[(n0 - 2, 0)] == QVec({idx(W3, (2,)): lam / 2, idx(W3, (1, 1)): lam ** 2 / 2})
    level3 = {idx(W3, (3,)): lam / 3, idx(W3, (2, 1)): lam ** 2 / 2, idx(W3, (1, 1, 1)): lam ** 3 / 6}
    assert table[(n0 - 3, 0)] == QVec(level3)


def test_jordan_top_carries_single_log(jordan21):
    # slot 1 of W1 is the generalized eigenvector: x^{lm}(e_{(1,0)} + mu log x e_{(0,0)})
    W1, W3 = jordan21.W1, jordan21.W3
    mu = F(1, 3)
    n0 = -F(1, 6) - 1
    table = jordan21.coeffs(idx(W1, (), 1), 0)
    assert table[(n0, 0)] == W3.unit(idx(W3, (), 1))
    assert table[(n0, 1)] == QVec({idx(W3, (), 0): mu})
    assert jordan21.max_log_degree() == 1


def test_vacuum_momentum_reduces_to_module_action(voa):
    Y = build_intertwiner(voa, 0, 1, 1, 1, 4)
    Z = module_action(Y.W2)
    for a in range(Y.W1.dim):
        for b in range(Y.W2.dim):
            assert Y.coeffs(a, b) == Z.coeffs(a, b)


@pytest.mark.parametrize("which", ["plain", "jordan21", "jordan22"])
def test_built_intertwiners_validate(which, request):
    Y = request.getfixturevalue(which)
    reports = validate_axioms(Y, count=20, seed=3)
    assert passed(reports)
    assert reports[0].checked > 500
    assert structure_check(Y).passed


def test_module_action_is_an_intertwiner(voa, fock_jordan):
    reports = validate_axioms(module_action(fock_jordan), count=10)
    assert passed(reports)


def test_perturbation_is_located(jordan22):
    (n, k), vec = sorted(jordan22.coeffs(0, 0).items())[0]
    bad = jordan22.perturbed(0, 0, n, k, QVec({next(iter(vec)): F(1)}))
    reports = validate_axioms(bad, triples=[(1, 0, 0), (2, 0, 0)])
    assert not passed(reports)
    assert any("monomial" in w for r in reports for w in r.failures)


def test_window_too_small(voa):
    Y = build_intertwiner(voa, 1, 1, 1, 1, 0)
    with pytest.raises(WindowTooSmall):
        validate_axioms(Y, triples=[(2, 0, 0)])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_jacobi_random_triples(plain, seed):
    assert passed(validate_axioms(plain, count=2, seed=seed))


# -- L(0) transport and log degrees -------------------------------------------------


def test_l0_transport_trivial_power(jordan22):
    reports = l0_transport_check(jordan22, 0, 0, 0, 0, 3, 1, y_order=3)
    assert passed(reports)


@pytest.mark.parametrize("t", [1, 2])
def test_l0_transport_jordan(jordan22, t):
    W1, W2 = jordan22.W1, jordan22.W2
    i1, i2 = idx(W1, (1,), 1), idx(W2, (), 1)
    reports = l0_transport_check(jordan22, W1.weight(i1), W2.weight(i2), F(1, 2), t, i1, i2, y_order=3)
    assert passed(reports)
    assert reports[1].checked > 0


def test_degree_bounds_plain(plain):
    reports = degree_bounds_check(plain, plain.W1.unit(0), plain.W2.unit(0), plain.W3.unit(0))
    assert passed(reports)
    assert reports[0].notes["bound"] == 0 and reports[0].notes["max_log_degree"] == 0


def test_degree_bounds_jordan_eigenvector_dual(jordan22):
    W1, W2, W3 = jordan22.W1, jordan22.W2, jordan22.W3
    eigen_dual = W3.unit(idx(W3, (), 3))
    reports = degree_bounds_check(jordan22, W1.unit(idx(W1, (), 1)), W2.unit(idx(W2, (), 1)), eigen_dual)
    assert passed(reports)
    assert reports[0].notes["bound"] == 2
    assert reports[0].notes["max_log_degree"] <= 2


def test_degree_bounds_jordan_lowest_slot_dual(jordan22):
    # the dual of slot (0,0) has Jordan index 3 for the transpose; logs reach degree 2
    W1, W2, W3 = jordan22.W1, jordan22.W2, jordan22.W3
    reports = degree_bounds_check(jordan22, W1.unit(idx(W1, (), 1)), W2.unit(idx(W2, (), 1)), W3.unit(idx(W3, (), 0)))
    assert passed(reports)
    assert reports[0].notes["bound"] == 4
    assert reports[0].notes["max_log_degree"] == 2


# -- transforms --------------------------------------------------------------------


def test_xt_identity_and_zero(jordan22):
    assert coefficients_close(jordan22, xt_transform(jordan22, 0)).passed
    killed = xt_transform(jordan22, jordan22.kmax + 1)
    assert all(not t for t in killed.materialize().values())


def test_xt_one_validates(jordan22):
    assert passed(validate_axioms(xt_transform(jordan22, 1), count=8))


def test_xt_coset_restriction(jordan21):
    X = xt_transform(jordan21, 0, coset=F(1, 2))
    assert all(not t for t in X.materialize().values())
    X = xt_transform(jordan21, 0, coset=-F(1, 6))
    assert coefficients_close(jordan21, X).passed


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2), st.integers(0, 2))
def test_xt_composition(jordan22, s, t):
    left = xt_transform(xt_transform(jordan22, t), s)
    right = xt_transform(jordan22, s + t)
    scale = 1
    for i in range(1, s + 1):
        scale = scale * (s + t - i + 1) / i
    for key in [(0, 0), (idx(jordan22.W1, (), 1), idx(jordan22.W2, (), 1))]:
        a, b = left.coeffs(*key), right.coeffs(*key)
        assert set(a) == set(b)
        assert all(a[nk] == b[nk] * F(scale) for nk in a)


def test_conjugation_formulas(jordan22):
    for i1, i2 in [(0, 0), (idx(jordan22.W1, (), 1), idx(jordan22.W2, (1,), 1))]:
        reports = conjugation_checks(jordan22, i1, i2, order=2)
        assert passed(reports)
        assert all(r.checked for r in reports)


def test_omega_exact_sign_for_integer_exponents(plain):
    O = omega_transform(plain, 0)
    assert O.layer == "exact"
    top = O.coeffs(0, 0)
    # lm = 1: e^{pi i (-n-1)} = -1 on the top coefficient
    assert top[(F(-2), 0)] == QVec({idx(plain.W3, ()): F(-1)})


@pytest.mark.parametrize("which", ["plain", "jordan21", "jordan22"])
def test_round_trips(which, request):
    Y = request.getfixturevalue(which)
    assert coefficients_close(Y, omega_transform(omega_transform(Y, 0), -1)).passed
    assert coefficients_close(Y, a_transform(a_transform(Y, 0), -1)).passed


def test_omega_output_validates(jordan21):
    O = omega_transform(jordan21, 0)
    assert O.layer == "complex"
    assert passed(validate_axioms(O, count=6))


def test_a_transform_of_module_action_is_contragredient_action(fock_plain):
    Y = module_action(fock_plain)
    for r in (0, 1):
        A = a_transform(Y, r)
        Z = module_action(A.W3)
        assert coefficients_close(A, Z).passed


def test_recover_every_stored_coefficient(jordan22):
    for (a, b), table in list(jordan22.materialize().items())[:150]:
        for (n, k), vec in table.items():
            got = recover_coefficients(jordan22, jordan22.W1.unit(a), jordan22.W2.unit(b), n, k)
            assert got == vec


def test_recover_beyond_log_degree_is_zero(jordan22):
    assert recover_coefficients(jordan22, jordan22.W1.unit(0), jordan22.W2.unit(0), F(-2), 5) == QVec()


def test_recover_detects_misdeclared_logs(fock_plain):
    # coefficients with a log but trivial L(0) nilpotent parts cannot come from an intertwiner
    W = fock_plain
    fake = LogIntertwiner.from_table(W.algebra, W, W, {(0, 0): {(F(-1), 1): W.unit(0)}})
    with pytest.raises(SingularRecovery):
        recover_coefficients(fake, W.algebra.unit(0), W.unit(0), -1, 0)


def test_json_round_trip(jordan21):
    text = intertwiner_to_json(jordan21)
    back = intertwiner_from_json(text, jordan21.W1, jordan21.W2, jordan21.W3)
    assert coefficients_close(jordan21, back).passed
    assert json.loads(text)["kmax"] == jordan21.kmax


# -- commutator formula, evaluated directly on mode matrices ------------------------


@pytest.mark.parametrize("which", ["plain", "jordan21", "jordan22"])
def test_commutator_formula(which, request):
    # [a(m), Y(w1, x)] = sum_{i >= 0} C(m, i) x^{m-i} Y(a(i) w1, x), coefficient by coefficient
    from logtensor.scalars import binom
    Y = request.getfixturevalue(which)
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    compared = 0
    for i1 in range(W1.dim):
        if W1.weight(i1) > W1.wmin + 1:
            continue
        w1 = W1.unit(i1)
        for i2 in range(W2.dim):
            if W2.weight(i2) > W2.wmin + 1:
                continue
            w2 = W2.unit(i2)
            for m in range(-2, 3):
                if W2.weight(i2) - m > W2.wmax:
                    continue
                left = Y.pair(w1, w2)
                moved = Y.pair(w1, W2.mode("a", m).apply(w2))
                for n in {nk[0] for nk in left} | {nk[0] for nk in moved}:
                    h = W1.weight(i1) + W2.weight(i2) - n - 1
                    if h - m > W3.wmax or h > W3.wmax:
                        continue
                    for k in range(Y.kmax + 1):
                        lhs = (W3.mode("a", m).apply(left.get((n, k), QVec()))
                               - moved.get((n, k), QVec()))
                        rhs = QVec()
                        for i in range(0, int(W1.weight(i1) - W1.wmin) + 1):
                            u = W1.mode("a", i).apply(w1)
                            if u:
                                rhs = rhs + Y.pair(u, w2).get((n + m - i, k), QVec()) * binom(m, i)
                        assert lhs == rhs, (i1, i2, m, n, k)
                        compared += 1
    assert compared > 50

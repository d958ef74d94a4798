import cmath
import math
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from logtensor import pz_dual as pd
from logtensor.errors import RegionViolation, SlotMismatch, ValidationError, ZeroArgument
from logtensor.graded_modules import opposite_op
from logtensor.heisenberg import build_fock, build_intertwiner, build_voa, fock_intertwiner
from logtensor.log_intertwiner import coefficients_close, module_action
from logtensor.scalars import QVec


@pytest.fixture(scope="module")
def plain(voa):
    return build_intertwiner(voa, 1, 1, 1, 1, 4)


@pytest.fixture(scope="module")
def jordan(voa):
    return build_intertwiner(voa, "1/2", "1/3", 2, 1, 4)


@pytest.fixture(scope="module")
def plain_map(plain):
    return pd.intertwiner_to_map(plain, pd.BranchChoice(2))


@pytest.fixture(scope="module")
def jordan_map(jordan):
    return pd.intertwiner_to_map(jordan, pd.BranchChoice(2, 1))


def passed(reports):
    return all(r.passed for r in reports)


def low_duals(W, level=1):
    return [W.unit(i) for i in range(W.dim) if W.weight(i) <= W.wmin + level]


# -- branches ------------------------------------------------------------------------


def test_branch_log_examples():
    assert pd.branch_log(pd.BranchChoice(1)) == 0
    assert cmath.isclose(pd.branch_log(pd.BranchChoice(-1)), complex(0, math.pi))
    assert cmath.isclose(pd.branch_log(pd.BranchChoice(2, 1)), complex(math.log(2), 2 * math.pi))


def test_branch_rejects_zero():
    with pytest.raises(ZeroArgument):
        pd.BranchChoice(0)


def test_integer_powers_stay_exact():
    b = pd.BranchChoice(F(2, 3), 4)
    assert b.power(-2) == F(9, 4)
    assert isinstance(b.power(F(1, 2)), complex)


# -- maps and intertwiners ---------------------------------------------------------------


def test_plain_map_is_exact(plain_map):
    assert plain_map.layer == "exact"


@pytest.mark.parametrize("which", ["plain", "jordan"])
@pytest.mark.parametrize("p", [0, 1])
def test_round_trips(which, p, request):
    Y = request.getfixturevalue(which)
    b = pd.BranchChoice(2, p)
    I = pd.intertwiner_to_map(Y, b)
    assert coefficients_close(Y, pd.map_to_intertwiner(I, b)).passed
    again = pd.intertwiner_to_map(pd.map_to_intertwiner(I, b), b)
    assert pd.maps_close(I, again).passed


@pytest.mark.parametrize("which", ["plain_map", "jordan_map"])
def test_pz_jacobi(which, request):
    rep = pd.check_pz_jacobi(request.getfixturevalue(which), count=6, seed=2)
    assert rep.passed and rep.checked > 50


def test_module_action_map_passes(voa4, fock_jordan):
    I = pd.intertwiner_to_map(module_action(fock_jordan), pd.BranchChoice(F(1, 2)))
    assert pd.check_pz_jacobi(I, count=5).passed


def test_perturbed_map_fails(plain_map):
    comps = plain_map.components(0, 0)
    h = min(comps)
    bad = plain_map.perturbed(0, 0, h, QVec({next(iter(comps[h])): F(1)}))
    rep = pd.check_pz_jacobi(bad, triples=[(1, 0, 0), (2, 0, 0)])
    assert not rep.passed
    assert rep.failures


def test_transpose_is_q_map_and_involution(plain_map, jordan_map):
    for I in (plain_map, jordan_map):
        T = pd.pq_transpose(I)
        assert T.kind == "Q"
        assert pd.check_pz_jacobi(T, count=4, seed=5).passed
        back = pd.pq_transpose(T)
        assert back.kind == "P" and back.W1 is I.W1 and back.W3 is I.W3
        assert pd.maps_close(I, back).passed


def test_transpose_of_perturbed_map_fails(plain_map):
    comps = plain_map.components(0, 0)
    h = min(comps)
    bad = pd.pq_transpose(plain_map.perturbed(0, 0, h, QVec({next(iter(comps[h])): F(1)})))
    assert not pd.check_pz_jacobi(bad, count=8, seed=1).passed


def test_zero_map_transposes_to_zero(plain):
    Z = pd.PzMap.zero("P", plain.W1, plain.W2, plain.W3, pd.BranchChoice(2))
    T = pd.pq_transpose(Z)
    assert all(not t for t in T.materialize().values())


# -- the dual action ---------------------------------------------------------------------


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10**6))
def test_virasoro_on_random_functionals(plain, seed):
    lam = pd.random_functional(plain.W1, plain.W2, seed=seed)
    rep = pd.virasoro_check(lam, pd.BranchChoice(2))
    assert rep.passed and rep.checked > 0


def test_virasoro_on_map_functionals(jordan_map):
    for w in low_duals(jordan_map.W3)[:3]:
        lam = pd.functional_from_map(jordan_map, w)
        assert pd.virasoro_check(lam, jordan_map.branch).passed


def test_action_transports_contragredient_modes(plain_map):
    # tau(v t^n)(w' o I) = (v'_n w') o I whenever v'_n w' stays inside the window
    I = plain_map
    W3 = I.W3
    V = W3.algebra
    v = V.unit(1)
    k = V.weight(1)
    for w in low_duals(W3):
        lam = pd.functional_from_map(I, w)
        wt = W3.weight_of(w)
        for n in range(-2, 4):
            if wt + k - n - 1 > W3.wmax:
                continue
            M = opposite_op(W3, v, n)
            vals = {}
            for (a, c), comps in I.materialize().items():
                s = sum((w.get(j, 0) * x for vec in comps.values() for j, x in M.apply(vec).items()), 0)
                if s:
                    vals[(a, c)] = s
            want = pd.DualElement(lam.modules, vals, lam.bounds)
            got = pd.tau_pz_apply(lam, v, I.branch, n)
            ok, key, x, y, compared = pd.dual_compare(got, want)
            assert ok, (n, key, x, y)


def test_compatibility_of_map_functionals(plain_map):
    for w in low_duals(plain_map.W3):
        rep = pd.check_compatibility(pd.functional_from_map(plain_map, w), plain_map.branch)
        assert rep.passed and rep.checked > 10


def test_random_functional_fails_truncation(plain):
    rep = pd.check_compatibility(pd.random_functional(plain.W1, plain.W2, seed=4), pd.BranchChoice(2))
    assert not rep.passed
    assert any(f["condition"] == "lower truncation" for f in rep.failures)


def test_wrong_point_fails(plain_map):
    lam = pd.functional_from_map(plain_map, plain_map.W3.unit(0))
    assert not pd.check_compatibility(lam, pd.BranchChoice(3)).passed


def test_zero_functional(plain):
    lam = pd.DualElement.zero((plain.W1, plain.W2))
    assert pd.check_compatibility(lam, pd.BranchChoice(2)).passed
    module = pd.generate_local_module(lam, pd.BranchChoice(2))
    assert module.dims == {} and module.weight is None


@settings(max_examples=5, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(-4, 4))
def test_action_is_linear(plain, a, c, n):
    b = pd.BranchChoice(2)
    x = pd.random_functional(plain.W1, plain.W2, seed=1)
    y = pd.random_functional(plain.W1, plain.W2, seed=2)
    v = plain.W1.algebra.unit(1)
    left = pd.tau_pz_apply(x * a + y * c, v, b, n)
    right = pd.tau_pz_apply(x, v, b, n) * a + pd.tau_pz_apply(y, v, b, n) * c
    assert pd.dual_compare(left, right)[0]


# -- the generated local module -------------------------------------------------------------


def test_local_module_of_top_dual(plain_map):
    lam = pd.functional_from_map(plain_map, plain_map.W3.unit(0))
    module = pd.generate_local_module(lam, plain_map.branch)
    assert module.passed
    assert module.dims == {0: 1, 1: 1, 2: 2}
    assert module.weight == 2


def test_local_module_jordan(jordan):
    b = pd.BranchChoice(2)
    I = pd.intertwiner_to_map(jordan, b)
    lam = pd.functional_from_map(I, I.W3.unit(1))
    module = pd.generate_local_module(lam, b)
    assert module.passed


def test_local_module_refuses_incompatible(plain):
    lam = pd.random_functional(plain.W1, plain.W2, seed=4)
    with pytest.raises(ValidationError):
        pd.generate_local_module(lam, pd.BranchChoice(2))


# -- products and iterates -----------------------------------------------------------------


@pytest.fixture(scope="module")
def chain():
    V = build_voa(8)
    W1, W2, W3 = (build_fock(V, 1, 1, 4) for _ in range(3))
    M = build_fock(V, 2, 1, 6)
    W4 = build_fock(V, 3, 1, 4)
    return V, W1, W2, W3, M, W4


def product(chain, z1, z2, **kw):
    V, W1, W2, W3, M, W4 = chain
    outer = pd.intertwiner_to_map(fock_intertwiner(W1, M, W4), pd.BranchChoice(z1))
    inner = pd.intertwiner_to_map(fock_intertwiner(W2, W3, M), pd.BranchChoice(z2))
    return pd.compose_maps("product", outer, inner, **kw)


def test_product_jacobi(chain):
    P = product(chain, 4, 1, intermediate_max=8)
    rep = pd.check_pz1z2_jacobi(P, count=3, seed=1)
    assert rep.passed and rep.checked > 100
    vac = pd.pz1z2_jacobi_check(P, 0, 0, 0, 0)
    assert vac.passed and vac.checked > 0


def test_product_perturbation_fails(chain):
    P = product(chain, 4, 1, intermediate_max=8)
    comps = P.components(0, 0, 0)
    h = min(comps)
    bad = P.perturbed(0, 0, 0, h, QVec({next(iter(comps[h])): F(1)}))
    assert not pd.check_pz1z2_jacobi(bad, quadruples=[(1, 0, 0, 0)]).passed


def test_iterate_matches_product(chain):
    V, W1, W2, W3, M, W4 = chain
    z1, z2 = F(3), F(2)
    P = product(chain, z1, z2)
    inner = pd.intertwiner_to_map(fock_intertwiner(W1, W2, M), pd.BranchChoice(z1 - z2))
    outer = pd.intertwiner_to_map(fock_intertwiner(M, W3, W4), pd.BranchChoice(z2))
    It = pd.compose_maps("iterate", outer, inner)
    assert (It.z1, It.z2) == (z1, z2)
    rep = pd.triple_maps_close(P, It)
    assert rep.passed and rep.checked > 10
    assert pd.check_pz1z2_jacobi(It, count=2).passed


def test_region_violations(chain):
    with pytest.raises(RegionViolation):
        product(chain, 1, 2)
    V, W1, W2, W3, M, W4 = chain
    inner = pd.intertwiner_to_map(fock_intertwiner(W1, W2, M), pd.BranchChoice(3))
    outer = pd.intertwiner_to_map(fock_intertwiner(M, W3, W4), pd.BranchChoice(2))
    with pytest.raises(RegionViolation):
        pd.compose_maps("iterate", outer, inner)


def test_mismatched_slots(chain):
    V, W1, W2, W3, M, W4 = chain
    outer = pd.intertwiner_to_map(fock_intertwiner(W1, M, W4), pd.BranchChoice(4))
    with pytest.raises(SlotMismatch):
        pd.compose_maps("product", outer, outer)


def test_slice_of_product_functional(chain):
    V, W1, W2, W3, M, W4 = chain
    I1 = pd.intertwiner_to_map(fock_intertwiner(W1, M, W4), pd.BranchChoice(4))
    I2 = pd.intertwiner_to_map(fock_intertwiner(W2, W3, M), pd.BranchChoice(1))
    P = pd.compose_maps("product", I1, I2)
    w4 = W4.unit(1)
    low2 = [i for i in range(W2.dim) if W2.weight(i) <= W2.wmin + 1]
    low3 = [i for i in range(W3.dim) if W3.weight(i) <= W3.wmin + 1]
    lam = pd.triple_functional(P, w4, support=([0, 1], low2, low3))
    got = pd.mu_slice(lam, 1, W1.unit(1))
    nu = QVec({m: s for m in range(M.dim)
               if (s := sum(w4.get(j, 0) * x for vec in I1.components(1, m).values() for j, x in vec.items()))})
    want = pd.functional_from_map(I2, nu)
    for key, c in got.values.items():
        assert c == want.values.get(key, 0)
    for key, c in want.values.items():
        if key[0] in low2 and key[1] in low3:
            assert got.values.get(key, 0) == c


def test_slice_is_linear_and_checked(chain):
    V, W1, W2, W3, M, W4 = chain
    vals = {(a, b, c): F(a + 2 * b - c, 3) for a in range(3) for b in range(3) for c in range(3)}
    lam = pd.DualElement((W1, W2, W3), vals)
    u, w = W3.unit(0), W3.unit(2)
    both = pd.mu_slice(lam, 2, QVec({0: F(2), 2: F(-1)}))
    split = pd.mu_slice(lam, 2, u) * 2 - pd.mu_slice(lam, 2, w)
    assert pd.dual_compare(both, split)[0]
    with pytest.raises(SlotMismatch):
        pd.mu_slice(lam, 3, u)
    with pytest.raises(SlotMismatch):
        pd.mu_slice(lam, 1, QVec({W1.dim + 5: F(1)}))

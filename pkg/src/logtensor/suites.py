"""Named verification suites shared by the command line and the acceptance tests.

Every suite returns a list of :class:`CheckReport`; nothing here prints.
"""
from __future__ import annotations

import random
from fractions import Fraction

from .combinatorial import identity_table, lubell_sums
from .errors import LogTensorError
from .formal_series import LogSeries, derive, euler, exp_diff_op, mono, ode_membership, subst_dilate, subst_shift
from .graded_modules import split_l0, strong_grading_check, validate_module, virasoro_failures
from .heisenberg import build_fock, build_intertwiner, build_voa, fock_intertwiner
from .log_intertwiner import (
    a_transform,
    coefficients_close,
    degree_bounds_check,
    l0_transport_check,
    omega_transform,
    recover_coefficients,
    structure_check,
    validate_axioms,
    xt_transform,
)
from . import pz_dual as pd
from .reports import CheckReport
from .scalars import QVec, rat

# (lam, mu, m1, m2): the Heisenberg configurations exercised by default
DEFAULT_CONFIGS = [(lam, mu, m1, m2) for lam, mu in ((1, 1), ("1/2", "1/3"))
                   for m1, m2 in ((1, 1), (2, 1), (2, 2))]


def _guard(tag: str, fn, *args, **kw) -> list[CheckReport]:
    """Run ``fn``; a library error becomes a failed report instead of an exception."""
    try:
        return fn(*args, **kw)
    except LogTensorError as exc:
        rep = CheckReport(tag)
        rep.record(False, error=type(exc).__name__, message=str(exc))
        return [rep]


# ---------------------------------------------------------------------------
# formal series


def random_series(rng: random.Random, max_terms: int = 8, max_den: int = 6, max_log: int = 3,
                  var: str = "x") -> LogSeries:
    acc: dict = {}
    for _ in range(rng.randint(1, max_terms)):
        e = Fraction(rng.randint(-3 * max_den, 3 * max_den), rng.randint(1, max_den))
        m = mono(**{var: (e, rng.randint(0, max_log))})
        acc[m] = acc.get(m, 0) + Fraction(rng.choice([-5, -3, -2, -1, 1, 2, 3, 4]))
    return LogSeries(acc, variables=(var,))


def series_suite(order: int = 8, trials: int = 50, seed: int = 0) -> list[CheckReport]:
    """Exponentials of derivations against substitutions, Leibniz rule and multiplicativity."""
    rng = random.Random(seed)
    one, x = LogSeries.const(Fraction(1)), LogSeries.var("x")
    shift, dilate = CheckReport("exp-derivative-shift"), CheckReport("exp-euler-dilation")
    leibniz, hom = CheckReport("leibniz"), CheckReport("exp-derivation-multiplicative")
    for t in range(trials):
        f, g = random_series(rng), random_series(rng)
        shift.record(exp_diff_op(f, one, "x", "y", order) == subst_shift(f, "x", "y", order), trial=t)
        dilate.record(exp_diff_op(f, x, "x", "y", order) == subst_dilate(f, "x", "y", order), trial=t)
        leibniz.record(derive(f * g, "x") == derive(f, "x") * g + f * derive(g, "x"), trial=t)
        # d/dx and x d/dx take turns to keep the run short
        p = (one, x)[t % 2]
        lhs = exp_diff_op(f * g, p, "x", "y", order)
        rhs = exp_diff_op(f, p, "x", "y", order) * exp_diff_op(g, p, "x", "y", order)
        hom.record(lhs == rhs, trial=t, generator=str(p))
    return [shift, dilate, leibniz, hom]


def _brute_minimal(f: LogSeries, a: Fraction, m: int):
    g = f
    for s in range(m + 1):
        if not g:
            return s
        g = euler(g, "x") - g.scale(a)
    return None


def ode_suite(cases: int = 20, seed: int = 0) -> list[CheckReport]:
    """``(x d/dx - a)^m`` membership against repeated application."""
    rng = random.Random(seed)
    rep = CheckReport("ode-membership")
    for t in range(cases):
        a = Fraction(rng.randint(-6, 6), rng.randint(1, 3))
        m = rng.randint(1, 4)
        if t % 2 == 0:
            # built to lie in the kernel, with a chosen log depth
            depth = rng.randint(1, m + 1)
            f = LogSeries({mono(x=(a, k)): Fraction(rng.randint(1, 5)) for k in range(depth)}, variables=("x",))
        else:
            f = random_series(rng)
        got = ode_membership(f, a, m, "x")
        want = _brute_minimal(f, a, m)
        ok = got.member == (want is not None) and (want is None or got.minimal == want)
        if ok and got.member and got.minimal:
            ok = got.top_coefficient_nonzero is True
        rep.record(ok, case=t, root=a, m=m, member=got.member, minimal=got.minimal, expected=want)
    return [rep]


# ---------------------------------------------------------------------------
# combinatorics


def comb_suite(kmax: int = 12, lubell_n: int = 10, lubell_j: int = 4) -> list[CheckReport]:
    """The ordered-sum identity row by row and Lubell's sums refined by ``k``."""
    rows = CheckReport("ordered-sum-identity")
    for r in identity_table(kmax):
        rows.record(r["equal"], k=r["k"], j=r["j"], lhs=r["lhs"], rhs=r["rhs"])
    rows.notes["rows"] = rows.checked
    lub = CheckReport("lubell-refinement")
    for N in range(1, lubell_n + 1):
        for j in range(1, lubell_j + 1):
            res = lubell_sums(N, j)
            lub.record(res.s == res.t, N=N, j=j, s=res.s, t=res.t)
            for k, (s, t) in enumerate(res.per_k, start=1):
                lub.record(s == t, N=N, j=j, k=k, s=s, t=t)
    return [rows, lub]


# ---------------------------------------------------------------------------
# modules


def module_suite(trunc: int = 4, momentum="1/2") -> list[CheckReport]:
    """Free-boson algebra and Fock modules: dimensions, brackets, Virasoro, L(0) structure."""
    from .heisenberg import partitions

    V = build_voa(max(trunc, 2))
    dims = CheckReport("weight-space-dimensions")
    for h in range(trunc + 1):
        dims.record(len(V.weight_space(h)) == len(partitions(h)), weight=h,
                    dim=len(V.weight_space(h)), expected=len(partitions(h)))
    heis = CheckReport("heisenberg-bracket")
    for m in range(-trunc, trunc + 1):
        for n in range(-trunc, trunc + 1):
            A, B = V.mode("a", m), V.mode("a", n)
            for c in range(V.dim):
                h = V.weight(c)
                if not (V.in_window(h - n) and V.in_window(h - m) and V.in_window(h - m - n)):
                    continue
                e = V.unit(c)
                lhs = A.apply(B.apply(e)) - B.apply(A.apply(e))
                rhs = e * (m if m + n == 0 else 0)
                heis.record(lhs == rhs, modes=f"[a({m}),a({n})]", column=c)
    vir = CheckReport("virasoro")
    l1 = V.L(1).apply(V.conformal_vector)
    vir.record(not l1, identity="L(1) omega = 0")
    for W in (V, build_fock(V, momentum, 1, trunc), build_fock(V, momentum, 2, trunc)):
        bad = virasoro_failures(W)
        vir.record(not bad, module=W.name, witness=bad[:1])
    l0 = CheckReport("l0-jordan-structure")
    for m in (1, 2):
        W = build_fock(V, momentum, m, trunc)
        try:
            validate_module(W)
            _, N = split_l0(W)
        except LogTensorError as exc:
            l0.record(False, module=W.name, error=str(exc))
            continue
        l0.record(N.is_zero() == (m == 1), module=W.name, nilpotent_zero=N.is_zero())
        g = strong_grading_check(W)
        l0.record(g.passed, module=W.name, check="strong grading")
    return [dims, heis, vir, l0]


# ---------------------------------------------------------------------------
# intertwiners


def _idx(W, partition, slot=0):
    return W.fock.index[(tuple(partition), slot)]


def _eigen_dual(W3):
    # the dual of the top slot is an eigenvector for the transposed nilpotent part
    return W3.unit(_idx(W3, (), W3.fock.slots - 1))


def intertwiner_config_suite(V, lam, mu, m1, m2, trunc, count=20, seed=0) -> list[CheckReport]:
    Y = build_intertwiner(V, lam, mu, m1, m2, trunc)
    label = f"({lam},{mu};{m1},{m2})"
    reports = validate_axioms(Y, count=count, seed=seed) + [structure_check(Y)]
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    top1, top2 = W1.unit(_idx(W1, (), m1 - 1)), W2.unit(_idx(W2, (), m2 - 1))
    deg = degree_bounds_check(Y, top1, top2, _eigen_dual(W3))
    if m1 == m2 == 1:
        deg[0].record(Y.max_log_degree() == 0, config=label, max_log_degree=Y.max_log_degree())
    reports += deg
    i1, i2 = _idx(W1, (1,), m1 - 1), _idx(W2, (), m2 - 1)
    reports += l0_transport_check(Y, W1.weight(i1), W2.weight(i2), Fraction(1, 2), 1, i1, i2, y_order=3)
    for r in reports:
        r.notes.setdefault("config", label)
    return reports


def intertwiner_suite(configs=None, trunc: int = 6, count: int = 20, seed: int = 0) -> list[CheckReport]:
    """Jacobi identity, derivative property, brackets, log-degree bounds and L(0) transport."""
    V = build_voa(trunc)
    out = []
    for lam, mu, m1, m2 in configs or DEFAULT_CONFIGS:
        out += _guard("intertwiner-build", intertwiner_config_suite, V, lam, mu, m1, m2, trunc, count, seed)
    return out


def transform_suite(configs=None, trunc: int = 4) -> list[CheckReport]:
    """Omega and A round trips, the X_t endpoints and coefficient recovery."""
    V = build_voa(trunc)
    omega, atr = CheckReport("omega-round-trip"), CheckReport("a-round-trip")
    xt, rec = CheckReport("x-transform-endpoints"), CheckReport("coefficient-recovery")
    for lam, mu, m1, m2 in configs or DEFAULT_CONFIGS:
        Y = build_intertwiner(V, lam, mu, m1, m2, trunc)
        omega.merge(coefficients_close(Y, omega_transform(omega_transform(Y, 0), -1)))
        atr.merge(coefficients_close(Y, a_transform(a_transform(Y, 0), -1)))
        xt.merge(coefficients_close(Y, xt_transform(Y, 0)))
        killed = xt_transform(Y, Y.kmax + 1)
        xt.record(all(not t for t in killed.materialize().values()), identity="X_{kmax+1} = 0")
        for (a, b), table in Y.materialize().items():
            for (n, k), vec in table.items():
                got = recover_coefficients(Y, Y.W1.unit(a), Y.W2.unit(b), n, k)
                rec.record(got == vec, pair=(a, b), n=n, k=k)
    return [omega, atr, xt, rec]


# ---------------------------------------------------------------------------
# P(z)-intertwining maps and the dual action


def _low_duals(W, level=1):
    return [W.unit(i) for i in range(W.dim) if W.weight(i) <= W.wmin + level]


def compatible_functionals(V, z=2, p=0, trunc=4, count=10):
    """``count`` functionals ``w' o I`` with ``w'`` of level at most one, spread over
    a plain and a Jordan configuration, each with its branch."""
    out = []
    for lam, mu, m1, m2 in ((1, 1, 1, 1), ("1/2", "1/3", 2, 1), (1, 1, 2, 2)):
        b = pd.BranchChoice(z, p)
        I = pd.intertwiner_to_map(build_intertwiner(V, lam, mu, m1, m2, trunc), b)
        for w in _low_duals(I.W3):
            out.append((pd.functional_from_map(I, w), b))
    return out[:count]


def correspondence_suite(z=2, p_values=(0, 1), trunc: int = 4, tol: float = 1e-10) -> list[CheckReport]:
    """``Y -> I -> Y`` and ``I -> Y -> I`` on every default configuration."""
    V = build_voa(trunc)
    corr = CheckReport("map-intertwiner-correspondence")
    for lam, mu, m1, m2 in DEFAULT_CONFIGS:
        Y = build_intertwiner(V, lam, mu, m1, m2, trunc)
        for p in p_values:
            b = pd.BranchChoice(z, p)
            I = pd.intertwiner_to_map(Y, b)
            back = pd.map_to_intertwiner(I, b)
            corr.merge(coefficients_close(Y, back, tol))
            corr.merge(pd.maps_close(I, pd.intertwiner_to_map(back, b), tol))
    return [corr]


def transpose_suite(z=2, p=0, trunc: int = 4, seed: int = 0, tol: float = 1e-10,
                    configs=None) -> list[CheckReport]:
    """P(z)-Jacobi before and Q(z)-Jacobi after transposing, and the involution."""
    V = build_voa(trunc)
    jac, qjac = CheckReport("P(z)-jacobi"), CheckReport("Q(z)-jacobi")
    inv = CheckReport("transpose-involution")
    for lam, mu, m1, m2 in configs or DEFAULT_CONFIGS:
        I = pd.intertwiner_to_map(build_intertwiner(V, lam, mu, m1, m2, trunc), pd.BranchChoice(z, p))
        jac.merge(pd.check_pz_jacobi(I, count=3, seed=seed, depth=2, tol=tol))
        T = pd.pq_transpose(I)
        qjac.merge(pd.check_pz_jacobi(T, count=3, seed=seed, depth=2, tol=tol))
        back = pd.pq_transpose(T)
        inv.merge(pd.maps_close(I, back, tol))
        inv.record(back.kind == "P" and back.W1 is I.W1 and back.W2 is I.W2 and back.W3 is I.W3,
                   config=f"({lam},{mu};{m1},{m2})", identity="modules restored")
    return [jac, qjac, inv]


def dual_virasoro_suite(z=2, trunc: int = 4, seed: int = 0) -> list[CheckReport]:
    """The dual Virasoro bracket on five random and five ``w' o I`` functionals (exact)."""
    V = build_voa(trunc)
    b = pd.BranchChoice(z)
    plain = pd.intertwiner_to_map(build_intertwiner(V, 1, 1, 1, 1, trunc), b)
    vir = CheckReport("dual-virasoro")
    for s in range(5):
        pd.virasoro_check(pd.random_functional(plain.W1, plain.W2, seed=seed + s), b, report=vir)
    for w in _low_duals(plain.W3, 2)[:5]:
        pd.virasoro_check(pd.functional_from_map(plain, w), b, report=vir)
    vir.notes["layer"] = "exact" if plain.layer == "exact" else "complex"
    return [vir]


def compatibility_suite(z=2, p=0, trunc: int = 4, seed: int = 0, tol: float = 1e-10,
                        closures: bool = True) -> list[CheckReport]:
    """Compatibility of ``w' o I``, the Jacobi identity on the generated module and
    refusal of random functionals."""
    V = build_voa(trunc)
    compat, refused = CheckReport("P(z)-compatibility"), CheckReport("incompatible-refused")
    closure: dict = {}
    for lam_, bb in compatible_functionals(V, z, p, trunc):
        compat.merge(pd.check_compatibility(lam_, bb, tol=tol))
        if closures:
            module = pd.generate_local_module(lam_, bb, tol=tol)
            for r in module.reports[1:]:
                closure.setdefault(r.tag, CheckReport(r.tag)).merge(r)
    b = pd.BranchChoice(z, p)
    plain = pd.intertwiner_to_map(build_intertwiner(V, 1, 1, 1, 1, trunc), b)
    for s in range(5):
        r = pd.check_compatibility(pd.random_functional(plain.W1, plain.W2, seed=100 + seed + s), b, tol=tol)
        refused.record(not r.passed and bool(r.failures), seed=100 + seed + s)
    return [compat, refused] + list(closure.values())


def pz_suite(z=2, p_values=(0, 1), trunc: int = 4, seed: int = 0, tol: float = 1e-10) -> list[CheckReport]:
    """Map correspondence, P(z)/Q(z) Jacobi, transpose, dual Virasoro and compatibility."""
    return (correspondence_suite(z, p_values, trunc, tol) + transpose_suite(z, p_values[0], trunc, seed, tol)
            + dual_virasoro_suite(z, trunc, seed) + compatibility_suite(z, p_values[0], trunc, seed, tol))


# ---------------------------------------------------------------------------
# products and iterates


def heisenberg_chain(z1, z2, trunc: int = 4, mid_trunc: int = 6, kind: str = "product",
                     intermediate_max=None):
    """Composite map on momenta ``1, 1, 1`` through the momentum-2 module."""
    V = build_voa(max(8, mid_trunc))
    W1, W2, W3 = (build_fock(V, 1, 1, trunc) for _ in range(3))
    M = build_fock(V, 2, 1, mid_trunc)
    W4 = build_fock(V, 3, 1, trunc)
    z1, z2 = rat(z1), rat(z2)
    if kind == "product":
        outer = pd.intertwiner_to_map(fock_intertwiner(W1, M, W4), pd.BranchChoice(z1))
        inner = pd.intertwiner_to_map(fock_intertwiner(W2, W3, M), pd.BranchChoice(z2))
    else:
        outer = pd.intertwiner_to_map(fock_intertwiner(M, W3, W4), pd.BranchChoice(z2))
        inner = pd.intertwiner_to_map(fock_intertwiner(W1, W2, M), pd.BranchChoice(z1 - z2))
    return pd.compose_maps(kind, outer, inner, intermediate_max)


def compose_suite(z1=4, z2=1, intermediate_max=8, tol: float = 1e-8, seed: int = 0,
                  count: int = 4) -> list[CheckReport]:
    """Composite Jacobi identity on the product, the vacuum insertion and a mutation."""
    P = heisenberg_chain(z1, z2, intermediate_max=intermediate_max)
    main = pd.check_pz1z2_jacobi(P, count=count, seed=seed, tol=tol)
    vac = pd.pz1z2_jacobi_check(P, P.W1.algebra.vacuum, 0, 0, 0, tol=tol,
                                report=CheckReport("vacuum-insertion"))
    mutation = CheckReport("mutation-detected")
    comps = P.components(0, 0, 0)
    h = min(comps)
    bad = P.perturbed(0, 0, 0, h, QVec({next(iter(comps[h])): Fraction(1)}))
    caught = pd.check_pz1z2_jacobi(bad, quadruples=[(1, 0, 0, 0)], tol=tol)
    mutation.record(not caught.passed, weight=h)
    return [main, vac, mutation]


SUITES = {
    "series": lambda o: series_suite(o.get("order", 8), o.get("trials", 50), o.get("seed", 0))
    + ode_suite(o.get("cases", 20), o.get("seed", 0)),
    "comb": lambda o: comb_suite(o.get("kmax", 12)),
    "module": lambda o: module_suite(o.get("trunc", 4)),
    "intertwiner": lambda o: intertwiner_suite(o.get("configs"), o.get("trunc", 6), seed=o.get("seed", 0))
    + transform_suite(o.get("configs"), min(o.get("trunc", 6), 4)),
    "pz": lambda o: pz_suite(o.get("z", 2), tuple(o.get("p", (0, 1))), o.get("trunc", 4),
                             o.get("seed", 0), o.get("tol", 1e-10)),
    "compose": lambda o: compose_suite(o.get("z1", 4), o.get("z2", 1), o.get("intermediate_max", 8),
                                       o.get("tol", 1e-8), o.get("seed", 0)),
}

"""Logarithmic intertwining operators stored by their coefficients.

``Y(w1, x) w2 = sum_{n,k} (w1)_{n;k} w2  x^{-n-1} (log x)^k``.  An
:class:`LogIntertwiner` knows, for each pair of basis vectors, the finite
table ``{(n, k): vector in W3}`` of coefficients whose weight lies in the
target window.  Tables are produced lazily by a coefficient function and
memoized, so transforms compose cheaply.

The checks in this module compare coefficients of the defining identities
one monomial at a time.  Each comparison is restricted to monomials whose
every contribution is computed from data inside the module windows; other
monomials are counted as undetermined, never assumed to vanish.
"""
from __future__ import annotations

import itertools
import json
import math
import random
from fractions import Fraction
from typing import Callable, Iterable

from .errors import LogDegreeOverflow, SingularRecovery, WindowTooSmall
from .formal_series import LogSeries, mono, mono_part, subst_scale, subst_shift, euler
from .graded_modules import GradedModule, contragredient, nilpotent_part, nilpotency_index, power_l0
from .linalg import SparseMatrix
from .reports import CheckReport
from .scalars import COMPLEX, EXACT, QVec, binom, close, exp_i_pi, lincomb, rat, rat_str

DEFAULT_KMAX = 8

Table = dict  # {(n: Fraction, k: int): QVec}


def _floor(q) -> int:
    return math.floor(q)


def _add_into(acc: dict, key, vec: QVec):
    if not vec:
        return
    if key in acc:
        s = acc[key] + vec
        if s:
            acc[key] = s
        else:
            del acc[key]
    else:
        acc[key] = vec


class LogIntertwiner:
    """Coefficient family of a logarithmic intertwining operator of type (W3; W1, W2)."""

    def __init__(self, W1: GradedModule, W2: GradedModule, W3: GradedModule,
                 coeff_fn: Callable[[int, int], Table], kmax: int = DEFAULT_KMAX,
                 name: str = "Y", layer: str = EXACT):
        self.W1, self.W2, self.W3 = W1, W2, W3
        self._fn = coeff_fn
        self.kmax = kmax
        self.name = name
        self.layer = layer
        self._cache: dict = {}
        self._pair_cache: dict = {}

    # -- access ---------------------------------------------------------------
    def coeffs(self, i1: int, i2: int) -> Table:
        key = (i1, i2)
        hit = self._cache.get(key)
        if hit is None:
            raw = self._fn(i1, i2)
            hit = {}
            for (n, k), vec in raw.items():
                if not vec:
                    continue
                if k > self.kmax:
                    raise LogDegreeOverflow(f"{self.name}: log degree {k} exceeds kmax {self.kmax}")
                hit[(rat(n), int(k))] = vec
            self._cache[key] = hit
        return hit

    def pair(self, w1: QVec, w2: QVec) -> Table:
        """Bilinear extension of :meth:`coeffs` to arbitrary vectors."""
        key = (w1, w2)
        hit = self._pair_cache.get(key)
        if hit is not None:
            return hit
        acc: dict = {}
        for a, ca in w1.items():
            for b, cb in w2.items():
                s = ca * cb
                for nk, vec in self.coeffs(a, b).items():
                    acc.setdefault(nk, []).append((s, vec))
        out = {nk: lincomb(terms) for nk, terms in acc.items()}
        out = {nk: v for nk, v in out.items() if v}
        self._pair_cache[key] = out
        return out

    def coefficient(self, w1: QVec, w2: QVec, n, k: int) -> QVec:
        return self.pair(w1, w2).get((rat(n), k), QVec())

    def series(self, w1: QVec, w2: QVec, var: str = "x") -> LogSeries:
        """``Y(w1, x) w2`` as a series with vector coefficients."""
        return LogSeries({mono(**{var: (-n - 1, k)}): v for (n, k), v in self.pair(w1, w2).items()},
                         variables=(var,))

    def output_weight(self, i1: int, i2: int, n) -> Fraction:
        return self.W1.weight(i1) + self.W2.weight(i2) - rat(n) - 1

    def n_range(self, wt1, wt2) -> tuple:
        """Smallest and largest ``n`` whose coefficient weight lies in the target window."""
        return wt1 + wt2 - 1 - self.W3.wmax, wt1 + wt2 - 1 - self.W3.wmin

    def materialize(self) -> dict:
        return {(a, b): self.coeffs(a, b) for a in range(self.W1.dim) for b in range(self.W2.dim)}

    def max_log_degree(self) -> int:
        return max((k for t in self.materialize().values() for (_, k) in t), default=0)

    def to_complex(self) -> "LogIntertwiner":
        if self.layer == COMPLEX:
            return self
        src = self
        return LogIntertwiner(self.W1, self.W2, self.W3,
                              lambda a, b: {nk: v.to_complex() for nk, v in src.coeffs(a, b).items()},
                              self.kmax, self.name, COMPLEX)

    def perturbed(self, i1: int, i2: int, n, k: int, delta: QVec) -> "LogIntertwiner":
        """Copy with one coefficient changed (for mutation tests)."""
        src, n = self, rat(n)

        def fn(a, b):
            t = dict(src.coeffs(a, b))
            if (a, b) == (i1, i2):
                _add_into(t, (n, k), delta)
            return t

        return LogIntertwiner(self.W1, self.W2, self.W3, fn, self.kmax, self.name + "~", self.layer)

    @classmethod
    def from_table(cls, W1, W2, W3, table: dict, kmax: int = DEFAULT_KMAX, name: str = "Y",
                   layer: str = EXACT) -> "LogIntertwiner":
        return cls(W1, W2, W3, lambda a, b: table.get((a, b), {}), kmax, name, layer)

    @classmethod
    def zero(cls, W1, W2, W3) -> "LogIntertwiner":
        return cls(W1, W2, W3, lambda a, b: {}, 0, "0")


def module_action(W: GradedModule) -> LogIntertwiner:
    """The vertex operator map ``Y_W`` viewed as an intertwiner of type (W; V, W)."""
    V = W.algebra

    def fn(b, i2):
        out = {}
        lo, hi = _floor(V.weight(b) + W.weight(i2) - 1 - W.wmax), _floor(V.weight(b) + W.weight(i2) - 1 - W.wmin)
        for n in range(lo, hi + 1):
            vec = W.vertex_mode(b, n).column(i2)
            if vec:
                out[(Fraction(n), 0)] = vec
        return out

    return LogIntertwiner(V, W, W, fn, 0, f"Y_{W.name}")


# ---------------------------------------------------------------------------
# structural checks


def structure_check(Y: LogIntertwiner) -> CheckReport:
    """Weight rule, group-label additivity and log-degree bound on every coefficient."""
    rep = CheckReport("weight-rule")
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    for (a, b), table in Y.materialize().items():
        for (n, k), vec in table.items():
            h = Y.output_weight(a, b, n)
            grp = tuple(x + y for x, y in zip(W1.group(a), W2.group(b))) if W1.group(a) else W2.group(b)
            ok = all(W3.weight(i) == h and W3.group(i) == grp for i in vec) and k <= Y.kmax
            rep.record(ok, pair=(a, b), n=n, k=k)
    return rep


# ---------------------------------------------------------------------------
# Jacobi identity


class _JacobiContext:
    """Caches shared by the Jacobi comparison of one triple ``(v, w1, w2)``."""

    def __init__(self, Y: LogIntertwiner, v: QVec, i1: int, i2: int):
        self.Y = Y
        self.v = v
        self.i1, self.i2 = i1, i2
        self.e1, self.e2 = Y.W1.unit(i1), Y.W2.unit(i2)
        self.by_n: dict = {}
        for (n, k), vec in Y.coeffs(i1, i2).items():
            self.by_n.setdefault(n, {})[k] = vec
        self._vm: dict = {}
        self._t2: dict = {}
        self._t3: dict = {}

    def vmode(self, W: GradedModule, p: int) -> SparseMatrix:
        key = (id(W), p)
        m = self._vm.get(key)
        if m is None:
            m = W.vertex_mode(self.v, p)
            self._vm[key] = m
        return m

    def t2_table(self, p: int) -> Table:
        if p not in self._t2:
            u = self.vmode(self.Y.W2, p).apply(self.e2)
            self._t2[p] = self.Y.pair(self.e1, u) if u else {}
        return self._t2[p]

    def t3_table(self, p: int) -> Table:
        if p not in self._t3:
            u = self.vmode(self.Y.W1, p).apply(self.e1)
            self._t3[p] = self.Y.pair(u, self.e2) if u else {}
        return self._t3[p]


def _residues(W: GradedModule, shift) -> set:
    return {(h - shift) - math.floor(h - shift) for h in W.weights()}


def jacobi_region(Y: LogIntertwiner, wtv, wt1, wt2) -> list[tuple]:
    """All ``(P, Q, R)`` for which the coefficient of ``x0^P x1^Q x2^R`` is fully determined.

    Requirements: ``v`` acting on ``w1``/``w2`` stays in the source windows
    (``P <= A``, ``Q <= B``), the unshifted coefficients lie in the target
    window (``R <= C``), and the output weight ``wt1+wt2+wtv+P+Q+R+1`` lies in
    the target window.
    """
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    A = _floor(W1.wmax - wt1 - wtv)
    B = _floor(W2.wmax - wt2 - wtv)
    C = W3.wmax - wt1 - wt2
    out = []
    for res in sorted(_residues(W3, wt1 + wt2)):
        R_top = math.floor(C - res) + res
        R_low = W3.wmin - (wt1 + wt2 + wtv + A + B + 1)
        R = R_top
        while R >= R_low:
            X = wt1 + wt2 + wtv + R + 1
            lo_sum, hi_sum = math.ceil(W3.wmin - X), math.floor(W3.wmax - X)
            for Q in range(lo_sum - A, B + 1):
                for P in range(max(lo_sum - Q, -10**9), min(A, hi_sum - Q) + 1):
                    out.append((P, Q, R))
            R -= 1
    return out


def _jacobi_terms(ctx: _JacobiContext, P: int, Q: int, R) -> tuple[dict, dict, dict]:
    Y = ctx.Y
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    wt1, wt2 = W1.weight(ctx.i1), W2.weight(ctx.i2)
    wtv = Y.W1.algebra.weight_of(ctx.v)
    j = -P - 1
    T1: dict = {}
    imax = _floor(wt1 + wt2 + R - W3.wmin)
    if j >= 0:
        imax = min(imax, j)
    for i in range(0, imax + 1):
        cf = binom(j, i) * (-1) ** i
        if cf == 0:
            continue
        ks = ctx.by_n.get(i - R - 1)
        if not ks:
            continue
        M = ctx.vmode(W3, j - i - Q - 1)
        for k, vec in ks.items():
            _add_into(T1, k, M.apply(vec) * cf)
    T2: dict = {}
    imax = _floor(wt2 + wtv + Q - W2.wmin)
    if j >= 0:
        imax = min(imax, j)
    sgn = -1 if j % 2 else 1
    for i in range(0, imax + 1):
        cf = binom(j, i) * (-1) ** i * sgn
        if cf == 0:
            continue
        tab = ctx.t2_table(i - Q - 1)
        n = j - i - R - 1
        for (m, k), vec in tab.items():
            if m == n:
                _add_into(T2, k, vec * cf)
    T3: dict = {}
    imax = _floor(wt1 + wtv + P - W1.wmin)
    for i in range(0, imax + 1):
        cf = binom(Q + i, i) * (-1) ** i
        if cf == 0:
            continue
        tab = ctx.t3_table(i - P - 1)
        n = -Q - i - R - 2
        for (m, k), vec in tab.items():
            if m == n:
                _add_into(T3, k, vec * cf)
    return T1, T2, T3


def jacobi_check(Y: LogIntertwiner, v, i1: int, i2: int, tol: float = 1e-10,
                 report: CheckReport | None = None) -> CheckReport:
    """Compare ``T1 - T2 = T3`` coefficient-wise for one triple.

    ``T1`` comes from ``x0^{-1} delta((x1-x2)/x0) Y(v,x1) Y(w1,x2) w2``, ``T2``
    from the second delta term, ``T3`` from the iterate side.
    """
    rep = report or CheckReport("jacobi")
    V = Y.W1.algebra
    v = V.unit(v) if isinstance(v, int) else v
    wtv = V.weight_of(v)
    if wtv is None:
        return rep
    wt1, wt2 = Y.W1.weight(i1), Y.W2.weight(i2)
    region = jacobi_region(Y, wtv, wt1, wt2)
    ctx = _JacobiContext(Y, v, i1, i2)
    for P, Q, R in region:
        T1, T2, T3 = _jacobi_terms(ctx, P, Q, R)
        for k in set(T1) | set(T2) | set(T3):
            lhs = T1.get(k, QVec()) - T2.get(k, QVec())
            rhs = T3.get(k, QVec())
            rep.record(close(lhs, rhs, tol), monomial=f"x0^{P} x1^{Q} x2^({rat_str(R)}) log(x2)^{k}",
                       triple=(_vlabel(v), i1, i2), lhs=lhs, rhs=rhs)
    rep.notes["region"] = rep.notes.get("region", 0) + len(region)
    return rep


def _vlabel(v: QVec) -> str:
    return ",".join(f"{k}:{rat_str(c) if isinstance(c, Fraction) else c}" for k, c in sorted(v.items()))


# ---------------------------------------------------------------------------
# L(-1)-derivative and L(j) brackets


def derivative_check(Y: LogIntertwiner, i1: int, i2: int, tol: float = 1e-10,
                     report: CheckReport | None = None) -> CheckReport:
    """``Y(L(-1) w1, x) = d/dx Y(w1, x)``, i.e.
    ``(L(-1)w1)_{n;k} = -n c_{n-1,k} + (k+1) c_{n-1,k+1}``."""
    rep = report or CheckReport("l(-1)-derivative")
    W1 = Y.W1
    wt1, wt2 = W1.weight(i1), Y.W2.weight(i2)
    if wt1 + 1 > W1.wmax:
        return rep
    lw = W1.L(-1).apply(W1.unit(i1))
    lhs_tab = Y.pair(lw, Y.W2.unit(i2))
    base = Y.coeffs(i1, i2)
    lo, hi = Y.n_range(wt1 + 1, wt2)
    keys = {nk for nk in lhs_tab} | {(n + 1, k) for (n, k) in base} | {(n + 1, k - 1) for (n, k) in base if k}
    for n, k in sorted(keys):
        if not lo <= n <= hi:
            continue
        rhs = base.get((n - 1, k), QVec()) * (-n) + base.get((n - 1, k + 1), QVec()) * (k + 1)
        lhs = lhs_tab.get((n, k), QVec())
        rep.record(close(lhs, rhs, tol), pair=(i1, i2), n=n, k=k, lhs=lhs, rhs=rhs)
    return rep


def bracket_check(Y: LogIntertwiner, j: int, i1: int, i2: int, tol: float = 1e-10,
                  report: CheckReport | None = None) -> CheckReport:
    """``[L(j), Y(w1,x)] = sum_{i<=j+1} C(j+1,i) x^i Y(L(j-i) w1, x)`` for ``j`` in -1, 0, 1."""
    rep = report or CheckReport(f"bracket L({j})")
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    wt1, wt2 = W1.weight(i1), W2.weight(i2)
    if wt1 + 1 > W1.wmax or wt2 - j > W2.wmax:
        return rep
    e1, e2 = W1.unit(i1), W2.unit(i2)
    base = Y.coeffs(i1, i2)
    shifted = Y.pair(e1, W2.L(j).apply(e2))
    rhs_tabs = [(binom(j + 1, i), i, Y.pair(W1.L(j - i).apply(e1), e2)) for i in range(0, j + 2)]
    Lj = W3.L(j)
    keys = set(base) | set(shifted) | {(n - i, k) for _, i, t in rhs_tabs for (n, k) in t}
    for n, k in sorted(keys):
        h = wt1 + wt2 - n - 1
        if h > W3.wmax or h - j > W3.wmax or h - j < W3.wmin:
            continue
        lhs = Lj.apply(base.get((n, k), QVec())) - shifted.get((n, k), QVec())
        rhs = lincomb((c, t.get((n + i, k), QVec())) for c, i, t in rhs_tabs)
        rep.record(close(lhs, rhs, tol), pair=(i1, i2), n=n, k=k, lhs=lhs, rhs=rhs)
    return rep


def random_triples(Y: LogIntertwiner, count: int = 20, seed: int = 0, max_v_weight: int = 2) -> list[tuple]:
    V = Y.W1.algebra
    rng = random.Random(seed)
    vs = [b for b in range(V.dim) if V.weight(b) <= max_v_weight]
    return [(rng.choice(vs), rng.randrange(Y.W1.dim), rng.randrange(Y.W2.dim)) for _ in range(count)]


def validate_axioms(Y: LogIntertwiner, triples: Iterable[tuple] | None = None, count: int = 20,
                    seed: int = 0, tol: float = 1e-10) -> list[CheckReport]:
    """Jacobi identity, L(-1)-derivative and L(j) brackets on a set of test triples.

    Raises :class:`WindowTooSmall` when no Jacobi coefficient of any triple is
    determined by the windows.
    """
    triples = list(triples) if triples is not None else random_triples(Y, count, seed)
    jac = CheckReport("jacobi")
    der = CheckReport("l(-1)-derivative")
    brs = {j: CheckReport(f"bracket L({j})") for j in (-1, 0, 1)}
    for v, i1, i2 in triples:
        jacobi_check(Y, v, i1, i2, tol, jac)
        derivative_check(Y, i1, i2, tol, der)
        for j in (-1, 0, 1):
            bracket_check(Y, j, i1, i2, tol, brs[j])
    if triples and jac.notes.get("region", 0) == 0:
        raise WindowTooSmall("no Jacobi coefficient is determined inside the module windows")
    return [jac, der, brs[-1], brs[0], brs[1]]


# ---------------------------------------------------------------------------
# L(0) transport (generalized weight action on coefficients)


def _matpow_apply(M: SparseMatrix, vec: QVec, p: int) -> QVec:
    for _ in range(p):
        vec = M.apply(vec)
    return vec


def _shifted_l0(W: GradedModule, c) -> SparseMatrix:
    return W.L(0) - SparseMatrix.identity(W.dim) * rat(c)


def l0_transport_check(Y: LogIntertwiner, a, b, c, t: int, i1: int, i2: int,
                       y_order: int = 3) -> list[CheckReport]:
    """The three transport identities for ``L(0)``: the series form, the
    coefficient form and its generating function in ``y``."""
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    a, b, c = rat(a), rat(b), rat(c)
    A, B, C = _shifted_l0(W1, a), _shifted_l0(W2, b), _shifted_l0(W3, c)
    e1, e2 = W1.unit(i1), W2.unit(i2)
    r1 = CheckReport("l0-transport series")
    lhs = Y.series(e1, e2)
    for _ in range(t):
        lhs = lhs.map_coefficients(C.apply)
    rhs = LogSeries.zero(variables=("x",))
    for i, j in itertools.product(range(t + 1), repeat=2):
        l = t - i - j
        if l < 0:
            continue
        f = Y.series(_matpow_apply(A, e1, i), _matpow_apply(B, e2, j))
        for _ in range(l):
            f = euler(f, "x") + f.scale(-c + a + b)
        rhs = rhs + f.scale(Fraction(math.factorial(t), math.factorial(i) * math.factorial(j) * math.factorial(l)))
    diff = lhs - rhs
    r1.record(diff == 0, pair=(i1, i2), t=t, witness=str(diff.diff_witness(LogSeries.zero())))

    r2 = CheckReport("l0-transport coefficients")
    wt1, wt2 = W1.weight(i1), W2.weight(i2)
    pows1 = [_matpow_apply(A, e1, i) * Fraction(1, math.factorial(i)) for i in range(t + 1)]
    pows2 = [_matpow_apply(B, e2, j) * Fraction(1, math.factorial(j)) for j in range(t + 1)]
    tabs = {(i, j): Y.pair(pows1[i], pows2[j]) for i in range(t + 1) for j in range(t + 1) if i + j <= t}
    for (n, k), vec in Y.coeffs(i1, i2).items():
        M = _shifted_l0(W3, a + b - n - 1)
        lhs_v = _matpow_apply(M, vec, t)
        terms = []
        for (i, j), tab in tabs.items():
            l = t - i - j
            terms.append((math.factorial(t) * binom(k + l, l), tab.get((n, k + l), QVec())))
        rhs_v = lincomb(terms)
        r2.record(lhs_v == rhs_v, pair=(i1, i2), n=n, k=k, lhs=lhs_v, rhs=rhs_v)
    for (n, k) in set().union(*[set(tb) for tb in tabs.values()]) - set(Y.coeffs(i1, i2)):
        # coefficients of w1 (x) w2 vanish here, so the right side must too
        terms = [(math.factorial(t) * binom(k2 + (t - i - j), t - i - j), tab.get((n, k2 + t - i - j), QVec()))
                 for (i, j), tab in tabs.items() for k2 in [k]]
        rep_v = lincomb(terms)
        M = _shifted_l0(W3, a + b - n - 1)
        r2.record(rep_v == _matpow_apply(M, QVec(), t), pair=(i1, i2), n=n, k=k)

    r3 = CheckReport("l0-transport generating")
    for (n, k), vec in Y.coeffs(i1, i2).items():
        M = _shifted_l0(W3, a + b - n - 1)
        for s in range(y_order + 1):
            lhs_v = _matpow_apply(M, vec, s) * Fraction(1, math.factorial(s))
            terms = []
            for l in range(s + 1):
                for i in range(s - l + 1):
                    j = s - l - i
                    u1 = _matpow_apply(A, e1, i) * Fraction(1, math.factorial(i))
                    u2 = _matpow_apply(B, e2, j) * Fraction(1, math.factorial(j))
                    terms.append((binom(k + l, l), Y.pair(u1, u2).get((n, k + l), QVec())))
            rhs_v = lincomb(terms)
            r3.record(lhs_v == rhs_v, pair=(i1, i2), n=n, k=k, y_order=s, lhs=lhs_v, rhs=rhs_v)
    return [r1, r2, r3]


# ---------------------------------------------------------------------------
# log-degree bounds


def degree_bounds_check(Y: LogIntertwiner, w1: QVec, w2: QVec, w3_dual: QVec) -> list[CheckReport]:
    """Bound on log powers of matrix coefficients and vanishing of high log coefficients.

    ``w3_dual`` is a vector of the dual basis of W3.  Its Jordan index is
    taken with respect to the transpose of the nilpotent part of ``L(0)``.
    """
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    N1, N2, N3 = nilpotent_part(W1), nilpotent_part(W2), nilpotent_part(W3)
    n1, n2, n3 = W1.weight_of(w1), W2.weight_of(w2), W3.weight_of(w3_dual)
    k1, k2 = nilpotency_index(N1, w1), nilpotency_index(N2, w2)
    k3 = nilpotency_index(N3.transpose(), w3_dual)
    bound = k1 + k2 + k3 - 3
    ra = CheckReport("log-degree bound")
    ra.notes.update({"k1": k1, "k2": k2, "k3": k3, "bound": bound})
    seen = 0
    for (n, k), vec in Y.pair(w1, w2).items():
        val = vec.dot(w3_dual)
        if val == 0:
            continue
        seen = max(seen, k)
        ok = (-n - 1 == n3 - n1 - n2) and k <= bound
        ra.record(ok, n=n, k=k, value=val)
    ra.notes["max_log_degree"] = seen

    rc = CheckReport("log-degree threshold")
    pow1 = [_matpow_apply(N1, w1, i) for i in range(k1)]
    pow2 = [_matpow_apply(N2, w2, j) for j in range(k2)]
    tabs = {(i, j): Y.pair(pow1[i], pow2[j]) for i in range(k1) for j in range(k2)}
    base = Y.pair(w1, w2)
    ns = {n for tab in tabs.values() for (n, _) in tab} | {n for (n, _) in base}
    top = max((k for (_, k) in base), default=0)
    for n in sorted(ns):
        for k in range(0, top + 1):
            m = 0
            for tab in tabs.values():
                m = max(m, nilpotency_index(N3, tab.get((n, k), QVec())))
            t0 = m + k1 + k2 - 2
            for t in range(t0, max(top - k + 1, t0 + 1)):
                vec = base.get((n, k + t), QVec())
                rc.record(not vec, n=n, k=k, t=t)
    return [ra, rc]


# ---------------------------------------------------------------------------
# transforms


def xt_transform(Y: LogIntertwiner, t: int, coset=None) -> LogIntertwiner:
    """``(w1)^{X_t}_{n;k} = C(k+t, t) (w1)_{n;k+t}``, optionally only for ``n`` in ``coset + Z``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    coset = None if coset is None else rat(coset) - math.floor(rat(coset))

    def fn(a, b):
        out = {}
        for (n, k), vec in Y.coeffs(a, b).items():
            if k < t:
                continue
            if coset is not None and n - math.floor(n) != coset:
                continue
            out[(n, k - t)] = vec * binom(k, t)
        return out

    return LogIntertwiner(Y.W1, Y.W2, Y.W3, fn, max(Y.kmax - t, 0), f"X_{t}({Y.name})", Y.layer)


def _zeta_power(r: int, p: int):
    """``((2r+1) pi i)^p``: exact only for ``p = 0``."""
    if p == 0:
        return Fraction(1)
    return ((2 * r + 1) * math.pi * 1j) ** p


def _exp_zeta(r: int, q):
    """``exp((2r+1) pi i q)`` for rational ``q``."""
    return exp_i_pi(rat(q) * (2 * r + 1))


def _scalar_layer(values) -> str:
    return COMPLEX if any(isinstance(v, complex) for v in values) else EXACT


def omega_transform(Y: LogIntertwiner, r: int) -> LogIntertwiner:
    """``Omega_r(Y)(w2, x) w1 = e^{x L(-1)} Y(w1, e^{(2r+1) pi i} x) w2``, type (W3; W2, W1).

    The substitution sends ``y^{-n-1}`` to ``e^{(-n-1) zeta} x^{-n-1}`` and
    ``(log y)^k`` to ``(zeta + log x)^k`` with ``zeta = (2r+1) pi i``; the
    result is exact only when no ``zeta`` power and no non-real phase appears.
    """
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    L = W3.L(-1)
    layer = EXACT
    for table in Y.materialize().values():
        for (n, k) in table:
            if k > 0 or isinstance(_exp_zeta(r, -n - 1), complex):
                layer = COMPLEX
                break
        if layer == COMPLEX:
            break
    src = Y if layer == EXACT else Y.to_complex()

    def fn(i2, i1):
        base = src.coeffs(i1, i2)
        sub: dict = {}
        for (n, k), vec in base.items():
            ph = _exp_zeta(r, -n - 1)
            for K in range(k + 1):
                cf = binom(k, K) * _zeta_power(r, k - K) * ph
                if layer == COMPLEX:
                    cf = complex(cf)
                _add_into(sub, (n, K), vec * cf)
        out: dict = {}
        lo, hi = Y.n_range(W1.weight(i1), W2.weight(i2))
        for (n, K), vec in sub.items():
            cur = vec
            j = 0
            while cur and n - j >= lo:
                _add_into(out, (n - j, K), cur * Fraction(1, math.factorial(j)))
                j += 1
                cur = L.apply(cur)
        return {nk: v for nk, v in out.items() if lo <= nk[0] <= hi}

    return LogIntertwiner(W2, W1, W3, fn, Y.kmax, f"Omega_{r}({Y.name})", layer)


def _contra(W: GradedModule) -> GradedModule:
    d = getattr(W, "_contragredient", None)
    if d is None:
        dual_of = getattr(W, "dual_of", None)
        d = dual_of if dual_of is not None else contragredient(W)
        W._contragredient = d
    return d


def a_transform(Y: LogIntertwiner, r: int) -> LogIntertwiner:
    """``r``-contragredient operator, of type (W2'; W1, W3').

    ``<A_r(Y)(w1, x) w3', w2> = <w3', Y(e^{x L(1)} e^{zeta L(0)} x^{-2 L(0)} w1, x^{-1}) w2>``
    with ``zeta = (2r+1) pi i`` and ``x^{-1}`` acting as ``x^n (log x)^m -> x^{-n} (-log x)^m``.
    """
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    W2d, W3d = _contra(W2), _contra(W3)
    N1 = nilpotent_part(W1)
    L1 = W1.L(1)
    exact = N1.is_zero() and all(not isinstance(_exp_zeta(r, W1.weight(i)), complex) for i in range(W1.dim))
    layer = EXACT if exact else COMPLEX
    src = Y if exact else Y.to_complex()
    per_w1: dict = {}

    def tables_for(i1: int) -> dict:
        if i1 in per_w1:
            return per_w1[i1]
        h = W1.weight(i1)
        ph = _exp_zeta(r, h)
        e1 = W1.unit(i1)
        # pieces: (x exponent shift m - 2h, log power i, scalar, vector u)
        pieces = []
        nil = [e1]
        while nil[-1]:
            nil.append(N1.apply(nil[-1]))
        nil.pop()
        for s, base in enumerate(nil):
            for i in range(s + 1):
                l = s - i
                sc = Fraction((-2) ** i, math.factorial(i) * math.factorial(l)) * _zeta_power(r, l) * ph
                u, m = base, 0
                while u:
                    cf = sc * Fraction(1, math.factorial(m))
                    pieces.append((m, i, complex(cf) if layer == COMPLEX else cf, u))
                    m += 1
                    u = L1.apply(u)
        out: dict = {}
        for b in range(W2.dim):
            e2 = W2.unit(b)
            for m, i, sc, u in pieces:
                if layer == COMPLEX:
                    u = u.to_complex()
                for (n, k), vec in src.pair(u, e2).items():
                    N = 2 * h - m - n - 2
                    K = i + k
                    cf = sc * (-1) ** k
                    for j3, val in vec.items():
                        slot = out.setdefault(j3, {}).setdefault((N, K), {})
                        slot[b] = slot.get(b, 0) + cf * val
        res = {j3: {nk: QVec(d) for nk, d in tabs.items()} for j3, tabs in out.items()}
        per_w1[i1] = res
        return res

    def fn(i1, j3):
        tabs = tables_for(i1).get(j3, {})
        return {nk: v for nk, v in tabs.items() if v}

    return LogIntertwiner(W1, W3d, W2d, fn, Y.kmax, f"A_{r}({Y.name})", layer)


def coefficients_close(Y: LogIntertwiner, Z: LogIntertwiner, tol: float = 1e-10) -> CheckReport:
    """Compare two coefficient families index by index."""
    rep = CheckReport(f"{Y.name} == {Z.name}")
    for a in range(Y.W1.dim):
        for b in range(Y.W2.dim):
            ty, tz = Y.coeffs(a, b), Z.coeffs(a, b)
            for nk in set(ty) | set(tz):
                va, vb = ty.get(nk, QVec()), tz.get(nk, QVec())
                rep.record(close(va, vb, tol), pair=(a, b), n=nk[0], k=nk[1], left=va, right=vb)
    return rep


# ---------------------------------------------------------------------------
# conjugation formulas


def _op_series(W: GradedModule, M: SparseMatrix, vec: QVec, var: str, order: int, sign: int = 1) -> LogSeries:
    """``e^{sign * var * M} vec`` truncated at ``var^order``."""
    terms, cur = {}, vec
    for s in range(order + 1):
        if not cur:
            break
        terms[mono(**{var: s})] = cur * Fraction(sign ** s, math.factorial(s))
        cur = M.apply(cur)
    return LogSeries(terms, variables=(var,))


def _apply_Y(Y: LogIntertwiner, left: LogSeries, right: LogSeries, var: str = "x") -> LogSeries:
    """``Y(left, x) right`` where both arguments are series in other variables."""
    out = LogSeries.zero(variables=(var,))
    for m1, u in left.items():
        for m2, w in right.items():
            out = out + Y.series(u, w, var).times_monomial(m1).times_monomial(m2)
    return out


def _map_series(M: SparseMatrix, f: LogSeries) -> LogSeries:
    return LogSeries({m: M.apply(c) for m, c in f.items()}, f.policy, f.variables)


def _left_exp(W: GradedModule, M: SparseMatrix, f: LogSeries, var: str, order: int) -> LogSeries:
    """``e^{var * M}`` applied to a series with vector coefficients, truncated in ``var``."""
    out = LogSeries.zero(variables=f.variables)
    cur = f
    for s in range(order + 1):
        out = out + cur.times_monomial(mono(**{var: s}), Fraction(1, math.factorial(s)))
        cur = _map_series(M, cur)
    return out


def _trim(f: LogSeries, keep) -> LogSeries:
    return f.filter(keep)


def conjugation_checks(Y: LogIntertwiner, i1: int, i2: int, order: int = 2) -> list[CheckReport]:
    """The three conjugation formulas for ``L(-1)``, ``y^{L(0)}`` and ``L(1)``."""
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    e1, e2 = W1.unit(i1), W2.unit(i2)
    wt1, wt2 = W1.weight(i1), W2.weight(i2)
    reports = []

    def out_weight(m, sign):
        E = mono_part(m, "x")[0]
        s = mono_part(m, "y")[0]
        return wt1 + wt2 + E + sign * s

    # (a) L(-1): only monomials whose output weight stays in the window
    ra = CheckReport("conjugation L(-1)")
    smax = min(order, _floor(W1.wmax - wt1), _floor(W2.wmax - wt2))
    if smax >= 0:
        inner = _op_series(W2, W2.L(-1), e2, "y", smax, -1)
        lhs = _left_exp(W3, W3.L(-1), _apply_Y(Y, LogSeries.const(e1), inner), "y", smax)
        mid = _apply_Y(Y, _op_series(W1, W1.L(-1), e1, "y", smax), LogSeries.const(e2))
        rhs = subst_shift(Y.series(e1, e2), "x", "y", smax)

        def keep_a(m):
            return mono_part(m, "y")[0] <= smax and W3.wmin <= out_weight(m, 1) <= W3.wmax

        lhs, mid, rhs = _trim(lhs, keep_a), _trim(mid, keep_a), _trim(rhs, keep_a)
        ra.record(lhs == mid, side="conjugate vs shifted argument", witness=str(lhs.diff_witness(mid)))
        ra.record(mid == rhs, side="shifted argument vs x+y", witness=str(mid.diff_witness(rhs)))
    reports.append(ra)

    # (b) y^{L(0)}: exact in log y
    rb = CheckReport("conjugation y^L(0)")
    inner = power_l0(W2, e2, -1, "y")
    lhs = LogSeries.zero()
    for m, c in _apply_Y(Y, LogSeries.const(e1), inner).items():
        lhs = lhs + power_l0(W3, c, +1, "y").times_monomial(m)
    rhs = LogSeries.zero()
    for m, u in power_l0(W1, e1, +1, "y").items():
        piece = subst_scale(Y.series(u, e2), "x", "t")
        piece = LogSeries({_rename(mm, "t", "y"): c for mm, c in piece.items()})
        rhs = rhs + piece.times_monomial(m)
    rb.record(lhs == rhs, witness=str(lhs.diff_witness(rhs)))
    reports.append(rb)

    # (c) L(1)
    rc = CheckReport("conjugation L(1)")
    inner = _op_series(W2, W2.L(1), e2, "y", order, -1)
    lhs = _left_exp(W3, W3.L(1), _apply_Y(Y, LogSeries.const(e1), inner), "y", order)
    rhs = _l1_conjugated(Y, e1, e2, order)

    def keep_c(m):
        if mono_part(m, "y")[0] > order:
            return False
        h = out_weight(m, -1)
        return W3.wmin <= h and h + order <= W3.wmax

    lhs, rhs = _trim(lhs, keep_c), _trim(rhs, keep_c)
    rc.record(lhs == rhs, witness=str(lhs.diff_witness(rhs)))
    rc.notes["compared"] = len(set(lhs) | set(rhs))
    reports.append(rc)
    return reports


def _rename(m, old: str, new: str):
    return tuple(sorted((new if v == old else v, e, k) for v, e, k in m))


def _scalar_poly(coeffs: dict) -> LogSeries:
    return LogSeries({mono(x=xe, y=ye): c for (xe, ye), c in coeffs.items()}, variables=("x", "y"))


def _one_minus_yx_power(r, order: int) -> LogSeries:
    """``(1 - yx)^r`` truncated at ``y^order``."""
    return _scalar_poly({(s, s): binom(r, s) * (-1) ** s for s in range(order + 1)})


def _log_one_minus_yx(order: int) -> LogSeries:
    """``log(1 - yx) = -sum_s (yx)^s / s``."""
    return _scalar_poly({(s, s): Fraction(-1, s) for s in range(1, order + 1)})


def _l1_conjugated(Y: LogIntertwiner, e1: QVec, e2: QVec, order: int) -> LogSeries:
    """``Y(e^{y(1-yx)L(1)} (1-yx)^{-2L(0)} w, x(1-yx)^{-1}) w2`` to ``y``-order ``order``."""
    from .formal_series import TruncationPolicy
    W1 = Y.W1
    pol = TruncationPolicy.make(orders={"y": order})
    N1 = nilpotent_part(W1)
    L1 = W1.L(1)
    h = W1.weight_of(e1)
    lg = _log_one_minus_yx(order).with_policy(pol)
    # argument: sum over i (nilpotent power) and m (L(1) power)
    args: list[tuple[LogSeries, QVec]] = []
    nil, i = e1, 0
    while nil:
        log_pow = LogSeries.const(Fraction(1), pol)
        for _ in range(i):
            log_pow = log_pow * lg
        base_sc = _one_minus_yx_power(-2 * h, order).with_policy(pol) * log_pow.scale(
            Fraction((-2) ** i, math.factorial(i)))
        u, m = nil, 0
        while u and m <= order:
            sc = base_sc * _one_minus_yx_power(m, order).with_policy(pol)
            sc = sc.times_monomial(mono(y=m), Fraction(1, math.factorial(m))).with_policy(pol)
            args.append((sc, u))
            u = L1.apply(u)
            m += 1
        nil = N1.apply(nil)
        i += 1
    out = LogSeries.zero(pol)
    neg_lg = lg.scale(Fraction(-1))
    for sc, u in args:
        if not sc:
            continue
        for (n, k), vec in Y.pair(u, e2).items():
            # X^{-n-1} (log X)^k with X = x (1-yx)^{-1}
            f = _one_minus_yx_power(n + 1, order).with_policy(pol).times_monomial(mono(x=-n - 1))
            logX = LogSeries.log("x", policy=pol) + neg_lg
            for _ in range(k):
                f = f * logX
            out = out + (f * sc).scale(Fraction(1)).map_coefficients(lambda c, v=vec: v * c)
    return out.with_policy(pol)


# ---------------------------------------------------------------------------
# coefficient recovery from weight projections


def recover_coefficients(Y: LogIntertwiner, w1: QVec, w2: QVec, n, r: int) -> QVec:
    """Rebuild ``(w1)_{n;r} w2`` from weight projections of transported series.

    With ``G[u1, u2] = x^{n+1} pi_h Y(u1, x) u2`` (``h = n1 + n2 - n - 1``), a
    polynomial in ``L = log x``, the coefficient equals the log-free value of

        sum_{l,i,j; s = l+i+j >= r} C(s, r) (-L)^{s-r} (-1)^{i+j} / (l! i! j!)
            N3^l G[N1^i w1, N2^j w2]

    where ``N`` denotes ``L(0)`` minus its weight.  This inverts
    ``G(L) = exp(L D) G(0)`` with ``D = N3 - N1 - N2``, which is the
    generating form of the ``L(0)`` transport identities.
    """
    W1, W2, W3 = Y.W1, Y.W2, Y.W3
    n = rat(n)
    n1, n2 = W1.weight_of(w1), W2.weight_of(w2)
    if n1 is None or n2 is None:
        return QVec()
    h = n1 + n2 - n - 1
    N1, N2, N3 = nilpotent_part(W1), nilpotent_part(W2), nilpotent_part(W3)
    keep = set(W3.weight_space(h))

    def G(u1: QVec, u2: QVec) -> dict:
        """Polynomial in ``L``: ``{degree: vector}`` from the projected series times ``x^{n+1}``."""
        poly = {}
        for (n_, k), vec in Y.pair(u1, u2).items():
            proj = vec.restrict(keep)
            if not proj:
                continue
            if n_ != n:
                raise SingularRecovery("projection contains a power of x other than x^{-n-1}")
            poly[k] = poly.get(k, QVec()) + proj
        return poly

    pows1 = [w1]
    while pows1[-1]:
        pows1.append(N1.apply(pows1[-1]))
    pows2 = [w2]
    while pows2[-1]:
        pows2.append(N2.apply(pows2[-1]))
    result: dict = {}
    for i, u1 in enumerate(pows1[:-1]):
        for j, u2 in enumerate(pows2[:-1]):
            g = G(u1, u2)
            if not g:
                continue
            l = 0
            cur = g
            while cur:
                s = l + i + j
                if s >= r:
                    base = binom(s, r) * Fraction((-1) ** (i + j), math.factorial(l) * math.factorial(i) * math.factorial(j))
                    for deg, vec in cur.items():
                        for p in [s - r]:
                            cf = base * (-1) ** p
                            _add_into(result, deg + p, vec * cf)
                l += 1
                cur = {d: N3.apply(v) for d, v in cur.items()}
                cur = {d: v for d, v in cur.items() if v}
    for deg, vec in result.items():
        if deg != 0 and vec:
            raise SingularRecovery(f"recovered coefficient still depends on log x (degree {deg})")
    return result.get(0, QVec())


# ---------------------------------------------------------------------------
# JSON


def intertwiner_to_json(Y: LogIntertwiner) -> str:
    blocks = []
    for (a, b), table in sorted(Y.materialize().items()):
        for (n, k), vec in sorted(table.items()):
            blocks.append({"w1": a, "w2": b, "n": rat_str(n), "k": k,
                           "vec": {str(i): (rat_str(c) if isinstance(c, Fraction) else [c.real, c.imag])
                                   for i, c in sorted(vec.items())}})
    doc = {"name": Y.name, "kmax": Y.kmax, "layer": Y.layer,
           "modules": [Y.W1.name, Y.W2.name, Y.W3.name], "blocks": blocks}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def intertwiner_from_json(text: str, W1, W2, W3) -> LogIntertwiner:
    doc = json.loads(text)
    table: dict = {}
    for bl in doc["blocks"]:
        vec = QVec({int(i): (Fraction(c) if isinstance(c, str) else complex(*c)) for i, c in bl["vec"].items()})
        table.setdefault((bl["w1"], bl["w2"]), {})[(Fraction(bl["n"]), int(bl["k"]))] = vec
    return LogIntertwiner.from_table(W1, W2, W3, table, doc.get("kmax", DEFAULT_KMAX), doc.get("name", "Y"),
                                     doc.get("layer", EXACT))

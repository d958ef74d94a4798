"""P(z)- and Q(z)-intertwining maps and the dual actions built on them.

A map stores, for each pair of basis vectors, the weight components of its
value in the completion of the target module, restricted to the target
window.  Formal delta functions are expanded coefficient-wise with the usual
convention: ``(a + b)^j`` is expanded in nonnegative powers of ``b``.
Everything that reads module data outside a window is skipped rather than
guessed, so every reported comparison is exact for the infinite modules.
"""
from __future__ import annotations

import cmath
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable

from .errors import (ClosureOverflow, RegionViolation, SlotMismatch, WindowTooSmall,
                     ZeroArgument)
from .graded_modules import CompletionElement, GradedModule, nilpotent_part, opposite_op
from .linalg import SparseMatrix, row_reduce, in_span
from .log_intertwiner import LogIntertwiner, _contra
from .reports import CheckReport
from .scalars import COMPLEX, EXACT, QVec, binom, close, lincomb, rat

Components = dict  # {weight: QVec}


# ---------------------------------------------------------------------------
# branches


@dataclass(frozen=True)
class BranchChoice:
    """A nonzero point ``z`` together with the branch index ``p``."""

    z: object
    p: int = 0

    def __post_init__(self):
        z = self.z
        if isinstance(z, complex):
            if z.imag == 0 and float(z.real).is_integer():
                z = Fraction(int(z.real))
        elif not isinstance(z, Fraction):
            z = rat(z)
        if z == 0:
            raise ZeroArgument("z must be nonzero")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "_memo", {})

    @property
    def exact(self) -> bool:
        return isinstance(self.z, Fraction)

    def log(self) -> complex:
        ell = self._memo.get("log")
        if ell is None:
            ell = self._memo["log"] = branch_log(self)
        return ell

    def zpow(self, e: int):
        """Plain integer power of ``z`` (branch independent)."""
        return self.z ** e

    def power(self, e):
        """``exp(e * l_p(z))``; exact for rational ``z`` and integral ``e``."""
        hit = self._memo.get(e)
        if hit is None:
            q = rat(e)
            if self.exact and q.denominator == 1:
                hit = self.z ** int(q)
            else:
                hit = cmath.exp(complex(q) * self.log())
            self._memo[e] = hit
        return hit


def branch_log(b: BranchChoice) -> complex:
    """``log z + 2 pi i p`` with ``0 <= Im log z < 2 pi``."""
    z = complex(b.z)
    if z == 0:
        raise ZeroArgument("log of zero")
    base = cmath.log(z)
    if base.imag < 0:
        base += 2j * math.pi
    return base + 2j * math.pi * b.p


def _scale(vec: QVec, c) -> QVec:
    if isinstance(c, complex) and vec.layer == EXACT:
        vec = vec.to_complex()
    return vec * c


def _add(acc: dict, h, vec: QVec):
    if not vec:
        return
    if h in acc:
        cur = acc[h]
        if cur.layer != vec.layer:
            cur, vec = cur.to_complex(), vec.to_complex()
        acc[h] = cur + vec
    else:
        acc[h] = vec


def _pure(comps: dict) -> dict:
    return {h: v for h, v in comps.items() if v}


# ---------------------------------------------------------------------------
# maps


class PzMap:
    """Bilinear map ``W1 x W2 -> completion of W3`` of kind ``"P"`` or ``"Q"``.

    ``fn(i1, i2)`` returns ``{weight: vector}`` for a pair of basis vectors.
    """

    def __init__(self, kind: str, W1: GradedModule, W2: GradedModule, W3: GradedModule,
                 fn: Callable[[int, int], Components], branch: BranchChoice | None = None,
                 layer: str = EXACT, name: str = "I"):
        if kind not in ("P", "Q"):
            raise ValueError(f"unknown map kind {kind!r}")
        self.kind = kind
        self.W1, self.W2, self.W3 = W1, W2, W3
        self._fn = fn
        self.branch = branch
        self.layer = layer
        self.name = name
        self._cache: dict = {}

    def components(self, i1: int, i2: int) -> Components:
        key = (i1, i2)
        hit = self._cache.get(key)
        if hit is None:
            raw = self._fn(i1, i2)
            hit = {rat(h): (v.to_complex() if self.layer == COMPLEX else v)
                   for h, v in raw.items() if v and self.W3.in_window(rat(h))}
            self._cache[key] = hit
        return hit

    def apply_components(self, w1: QVec, w2: QVec) -> Components:
        acc: dict = {}
        for a, ca in w1.items():
            for b, cb in w2.items():
                s = ca * cb
                for h, vec in self.components(a, b).items():
                    acc.setdefault(h, []).append((s, vec))
        out = {}
        for h, terms in acc.items():
            if any(isinstance(s, complex) for s, _ in terms):
                terms = [(s, v.to_complex()) for s, v in terms]
            out[h] = lincomb(terms)
        return _pure(out)

    def apply(self, w1: QVec, w2: QVec) -> CompletionElement:
        return CompletionElement(self.apply_components(w1, w2))

    def component(self, w1: QVec, w2: QVec, h) -> QVec:
        return self.apply_components(w1, w2).get(rat(h), QVec())

    def materialize(self) -> dict:
        return {(a, b): self.components(a, b) for a in range(self.W1.dim) for b in range(self.W2.dim)}

    def to_complex(self) -> "PzMap":
        if self.layer == COMPLEX:
            return self
        return PzMap(self.kind, self.W1, self.W2, self.W3, self.components, self.branch, COMPLEX, self.name)

    def perturbed(self, i1: int, i2: int, h, delta: QVec) -> "PzMap":
        src, h = self, rat(h)

        def fn(a, b):
            t = dict(src.components(a, b))
            if (a, b) == (i1, i2):
                _add(t, h, delta)
            return t

        layer = COMPLEX if delta.layer == COMPLEX else self.layer
        return PzMap(self.kind, self.W1, self.W2, self.W3, fn, self.branch, layer, self.name + "~")

    @classmethod
    def from_table(cls, kind, W1, W2, W3, table: dict, branch=None, layer=EXACT, name="I") -> "PzMap":
        return cls(kind, W1, W2, W3, lambda a, b: table.get((a, b), {}), branch, layer, name)

    @classmethod
    def zero(cls, kind, W1, W2, W3, branch=None) -> "PzMap":
        return cls(kind, W1, W2, W3, lambda a, b: {}, branch, EXACT, "0")


def maps_close(I: PzMap, J: PzMap, tol: float = 1e-10) -> CheckReport:
    rep = CheckReport("map comparison")
    for (a, b), comps in I.materialize().items():
        other = J.components(a, b)
        for h in set(comps) | set(other):
            x, y = comps.get(h, QVec()), other.get(h, QVec())
            rep.record(close(x, y, tol), pair=f"({a},{b})", weight=h, left=x, right=y)
    return rep


def _integral_exponents(W1: GradedModule, W2: GradedModule, W3: GradedModule) -> bool:
    frac = lambda W: {w - math.floor(w) for w in W.weights()}
    return all((a + b - c).denominator == 1 for a in frac(W1) for b in frac(W2) for c in frac(W3))


def intertwiner_to_map(Y: LogIntertwiner, b: BranchChoice) -> PzMap:
    """``I(w1 (x) w2) = Y(w1, e^{l_p(z)}) w2`` as weight components."""
    ell = b.log()
    exact = (b.exact and Y.layer == EXACT and Y.kmax == 0
             and _integral_exponents(Y.W1, Y.W2, Y.W3))
    W3 = Y.W3

    def fn(i1, i2):
        acc: dict = {}
        for (n, k), vec in Y.coeffs(i1, i2).items():
            h = Y.output_weight(i1, i2, n)
            if not W3.in_window(h):
                continue
            s = b.power(-n - 1)
            if k:
                s = complex(s) * ell ** k
            if not exact:
                s, vec = complex(s), vec.to_complex()
            _add(acc, h, vec * s)
        return acc

    return PzMap("P", Y.W1, Y.W2, W3, fn, b, EXACT if exact else COMPLEX, f"I[{Y.name},p={b.p}]")


def _nil_powers(W: GradedModule) -> list[SparseMatrix]:
    """``[N^0, N^1, ...]`` up to the last nonzero power of the nilpotent part of ``L(0)``."""
    cached = getattr(W, "_nil_powers", None)
    if cached is not None:
        return cached
    N = nilpotent_part(W)
    out = [SparseMatrix.identity(W.dim)]
    cur = N
    while not cur.is_zero():
        out.append(cur)
        cur = cur @ N
    W._nil_powers = out
    return out


def map_to_intertwiner(I: PzMap, b: BranchChoice) -> LogIntertwiner:
    """``Y(w1, x) w2 = y^{L(0)} x^{L(0)} I(y^{-L(0)} x^{-L(0)} w1 (x) y^{-L(0)} x^{-L(0)} w2)``
    at ``y = e^{-l_p(z)}``.

    With ``L = log x - l_p(z)`` the coefficient of ``x^{-n-1} (log x)^k`` is
    ``sum C(s, k) (-l)^{s-k} (-1)^{i1+i2} / (j! i1! i2!) e^{(n+1) l} N3^j I(N1^i1 w1, N2^i2 w2)``
    with ``s = j + i1 + i2``.
    """
    W1, W2, W3 = I.W1, I.W2, I.W3
    N1, N2, N3 = _nil_powers(W1), _nil_powers(W2), _nil_powers(W3)
    nil_free = len(N1) == len(N2) == len(N3) == 1
    exact = b.exact and I.layer == EXACT and nil_free and _integral_exponents(W1, W2, W3)
    ell = b.log()
    kmax = len(N1) + len(N2) + len(N3) - 3

    def fn(i1, i2):
        n1, n2 = W1.weight(i1), W2.weight(i2)
        acc: dict = {}
        for a, A in enumerate(N1):
            u1 = A.column(i1)
            if not u1:
                continue
            for c, C in enumerate(N2):
                u2 = C.column(i2)
                if not u2:
                    continue
                base = Fraction((-1) ** (a + c), math.factorial(a) * math.factorial(c))
                for h, vec in I.apply_components(u1, u2).items():
                    n = n1 + n2 - h - 1
                    e = b.power(n + 1)
                    for j, M in enumerate(N3):
                        out = M.apply(vec) if j else vec
                        if not out:
                            continue
                        s = a + c + j
                        if s and out.layer == EXACT:
                            out = out.to_complex()
                        for k in range(s + 1):
                            coef = base / math.factorial(j) * binom(s, k)
                            if s - k:
                                coef = complex(coef) * (-ell) ** (s - k)
                            coef = coef * e
                            if not exact:
                                coef = complex(coef)
                            _add(acc, (n, k), _scale(out, coef))
        return acc

    return LogIntertwiner(W1, W2, W3, fn, kmax=max(kmax, 0), name=f"Y[{I.name},p={b.p}]",
                          layer=EXACT if exact else COMPLEX)


# ---------------------------------------------------------------------------
# Jacobi identities for P(z) and Q(z) maps


class _Modes:
    """Cached vertex and opposite modes of one algebra vector on several modules."""

    def __init__(self, v: QVec):
        self.v = v
        self._c: dict = {}

    def y(self, W: GradedModule, m: int) -> SparseMatrix:
        key = ("y", id(W), m)
        if key not in self._c:
            self._c[key] = W.vertex_mode(self.v, m)
        return self._c[key]

    def o(self, W: GradedModule, m: int) -> SparseMatrix:
        key = ("o", id(W), m)
        if key not in self._c:
            self._c[key] = opposite_op(W, self.v, m)
        return self._c[key]


def _zpow(z, e: int):
    return z ** e


def _algebra_vec(W: GradedModule, v) -> tuple[QVec, int]:
    V = W.algebra
    vec = V.unit(v) if isinstance(v, int) else v
    k = V.weight_of(vec)
    return vec, int(k if k is not None else 0)


def _accumulate(terms: list, coef, vec: QVec):
    if coef != 0 and vec:
        terms.append((coef, vec))


def _combine(terms: list) -> QVec:
    if any(isinstance(c, complex) or v.layer == COMPLEX for c, v in terms):
        terms = [(complex(c), v.to_complex()) for c, v in terms]
    return lincomb(terms)


def _pz_terms(I: PzMap, modes: _Modes, k: int, e1: QVec, e2: QVec, wt1, wt2, P: int, Q: int, H):
    """The three sides of the P(z) identity at ``x0^P x1^Q`` and target weight ``H``;
    ``None`` when some needed datum lies outside a window."""
    W1, W2, W3 = I.W1, I.W2, I.W3
    z = I.branch.z
    j = -P - 1
    lhs, r1, r2 = [], [], []
    # x0^{-1} delta((x1 - z)/x0) Y3(v, x1) I(w1, w2)
    if H - k + j - Q > W3.wmax:
        return None
    i = 0
    while True:
        m = j - i - Q - 1
        h = H - (k - m - 1)
        if h < W3.wmin:
            break
        c = binom(j, i) * _zpow(-z, i)
        comp = I.apply_components(e1, e2).get(h)
        if comp and c != 0:
            _accumulate(lhs, c, modes.y(W3, m).apply(comp))
        i += 1
    # z^{-1} delta((x1 - x0)/z) I(Y1(v, x0) w1, w2)
    if wt1 + k + P > W1.wmax:
        return None
    i = 0
    while wt1 + k + P - i >= W1.wmin:
        u = modes.y(W1, i - P - 1).apply(e1)
        if u:
            c = binom(Q + i, i) * _zpow(z, -Q - i - 1) * (-1) ** i
            _accumulate(r1, c, I.apply_components(u, e2).get(H, QVec()))
        i += 1
    # x0^{-1} delta((z - x1)/(-x0)) I(w1, Y2(v, x1) w2)
    if wt2 + k + Q > W2.wmax:
        return None
    r2 = _p_third(I, modes, e1, e2, wt2, k, j, Q, H)
    return _combine(lhs), _combine(r1), _combine(r2)


def _p_third(I, modes, e1, e2, wt2, k, j, Q, H) -> list:
    W2, z = I.W2, I.branch.z
    out, i = [], 0
    while wt2 + k + Q - i >= W2.wmin:
        u = modes.y(W2, i - Q - 1).apply(e2)
        c = (-1) ** (j % 2) * binom(j, i) * _zpow(z, j - i) * (-1) ** i
        if u and c != 0:
            _accumulate(out, c, I.apply_components(e1, u).get(H, QVec()))
        i += 1
    return out


def _qz_terms(I: PzMap, modes: _Modes, k: int, e1: QVec, e2: QVec, wt1, wt2, P: int, Q: int, H):
    """Sides of the Q(z) identity
    ``z^{-1}d((x1-x0)/z) Y3^o(v,x0) I = x0^{-1}d((x1-z)/x0) I(Y1^o(v,x1).) - x0^{-1}d((z-x1)/(-x0)) I(., Y2(v,x1).)``."""
    W1, W2, W3 = I.W1, I.W2, I.W3
    z = I.branch.z
    j = -P - 1
    lhs, r1 = [], []
    if H + P + k > W3.wmax:
        return None
    i = 0
    while H - i + P + k >= W3.wmin:
        h = H - i + P + k
        comp = I.apply_components(e1, e2).get(h)
        if comp:
            c = binom(Q + i, i) * _zpow(z, -Q - i - 1) * (-1) ** i
            _accumulate(lhs, c, modes.o(W3, i - P - 1).apply(comp))
        i += 1
    if wt1 - P - Q - 1 - k > W1.wmax:
        return None
    i = 0
    while wt1 - P - Q - 1 - k - i >= W1.wmin:
        c = binom(j, i) * _zpow(-z, i)
        if c != 0:
            u = modes.o(W1, j - i - Q - 1).apply(e1)
            if u:
                _accumulate(r1, c, I.apply_components(u, e2).get(H, QVec()))
        i += 1
    if wt2 + k + Q > W2.wmax:
        return None
    r2 = [(-c, v) for c, v in _p_third(I, modes, e1, e2, wt2, k, j, Q, H)]
    return _combine(lhs), _combine(r1), _combine(r2)


def pz_jacobi_check(I: PzMap, v, i1: int, i2: int, depth: int = 3, tol: float = 1e-10,
                    report: CheckReport | None = None) -> CheckReport:
    """Coefficient-wise P(z) (or Q(z)) Jacobi identity for one test triple."""
    if I.branch is None:
        raise WindowTooSmall("a branch choice (the point z) is required")
    rep = report or CheckReport(f"{I.kind}(z)-jacobi")
    W1, W2, W3 = I.W1, I.W2, I.W3
    vec, k = _algebra_vec(W1, v)
    modes = _Modes(vec)
    e1, e2 = W1.unit(i1), W2.unit(i2)
    wt1, wt2 = W1.weight(i1), W2.weight(i2)
    B = math.floor(W2.wmax - wt2 - k)
    if I.kind == "P":
        A = math.floor(W1.wmax - wt1 - k)
        region = [(P, Q) for P in range(A - depth, A + 1) for Q in range(B - depth, B + 1)]
        terms = _pz_terms
    else:
        region = []
        for Q in range(B - depth, B + 1):
            lo = math.ceil(wt1 - Q - 1 - k - W1.wmax)
            region += [(P, Q) for P in range(lo, lo + depth + 1)]
        terms = _qz_terms
    for P, Q in region:
        for H in W3.weights():
            got = terms(I, modes, k, e1, e2, wt1, wt2, P, Q, H)
            if got is None:
                continue
            lhs, r1, r2 = got
            rhs = _combine([(1, r1), (1, r2)]) if (r1 or r2) else QVec()
            rep.record(close(lhs, rhs, tol), monomial=f"x0^{P} x1^{Q}", weight=H,
                       triple=f"({_vname(vec)},{i1},{i2})", lhs=lhs, rhs=rhs)
    return rep


def _vname(vec: QVec) -> str:
    return "+".join(str(i) for i in sorted(vec))


def random_map_triples(I: PzMap, count: int = 10, seed: int = 0, max_v_weight: int = 2) -> list[tuple]:
    rng = random.Random(seed)
    V = I.W1.algebra
    vs = [i for i in range(V.dim) if V.weight(i) <= max_v_weight]
    return [(rng.choice(vs), rng.randrange(I.W1.dim), rng.randrange(I.W2.dim)) for _ in range(count)]


def check_pz_jacobi(I: PzMap, triples: Iterable[tuple] | None = None, count: int = 10,
                    seed: int = 0, depth: int = 3, tol: float = 1e-10) -> CheckReport:
    """Run the Jacobi identity of the map's kind over test triples ``(v, i1, i2)``."""
    rep = CheckReport(f"{I.kind}(z)-jacobi")
    triples = list(triples) if triples is not None else random_map_triples(I, count, seed)
    for v, a, b in triples:
        pz_jacobi_check(I, v, a, b, depth, tol, rep)
    if rep.checked == 0 and triples:
        raise WindowTooSmall("no Jacobi coefficient is determined inside the windows")
    rep.notes["triples"] = len(triples)
    return rep


# ---------------------------------------------------------------------------
# transpose between Q(z) and P(z) maps


def pq_transpose(I: PzMap) -> PzMap:
    """``<w1, J(w3' (x) w2)> = <w3', I(w1 (x) w2)>``; J has type (W1'; W3', W2).

    A Q(z)-map goes to a P(z)-map and vice versa, so applying this twice
    returns the original map (contragredients of contragredients are the
    original modules).
    """
    W1, W2, W3 = I.W1, I.W2, I.W3
    D1, D3 = _contra(W1), _contra(W3)
    table: dict = {}
    for (a, b), comps in I.materialize().items():
        h1 = W1.weight(a)
        if not D1.in_window(h1):
            continue
        for vec in comps.values():
            for j3, c in vec.items():
                table.setdefault((j3, b), {}).setdefault(h1, {})[a] = c
    table = {key: {h: QVec(d) for h, d in comps.items()} for key, comps in table.items()}
    kind = "P" if I.kind == "Q" else "Q"
    return PzMap.from_table(kind, D3, W2, D1, table, I.branch, I.layer, f"{I.name}^t")


# ---------------------------------------------------------------------------
# truncated dual elements


INF = None  # bound meaning "known on every pair" (finitely supported functional)


def _transposed_rows(M: SparseMatrix, as_complex: bool) -> dict:
    """``{column index c: [(t, M[c, t])]}`` for pulling back along ``M``, cached on ``M``."""
    cache = getattr(M, "_rows", None)
    if cache is None:
        cache = M._rows = {}
    hit = cache.get(as_complex)
    if hit is None:
        hit = {}
        for t, col in M.cols.items():
            for c, m in col.items():
                hit.setdefault(c, []).append((t, complex(m) if as_complex else m))
        cache[as_complex] = hit
    return hit


_BELOW: dict = {}


def _indices_below(W: GradedModule, bound) -> frozenset:
    key = (id(W), bound)
    hit = _BELOW.get(key)
    if hit is None or hit[0] is not W:
        hit = _BELOW[key] = (W, frozenset(i for i in range(W.dim) if W.weight(i) <= bound))
    return hit[1]


def _min_bound(a, b):
    if a is INF:
        return b
    if b is INF:
        return a
    return min(a, b)


class DualElement:
    """Truncated functional on ``W1 (x) W2`` (or ``W1 (x) W2 (x) W3``).

    ``values`` maps basis index tuples to scalars.  ``bounds[s]`` is the
    largest weight in slot ``s`` at which the values are known to be the
    true values; ``None`` means the functional vanishes outside the stored
    entries, so it is known everywhere.
    """

    def __init__(self, modules: tuple, values: dict, bounds: tuple | None = None):
        self.modules = tuple(modules)
        if len(self.modules) not in (2, 3):
            raise ValueError("dual elements have arity 2 or 3")
        self.values = {tuple(k): c for k, c in values.items() if c != 0}
        self.bounds = tuple(bounds) if bounds is not None else (INF,) * len(self.modules)
        self._layer = COMPLEX if any(isinstance(c, complex) for c in self.values.values()) else EXACT

    @classmethod
    def _trusted(cls, modules: tuple, values: dict, bounds: tuple, layer: str) -> "DualElement":
        self = cls.__new__(cls)
        self.modules, self.bounds, self._layer = modules, bounds, layer
        self.values = {k: c for k, c in values.items() if c != 0}
        return self

    @property
    def arity(self) -> int:
        return len(self.modules)

    @property
    def layer(self) -> str:
        return self._layer

    def known(self, key: tuple) -> bool:
        return all(b is INF or W.weight(i) <= b for W, i, b in zip(self.modules, key, self.bounds))

    def region_empty(self) -> bool:
        return any(b is not INF and b < W.wmin for W, b in zip(self.modules, self.bounds))

    def __call__(self, *vecs: QVec):
        if len(vecs) != self.arity:
            raise SlotMismatch(f"expected {self.arity} vectors")
        total = 0
        for key, c in self.values.items():
            s = c
            for vec, i in zip(vecs, key):
                s = s * vec.get(i, 0)
                if s == 0:
                    break
            total = total + s
        return total

    def _same(self, other: "DualElement"):
        if other.modules != self.modules:
            raise SlotMismatch("dual elements live on different tensor products")

    def __add__(self, other: "DualElement") -> "DualElement":
        self._same(other)
        vals = dict(self.values)
        for k, c in other.values.items():
            vals[k] = vals.get(k, 0) + c
        layer = COMPLEX if COMPLEX in (self._layer, other._layer) else EXACT
        return DualElement._trusted(self.modules, vals, tuple(map(_min_bound, self.bounds, other.bounds)), layer)

    def __mul__(self, c) -> "DualElement":
        if self._layer == COMPLEX or isinstance(c, (complex, float)):
            c = complex(c)
            vals = {k: complex(v) * c for k, v in self.values.items()}
            return DualElement._trusted(self.modules, vals, self.bounds, COMPLEX)
        return DualElement._trusted(self.modules, {k: v * c for k, v in self.values.items()}, self.bounds, EXACT)

    __rmul__ = __mul__

    def __sub__(self, other: "DualElement") -> "DualElement":
        return self + other * -1

    def pullback(self, slot: int, M: SparseMatrix, raise_by) -> "DualElement":
        """``lambda o (M acting in one slot)``; ``raise_by`` is the largest weight increase of ``M``."""
        rows = _transposed_rows(M, self._layer == COMPLEX)
        vals: dict = {}
        for key, c in self.values.items():
            for t, m in rows.get(key[slot], ()):
                k2 = key[:slot] + (t,) + key[slot + 1:]
                vals[k2] = vals.get(k2, 0) + c * m
        bounds = list(self.bounds)
        W = self.modules[slot]
        b = bounds[slot]
        bounds[slot] = W.wmax if b is INF else min(b, W.wmax) - max(Fraction(raise_by), 0)
        return DualElement._trusted(self.modules, vals, tuple(bounds), self._layer)

    def restricted(self, bounds: tuple) -> dict:
        allowed = [None if b is INF else _indices_below(W, b) for W, b in zip(self.modules, bounds)]
        return {k: c for k, c in self.values.items()
                if all(a is None or i in a for a, i in zip(allowed, k))}

    @classmethod
    def zero(cls, modules: tuple) -> "DualElement":
        return cls(modules, {})


def dual_compare(x: DualElement, y: DualElement, tol: float = 1e-10):
    """``(ok, witness key, left, right, compared)`` on the region where both are known."""
    x._same(y)
    bounds = tuple(map(_min_bound, x.bounds, y.bounds))
    if any(b is not INF and b < W.wmin for W, b in zip(x.modules, bounds)):
        return True, None, 0, 0, False
    a, c = x.restricted(bounds), y.restricted(bounds)
    if x.layer == EXACT and y.layer == EXACT and a == c:
        return True, None, 0, 0, True
    for key in sorted(set(a) | set(c)):
        if not close(a.get(key, 0), c.get(key, 0), tol):
            return False, key, a.get(key, 0), c.get(key, 0), True
    return True, None, 0, 0, True


def functional_from_map(I: PzMap, w3_dual: QVec) -> DualElement:
    """``lambda = w3' o I``, known on every pair inside the source windows."""
    vals = {}
    for (a, b), comps in I.materialize().items():
        s = sum((w3_dual.get(j, 0) * c for vec in comps.values() for j, c in vec.items()), 0)
        if s != 0:
            vals[(a, b)] = s
    return DualElement((I.W1, I.W2), vals, (I.W1.wmax, I.W2.wmax))


def random_functional(W1: GradedModule, W2: GradedModule, seed: int = 0, entries: int = 12,
                      max_level=1) -> DualElement:
    """Finitely supported functional with small random rational values on low weights."""
    rng = random.Random(seed)
    low1 = [i for i in range(W1.dim) if W1.weight(i) <= W1.wmin + max_level]
    low2 = [i for i in range(W2.dim) if W2.weight(i) <= W2.wmin + max_level]
    vals = {(rng.choice(low1), rng.choice(low2)): Fraction(rng.randint(-5, 5), rng.randint(1, 4))
            for _ in range(entries)}
    return DualElement((W1, W2), vals)


# ---------------------------------------------------------------------------
# the tau_{P(z)} action


@dataclass(frozen=True)
class GeneratingAction:
    """The component ``v (x) t^n`` of ``Y_t(v, x) = sum (v (x) t^n) x^{-n-1}``."""

    v: QVec
    n: int

    def apply(self, lam: DualElement, b: BranchChoice) -> DualElement:
        return tau_pz_apply(lam, self.v, b, self.n)


class _TauContext:
    """Operators entering ``tau(v (x) t^n)`` for one algebra vector, cached per ``n``."""

    def __init__(self, W1: GradedModule, W2: GradedModule, v, b: BranchChoice):
        self.W1, self.W2, self.b = W1, W2, b
        self.v, self.k = _algebra_vec(W1, v)
        V = W1.algebra
        self.l1_powers = []
        cur = self.v
        while cur:
            self.l1_powers.append(cur)
            cur = V.L(1).apply(cur)
        self._first: dict = {}
        self._second: dict = {}
        self._modes = _Modes(self.v)

    def first(self, n: int) -> SparseMatrix:
        """Slot-one operator ``sum_{i,l} C(j,i) z^{-j-1} (-1)^{i+k} / l! (L(1)^l v)_i``, ``j = i+l-2k+n+1``."""
        if n not in self._first:
            W1, z, k = self.W1, self.b.z, self.k
            out = SparseMatrix.zero(W1.dim, W1.dim)
            for l, u in enumerate(self.l1_powers):
                top = k - l - 1 + math.ceil(W1.span)
                for i in range(0, max(top, -1) + 1):
                    j = i + l - 2 * k + n + 1
                    c = binom(j, i) * _zpow(z, -j - 1) * (-1) ** (i + k) / math.factorial(l)
                    if c != 0:
                        M = W1.vertex_mode(u, i)
                        if not M.is_zero():
                            out = out + M * c
            self._first[n] = out
        return self._first[n]

    def second(self, n: int) -> SparseMatrix:
        return self._modes.o(self.W2, n)

    def apply(self, lam: DualElement, n: int) -> DualElement:
        a = lam.pullback(1, self.second(n), n + 1 - self.k)
        c = lam.pullback(0, self.first(n), self.k - 1)
        return a + c


_CONTEXTS: dict = {}


def _context(W1: GradedModule, W2: GradedModule, v, b: BranchChoice) -> _TauContext:
    vec, _ = _algebra_vec(W1, v)
    key = (id(W1), id(W2), tuple(sorted(vec.items())), b)
    hit = _CONTEXTS.get(key)
    if hit is None or hit.W1 is not W1 or hit.W2 is not W2:
        hit = _TauContext(W1, W2, vec, b)
        hit._matrices = {}
        _CONTEXTS[key] = hit
    return hit


def tau_pz_apply(lam: DualElement, v, b: BranchChoice, n: int, ctx: _TauContext | None = None) -> DualElement:
    """``tau_{P(z)}(v (x) t^n) lambda``: the coefficient of ``x^{-n-1}`` in ``Y'_{P(z)}(v, x) lambda``.

    ``(tau(v t^n) lambda)(w1, w2) = lambda(w1, v^o_n w2)
    + sum_{i,l} C(j,i) z^{-j-1} (-1)^{i+k} / l! lambda((L(1)^l v)_i w1, w2)``.
    """
    if lam.arity != 2:
        raise SlotMismatch("tau_{P(z)} acts on functionals of two arguments")
    ctx = ctx or _context(lam.modules[0], lam.modules[1], v, b)
    return ctx.apply(lam, n)


def y_prime_series(lam: DualElement, v, b: BranchChoice, n_lo: int, n_hi: int) -> dict:
    """Coefficients ``{n: tau(v (x) t^n) lambda}`` of ``Y'_{P(z)}(v, x) lambda`` for ``n`` in a range."""
    ctx = _context(lam.modules[0], lam.modules[1], v, b)
    return {n: ctx.apply(lam, n) for n in range(n_lo, n_hi + 1)}


def dual_virasoro(lam: DualElement, b: BranchChoice, m: int, ctx: _TauContext | None = None) -> DualElement:
    """``L'_{P(z)}(m) = tau(omega (x) t^{m+1})``."""
    if ctx is None:
        V = lam.modules[0].algebra
        ctx = _context(lam.modules[0], lam.modules[1], V.conformal_vector, b)
    return ctx.apply(lam, m + 1)


def virasoro_check(lam: DualElement, b: BranchChoice, modes: Iterable[int] = range(-2, 3),
                   tol: float = 1e-10, report: CheckReport | None = None) -> CheckReport:
    """``[L'(m), L'(n)] = (m - n) L'(m + n) + c/12 (m^3 - m) delta_{m+n,0}`` on the known region."""
    rep = report or CheckReport("dual virasoro")
    W1, W2 = lam.modules
    V = W1.algebra
    c = V.central_charge
    ctx = _context(W1, W2, V.conformal_vector, b)
    modes = list(modes)
    one = {m: ctx.apply(lam, m + 1) for m in set(modes) | {m + n for m in modes for n in modes}}
    for m in modes:
        for n in modes:
            lhs = ctx.apply(one[n], m + 1) - ctx.apply(one[m], n + 1)
            rhs = one[m + n] * (m - n)
            if m + n == 0:
                rhs = rhs + lam * (c * Fraction(m ** 3 - m, 12))
            ok, key, x, y, compared = dual_compare(lhs, rhs, tol)
            if compared:
                rep.record(ok, modes=f"[L'({m}),L'({n})]", pair=key, lhs=x, rhs=y)
    return rep


def probe_vectors(V: GradedModule, max_weight: int = 2) -> list[QVec]:
    """Generators, the conformal vector and all basis vectors of weight at most ``max_weight``."""
    out = [V.unit(i) for i in range(V.dim) if 0 < V.weight(i) <= max_weight]
    if V.conformal_vector:
        out.append(V.conformal_vector)
    return out


def _truncation_cap(lam: DualElement, k: int) -> int:
    W1, W2 = lam.modules[:2]
    return k + math.ceil(W1.span + W2.span) + 2


def _known_range(lam: DualElement, ctx: _TauContext, n_cap: int) -> int:
    """Largest ``n <= n_cap`` for which ``tau(v t^n) lambda`` is known on some pair."""
    b2 = lam.bounds[1]
    W2 = lam.modules[1]
    if b2 is INF:
        return n_cap
    return min(n_cap, math.floor(b2 - W2.wmin + ctx.k - 1))


def _scale_of(lam: DualElement) -> float:
    return max([1.0] + [abs(c) for c in lam.values.values()])


def _nonzero_entries(lam: DualElement, tol: float, scale: float) -> dict:
    vals = lam.restricted(lam.bounds)
    if lam.layer == EXACT:
        return vals
    return {k: c for k, c in vals.items() if abs(c) > tol * scale}


def lower_truncation_point(lam: DualElement, ctx: _TauContext, tail: int = 1, tol: float = 1e-10):
    """``(N, n_hi, witness)``: ``tau(v t^n) lambda`` vanishes on the known region for
    ``N <= n <= n_hi``; ``witness`` is a nonzero entry near ``n_hi`` when it does not."""
    scale = _scale_of(lam)
    n_hi = _known_range(lam, ctx, _truncation_cap(lam, ctx.k))
    N = n_hi + 1
    n = n_hi
    floor = n_hi - 4 * (_truncation_cap(lam, ctx.k) + 2)
    while n >= floor:
        img = ctx.apply(lam, n)
        if img.region_empty():
            n -= 1
            continue
        vals = _nonzero_entries(img, tol, scale)
        if vals:
            if n > n_hi - tail:
                key = sorted(vals)[0]
                return None, n_hi, (n, key, vals[key])
            break
        N = n
        n -= 1
    return N, n_hi, None


def check_compatibility(lam: DualElement, b: BranchChoice, vectors: Iterable[QVec] | None = None,
                        depth: int = 2, tail: int = 1, tol: float = 1e-10) -> CheckReport:
    """Lower truncation of ``Y'_{P(z)}(v, x) lambda`` and the compatibility identity

    ``tau(x0^{-1} d((x1^{-1} - z)/x0) Y_t(v, x1)) lambda = x0^{-1} d((x1^{-1} - z)/x0) Y'(v, x1) lambda``

    coefficient-wise at ``x0^P x1^Q`` with ``|P|, |Q| <= depth``, within window.
    """
    rep = CheckReport("P(z)-compatibility")
    W1, W2 = lam.modules
    V = W1.algebra
    vectors = list(vectors) if vectors is not None else probe_vectors(V)
    z = b.z
    for v in vectors:
        ctx = _context(W1, W2, v, b)
        k = ctx.k
        label = _vname(ctx.v)
        N, n_hi, witness = lower_truncation_point(lam, ctx, tail, tol)
        rep.record(witness is None, condition="lower truncation", v=label,
                   mode=witness[0] if witness else "", pair=witness[1] if witness else "",
                   value=witness[2] if witness else 0)
        if N is None:
            continue
        taus: dict = {}

        def tau(n):
            if n not in taus:
                taus[n] = ctx.apply(lam, n)
            return taus[n]

        for P in range(-depth, depth + 1):
            j = -P - 1
            for Q in range(-depth, depth + 1):
                # tau(v t^n) lambda summed against the expanded delta function
                rhs = DualElement.zero((W1, W2))
                i = 0
                while P - Q + i < N and (j < 0 or i <= j):
                    c = binom(j, i) * _zpow(-z, i)
                    if c != 0:
                        rhs = rhs + tau(P - Q + i) * c
                    i += 1
                M1, M2 = _compat_matrices(ctx, P, Q)
                lhs = lam.pullback(0, M1, k + P) + lam.pullback(1, M2, -Q - k)
                ok, key, x, y, compared = dual_compare(lhs, rhs, tol)
                if compared:
                    rep.record(ok, condition="compatibility", v=label, monomial=f"x0^{P} x1^{Q}",
                               pair=key, lhs=x, rhs=y)
    return rep


def _compat_matrices(ctx: _TauContext, P: int, Q: int) -> tuple:
    """Slot operators of the left side of the compatibility identity at ``x0^P x1^Q``."""
    hit = ctx._matrices.get((P, Q))
    if hit is not None:
        return hit
    W1, W2, z, k = ctx.W1, ctx.W2, ctx.b.z, ctx.k
    j = -P - 1
    # slot one: sum_{i,l} C(j',i) z^{-j'-1} (-1)^{i+k}/l! (L(1)^l v)_{i-P-1}, j' = i+l-2k-Q
    M1 = SparseMatrix.zero(W1.dim, W1.dim)
    for l, u in enumerate(ctx.l1_powers):
        top = k - l + P + math.ceil(W1.span)
        for i in range(0, max(top, -1) + 1):
            jj = i + l - 2 * k - Q
            c = binom(jj, i) * _zpow(z, -jj - 1) * (-1) ** (i + k) / math.factorial(l)
            if c != 0:
                M1 = M1 + W1.vertex_mode(u, i - P - 1) * c
    # slot two: sum_i (-1)^j C(j,i) z^{j-i} (-1)^i v^o_{-i-Q-1}
    M2 = SparseMatrix.zero(W2.dim, W2.dim)
    top = math.ceil(W2.span) - Q - k + 1
    for i in range(0, max(top, -1) + 1):
        c = (-1) ** (j % 2) * binom(j, i) * _zpow(z, j - i) * (-1) ** i
        if c != 0:
            M2 = M2 + ctx._modes.o(W2, -i - Q - 1) * c
    hit = ctx._matrices[(P, Q)] = (M1, M2)
    return hit


# ---------------------------------------------------------------------------
# the module generated by a compatible functional


class _Echelon:
    """Incremental elimination; entries below ``tol * scale`` count as zero in the complex layer."""

    def __init__(self, tol: float, scale: float):
        self.rows: list[tuple] = []
        self.tol, self.scale = tol, scale

    def _tiny(self, x) -> bool:
        return x == 0 if not isinstance(x, complex) else abs(x) <= self.tol * self.scale

    def add(self, vec: dict) -> bool:
        v = dict(vec)
        for piv, row in self.rows:
            c = v.get(piv)
            if c is not None and not self._tiny(c):
                for key, x in row.items():
                    v[key] = v.get(key, 0) - c * x
        v = {key: x for key, x in v.items() if not self._tiny(x)}
        if not v:
            return False
        piv = max(v, key=lambda key: (abs(v[key]), key)) if any(isinstance(x, complex) for x in v.values()) else min(v)
        inv = 1 / v[piv]
        self.rows.append((piv, {key: x * inv for key, x in v.items()}))
        return True


@dataclass
class LocalModule:
    """Closure of a compatible functional under the component operators, within window.

    ``elements`` holds ``(grade, functional)`` with grades relative to the
    starting functional; ``weight`` is its generalized ``L'(0)`` eigenvalue
    when that could be read off.
    """

    elements: list
    dims: dict
    weight: object
    reports: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _l0_weight(lam: DualElement, b: BranchChoice, tol: float):
    """Generalized ``L'(0)`` eigenvalue of ``lam`` on the known region, or ``None``."""
    W1, W2 = lam.modules
    V = W1.algebra
    ctx = _context(W1, W2, V.conformal_vector, b)
    img = ctx.apply(lam, 1)
    known = img.restricted(img.bounds)
    base = lam.restricted(img.bounds)
    for key in sorted(base):
        h = known.get(key, 0) / base[key]
        cur = lam
        for _ in range(3):
            cur = ctx.apply(cur, 1) - cur * h
        vals = _nonzero_entries(cur, tol, _scale_of(lam))
        if not vals and not cur.region_empty():
            if isinstance(h, complex) and abs(h.imag) <= tol:
                h = h.real
            return h
    return None


def dual_jacobi_check(mu: DualElement, u: QVec, v: QVec, b: BranchChoice, depth: int = 1,
                      tol: float = 1e-10, report: CheckReport | None = None) -> CheckReport:
    """Jacobi identity of ``Y'_{P(z)}`` acting on ``mu``, coefficient-wise at ``x0^P x1^Q x2^R``:

    ``sum_i C(j,i)(-1)^i tau(u,j-i-Q-1) tau(v,i-R-1) - (-1)^j sum_i C(j,i)(-1)^i tau(v,j-i-R-1) tau(u,i-Q-1)
    = sum_i C(Q+i,i)(-1)^i tau(u_{i-P-1} v, -Q-i-R-2)`` with ``j = -P-1``.
    """
    rep = report or CheckReport("Y'_{P(z)} jacobi")
    W1, W2 = mu.modules
    V = W1.algebra
    cu, cv = _context(W1, W2, u, b), _context(W1, W2, v, b)
    Nu, _, wu = lower_truncation_point(mu, cu, tol=tol)
    Nv, _, wv = lower_truncation_point(mu, cv, tol=tol)
    if Nu is None or Nv is None:
        rep.record(False, condition="lower truncation", witness=str(wu or wv))
        return rep
    inner_u = {n: cu.apply(mu, n) for n in range(-3 * depth - 4, Nu)}
    inner_v = {n: cv.apply(mu, n) for n in range(-3 * depth - 4, Nv)}
    ku, kv = cu.k, cv.k
    product_ctx: dict = {}
    outer: dict = {}

    def twice(ctx, inner, m, n):
        key = (ctx is cu, m, n)
        if key not in outer:
            outer[key] = ctx.apply(inner[m], n)
        return outer[key]

    zero = DualElement.zero((W1, W2))
    for P in range(-depth, depth + 1):
        j = -P - 1
        for Q in range(-depth, depth + 1):
            for R in range(-depth, depth + 1):
                t1 = zero
                i = 0
                while i - R - 1 < Nv and (j < 0 or i <= j):
                    c = binom(j, i) * (-1) ** i
                    if c != 0 and (i - R - 1) in inner_v:
                        t1 = t1 + twice(cu, inner_v, i - R - 1, j - i - Q - 1) * c
                    i += 1
                t2 = zero
                i = 0
                while i - Q - 1 < Nu and (j < 0 or i <= j):
                    c = (-1) ** (j % 2) * binom(j, i) * (-1) ** i
                    if c != 0 and (i - Q - 1) in inner_u:
                        t2 = t2 + twice(cv, inner_u, i - Q - 1, j - i - R - 1) * c
                    i += 1
                t3 = zero
                i = 0
                while ku + kv - (i - P - 1) - 1 >= 0:
                    w = V.vertex_mode(u, i - P - 1).apply(v)
                    if w:
                        key = tuple(sorted(w.items()))
                        if key not in product_ctx:
                            product_ctx[key] = _context(W1, W2, w, b)
                        c = binom(Q + i, i) * (-1) ** i
                        t3 = t3 + product_ctx[key].apply(mu, -Q - i - R - 2) * c
                    i += 1
                ok, key, x, y, compared = dual_compare(t1 - t2, t3, tol)
                if compared:
                    rep.record(ok, monomial=f"x0^{P} x1^{Q} x2^{R}", pair=key, lhs=x, rhs=y)
    return rep


def generate_local_module(lam: DualElement, b: BranchChoice, max_grade: int = 2, region: tuple = (1, 1),
                          generators: Iterable[QVec] | None = None, tol: float = 1e-10,
                          check_jacobi: bool = True, min_grade: int | None = None,
                          stability_depth: int = 1) -> LocalModule:
    """Close ``lam`` under ``tau(v (x) t^n)`` for generating vectors ``v``, keeping grades at
    most ``max_grade`` above the lowest one reached; elements are compared on pairs of
    weight at most ``wmin + region``.

    Every element is re-checked for compatibility at monomials up to
    ``stability_depth``.  Refuses functionals that fail the compatibility check.  Raises
    :class:`ClosureOverflow` when an element is no longer known on the
    comparison region or the grades fall below ``min_grade``.
    """
    compat = check_compatibility(lam, b, tol=tol)
    if not compat.passed:
        from .errors import ValidationError
        raise ValidationError("functional fails the P(z)-compatibility condition")
    W1, W2 = lam.modules
    V = W1.algebra
    bounds = (W1.wmin + region[0], W2.wmin + region[1])
    if min_grade is None:
        min_grade = -math.ceil(W1.span + W2.span)
    gens = list(generators) if generators is not None else [V.unit(i) for i in V.generator_vectors.values()]
    ctxs = [_context(W1, W2, g, b) for g in gens]
    scale = _scale_of(lam)
    echelons: dict = {}
    elements: list = []

    def vectorize(mu: DualElement) -> dict:
        if any(bd is not INF and bd < lim for bd, lim in zip(mu.bounds, bounds)):
            raise ClosureOverflow("closure element is not determined on the comparison region")
        return mu.restricted(bounds)

    def admit(grade: int, mu: DualElement) -> bool:
        vec = vectorize(mu)
        if not vec:
            return False
        if grade < min_grade:
            raise ClosureOverflow(f"closure reaches grade {grade} below {min_grade}")
        ech = echelons.setdefault(grade, _Echelon(tol, scale))
        if ech.add(vec):
            elements.append((grade, mu))
            return True
        return False

    def close_up(cap: int):
        queue = [(0, lam)] if admit(0, lam) else []
        while queue:
            grade, mu = queue.pop(0)
            for ctx in ctxs:
                n_hi = _known_range(mu, ctx, _truncation_cap(mu, ctx.k))
                for n in range(grade + ctx.k - 1 - cap, n_hi + 1):
                    g2 = grade + ctx.k - n - 1
                    nu = ctx.apply(mu, n)
                    if nu.region_empty():
                        continue
                    try:
                        new = admit(g2, nu)
                    except ClosureOverflow:
                        if _nonzero_entries(nu, tol, scale):
                            raise
                        continue
                    if new:
                        queue.append((g2, nu))

    # descend to the lowest grade first, then fill in up to ``max_grade`` above it
    close_up(0)
    lowest = min((g for g, _ in elements), default=0)
    elements.clear()
    echelons.clear()
    close_up(max(0, lowest + max_grade))
    dims = {g: sum(1 for gg, _ in elements if gg == g) for g in sorted({g for g, _ in elements})}
    closure = CheckReport("local grading restriction")
    for g in range(min(dims, default=0), max(dims, default=0) + 1):
        closure.record(dims.get(g, 0) < math.inf, grade=g, dim=dims.get(g, 0))
    closure.notes["dims"] = {str(g): d for g, d in dims.items()}
    closure.notes["lowest_grade"] = min(dims, default=0)
    closure.notes["scope"] = "within window"
    reports = [compat, closure]
    stability = CheckReport("stability")
    for grade, mu in elements:
        stability.merge(check_compatibility(mu, b, depth=stability_depth, tol=tol))
    reports.append(stability)
    if check_jacobi:
        jac = CheckReport("Y'_{P(z)} jacobi")
        for grade, mu in elements:
            for u in gens:
                for v in gens:
                    dual_jacobi_check(mu, u, v, b, tol=tol, report=jac)
        reports.append(jac)
    return LocalModule(elements, dims, _l0_weight(lam, b, tol) if lam.values else None, reports)


# ---------------------------------------------------------------------------
# products and iterates


class TripleMap:
    """Trilinear map ``W1 x W2 x W3 -> completion of W4`` obtained by composing two maps.

    ``tail`` is the largest magnitude contributed by the first intermediate
    weight layer left out of the truncated sum (``None`` if every layer of
    the intermediate window was used, in which case ``tail_estimate`` holds
    the magnitude of the highest retained layer instead).

    A component is *settled* when the top ``settle_layers`` retained
    intermediate layers contribute nothing to it, so the truncated sum has
    visibly stopped moving there; comparisons skip unsettled components.
    """

    def __init__(self, modules: tuple, fn: Callable, z1, z2, layer: str = EXACT, name: str = "F"):
        self.W1, self.W2, self.W3, self.W4 = modules
        self._fn = fn
        self.z1, self.z2 = z1, z2
        self.layer = layer
        self.name = name
        self.tail = None
        self.tail_estimate = 0.0
        self.settle_layers = 0
        self._unsettled: dict = {}
        self._cache: dict = {}

    @property
    def modules(self) -> tuple:
        return self.W1, self.W2, self.W3, self.W4

    def components(self, i1: int, i2: int, i3: int) -> Components:
        key = (i1, i2, i3)
        hit = self._cache.get(key)
        if hit is None:
            hit = {h: v for h, v in self._fn(i1, i2, i3).items() if v and self.W4.in_window(h)}
            self._cache[key] = hit
        return hit

    def settled(self, w1: QVec, w2: QVec, w3: QVec, h) -> bool:
        for a in w1:
            for b in w2:
                for c in w3:
                    self.components(a, b, c)
                    if h in self._unsettled.get((a, b, c), ()):
                        return False
        return True

    def apply_components(self, w1: QVec, w2: QVec, w3: QVec) -> Components:
        acc: dict = {}
        for a, ca in w1.items():
            for b, cb in w2.items():
                for c, cc in w3.items():
                    s = ca * cb * cc
                    for h, vec in self.components(a, b, c).items():
                        acc.setdefault(h, []).append((s, vec))
        return _pure({h: _combine(terms) for h, terms in acc.items()})

    def perturbed(self, i1: int, i2: int, i3: int, h, delta: QVec) -> "TripleMap":
        src, h = self, rat(h)

        def fn(a, b, c):
            t = dict(src.components(a, b, c))
            if (a, b, c) == (i1, i2, i3):
                _add(t, h, delta)
            return t

        out = TripleMap(self.modules, fn, self.z1, self.z2, self.layer, self.name + "~")
        out._unsettled = self._unsettled
        out.settle_layers = self.settle_layers
        return out


def _layer_magnitude(comps: Components) -> float:
    return max((abs(c) for v in comps.values() for c in v.values()), default=0.0)


def compose_maps(kind: str, outer: PzMap, inner: PzMap, intermediate_max=None) -> TripleMap:
    """Truncated ``gamma(outer; 1, inner)`` (``kind="product"``) or ``gamma(outer; inner, 1)``
    (``kind="iterate"``) summed over intermediate weights ``<= intermediate_max``.

    Product: ``F(w1, w2, w3) = outer(w1, inner(w2, w3))`` with ``|z1| > |z2| > 0``.
    Iterate: ``F(w1, w2, w3) = outer(inner(w1, w2), w3)`` with ``|z2| > |z0| > 0``;
    here the outer point is ``z2`` and the inner point is ``z0 = z1 - z2``.
    """
    if outer.branch is None or inner.branch is None:
        raise WindowTooSmall("both maps need a branch choice")
    if kind == "product":
        M = inner.W3
        if outer.W2 is not M:
            raise SlotMismatch("the outer map must take the inner map's target in its second slot")
        z1, z2 = outer.branch.z, inner.branch.z
        if not abs(complex(z1)) > abs(complex(z2)) > 0:
            raise RegionViolation(f"product needs |z1| > |z2| > 0, got z1={z1}, z2={z2}")
        modules = (outer.W1, inner.W1, inner.W2, outer.W3)
    elif kind == "iterate":
        M = inner.W3
        if outer.W1 is not M:
            raise SlotMismatch("the outer map must take the inner map's target in its first slot")
        z2, z0 = outer.branch.z, inner.branch.z
        if not abs(complex(z2)) > abs(complex(z0)) > 0:
            raise RegionViolation(f"iterate needs |z2| > |z0| > 0, got z2={z2}, z0={z0}")
        z1 = z0 + z2
        modules = (inner.W1, inner.W2, outer.W2, outer.W3)
    else:
        raise ValueError(f"unknown composition {kind!r}")
    hmax = M.wmax if intermediate_max is None else rat(intermediate_max)
    if hmax < M.wmin:
        raise WindowTooSmall("intermediate window is empty")
    above = [h for h in M.weights() if h > hmax]
    next_layer = min(above) if above else None
    layer = COMPLEX if COMPLEX in (outer.layer, inner.layer) else EXACT
    F = TripleMap(modules, None, z1, z2, layer, f"{kind}({outer.name},{inner.name})")
    kept = sorted(h for h in M.weights() if h <= hmax)
    F.settle_layers = min(2, len(kept))
    watch = set(kept[len(kept) - F.settle_layers:])

    def outer_on(i_first: int, m: QVec, i_last: int) -> Components:
        if kind == "product":
            return outer.apply_components(outer.W1.unit(i_first), m)
        return outer.apply_components(m, outer.W2.unit(i_last))

    def fn(a, b, c):
        if kind == "product":
            mids = inner.components(b, c)
        else:
            mids = inner.components(a, b)
        acc: dict = {}
        moving: set = set()
        top_seen = None
        for h, m in sorted(mids.items()):
            if h > hmax:
                if h == next_layer:
                    mag = _layer_magnitude(outer_on(a, m, c))
                    F.tail = max(F.tail or 0.0, mag)
                continue
            contrib = outer_on(a, m, c)
            for h4, vec in contrib.items():
                _add(acc, h4, vec)
                if h in watch and any(abs(x) > 1e-13 for x in vec.values()):
                    moving.add(h4)
            if top_seen is None or h >= top_seen[0]:
                top_seen = (h, _layer_magnitude(contrib))
        if next_layer is None and top_seen is not None:
            F.tail_estimate = max(F.tail_estimate, top_seen[1])
        F._unsettled[(a, b, c)] = moving
        return acc

    F._fn = fn
    return F


def _pair_sum(j: int, jp: int, s: int, left, right):
    """``sum_{i + i' = s} C(j, i) C(j', i') left(j - i) right(j' - i')``."""
    total = 0
    for i in range(0, s + 1):
        c = binom(j, i) * binom(jp, s - i)
        if c != 0:
            total = total + c * left(j - i, i) * right(jp - s + i, s - i)
    return total


def pz1z2_jacobi_check(F: TripleMap, v, i1: int, i2: int, i3: int, depth: int = 2, tol: float = 1e-8,
                       report: CheckReport | None = None) -> CheckReport:
    """Composite Jacobi identity at ``x0^A x1^B x2^C`` for one test quadruple::

        x1^{-1}d((x0-z1)/x1) x2^{-1}d((x0-z2)/x2) Y4(v,x0) F
          = x0^{-1}d((z1+x1)/x0) x2^{-1}d((z0+x1)/x2) F(Y1(v,x1) w1, w2, w3)
          + x0^{-1}d((z2+x2)/x0) x1^{-1}d((-z0+x2)/x1) F(w1, Y2(v,x2) w2, w3)
          + x1^{-1}d((-z1+x0)/x1) x2^{-1}d((-z2+x0)/x2) F(w1, w2, Y3(v,x0) w3)
    """
    rep = report or CheckReport("P(z1,z2)-jacobi")
    W1, W2, W3, W4 = F.modules
    z1, z2 = F.z1, F.z2
    z0 = z1 - z2
    vec, k = _algebra_vec(W1, v)
    modes = _Modes(vec)
    e = (W1.unit(i1), W2.unit(i2), W3.unit(i3))
    wts = (W1.weight(i1), W2.weight(i2), W3.weight(i3))
    base = F.apply_components(*e)
    Amax = math.floor(W3.wmax - wts[2] - k)
    Bmax = math.floor(W1.wmax - wts[0] - k)
    Cmax = math.floor(W2.wmax - wts[1] - k)

    def power(x):
        return lambda e_, i_: x ** e_

    def slot_side(slot: int, W, j: int, jp: int, mono: int, a, b_):
        """``sum_s [sum_{i+i'=s} C(j,i)C(j',i') a^{j-i} b^{j'-i'}] F(.., v_{s-mono-1} w, ..)``.

        ``None`` when a needed component lies past the trusted range."""
        out, s = [], 0
        while wts[slot] + k + mono - s >= W.wmin:
            u = modes.y(W, s - mono - 1).apply(e[slot])
            if u:
                args = list(e)
                args[slot] = u
                if not F.settled(*args, H):
                    return None
                c = _pair_sum(j, jp, s, power(a), power(b_))
                _accumulate(out, c, F.apply_components(*args).get(H, QVec()))
            s += 1
        return out

    def span(top_):
        # reach down to monomials whose modes do not raise weight
        return range(min(top_, -k) - depth, top_ + 1)

    for A in span(Amax):
        for B in span(Bmax):
            for C in span(Cmax):
                j, jp = -B - 1, -C - 1
                for H in W4.weights():
                    if H - k + j + jp - A > W4.wmax:
                        continue
                    lhs, s, ok = [], 0, True
                    while H - k + j + jp - s - A >= W4.wmin:
                        h = H - k + j + jp - s - A
                        if not F.settled(*e, h):
                            ok = False
                            break
                        comp = base.get(h)
                        if comp:
                            m = j + jp - s - A - 1
                            c = _pair_sum(j, jp, s, lambda e_, i_: (-z1) ** i_, lambda e_, i_: (-z2) ** i_)
                            _accumulate(lhs, c, modes.y(W4, m).apply(comp))
                        s += 1
                    r1 = slot_side(0, W1, -A - 1, -C - 1, B, z1, z0)
                    r2 = slot_side(1, W2, -A - 1, -B - 1, C, z2, -z0)
                    r3 = slot_side(2, W3, -B - 1, -C - 1, A, -z1, -z2)
                    if not ok or r1 is None or r2 is None or r3 is None:
                        rep.notes["unsettled_skipped"] = rep.notes.get("unsettled_skipped", 0) + 1
                        continue
                    left, right = _combine(lhs), _combine(r1 + r2 + r3)
                    rep.record(close(left, right, tol), monomial=f"x0^{A} x1^{B} x2^{C}", weight=H,
                               quadruple=f"({_vname(vec)},{i1},{i2},{i3})", lhs=left, rhs=right)
    return rep


def check_pz1z2_jacobi(F: TripleMap, quadruples: Iterable[tuple] | None = None, count: int = 6,
                       seed: int = 0, depth: int = 2, tol: float = 1e-8) -> CheckReport:
    """Run the composite Jacobi identity over test data ``(v, i1, i2, i3)``."""
    if F.z1 == F.z2:
        raise RegionViolation("z0 = z1 - z2 must be nonzero")
    rep = CheckReport("P(z1,z2)-jacobi")
    if quadruples is None:
        rng = random.Random(seed)
        V = F.W1.algebra
        vs = [i for i in range(V.dim) if V.weight(i) <= 2]
        # low levels: higher inputs mostly meet unsettled components
        low = [[i for i in range(W.dim) if W.weight(i) <= W.wmin + 1] for W in (F.W1, F.W2, F.W3)]
        quadruples = [(rng.choice(vs), *(rng.choice(x) for x in low)) for _ in range(count)]
    quadruples = list(quadruples)
    for v, a, b, c in quadruples:
        pz1z2_jacobi_check(F, v, a, b, c, depth, tol, rep)
    if rep.checked == 0 and quadruples:
        raise WindowTooSmall("no composite Jacobi coefficient is determined inside the windows")
    rep.notes["tail"] = F.tail if F.tail is not None else "none discarded"
    rep.notes["tail_estimate"] = F.tail_estimate
    return rep


def triple_maps_close(F: TripleMap, G: TripleMap, tol: float = 1e-8, triples: Iterable[tuple] | None = None) -> CheckReport:
    """Compare two trilinear maps on components settled in both."""
    rep = CheckReport("composition agreement")
    if F.modules != G.modules:
        raise SlotMismatch("the maps act on different modules")
    if triples is None:
        low = [[i for i in range(W.dim) if W.weight(i) <= W.wmin + 1] for W in (F.W1, F.W2, F.W3)]
        triples = [(a, b, c) for a in low[0] for b in low[1] for c in low[2]]
    skipped = 0
    for a, b, c in triples:
        x, y = F.components(a, b, c), G.components(a, b, c)
        e = (F.W1.unit(a), F.W2.unit(b), F.W3.unit(c))
        for h in sorted(set(x) | set(y)):
            if not (F.settled(*e, h) and G.settled(*e, h)):
                skipped += 1
                continue
            left, right = x.get(h, QVec()), y.get(h, QVec())
            rep.record(close(left, right, tol), triple=(a, b, c), weight=h, left=left, right=right)
    rep.notes["unsettled_skipped"] = skipped
    return rep


def triple_functional(F: TripleMap, w4_dual: QVec, support: tuple | None = None) -> DualElement:
    """``lambda = w4' o F`` on basis triples (optionally only those in ``support``)."""
    ranges = support or (range(F.W1.dim), range(F.W2.dim), range(F.W3.dim))
    vals = {}
    for a in ranges[0]:
        for b in ranges[1]:
            for c in ranges[2]:
                comps = F.components(a, b, c)
                s = sum((w4_dual.get(j, 0) * x for vec in comps.values() for j, x in vec.items()), 0)
                if s != 0:
                    vals[(a, b, c)] = s
    return DualElement((F.W1, F.W2, F.W3), vals, (F.W1.wmax, F.W2.wmax, F.W3.wmax))


def mu_slice(lam: DualElement, which: int, w: QVec) -> DualElement:
    """``mu^(1) = lambda(w (x) . (x) .)`` on ``W2 (x) W3`` or ``mu^(2) = lambda(. (x) . (x) w)`` on ``W1 (x) W2``."""
    if lam.arity != 3:
        raise SlotMismatch("slices are taken of functionals with three arguments")
    if which not in (1, 2):
        raise SlotMismatch(f"slice index must be 1 or 2, got {which}")
    slot = 0 if which == 1 else 2
    W = lam.modules[slot]
    if any(not isinstance(i, int) or not 0 <= i < W.dim for i in w):
        raise SlotMismatch(f"vector does not belong to {W.name}")
    vals: dict = {}
    for key, c in lam.values.items():
        x = w.get(key[slot], 0)
        if x:
            rest = key[1:] if slot == 0 else key[:2]
            vals[rest] = vals.get(rest, 0) + c * x
    keep = [s for s in range(3) if s != slot]
    bounds = tuple(lam.bounds[s] for s in keep)
    return DualElement(tuple(lam.modules[s] for s in keep), vals, bounds)

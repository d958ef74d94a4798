"""Finite truncations of generalized modules.

A :class:`GradedModule` is a list of basis vectors with rational weights and
integer-vector group labels, a weight window, the mode matrices of a few
generating fields, and the Virasoro operators ``L(n)``.  Matrices are only
trusted on columns whose image weight stays inside the window; every check
here restricts itself to those columns.

Modes of arbitrary vertex-algebra elements are obtained from the generator
modes by the iterate formula::

    (g_l u)_n = sum_i (-1)^i C(l, i) (g_{l-i} u_{n+i} - (-1)^l u_{l+n-i} g_i)

which only passes through vectors of weight at most the final weight, so
results are exact within the window.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import CommutationFailure, ModuleDataError, NotHomogeneous, NotNilpotent
from .formal_series import LogSeries, mono
from .linalg import SparseMatrix, rank, row_reduce
from .scalars import QVec, binom, lincomb, rat, rat_str


@dataclass(frozen=True)
class BasisVector:
    label: str
    weight: Fraction
    group: tuple = ()


@dataclass(frozen=True)
class Generator:
    weight: Fraction
    group: tuple = ()


def _add_groups(a: tuple, b: tuple) -> tuple:
    if not a:
        return b
    if not b:
        return a
    return tuple(x + y for x, y in zip(a, b))


class GradedModule:
    """Truncated generalized module for a vertex algebra.

    ``algebra`` is the vertex algebra acting (itself when this module *is* the
    algebra).  An algebra additionally carries ``vacuum`` and ``creation``:
    ``creation[b] = (g, l, r)`` records basis vector ``b`` as ``g_l`` applied
    to basis vector ``r``.  ``generator_vectors[g]`` is the index of ``g_{-1} 1`` and ``conformal_vector``
    is the conformal vector as a :class:`QVec`.
    """

    def __init__(self, name: str, basis: Iterable[BasisVector], window: tuple,
                 generators: Mapping[str, Generator], modes: Mapping[tuple, SparseMatrix],
                 virasoro: Mapping[int, SparseMatrix], central_charge=Fraction(0),
                 algebra: "GradedModule | None" = None, vacuum: int | None = None,
                 creation: Mapping[int, tuple] | None = None,
                 generator_vectors: Mapping[str, int] | None = None,
                 conformal_vector: QVec | None = None, validate: bool = True):
        self.name = name
        self.basis = tuple(basis)
        lo, hi = window
        self.window = (None if lo is None else rat(lo), rat(hi))
        self.generators = dict(generators)
        self.modes = {(g, int(n)): m for (g, n), m in modes.items()}
        self.virasoro = {int(n): m for n, m in virasoro.items()}
        self.central_charge = rat(central_charge)
        self.vacuum = vacuum
        self.creation = dict(creation or {})
        self.generator_vectors = dict(generator_vectors or {})
        self.conformal_vector = conformal_vector
        self.algebra = self if (algebra is None and vacuum is not None) else algebra
        self._mode_cache: dict = {}
        self._ws: dict[Fraction, list[int]] = {}
        for i, b in enumerate(self.basis):
            self._ws.setdefault(b.weight, []).append(i)
        self._labels = {b.label: i for i, b in enumerate(self.basis)}
        if validate:
            validate_module(self)

    # -- basic data ----------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def wmin(self) -> Fraction:
        lo = self.window[0]
        return lo if lo is not None else min((b.weight for b in self.basis), default=Fraction(0))

    @property
    def wmax(self) -> Fraction:
        return self.window[1]

    @property
    def span(self) -> Fraction:
        return self.wmax - self.wmin

    def weight(self, i: int) -> Fraction:
        return self.basis[i].weight

    def group(self, i: int) -> tuple:
        return self.basis[i].group

    def index(self, label: str) -> int:
        return self._labels[label]

    def weights(self) -> list[Fraction]:
        return sorted(self._ws)

    def weight_space(self, h) -> list[int]:
        return list(self._ws.get(rat(h), []))

    def in_window(self, h) -> bool:
        return self.wmin <= h <= self.wmax

    def unit(self, i: int) -> QVec:
        return QVec({i: Fraction(1)})

    def weight_of(self, vec: QVec):
        """Common weight of a homogeneous vector, else :class:`NotHomogeneous`."""
        ws = {self.weight(i) for i in vec}
        if len(ws) > 1:
            raise NotHomogeneous(f"vector spans weights {sorted(ws)}")
        return ws.pop() if ws else None

    # -- operators -----------------------------------------------------------
    def mode(self, g: str, n: int) -> SparseMatrix:
        m = self.modes.get((g, n))
        return m if m is not None else SparseMatrix.zero(self.dim, self.dim)

    def L(self, n: int) -> SparseMatrix:
        m = self.virasoro.get(n)
        return m if m is not None else SparseMatrix.zero(self.dim, self.dim)

    @property
    def l_ops(self) -> tuple:
        return self.L(-1), self.L(0), self.L(1)

    def mode_shift(self, g: str, n: int) -> Fraction:
        return self.generators[g].weight - n - 1

    def defined_columns(self, shift) -> set[int]:
        """Columns whose image under a map of weight shift ``shift`` stays in the window."""
        return {i for i, b in enumerate(self.basis) if b.weight + shift <= self.wmax}

    def vertex_mode(self, v, n: int) -> SparseMatrix:
        """Matrix of ``v_n`` for ``v`` an algebra vector (index or :class:`QVec`), restricted
        to the columns where it is exact."""
        if isinstance(v, int):
            return self._basis_mode(v, n)
        out = SparseMatrix.zero(self.dim, self.dim)
        for b, c in v.items():
            out = out + self._basis_mode(b, n) * c
        return out

    def _basis_mode(self, b: int, n: int) -> SparseMatrix:
        key = (b, n)
        hit = self._mode_cache.get(key)
        if hit is not None:
            return hit
        V = self.algebra
        if V is None:
            raise ModuleDataError("algebra", f"module {self.name} has no vertex algebra attached")
        wt_b = V.weight(b)
        cols = self.defined_columns(wt_b - n - 1)
        if b == V.vacuum:
            res = SparseMatrix({c: self.unit(c) for c in cols} if n == -1 else {}, self.dim, self.dim)
        else:
            g, l, r = V.creation[b]
            if r == V.vacuum and l == -1:
                res = self.mode(g, n).restrict_columns(cols)
            else:
                res = self._iterate(g, l, r, n, cols)
        self._mode_cache[key] = res
        return res

    def _iterate(self, g: str, l: int, r: int, n: int, cols: set[int]) -> SparseMatrix:
        V = self.algebra
        wt_g = V.generators[g].weight
        wt_r = V.weight(r)
        imax = int(math.floor(max(wt_r - n - 1, self.span + wt_g - 1))) + 1
        sign_l = -1 if l % 2 else 1
        out: dict[int, list] = {c: [] for c in cols}
        for i in range(0, max(imax, 0) + 1):
            c_i = binom(l, i) * (-1) ** i
            if c_i == 0:
                continue
            G1 = self.mode(g, l - i)
            R1 = self._basis_mode(r, n + i)
            R2 = self._basis_mode(r, l + n - i)
            G2 = self.mode(g, i)
            for c in cols:
                x = R1.column(c)
                if x:
                    out[c].append((c_i, G1.apply(x)))
                y = G2.column(c)
                if y:
                    out[c].append((-sign_l * c_i, R2.apply(y)))
        return SparseMatrix({c: lincomb(terms) for c, terms in out.items()}, self.dim, self.dim)


# ---------------------------------------------------------------------------
# validation


def _mode_range(W: GradedModule, g: str) -> range:
    """Mode indices whose weight shift can keep some vector inside the window."""
    wt = W.generators[g].weight
    lo = int(math.ceil(wt - 1 - W.span))
    hi = int(math.floor(wt - 1 + W.span))
    return range(lo, hi + 1)


def validate_module(W: GradedModule):
    """Refuse inconsistent module data with a located error."""
    for i, b in enumerate(W.basis):
        if b.weight > W.wmax or (W.window[0] is not None and b.weight < W.window[0]):
            raise ModuleDataError(f"basis[{i}]", f"weight {b.weight} outside window {W.window}")
    for (g, n), M in W.modes.items():
        if g not in W.generators:
            raise ModuleDataError(f"modes[{g},{n}]", "unknown generator")
        shift = W.mode_shift(g, n)
        lab = W.generators[g].group
        for c, col in M.cols.items():
            for r in col:
                if W.weight(r) != W.weight(c) + shift:
                    raise ModuleDataError(f"modes[{g},{n}] entry ({r},{c})",
                                          f"maps weight {W.weight(c)} to {W.weight(r)}, expected shift {shift}")
                if W.group(r) != _add_groups(lab, W.group(c)):
                    raise ModuleDataError(f"modes[{g},{n}] entry ({r},{c})", "group label not additive")
    for g in W.generators:
        for n in _mode_range(W, g):
            # absent modes inside the reachable range are zero maps
            W.modes.setdefault((g, n), SparseMatrix.zero(W.dim, W.dim))
    for n, M in W.virasoro.items():
        for c, col in M.cols.items():
            for r in col:
                if W.weight(r) != W.weight(c) - n:
                    raise ModuleDataError(f"virasoro[{n}] entry ({r},{c})", "wrong weight shift")
                if W.group(r) != W.group(c):
                    raise ModuleDataError(f"virasoro[{n}] entry ({r},{c})", "L(n) must preserve group labels")
    if 0 in W.virasoro:
        split_l0(W)
    fails = virasoro_failures(W)
    if fails:
        m, n, c = fails[0]
        raise ModuleDataError(f"virasoro[{m}],virasoro[{n}] column {c}", "Virasoro bracket fails")


def virasoro_failures(W: GradedModule, modes: Iterable[int] | None = None) -> list[tuple]:
    """Columns where ``[L(m), L(n)] = (m-n) L(m+n) + c/12 (m^3 - m) delta`` fails."""
    stored = sorted(W.virasoro) if modes is None else list(modes)
    out = []
    for m in stored:
        for n in stored:
            if m >= n or ((m + n) not in W.virasoro and abs(m + n) <= W.span):
                continue
            Lm, Ln, Lmn = W.L(m), W.L(n), W.L(m + n)
            for c in range(W.dim):
                h = W.weight(c)
                if not (W.in_window(h - n) and W.in_window(h - m) and W.in_window(h - m - n)):
                    continue
                e = W.unit(c)
                lhs = Lm.apply(Ln.apply(e)) - Ln.apply(Lm.apply(e))
                rhs = Lmn.apply(e) * (m - n)
                if m + n == 0:
                    rhs = rhs + e * (W.central_charge * (m ** 3 - m) / 12)
                if lhs != rhs:
                    out.append((m, n, c))
    return out


# ---------------------------------------------------------------------------
# L(0) structure


def split_l0(W: GradedModule) -> tuple[SparseMatrix, SparseMatrix]:
    """Semisimple and nilpotent parts of ``L(0)``; checks that the nilpotent part is
    nilpotent and commutes with every stored mode."""
    L0 = W.L(0)
    S = SparseMatrix({i: QVec({i: b.weight}) for i, b in enumerate(W.basis) if b.weight != 0}, W.dim, W.dim)
    N = L0 - S
    for c, col in N.cols.items():
        for r in col:
            if W.weight(r) != W.weight(c):
                raise ModuleDataError(f"virasoro[0] entry ({r},{c})", "L(0) mixes weight spaces")
    bound = max((len(v) for v in W._ws.values()), default=0)
    P = N
    for _ in range(bound):
        if P.is_zero():
            break
        P = N @ P
    if not P.is_zero():
        raise NotNilpotent("L(0) minus its weight is not nilpotent")
    for (g, n), M in W.modes.items():
        if not _commutes(N, M):
            raise CommutationFailure(f"{g}({n})")
    for n, M in W.virasoro.items():
        if not _commutes(N, M):
            raise CommutationFailure(f"L({n})")
    return S, N


def _commutes(N: SparseMatrix, M: SparseMatrix) -> bool:
    for c, col in M.cols.items():
        if N.apply(col) != M.apply(N.column(c)):
            return False
    # columns of N that M kills but whose N-image M does not kill
    for c, ncol in N.cols.items():
        if c not in M.cols and M.apply(ncol):
            return False
    return True


def nilpotent_part(W: GradedModule) -> SparseMatrix:
    N = getattr(W, "_nilpotent", None)
    if N is None:
        L0 = W.L(0)
        S = SparseMatrix({i: QVec({i: b.weight}) for i, b in enumerate(W.basis) if b.weight != 0}, W.dim, W.dim)
        N = W._nilpotent = L0 - S
    return N


def nilpotency_index(N: SparseMatrix, w: QVec) -> int:
    """Smallest ``k`` with ``N^k w = 0`` (the Jordan index of ``w``)."""
    k = 0
    while w:
        w = N.apply(w)
        k += 1
    return k


def power_l0(W: GradedModule, w: QVec, sign: int = 1, var: str = "x") -> LogSeries:
    """``x^{+-L(0)} w = x^{+-n} sum_i (L(0)-n)^i w / i! (+-log x)^i``."""
    n = W.weight_of(w)
    if n is None:
        return LogSeries.zero(variables=(var,))
    N = nilpotent_part(W)
    terms = {}
    cur, i = w, 0
    while cur:
        terms[mono(**{var: (sign * n, i)})] = cur * Fraction(sign ** i, math.factorial(i))
        cur = N.apply(cur)
        i += 1
    return LogSeries(terms, variables=(var,))


def apply_matrix_series(M: SparseMatrix, f: LogSeries) -> LogSeries:
    return LogSeries({m: M.apply(c) for m, c in f.items()}, f.policy, f.variables)


# ---------------------------------------------------------------------------
# completion elements


class CompletionElement:
    """Truncated element of the completion: finitely many weight components."""

    def __init__(self, components: Mapping | None = None):
        self.components = {rat(h): v for h, v in (components or {}).items() if v}

    @classmethod
    def from_vector(cls, W: GradedModule, vec: QVec) -> "CompletionElement":
        acc: dict = {}
        for i, c in vec.items():
            acc.setdefault(W.weight(i), {})[i] = c
        return cls({h: QVec(d) for h, d in acc.items()})

    def __add__(self, other):
        comps = dict(self.components)
        for h, v in other.components.items():
            comps[h] = comps[h] + v if h in comps else v
        return CompletionElement(comps)

    def __eq__(self, other):
        return isinstance(other, CompletionElement) and self.components == other.components

    def total(self) -> QVec:
        out = QVec()
        for v in self.components.values():
            out = out + v
        return out


def project(c: CompletionElement, n) -> QVec:
    return c.components.get(rat(n), QVec())


# ---------------------------------------------------------------------------
# opposite operators and contragredients


def opposite_op(W: GradedModule, v: QVec | int, n: int) -> SparseMatrix:
    """``v^o_n = (-1)^k sum_m (1/m!) (L(1)^m v)_{-n-m-2+2k}`` for ``v`` of weight ``k``."""
    V = W.algebra
    if isinstance(v, int):
        v = V.unit(v)
    k = V.weight_of(v)
    if k is None:
        return SparseMatrix.zero(W.dim, W.dim)
    if k.denominator != 1:
        raise NotHomogeneous("algebra vectors have integer weight")
    k = int(k)
    L1 = V.L(1)
    out = SparseMatrix.zero(W.dim, W.dim)
    cur, m = v, 0
    while cur:
        out = out + W.vertex_mode(cur, -n - m - 2 + 2 * k) * Fraction(1, math.factorial(m))
        cur = L1.apply(cur)
        m += 1
    return out * (-1) ** k


def contragredient(W: GradedModule, name: str | None = None) -> GradedModule:
    """Graded dual with ``<Y'(v,x)w', w> = <w', Y^o(v,x) w>``.

    Basis vector ``i`` of the result is the dual of basis vector ``i`` of ``W``;
    weights are unchanged and group labels are negated.
    """
    V = W.algebra
    basis = [BasisVector(_dual_label(b.label), b.weight, tuple(-x for x in b.group)) for b in W.basis]
    modes = {}
    for g in W.generators:
        gv = V.generator_vectors[g]
        for n in _mode_range(W, g):
            M = opposite_op(W, gv, n)
            if not M.is_zero():
                modes[(g, n)] = M.transpose()
    vir = {n: M.transpose() for n, M in ((-n, W.L(n)) for n in W.virasoro)}
    dual = GradedModule(name or _dual_label(W.name), basis, W.window, W.generators, modes, vir,
                        W.central_charge, algebra=V, validate=True)
    dual.dual_of = W
    return dual


def _dual_label(label: str) -> str:
    return label[:-1] if label.endswith("'") else label + "'"


def same_structure(A: GradedModule, B: GradedModule) -> bool:
    """Basis weights, labels, mode and Virasoro matrices agree index by index."""
    if [(b.weight, b.group) for b in A.basis] != [(b.weight, b.group) for b in B.basis]:
        return False
    keys = set(A.modes) | set(B.modes)
    if any(A.mode(*k) != B.mode(*k) for k in keys):
        return False
    keys = set(A.virasoro) | set(B.virasoro)
    return all(A.L(n) == B.L(n) for n in keys)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class Report:
    passed: bool
    violations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)


def strong_grading_check(W: GradedModule) -> Report:
    """Finite-dimensional graded pieces and lower truncation per (label, weight coset)."""
    violations = []
    if W.window[0] is None:
        low = min((b.weight for b in W.basis), default=None)
        violations.append({"reason": "window unbounded below", "witness": None if low is None else rat_str(low)})
    else:
        for i, b in enumerate(W.basis):
            if b.weight < W.window[0]:
                violations.append({"reason": "weight below window", "witness": b.label})
    pieces: dict = {}
    for b in W.basis:
        key = (b.group, b.weight)
        pieces[key] = pieces.get(key, 0) + 1
    cosets: dict = {}
    for (grp, h) in pieces:
        c = (grp, h - math.floor(h))
        cosets[c] = min(cosets.get(c, h), h)
    return Report(not violations, violations,
                  {"pieces": {f"{list(g)}@{rat_str(h)}": d for (g, h), d in sorted(pieces.items())},
                   "lowest": {f"{list(g)}+{rat_str(r)}": rat_str(h) for (g, r), h in sorted(cosets.items())}})


def c1_quotient_dims(W: GradedModule) -> dict:
    """Dimensions of ``W / C_1(W)`` per weight, ``C_1(W) = span{u_{-1} w : wt u > 0}``."""
    V = W.algebra
    images: dict = {h: [] for h in W.weights()}
    if V is not None:
        for u, bu in enumerate(V.basis):
            if bu.weight <= 0 or V.weight(u) > W.span + 1:
                continue
            M = W.vertex_mode(u, -1)
            for c, col in M.cols.items():
                images[W.weight(c) + bu.weight].append(col)
    return {h: len(W.weight_space(h)) - rank(images[h]) for h in W.weights()}


# ---------------------------------------------------------------------------
# JSON


def module_to_json(W: GradedModule) -> str:
    def trip(M):
        return [[r, c, rat_str(v)] for r, c, v in M.triplets()]

    doc = {
        "name": W.name,
        "window": [None if W.window[0] is None else rat_str(W.window[0]), rat_str(W.window[1])],
        "central_charge": rat_str(W.central_charge),
        "basis": [{"label": b.label, "weight": rat_str(b.weight), "group": list(b.group)} for b in W.basis],
        "generators": {g: {"weight": rat_str(x.weight), "group": list(x.group)} for g, x in sorted(W.generators.items())},
        "modes": [{"gen": g, "n": n, "triplets": trip(M)} for (g, n), M in sorted(W.modes.items()) if not M.is_zero()],
        "virasoro": [{"n": n, "triplets": trip(M)} for n, M in sorted(W.virasoro.items())],
    }
    if W.vacuum is not None:
        doc["vacuum"] = W.vacuum
        doc["creation"] = {str(b): list(t) for b, t in sorted(W.creation.items())}
        doc["generator_vectors"] = dict(sorted(W.generator_vectors.items()))
        doc["conformal_vector"] = {str(i): rat_str(c) for i, c in sorted(W.conformal_vector.items())}
    return json.dumps(doc, sort_keys=True, indent=1)


def module_from_json(text: str, algebra: GradedModule | None = None) -> GradedModule:
    """Load and validate module data; errors carry the offending location."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModuleDataError(f"line {e.lineno} column {e.colno}", e.msg) from None

    def need(obj, key, where):
        if key not in obj:
            raise ModuleDataError(where, f"missing field {key!r}")
        return obj[key]

    def q(x, where):
        try:
            return rat(x)
        except (TypeError, ValueError, ZeroDivisionError):
            raise ModuleDataError(where, f"not an exact rational: {x!r}") from None

    basis = []
    for i, b in enumerate(need(doc, "basis", "$")):
        basis.append(BasisVector(str(need(b, "label", f"basis[{i}]")), q(need(b, "weight", f"basis[{i}]"), f"basis[{i}].weight"),
                                 tuple(int(x) for x in b.get("group", []))))
    dim = len(basis)
    gens = {g: Generator(q(x["weight"], f"generators.{g}"), tuple(x.get("group", [])))
            for g, x in doc.get("generators", {}).items()}

    def mat(entry, where):
        trips = []
        for j, t in enumerate(need(entry, "triplets", where)):
            if len(t) != 3:
                raise ModuleDataError(f"{where}.triplets[{j}]", "expected [row, col, value]")
            r, c, v = t
            if not (0 <= r < dim and 0 <= c < dim):
                raise ModuleDataError(f"{where}.triplets[{j}]", f"index out of range for dimension {dim}")
            trips.append((r, c, q(v, f"{where}.triplets[{j}]")))
        return SparseMatrix.from_triplets(trips, dim, dim)

    modes = {}
    for i, e in enumerate(doc.get("modes", [])):
        where = f"modes[{i}]"
        g = need(e, "gen", where)
        if g not in gens:
            raise ModuleDataError(where, f"undeclared generator {g!r}")
        modes[(g, int(need(e, "n", where)))] = mat(e, where)
    vir = {int(e["n"]): mat(e, f"virasoro[{i}]") for i, e in enumerate(doc.get("virasoro", []))}
    win = need(doc, "window", "$")
    window = (None if win[0] is None else q(win[0], "window[0]"), q(win[1], "window[1]"))
    kw = {}
    if "vacuum" in doc:
        kw = dict(vacuum=doc["vacuum"], creation={int(b): (t[0], int(t[1]), int(t[2])) for b, t in doc["creation"].items()},
                  generator_vectors=doc.get("generator_vectors", {}), conformal_vector=QVec({int(i): rat(c) for i, c in doc.get("conformal_vector", {}).items()}))
    return GradedModule(doc.get("name", "W"), basis, window, gens, modes, vir,
                        q(doc.get("central_charge", "0"), "central_charge"), algebra=algebra, **kw)

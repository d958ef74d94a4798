"""Rank-one free boson: the vertex algebra, Fock modules with a Jordan zero
mode, and their logarithmic intertwining operators.

A Fock basis vector is an oscillator partition ``(n_1 >= ... >= n_k)``,
meaning ``a(-n_1)...a(-n_k)`` applied to the top, tensored with a slot of a
finite "slot space" on which the zero mode acts as ``momentum + J`` with
``J`` nilpotent.  A Jordan block ``J`` makes ``L(0)`` non-semisimple.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

from gmpy2 import mpq as _Q

from .errors import ModuleDataError, ScaleExceeded
from .graded_modules import BasisVector, Generator, GradedModule
from .linalg import SparseMatrix
from .scalars import QVec, lincomb, rat, rat_str

MAX_VOA_TRUNCATION = 8
MAX_FOCK_TRUNCATION = 6
MAX_JORDAN_RANK = 2


@lru_cache(maxsize=None)
def partitions(level: int) -> tuple:
    """Partitions of ``level`` as weakly decreasing tuples, in a fixed order."""
    out = []

    def rec(rem, cap, acc):
        if rem == 0:
            out.append(tuple(acc))
            return
        for part in range(min(rem, cap), 0, -1):
            rec(rem - part, part, acc + [part])

    rec(level, level, [])
    return tuple(out)


def jordan_shift(m: int) -> SparseMatrix:
    """Nilpotent ``J`` with ``J e_s = e_{s-1}``; slot 0 is the eigenvector."""
    return SparseMatrix({s: QVec({s - 1: Fraction(1)}) for s in range(1, m)}, m, m)


def kron(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    """``A (x) B`` on slot pairs ``(s, t) -> s * B.ncols + t``."""
    cols = {}
    for s in range(A.ncols):
        for t in range(B.ncols):
            a, b = A.column(s), B.column(t)
            cols[s * B.ncols + t] = QVec({i * B.nrows + j: x * y for i, x in a.items() for j, y in b.items()})
    return SparseMatrix(cols, A.nrows * B.nrows, A.ncols * B.ncols)


class FockSpace:
    """Index bookkeeping and oscillator action for one Fock module."""

    def __init__(self, momentum, J: SparseMatrix, N: int, name: str):
        self.momentum = rat(momentum)
        self.J = J
        self.slots = J.ncols
        self.N = N
        self.name = name
        self.keys = [(p, s) for lev in range(N + 1) for p in partitions(lev) for s in range(self.slots)]
        self.index = {k: i for i, k in enumerate(self.keys)}
        self.top = self.momentum ** 2 / 2

    def level(self, i: int) -> int:
        return sum(self.keys[i][0])

    def osc(self, n: int, vec: QVec) -> QVec:
        """Apply ``a(n)``; components leaving the truncation are dropped."""
        out: dict = {}
        for i, c in vec.items():
            p, s = self.keys[i]
            if n < 0:
                q = tuple(sorted(p + (-n,), reverse=True))
                j = self.index.get((q, s))
                if j is not None:
                    out[j] = out.get(j, 0) + c
            elif n > 0:
                mult = p.count(n)
                if mult:
                    lst = list(p)
                    lst.remove(n)
                    j = self.index[(tuple(lst), s)]
                    out[j] = out.get(j, 0) + c * n * mult
            else:
                for t, x in self.J.column(s).items():
                    j = self.index[(p, t)]
                    out[j] = out.get(j, 0) + c * x
                if self.momentum:
                    out[i] = out.get(i, 0) + c * self.momentum
        return QVec(out)

    def unit(self, i: int) -> QVec:
        return QVec({i: Fraction(1)})

    def mode_matrix(self, n: int) -> SparseMatrix:
        return SparseMatrix({i: self.osc(n, self.unit(i)) for i in range(len(self.keys))},
                            len(self.keys), len(self.keys))

    def virasoro(self, n: int) -> SparseMatrix:
        """``L(n) = 1/2 sum_{p+q=n} :a(p) a(q):`` on the truncation."""
        cols = {}
        for i in range(len(self.keys)):
            e = self.unit(i)
            terms = []
            for p in range(-self.N - 1, self.N + 2):
                q = n - p
                lo, hi = min(p, q), max(p, q)
                terms.append((Fraction(1, 2), self.osc(lo, self.osc(hi, e))))
            cols[i] = lincomb(terms)
        return SparseMatrix(cols, len(self.keys), len(self.keys))

    def label(self, i: int) -> str:
        p, s = self.keys[i]
        return f"{self.name}[{','.join(map(str, p))}]{s}"

    def module(self, algebra: GradedModule | None = None, extra: dict | None = None) -> GradedModule:
        basis = [BasisVector(self.label(i), self.top + self.level(i)) for i in range(len(self.keys))]
        modes = {("a", n): self.mode_matrix(n) for n in range(-self.N, self.N + 1)}
        vir = {n: self.virasoro(n) for n in range(-self.N, self.N + 1)}
        W = GradedModule(self.name, basis, (self.top, self.top + self.N), {"a": Generator(Fraction(1))},
                         modes, vir, Fraction(1), algebra=algebra, **(extra or {}))
        W.fock = self
        return W


def build_voa(N: int) -> GradedModule:
    """Free-boson vertex algebra truncated at weight ``N`` (central charge 1)."""
    if not 0 <= N <= MAX_VOA_TRUNCATION:
        raise ScaleExceeded(f"vertex algebra truncation limited to N <= {MAX_VOA_TRUNCATION}")
    F = FockSpace(0, SparseMatrix.zero(1, 1), N, "V")
    creation = {}
    for i, (p, s) in enumerate(F.keys):
        if p:
            creation[i] = ("a", -p[0], F.index[(p[1:], 0)])
    extra = dict(vacuum=F.index[((), 0)], creation=creation,
                 generator_vectors={"a": F.index[((1,), 0)]} if N >= 1 else {},
                 conformal_vector=QVec({F.index[((1, 1), 0)]: Fraction(1, 2)}) if N >= 2 else QVec())
    return F.module(None, extra)


def fock_space(V: GradedModule, momentum, J: SparseMatrix, N: int, name: str | None = None) -> GradedModule:
    """Fock module with zero mode ``momentum + J`` on an arbitrary slot space."""
    F = FockSpace(momentum, J, N, name or f"F({rat_str(rat(momentum))})")
    return F.module(V)


def build_fock(V: GradedModule, momentum, m: int = 1, N: int = 4, name: str | None = None) -> GradedModule:
    """Fock module of the given momentum whose zero mode carries a Jordan block of size ``m``."""
    if not 1 <= m <= MAX_JORDAN_RANK:
        raise ScaleExceeded(f"Jordan rank limited to {MAX_JORDAN_RANK}")
    if not 0 <= N <= MAX_FOCK_TRUNCATION:
        raise ScaleExceeded(f"Fock truncation limited to N <= {MAX_FOCK_TRUNCATION}")
    if N > V.wmax:
        raise ScaleExceeded("module truncation exceeds the algebra truncation")
    suffix = "" if m == 1 else f"x{m}"
    return fock_space(V, momentum, jordan_shift(m), N, name or f"F({rat_str(rat(momentum))}){suffix}")



def _frac(q) -> Fraction:
    return Fraction(int(q.numerator), int(q.denominator))


def _accumulate(acc: dict, table: dict, scale=Fraction(1), dn=0):
    """``acc += scale * x^{-dn} * table`` on coefficient tables ``{(n, k): vec}``."""
    for (n, k), v in table.items():
        key = (n + dn, k)
        w = v if scale == 1 else v * scale
        s = acc[key] + w if key in acc else w
        if s:
            acc[key] = s
        else:
            acc.pop(key, None)


class _FockIntertwinerData:
    """Coefficient tables of the free-boson intertwiner ``Y(w1, x) w2``.

    Tops of W1 and W2: ``x^{a1(0) a2(0)}``, i.e.
    ``x^{lm} exp(log x * (l J2 + m J1 + J1 J2))`` on the slot pair.  Higher
    output levels follow from ``a(n) Y(top, x) top = x^n Y(a(0) top, x) top``
    for ``n > 0`` and ``sum_{n>0} a(-n) a(n) = level``.  Oscillators on W2
    move across with ``[a(-j), Y(top, x)] = x^{-j} Y(a(0) top, x)``, and
    oscillators on W1 enter through the iterate formula.
    """

    def __init__(self, W1: GradedModule, W2: GradedModule, W3: GradedModule):
        self.W1, self.W2, self.W3 = W1, W2, W3
        self.F1, self.F2, self.F3 = W1.fock, W2.fock, W3.fock
        # tables are built over gmpy2 rationals and handed out as Fractions
        self.lam, self.mu = _Q(self.F1.momentum), _Q(self.F2.momentum)
        m1, m2 = self.F1.slots, self.F2.slots
        self.zero_log = (kron(self.F1.J, SparseMatrix.identity(m2)) * self.mu
                         + kron(SparseMatrix.identity(m1), self.F2.J) * self.lam
                         + kron(self.F1.J, self.F2.J))
        self._levels: dict = {}
        self._memo: dict = {}

    # -- helpers -----------------------------------------------------------------
    def _raise(self, j: int, table: dict, base=None) -> dict:
        """Apply ``a(-j)`` in W3 to every coefficient.

        With ``base = wt1 + wt2 - 1`` of the table, coefficients that would
        land above the window are skipped.
        """
        out = {}
        limit = None if base is None else self.W3.wmax - j - base
        for nk, v in table.items():
            if limit is not None and -nk[0] > limit:
                continue
            w = self.F3.osc(-j, v)
            if w:
                out[nk] = w
        return out

    def _a0_slot(self, s: int) -> list[tuple]:
        """``a1(0)`` on top slot ``s`` as ``(coefficient, slot)`` pairs."""
        out = [(self.lam, s)] if self.lam else []
        out.extend((c, t) for t, c in self.F1.J.column(s).items())
        return out

    # -- tops --------------------------------------------------------------------
    def top_level(self, s: int, t: int, level: int) -> dict:
        """Level-``level`` output part of ``Y(top_s, x) top_t``."""
        key = (s, t, level)
        hit = self._levels.get(key)
        if hit is not None:
            return hit
        out: dict = {}
        if level == 0:
            n0 = -self.lam * self.mu - 1
            vec = QVec({s * self.F2.slots + t: _Q(1)})
            k, fact = 0, 1
            while vec:
                out[(n0, k)] = QVec({self.F3.index[((), slot)]: c / fact for slot, c in vec.items()})
                vec = self.zero_log.apply(vec)
                k += 1
                fact *= k
        elif level <= self.F3.N:
            for n in range(1, level + 1):
                prev: dict = {}
                for c, s2 in self._a0_slot(s):
                    _accumulate(prev, self.top_level(s2, t, level - n), c, -n)
                _accumulate(out, self._raise(n, prev), _Q(1, level))
        self._levels[key] = out
        return out

    # -- general pairs -------------------------------------------------------------
    def table(self, i1: int, i2: int) -> dict:
        key = (i1, i2)
        hit = self._memo.get(key)
        if hit is None:
            p1, s = self.F1.keys[i1]
            p2, t = self.F2.keys[i2]
            if p1:
                hit = self._iterate(i1, i2)
            elif p2:
                hit = self._move_w2(i1, i2)
            else:
                hit = {}
                for level in range(self.F3.N + 1):
                    hit.update(self.top_level(s, t, level))
            self._memo[key] = hit
        return hit

    def public_table(self, i1: int, i2: int) -> dict:
        return {(_frac(n), k): QVec({j: _frac(c) for j, c in v.items()})
                for (n, k), v in self.table(i1, i2).items()}

    def table_vec(self, i1: int, vec: QVec) -> dict:
        acc: dict = {}
        for i2, c in vec.items():
            _accumulate(acc, self.table(i1, i2), c)
        return acc

    def _keep(self, i1: int, i2: int, table: dict) -> dict:
        base = self.W1.weight(i1) + self.W2.weight(i2) - 1
        return {nk: v for nk, v in table.items() if v and base - nk[0] <= self.W3.wmax}

    def _move_w2(self, i1: int, i2: int) -> dict:
        """``Y(top, x) a(-j) w = a(-j) Y(top, x) w - x^{-j} Y(a(0) top, x) w``."""
        p1, s = self.F1.keys[i1]
        p2, t = self.F2.keys[i2]
        j, rest = p2[0], self.F2.index[(p2[1:], t)]
        out: dict = {}
        _accumulate(out, self._raise(j, self.table(i1, rest), self.W1.weight(i1) + self.W2.weight(rest) - 1))
        for c, s2 in self._a0_slot(s):
            _accumulate(out, self.table(self.F1.index[((), s2)], rest), -c, j)
        return self._keep(i1, i2, out)

    def _iterate(self, i1: int, i2: int) -> dict:
        """``(a_{-j} u)_{n;k} w = sum_i C(j+i-1, i) [a(-j-i) u_{n+i;k} w - (-1)^j u_{n-j-i;k} a(i) w]``."""
        p1, s = self.F1.keys[i1]
        j, u = p1[0], self.F1.index[(p1[1:], s)]
        wt_u, wt2 = self.W1.weight(u), self.W2.weight(i2)
        e2 = QVec({i2: _Q(1)})
        sign_j = -1 if j % 2 else 1
        out: dict = {}
        base = self.table(u, i2)
        imax = int(self.W3.wmax - self.W3.wmin) - j
        for i in range(0, imax + 1):
            cf = _Q(math.comb(j + i - 1, i))
            # entries (n', k) of u(x) w contribute at n = n' - i
            _accumulate(out, self._raise(j + i, base, wt_u + wt2 - 1), cf, -i)
        level2 = self.F2.level(i2)
        for i in range(0, level2 + 1):
            cf = _Q(math.comb(j + i - 1, i))
            ai = self.F2.osc(i, e2)
            if not ai:
                continue
            # entries (m, k) of u(x) a(i) w contribute at n = m + j + i
            _accumulate(out, self.table_vec(u, ai), -sign_j * cf, j + i)
        return self._keep(i1, i2, out)


def build_intertwiner(V: GradedModule, lam, mu, m1: int = 1, m2: int = 1, N: int = 4):
    """Free-boson intertwining operator of type (F(lam+mu); F(lam), F(mu)).

    The source modules carry Jordan blocks of sizes ``m1`` and ``m2``; the
    target's slot space is the tensor product of the two with zero mode
    ``lam + mu + J1 (x) 1 + 1 (x) J2``.
    """
    from .log_intertwiner import LogIntertwiner

    if not (1 <= m1 <= MAX_JORDAN_RANK and 1 <= m2 <= MAX_JORDAN_RANK):
        raise ScaleExceeded(f"Jordan rank limited to {MAX_JORDAN_RANK}")
    lam, mu = rat(lam), rat(mu)
    W1 = build_fock(V, lam, m1, N)
    W2 = build_fock(V, mu, m2, N)
    J3 = kron(jordan_shift(m1), SparseMatrix.identity(m2)) + kron(SparseMatrix.identity(m1), jordan_shift(m2))
    suffix = "" if m1 * m2 == 1 else f"x{m1}{m2}"
    W3 = fock_space(V, lam + mu, J3, N, f"F({rat_str(lam + mu)}){suffix}")
    return fock_intertwiner(W1, W2, W3)


def fock_intertwiner(W1: GradedModule, W2: GradedModule, W3: GradedModule):
    """Free-boson intertwining operator between already built Fock modules.

    ``W3`` must carry momentum ``lam + mu`` and a slot space of size
    ``m1 * m2`` laid out as the tensor product of the source slots.
    """
    from .log_intertwiner import LogIntertwiner

    F1, F2, F3 = W1.fock, W2.fock, W3.fock
    if F3.momentum != F1.momentum + F2.momentum or F3.slots != F1.slots * F2.slots:
        raise ModuleDataError("fock", f"{W3.name} is not a target for {W1.name} and {W2.name}")
    data = _FockIntertwinerData(W1, W2, W3)
    kmax = max(F1.slots + F2.slots - 2, 0)
    Y = LogIntertwiner(W1, W2, W3, data.public_table, kmax=kmax,
                       name=f"Y[{rat_str(F1.momentum)},{rat_str(F2.momentum)};{F1.slots},{F2.slots}]")
    Y.fock_data = data
    return Y

"""Sparse matrices stored column-wise as :class:`QVec` images."""
from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping

from .scalars import COMPLEX, QVec, close, lincomb


class SparseMatrix:
    """Linear map given by the images of basis columns.

    Rows and columns are integer indices into some basis; absent columns map
    to zero.  Instances are immutable.
    """

    __slots__ = ("cols", "nrows", "ncols", "_rows")

    def __init__(self, cols: Mapping[int, QVec] | None = None, nrows: int = 0, ncols: int = 0):
        self.cols = {c: v for c, v in (cols or {}).items() if v}
        self.nrows = nrows
        self.ncols = ncols

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls({i: QVec({i: Fraction(1)}) for i in range(n)}, n, n)

    @classmethod
    def zero(cls, nrows: int, ncols: int) -> "SparseMatrix":
        return cls({}, nrows, ncols)

    @classmethod
    def from_dense(cls, rows: list[list]) -> "SparseMatrix":
        nrows = len(rows)
        ncols = len(rows[0]) if rows else 0
        cols = {}
        for c in range(ncols):
            cols[c] = QVec({r: Fraction(rows[r][c]) if not isinstance(rows[r][c], complex) else rows[r][c]
                            for r in range(nrows)})
        return cls(cols, nrows, ncols)

    @classmethod
    def from_triplets(cls, triplets: Iterable[tuple], nrows: int, ncols: int) -> "SparseMatrix":
        acc: dict[int, dict] = {}
        for r, c, v in triplets:
            d = acc.setdefault(c, {})
            d[r] = d.get(r, 0) + v
        return cls({c: QVec(d) for c, d in acc.items()}, nrows, ncols)

    def triplets(self) -> list[tuple]:
        return sorted((r, c, v) for c, col in self.cols.items() for r, v in col.items())

    def to_dense(self) -> list[list]:
        out = [[Fraction(0)] * self.ncols for _ in range(self.nrows)]
        for c, col in self.cols.items():
            for r, v in col.items():
                out[r][c] = v
        return out

    def column(self, c: int) -> QVec:
        return self.cols.get(c, QVec())

    def apply(self, vec: QVec) -> QVec:
        """Matrix times vector; an exact matrix acting on a complex vector gives a complex vector."""
        if vec.layer == COMPLEX:
            d: dict = {}
            for c, v in vec.items():
                for r, m in self.cols.get(c, QVec()).items():
                    d[r] = d.get(r, 0) + v * complex(m)
            return QVec({r: x for r, x in d.items() if x != 0}, _trusted=True)
        return lincomb((v, self.cols[c]) for c, v in vec.items() if c in self.cols)

    __call__ = apply

    def __matmul__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix({c: self.apply(col) for c, col in other.cols.items()}, self.nrows, other.ncols)

    def transpose(self) -> "SparseMatrix":
        acc: dict[int, dict] = {}
        for c, col in self.cols.items():
            for r, v in col.items():
                acc.setdefault(r, {})[c] = v
        return SparseMatrix({r: QVec(d) for r, d in acc.items()}, self.ncols, self.nrows)

    @property
    def T(self) -> "SparseMatrix":
        return self.transpose()

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        cols = dict(self.cols)
        for c, v in other.cols.items():
            cols[c] = cols[c] + v if c in cols else v
        return SparseMatrix(cols, max(self.nrows, other.nrows), max(self.ncols, other.ncols))

    def __neg__(self):
        return SparseMatrix({c: -v for c, v in self.cols.items()}, self.nrows, self.ncols)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar) -> "SparseMatrix":
        return SparseMatrix({c: v * scalar for c, v in self.cols.items()}, self.nrows, self.ncols)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return self.cols == other.cols

    def __hash__(self):
        return hash(frozenset(self.cols.items()))

    def close(self, other: "SparseMatrix", tol: float = 1e-10) -> bool:
        keys = set(self.cols) | set(other.cols)
        return all(close(self.column(c), other.column(c), tol) for c in keys)

    def is_zero(self) -> bool:
        return not self.cols

    def restrict_columns(self, keep) -> "SparseMatrix":
        return SparseMatrix({c: v for c, v in self.cols.items() if c in keep}, self.nrows, self.ncols)

    def restrict_rows(self, keep) -> "SparseMatrix":
        return SparseMatrix({c: v.restrict(keep) for c, v in self.cols.items()}, self.nrows, self.ncols)

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={sum(len(v) for v in self.cols.values())})"


def row_reduce(vectors: Iterable[QVec]) -> list[tuple]:
    """Exact elimination; returns ``(pivot, reduced vector)`` pairs of an echelon basis."""
    basis: list[tuple] = []
    for vec in vectors:
        v = dict(vec.items())
        for piv, b in basis:
            c = v.get(piv)
            if c:
                for k, bv in b.items():
                    nv = v.get(k, 0) - c * bv
                    if nv == 0:
                        v.pop(k, None)
                    else:
                        v[k] = nv
        if v:
            piv = min(v, key=lambda k: (str(type(k)), k))
            inv = 1 / v[piv] if isinstance(v[piv], complex) else Fraction(1) / v[piv]
            v = {k: x * inv for k, x in v.items()}
            # keep the basis fully reduced on its pivots
            new_basis = []
            for p, b in basis:
                c = b.get(piv)
                if c:
                    b = dict(b)
                    for k, x in v.items():
                        nv = b.get(k, 0) - c * x
                        if nv == 0:
                            b.pop(k, None)
                        else:
                            b[k] = nv
                new_basis.append((p, b))
            basis = new_basis + [(piv, v)]
    return basis


def rank(vectors: Iterable[QVec]) -> int:
    return len(row_reduce(vectors))


def matrix_rank(m: SparseMatrix) -> int:
    return rank(m.cols.values())


def in_span(vec: QVec, echelon: list[tuple]) -> bool:
    v = dict(vec.items())
    for piv, b in echelon:
        c = v.get(piv)
        if c:
            for k, bv in b.items():
                nv = v.get(k, 0) - c * bv
                if nv == 0:
                    v.pop(k, None)
                else:
                    v[k] = nv
    return not v


def nullspace(m: SparseMatrix) -> list[QVec]:
    """Basis of the kernel of ``m`` over the column index set ``range(m.ncols)``."""
    rows = m.transpose()
    ech = row_reduce(rows.cols.values())
    pivots = {p for p, _ in ech}
    out = []
    for free in range(m.ncols):
        if free in pivots:
            continue
        v = {free: Fraction(1)}
        for p, b in ech:
            c = b.get(free)
            if c:
                v[p] = -c
        out.append(QVec(v))
    return out

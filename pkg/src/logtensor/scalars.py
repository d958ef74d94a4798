"""Coefficient scalars: exact rationals, exact sparse vectors, complex doubles.

The exact layer is :class:`fractions.Fraction` (or a :class:`QVec` whose
entries are fractions).  The evaluation layer is ``complex`` (or a
:class:`QVec` with complex entries).  Nothing here promotes silently; use
:func:`to_complex` to cross layers.
"""
from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping

from .errors import MixedScalarLayers

EXACT = "exact"
COMPLEX = "complex"


def rat(value) -> Fraction:
    """Coerce ints, fractions and ``"p/q"`` strings to a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as an exact rational")


def rat_str(q: Fraction) -> str:
    q = Fraction(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def layer_of(c) -> str | None:
    """Return the scalar layer of ``c``; ``None`` for an exact zero vector."""
    if isinstance(c, QVec):
        return c.layer
    if isinstance(c, complex):
        return COMPLEX
    if isinstance(c, float):
        return COMPLEX
    return EXACT


def join_layers(a: str | None, b: str | None) -> str | None:
    if a is None:
        return b
    if b is None or a == b:
        return a
    raise MixedScalarLayers(f"cannot combine {a} and {b} coefficients without explicit conversion")


def to_complex(c):
    if isinstance(c, QVec):
        return c.to_complex()
    return complex(c)


def is_zero(c) -> bool:
    if isinstance(c, QVec):
        return not c
    return c == 0


def binom(top, k: int):
    """Generalized binomial coefficient ``C(top, k)`` for rational or integer ``top``."""
    if k < 0:
        return Fraction(0) if not isinstance(top, complex) else 0j
    if isinstance(top, int) and top >= 0:
        return Fraction(math.comb(top, k)) if k <= top else Fraction(0)
    out = Fraction(1) if not isinstance(top, complex) else complex(1)
    for i in range(k):
        out = out * (top - i) / (i + 1)
    return out


def exp_i_pi(q: Fraction):
    """``exp(pi*i*q)``: exact +-1 when ``q`` is an integer, complex otherwise."""
    q = Fraction(q)
    if q.denominator == 1:
        return Fraction(-1) if q.numerator % 2 else Fraction(1)
    theta = math.pi * (q.numerator % (2 * q.denominator)) / q.denominator
    return complex(math.cos(theta), math.sin(theta))


def close(a, b, tol: float = 1e-10) -> bool:
    """Exact equality in the rational layer, relative tolerance otherwise."""
    if isinstance(a, QVec) or isinstance(b, QVec):
        a = a if isinstance(a, QVec) else QVec()
        b = b if isinstance(b, QVec) else QVec()
        if a.layer != COMPLEX and b.layer != COMPLEX:
            return a == b
        keys = set(a) | set(b)
        scale = max([1.0] + [abs(v) for v in a.values()] + [abs(v) for v in b.values()])
        return all(abs(a.get(k, 0) - b.get(k, 0)) <= tol * scale for k in keys)
    if isinstance(a, (complex, float)) or isinstance(b, (complex, float)):
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
    return a == b


class QVec(Mapping):
    """Immutable sparse vector ``{basis index: coefficient}`` with zeros pruned."""

    __slots__ = ("_d", "_layer")

    def __init__(self, data: Mapping | Iterable | None = None, *, _trusted: bool = False):
        if _trusted:
            self._d = data
        else:
            d = {}
            if data is not None:
                items = data.items() if isinstance(data, Mapping) else data
                for k, v in items:
                    if v != 0:
                        d[k] = v
            self._d = d
        lay = None
        for v in self._d.values():
            lay = COMPLEX if isinstance(v, (complex, float)) else EXACT
            break
        self._layer = lay

    @classmethod
    def basis(cls, index: int, value=Fraction(1)) -> "QVec":
        return cls({index: value})

    @property
    def layer(self) -> str | None:
        return self._layer

    def __getitem__(self, key):
        return self._d[key]

    def get(self, key, default=0):
        return self._d.get(key, default)

    def __iter__(self):
        return iter(self._d)

    def __len__(self):
        return len(self._d)

    def __bool__(self):
        return bool(self._d)

    def __hash__(self):
        return hash(frozenset(self._d.items()))

    def __eq__(self, other):
        if isinstance(other, QVec):
            return self._d == other._d
        if other == 0:
            return not self._d
        return NotImplemented

    def __repr__(self):
        inner = ", ".join(f"{k}: {v}" for k, v in sorted(self._d.items(), key=lambda kv: str(kv[0])))
        return f"QVec({{{inner}}})"

    def _check(self, other: "QVec"):
        join_layers(self._layer, other._layer)

    def __add__(self, other):
        if not isinstance(other, QVec):
            if other == 0:
                return self
            return NotImplemented
        self._check(other)
        if len(other._d) > len(self._d):
            big, small = other._d, self._d
        else:
            big, small = self._d, other._d
        d = dict(big)
        for k, v in small.items():
            s = d.get(k, 0) + v
            if s == 0:
                d.pop(k, None)
            else:
                d[k] = s
        return QVec(d, _trusted=True)

    __radd__ = __add__

    def __neg__(self):
        return QVec({k: -v for k, v in self._d.items()}, _trusted=True)

    def __sub__(self, other):
        if not isinstance(other, QVec):
            if other == 0:
                return self
            return NotImplemented
        return self + (-other)

    def __mul__(self, scalar):
        if isinstance(scalar, QVec):
            return NotImplemented
        if scalar == 0:
            return QVec()
        if isinstance(scalar, (complex, float)) and self._layer == EXACT:
            raise MixedScalarLayers("scaling an exact vector by a complex scalar; convert first")
        if self._layer == COMPLEX and not isinstance(scalar, (complex, float)):
            scalar = complex(scalar)
        if scalar == 1:
            return self
        return QVec({k: v * scalar for k, v in self._d.items()}, _trusted=True)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, (complex, float)):
            return self * (1 / scalar)
        return self * (Fraction(1) / Fraction(scalar))

    def dot(self, other: "QVec"):
        if len(other) < len(self):
            self, other = other, self
        s = 0
        for k, v in self._d.items():
            w = other._d.get(k)
            if w is not None:
                s += v * w
        return s

    def to_complex(self) -> "QVec":
        return QVec({k: complex(v) for k, v in self._d.items()}, _trusted=True)

    def norm(self) -> float:
        return max((abs(v) for v in self._d.values()), default=0.0)

    def items(self):
        return self._d.items()

    def restrict(self, keys) -> "QVec":
        return QVec({k: v for k, v in self._d.items() if k in keys}, _trusted=True)


def vsum(vectors: Iterable[QVec]) -> QVec:
    """Sum sparse vectors in one pass (cheaper than repeated ``+``)."""
    d: dict = {}
    lay = None
    for vec in vectors:
        if not vec:
            continue
        lay = join_layers(lay, vec.layer)
        for k, v in vec.items():
            d[k] = d.get(k, 0) + v
    return QVec({k: v for k, v in d.items() if v != 0}, _trusted=True)


def lincomb(pairs: Iterable[tuple]) -> QVec:
    """``sum(c * v for c, v in pairs)`` without intermediate vectors."""
    d: dict = {}
    lay = None
    for c, vec in pairs:
        if c == 0 or not vec:
            continue
        lay = join_layers(lay, vec.layer)
        if lay == EXACT and isinstance(c, (complex, float)):
            raise MixedScalarLayers("complex scalar on an exact vector; convert first")
        for k, v in vec.items():
            d[k] = d.get(k, 0) + c * v
    out = {k: v for k, v in d.items() if v != 0}
    return QVec(out, _trusted=True)

"""Sparse exact series in formal variables ``x`` and their companions ``log x``.

A :class:`LogSeries` is a finite map ``Monomial -> coefficient``.  A monomial
records, for each variable, a rational exponent and a nonnegative integer
log degree, so ``3 * x^(1/2) * log(x)^2`` is one term.  Every series carries
a :class:`TruncationPolicy`; terms outside it are dropped on construction,
and a log degree above the policy cap is an error rather than a silent cut.
"""
from __future__ import annotations


import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import (
    IncompatiblePolicies,
    LogDegreeOverflow,
    LogDegreePresent,
    ParseError,
    PolicyOverflow,
    WindowEmpty,
)
from .scalars import COMPLEX, EXACT, QVec, binom, close, join_layers, layer_of, rat, rat_str

DEFAULT_LOG_CAP = 8
DEFAULT_MAX_ORDER = 64

# ---------------------------------------------------------------------------
# monomials

Monomial = tuple  # sorted tuple of (var, exponent: Fraction, log_degree: int)

ONE: Monomial = ()


def mono(**powers) -> Monomial:
    """Build a monomial: ``mono(x=Fraction(1, 2), y=(2, 1))`` is ``x^(1/2) y^2 log(y)``."""
    entries = []
    for var, p in powers.items():
        if isinstance(p, tuple):
            e, k = rat(p[0]), int(p[1])
        else:
            e, k = rat(p), 0
        if k < 0:
            raise ValueError("log degrees are nonnegative")
        if e != 0 or k != 0:
            entries.append((var, e, k))
    return tuple(sorted(entries))


def mono_part(m: Monomial, var: str) -> tuple[Fraction, int]:
    for v, e, k in m:
        if v == var:
            return e, k
    return Fraction(0), 0


def mono_replace(m: Monomial, var: str, e, k: int) -> Monomial:
    rest = [t for t in m if t[0] != var]
    if e != 0 or k != 0:
        rest.append((var, Fraction(e), k))
    return tuple(sorted(rest))


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    # both are sorted by variable with one entry each: merge
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        va, vb = a[i][0], b[j][0]
        if va == vb:
            e, k = a[i][1] + b[j][1], a[i][2] + b[j][2]
            if e != 0 or k != 0:
                out.append((va, e, k))
            i += 1
            j += 1
        elif va < vb:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def mono_vars(m: Monomial) -> set[str]:
    return {v for v, _, _ in m}


def mono_str(m: Monomial) -> str:
    if not m:
        return "1"
    parts = []
    for v, e, k in m:
        if e != 0:
            parts.append(v if e == 1 else f"{v}^({rat_str(e)})")
        if k:
            parts.append(f"log({v})" if k == 1 else f"log({v})^{k}")
    return " * ".join(parts)


def _mono_sort_key(m: Monomial):
    return tuple((v, e, k) for v, e, k in m)


# ---------------------------------------------------------------------------
# truncation policy


@dataclass(frozen=True)
class TruncationPolicy:
    """Per-variable truncation.

    ``windows`` maps a variable to an inclusive exponent window ``(lo, hi)``
    (either end may be ``None``).  ``orders`` marks expansion variables and
    their maximum order.  ``log_cap`` bounds every log degree.
    """

    windows: tuple = ()
    orders: tuple = ()
    log_cap: int = DEFAULT_LOG_CAP
    max_order: int = DEFAULT_MAX_ORDER

    @classmethod
    def make(cls, windows: Mapping | None = None, orders: Mapping | None = None,
             log_cap: int = DEFAULT_LOG_CAP, max_order: int = DEFAULT_MAX_ORDER) -> "TruncationPolicy":
        w = tuple(sorted((v, None if lo is None else rat(lo), None if hi is None else rat(hi))
                         for v, (lo, hi) in (windows or {}).items()))
        o = tuple(sorted((v, int(k)) for v, k in (orders or {}).items()))
        for _, k in o:
            if k > max_order:
                raise PolicyOverflow(f"order {k} exceeds context capacity {max_order}")
        return cls(w, o, log_cap, max_order)

    @property
    def window_map(self) -> dict:
        return {v: (lo, hi) for v, lo, hi in self.windows}

    @property
    def order_map(self) -> dict:
        return dict(self.orders)

    def variables(self) -> set[str]:
        return set(self.window_map) | set(self.order_map)

    def compatible(self, other: "TruncationPolicy") -> bool:
        if self.log_cap != other.log_cap:
            return False
        wa, wb = self.window_map, other.window_map
        oa, ob = self.order_map, other.order_map
        for v in set(wa) & set(wb):
            if wa[v] != wb[v]:
                return False
        for v in set(oa) & set(ob):
            if oa[v] != ob[v]:
                return False
        for v in (set(wa) & set(ob)) | (set(oa) & set(wb)):
            return False
        return True

    def merge(self, other: "TruncationPolicy") -> "TruncationPolicy":
        if self == other:
            return self
        if not self.compatible(other):
            raise IncompatiblePolicies(f"{self} vs {other}")
        w = dict(self.window_map)
        w.update(other.window_map)
        o = dict(self.order_map)
        o.update(other.order_map)
        return TruncationPolicy.make(w, o, self.log_cap, max(self.max_order, other.max_order))

    def with_order(self, var: str, order: int) -> "TruncationPolicy":
        if order < 0:
            raise ValueError("order must be nonnegative")
        if order > self.max_order:
            raise PolicyOverflow(f"y-order {order} exceeds context capacity {self.max_order}")
        o = self.order_map
        if var in o and o[var] != order:
            raise IncompatiblePolicies(f"{var} already carries order {o[var]}")
        if var in self.window_map:
            raise IncompatiblePolicies(f"{var} already carries an exponent window")
        o[var] = order
        return TruncationPolicy.make(self.window_map, o, self.log_cap, self.max_order)

    def without(self, var: str) -> "TruncationPolicy":
        w = {v: b for v, b in self.window_map.items() if v != var}
        o = {v: k for v, k in self.order_map.items() if v != var}
        return TruncationPolicy.make(w, o, self.log_cap, self.max_order)

    def admits(self, m: Monomial) -> bool:
        if not self.windows and not self.orders:
            return True
        w = self.window_map
        o = self.order_map
        for v, e, _ in m:
            if v in w:
                lo, hi = w[v]
                if (lo is not None and e < lo) or (hi is not None and e > hi):
                    return False
            elif v in o:
                if e > o[v]:
                    return False
        return True

    def check_logs(self, m: Monomial):
        for v, _, k in m:
            if k > self.log_cap:
                raise LogDegreeOverflow(f"log degree {k} in {v} exceeds cap {self.log_cap}")


NO_TRUNCATION = TruncationPolicy()


# ---------------------------------------------------------------------------
# the series type


def _mul_coeff(a, b):
    if isinstance(a, QVec) and isinstance(b, QVec):
        raise TypeError("product of two vector-valued coefficients is undefined")
    if isinstance(a, QVec):
        return a * b
    if isinstance(b, QVec):
        return b * a
    return a * b


def _drop_zeros(acc: dict, policy: "TruncationPolicy") -> dict:
    """Remove zero coefficients from ``acc`` in place and enforce the log cap."""
    zeros = []
    for m, c in acc.items():
        if isinstance(c, QVec):
            if not c:
                zeros.append(m)
                continue
        elif c == 0:
            zeros.append(m)
            continue
        policy.check_logs(m)
    for m in zeros:
        del acc[m]
    return acc


class LogSeries:
    """Finite exact sum of ``coeff * prod_v v^e (log v)^k``.

    Coefficients are fractions, :class:`QVec` vectors, or complex numbers,
    never mixed within one series.  Instances are immutable.
    """

    __slots__ = ("_terms", "policy", "variables", "_layer")

    def __init__(self, terms: Mapping | Iterable = (), policy: TruncationPolicy = NO_TRUNCATION,
                 variables: Iterable[str] = ()):
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict = {}
        lay = None
        for m, c in items:
            if not policy.admits(m):
                continue
            lay = join_layers(lay, layer_of(c))
            cur = acc.get(m)
            acc[m] = c if cur is None else cur + c
        out = _drop_zeros(acc, policy)
        self._terms = out
        self.policy = policy
        vs = set(variables) | policy.variables()
        for m in out:
            vs |= mono_vars(m)
        self.variables = frozenset(vs)
        self._layer = lay if out else None

    @classmethod
    def _filtered(cls, acc: dict, policy: TruncationPolicy, variables, layer) -> "LogSeries":
        """Build from terms that are already admitted and summed."""
        self = cls.__new__(cls)
        out = _drop_zeros(acc, policy)
        vs = set(variables) | policy.variables()
        for m in out:
            for v, _, _ in m:
                vs.add(v)
        self._terms = out
        self.policy = policy
        self.variables = frozenset(vs)
        self._layer = layer if out else None
        return self

    # -- constructors ------------------------------------------------------
    @classmethod
    def const(cls, c, policy: TruncationPolicy = NO_TRUNCATION, variables=()) -> "LogSeries":
        return cls({ONE: c}, policy, variables)

    @classmethod
    def monomial(cls, m: Monomial, c=Fraction(1), policy: TruncationPolicy = NO_TRUNCATION) -> "LogSeries":
        return cls({m: c}, policy)

    @classmethod
    def var(cls, name: str, power=1, policy: TruncationPolicy = NO_TRUNCATION) -> "LogSeries":
        return cls({mono(**{name: power}): Fraction(1)}, policy, (name,))

    @classmethod
    def log(cls, name: str, degree: int = 1, policy: TruncationPolicy = NO_TRUNCATION) -> "LogSeries":
        return cls({mono(**{name: (0, degree)}): Fraction(1)}, policy, (name,))

    @classmethod
    def zero(cls, policy: TruncationPolicy = NO_TRUNCATION, variables=()) -> "LogSeries":
        return cls({}, policy, variables)

    # -- accessors -----------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    @property
    def layer(self) -> str | None:
        return self._layer

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def __bool__(self):
        return bool(self._terms)

    def coeff(self, m: Monomial, default=0):
        return self._terms.get(m, default)

    def __getitem__(self, m: Monomial):
        return self._terms.get(m, 0)

    def exponents(self, var: str) -> set:
        return {mono_part(m, var)[0] for m in self._terms}

    def max_log_degree(self, var: str) -> int:
        return max((mono_part(m, var)[1] for m in self._terms), default=0)

    def is_exact(self) -> bool:
        return self._layer != COMPLEX

    def to_complex(self) -> "LogSeries":
        out = {m: (c.to_complex() if isinstance(c, QVec) else complex(c)) for m, c in self._terms.items()}
        return LogSeries(out, self.policy, self.variables)

    def with_policy(self, policy: TruncationPolicy) -> "LogSeries":
        return LogSeries(self._terms, policy, self.variables)

    def declare(self, *names: str) -> "LogSeries":
        return LogSeries(self._terms, self.policy, set(self.variables) | set(names))

    def map_coefficients(self, fn) -> "LogSeries":
        return LogSeries({m: fn(c) for m, c in self._terms.items()}, self.policy, self.variables)

    def filter(self, pred) -> "LogSeries":
        return LogSeries({m: c for m, c in self._terms.items() if pred(m)}, self.policy, self.variables)

    # -- comparison ----------------------------------------------------------
    def __eq__(self, other):
        if isinstance(other, LogSeries):
            return self._terms == other._terms
        if other == 0:
            return not self._terms
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def close(self, other: "LogSeries", tol: float = 1e-10) -> bool:
        keys = set(self._terms) | set(other._terms)
        return all(close(self._terms.get(m, 0), other._terms.get(m, 0), tol) for m in keys)

    def diff_witness(self, other: "LogSeries", tol: float | None = None):
        """First monomial (in canonical order) where the two series disagree, else ``None``."""
        for m in sorted(set(self._terms) | set(other._terms), key=_mono_sort_key):
            a, b = self._terms.get(m, 0), other._terms.get(m, 0)
            same = (a == b) if tol is None else close(a, b, tol)
            if not same:
                return m
        return None

    def __repr__(self):
        return f"LogSeries({self})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for m in sorted(self._terms, key=_mono_sort_key):
            c = self._terms[m]
            cs = rat_str(c) if isinstance(c, Fraction) else str(c)
            parts.append(cs if not m else f"{cs} * {mono_str(m)}")
        return " + ".join(parts)

    # -- ring operations -------------------------------------------------------
    def _policy_with(self, other: "LogSeries") -> TruncationPolicy:
        return self.policy.merge(other.policy)

    def __add__(self, other):
        if not isinstance(other, LogSeries):
            if isinstance(other, QVec) or other != 0:
                other = LogSeries.const(other)
            else:
                return self
        pol = self._policy_with(other)
        join_layers(self._layer, other._layer)
        acc = dict(self._terms)
        for m, c in other._terms.items():
            acc[m] = acc[m] + c if m in acc else c
        return LogSeries(acc, pol, self.variables | other.variables)

    __radd__ = __add__

    def __neg__(self):
        return LogSeries({m: -c for m, c in self._terms.items()}, self.policy, self.variables)

    def __sub__(self, other):
        if not isinstance(other, LogSeries):
            other = LogSeries.const(other) if (isinstance(other, QVec) or other != 0) else LogSeries.zero()
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, LogSeries):
            return self.scale(other)
        pol = self._policy_with(other)
        join_layers(self._layer, other._layer)
        acc: dict = {}
        orders = pol.orders
        if len(orders) == 1:
            return self._mul_bounded(other, pol, orders[0])
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = mono_mul(ma, mb)
                if not pol.admits(m):
                    continue
                p = _mul_coeff(ca, cb)
                cur = acc.get(m)
                acc[m] = p if cur is None else cur + p
        return LogSeries._filtered(acc, pol, self.variables | other.variables,
                                   self._layer or other._layer)

    def _mul_bounded(self, other, pol, order):
        """Product when one variable carries an order bound: pairs whose exponents
        in that variable already overshoot are never formed."""
        var, bound = order
        buckets: dict = {}
        for mb, cb in other._terms.items():
            buckets.setdefault(mono_part(mb, var)[0], []).append((mb, cb))
        levels = sorted(buckets)
        acc: dict = {}
        for ma, ca in self._terms.items():
            room = bound - mono_part(ma, var)[0]
            for e in levels:
                if e > room:
                    break
                for mb, cb in buckets[e]:
                    m = mono_mul(ma, mb)
                    if not pol.admits(m):
                        continue
                    p = _mul_coeff(ca, cb)
                    cur = acc.get(m)
                    acc[m] = p if cur is None else cur + p
        return LogSeries._filtered(acc, pol, self.variables | other.variables,
                                   self._layer or other._layer)

    def __rmul__(self, other):
        return self.scale(other)

    def scale(self, c) -> "LogSeries":
        if isinstance(c, (complex, float)) and self._layer == EXACT:
            from .errors import MixedScalarLayers
            raise MixedScalarLayers("scaling an exact series by a complex number; convert first")
        return LogSeries({m: _mul_coeff(v, c) for m, v in self._terms.items()}, self.policy, self.variables)

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("only nonnegative integer powers")
        out = LogSeries.const(Fraction(1), self.policy, self.variables)
        for _ in range(n):
            out = out * self
        return out

    def times_monomial(self, m: Monomial, c=Fraction(1)) -> "LogSeries":
        return LogSeries({mono_mul(k, m): _mul_coeff(v, c) for k, v in self._terms.items()},
                         self.policy, self.variables | mono_vars(m))

    def coefficient_series(self, var: str, exponent, log_degree: int = 0) -> "LogSeries":
        """The series in the remaining variables multiplying ``var^exponent log(var)^log_degree``."""
        exponent = rat(exponent)
        out = {}
        for m, c in self._terms.items():
            e, k = mono_part(m, var)
            if e == exponent and k == log_degree:
                out[mono_replace(m, var, 0, 0)] = c
        return LogSeries(out, self.policy.without(var), self.variables - {var})


# ---------------------------------------------------------------------------
# operations


def ring_ops(f: LogSeries, g, which: str) -> LogSeries:
    """``which`` is ``"add"``, ``"mul"`` or ``"scale"`` (``g`` a scalar for scale)."""
    if which == "add":
        return f + g
    if which == "mul":
        return f * g
    if which == "scale":
        return f.scale(g)
    raise ValueError(f"unknown ring operation {which!r}")


def derive(f: LogSeries, x: str) -> LogSeries:
    """Formal d/dx on W{x, log x}: ``x^n (log x)^m -> n x^(n-1) (log x)^m + m x^(n-1) (log x)^(m-1)``."""
    out: dict = {}
    for m, c in f.items():
        e, k = mono_part(m, x)
        if e != 0:
            t = mono_replace(m, x, e - 1, k)
            v = _mul_coeff(c, e)
            out[t] = out[t] + v if t in out else v
        if k != 0:
            t = mono_replace(m, x, e - 1, k - 1)
            v = _mul_coeff(c, Fraction(k))
            out[t] = out[t] + v if t in out else v
    return LogSeries(out, f.policy, f.variables | {x})


def euler(f: LogSeries, x: str) -> LogSeries:
    """``x d/dx``: ``x^n (log x)^m -> n x^n (log x)^m + m x^n (log x)^(m-1)``."""
    out: dict = {}
    for m, c in f.items():
        e, k = mono_part(m, x)
        if e != 0:
            v = _mul_coeff(c, e)
            out[m] = out[m] + v if m in out else v
        if k != 0:
            t = mono_replace(m, x, e, k - 1)
            v = _mul_coeff(c, Fraction(k))
            out[t] = out[t] + v if t in out else v
    return LogSeries(out, f.policy, f.variables | {x})


def _series_product(a: list, b: list, order: int) -> list:
    out = [Fraction(0)] * (order + 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j in range(0, order + 1 - i):
            if j < len(b) and b[j] != 0:
                out[i + j] += ai * b[j]
    return out


def _log1p_series(order: int) -> list:
    """Coefficients of log(1+u) = sum_{i>=1} (-1)^(i-1) u^i / i."""
    return [Fraction(0)] + [Fraction((-1) ** (i - 1), i) for i in range(1, order + 1)]


def _fresh(f: LogSeries, y: str):
    if y in f.variables:
        raise ValueError(f"substitution variable {y!r} must be fresh")


def subst_shift(f: LogSeries, x: str, y: str, order: int) -> LogSeries:
    """``f(x+y)`` to y-order ``order``, expanding in nonnegative powers of y/x."""
    _fresh(f, y)
    policy = f.policy.with_order(y, order)
    log_sq = _log1p_series(order)
    log_powers = [[Fraction(1)] + [Fraction(0)] * order]
    out: dict = {}
    binom_cache: dict = {}
    for m, c in f.items():
        e, k = mono_part(m, x)
        if e not in binom_cache:
            binom_cache[e] = [binom(e, a) for a in range(order + 1)]
        shift = binom_cache[e]
        while len(log_powers) <= min(k, order):
            log_powers.append(_series_product(log_powers[-1], log_sq, order))
        for j in range(0, min(k, order) + 1):
            ser = _series_product(shift, log_powers[j], order)
            cj = Fraction(math.comb(k, j))
            for s, cs in enumerate(ser):
                if cs == 0:
                    continue
                t = mono_mul(mono_replace(m, x, e - s, k - j), mono(**{y: s}))
                v = _mul_coeff(c, cj * cs)
                out[t] = out[t] + v if t in out else v
    return LogSeries(out, policy, f.variables | {x, y})


def subst_dilate(f: LogSeries, x: str, y: str, order: int) -> LogSeries:
    """``f(x e^y)`` to y-order ``order``: ``x^n e^(ny) (log x + y)^m``."""
    _fresh(f, y)
    policy = f.policy.with_order(y, order)
    out: dict = {}
    for m, c in f.items():
        e, k = mono_part(m, x)
        expo = [e ** a / math.factorial(a) for a in range(order + 1)]
        for j in range(0, min(k, order) + 1):
            cj = Fraction(math.comb(k, j))
            for a in range(0, order + 1 - j):
                if expo[a] == 0:
                    continue
                t = mono_mul(mono_replace(m, x, e, k - j), mono(**{y: a + j}))
                v = _mul_coeff(c, cj * expo[a])
                out[t] = out[t] + v if t in out else v
    return LogSeries(out, policy, f.variables | {x, y})


def subst_scale(f: LogSeries, x: str, y: str) -> LogSeries:
    """``f(xy)``: ``x^n y^n (log x + log y)^m``, exact."""
    _fresh(f, y)
    out: dict = {}
    for m, c in f.items():
        e, k = mono_part(m, x)
        for j in range(k + 1):
            t = mono_mul(mono_replace(m, x, e, k - j), mono(**{y: (e, j)}))
            v = _mul_coeff(c, Fraction(math.comb(k, j)))
            out[t] = out[t] + v if t in out else v
    return LogSeries(out, f.policy, f.variables | {x, y})


def exp_diff_op(f: LogSeries, p: LogSeries, x: str, y: str, order: int) -> LogSeries:
    """``sum_{j<=order} y^j/j! T^j f`` with ``T = p(x) d/dx``.

    ``p`` must be a Laurent polynomial in ``x`` alone with integer exponents.
    """
    for m, _ in p.items():
        for v, e, k in m:
            if v != x or k != 0 or e.denominator != 1:
                raise ValueError("p must be a Laurent polynomial in x with integer exponents")
    _fresh(f, y)
    policy = f.policy.with_order(y, order)
    p = p.with_policy(f.policy)
    result = f.with_policy(policy)
    cur = f
    for j in range(1, order + 1):
        cur = p * derive(cur, x)
        result = result + cur.times_monomial(mono(**{y: j}), Fraction(1, math.factorial(j))).with_policy(policy)
    return result


# ---------------------------------------------------------------------------
# delta functions and binomial expansions


@dataclass(frozen=True)
class Summand:
    """A single term ``coeff * var^power`` (``var=None`` for a pure number such as z)."""

    coeff: object = Fraction(1)
    var: str | None = None
    power: Fraction = Fraction(1)

    def series(self, exponent) -> LogSeries:
        """``(coeff * var^power)^exponent``; exact only when it makes sense."""
        exponent = rat(exponent)
        if exponent.denominator != 1 and self.coeff != 1:
            raise ValueError("non-integral power of a non-unit coefficient is not exact")
        c = self.coeff ** int(exponent) if exponent.denominator == 1 else Fraction(1)
        if isinstance(c, int):
            c = Fraction(c)
        if self.var is None:
            return LogSeries.const(c)
        return LogSeries.monomial(mono(**{self.var: self.power * exponent}), c)


def binomial_expand(first: Summand, second: Summand, r, order: int) -> LogSeries:
    """``(first + second)^r`` in nonnegative integral powers of ``second``, orders ``0..order``."""
    if order < 0:
        raise WindowEmpty("binomial window is empty")
    r = rat(r)
    out = LogSeries.zero()
    for i in range(order + 1):
        cf = binom(r, i)
        if cf == 0:
            continue
        out = out + (first.series(r - i) * second.series(i)).scale(cf)
    return out


def delta_expand(kind: str, operands, window, order: int | None = None) -> LogSeries:
    """Truncated expansions of formal delta functions and binomials.

    * ``kind="delta"``: ``operands`` is a variable name, ``window=(lo, hi)``;
      returns ``sum_{lo<=n<=hi} x^n``.
    * ``kind="binom"``: ``operands=(first, second, r)`` of :class:`Summand`;
      ``window`` is the maximal power of the second summand (inclusive).
    * ``kind="delta_ratio"``: ``operands=(den, first, second)``; returns
      ``den^{-1} delta((first + second)/den) = sum_j den^{-j-1} (first + second)^j``
      for ``j`` in ``window=(lo, hi)``, each binomial expanded to ``order``.
    """
    if kind == "delta":
        lo, hi = window
        if hi < lo:
            raise WindowEmpty(f"empty window {window}")
        return LogSeries({mono(**{operands: n}): Fraction(1) for n in range(lo, hi + 1)}, variables=(operands,))
    if kind == "binom":
        first, second, r = operands
        return binomial_expand(first, second, r, int(window))
    if kind == "delta_ratio":
        den, first, second = operands
        lo, hi = window
        if hi < lo:
            raise WindowEmpty(f"empty window {window}")
        if order is None:
            raise ValueError("delta_ratio needs a binomial order")
        out = LogSeries.zero()
        for j in range(lo, hi + 1):
            out = out + binomial_expand(first, second, j, order) * LogSeries.var(den, -j - 1)
        return out
    raise ValueError(f"unknown expansion kind {kind!r}")


def residue(f: LogSeries, x: str) -> LogSeries:
    """Coefficient of ``x^-1``; refuses series with a log of ``x``."""
    for m in f:
        if mono_part(m, x)[1] > 0:
            raise LogDegreePresent(f"residue in {x} of a series containing log({x})")
    return f.coefficient_series(x, -1, 0)


# ---------------------------------------------------------------------------
# formal exp / log


def exp_series(x: str, order: int) -> LogSeries:
    """``e^x`` truncated at ``x^order``."""
    pol = TruncationPolicy.make(orders={x: order})
    return LogSeries({mono(**{x: n}): Fraction(1, math.factorial(n)) for n in range(order + 1)}, pol)


def log_one_plus(X: LogSeries, order: int) -> LogSeries:
    """``log(1 + X) = sum_{i>=1} (-1)^(i-1) X^i / i`` truncated by X's policy.

    ``X`` must involve only positive powers of its expansion variables so
    that the truncation at ``order`` terms is exact within the policy.
    """
    out = LogSeries.zero(X.policy)
    power = LogSeries.const(Fraction(1), X.policy)
    for i in range(1, order + 1):
        power = power * X
        if not power:
            break
        out = out + power.scale(Fraction((-1) ** (i - 1), i))
    return out


# ---------------------------------------------------------------------------
# the (x d/dx - a)^m membership test


@dataclass(frozen=True)
class OdeResult:
    member: bool
    minimal: int | None = None
    witness: Monomial | None = None
    top_coefficient_nonzero: bool | None = None


def ode_membership(f: LogSeries, a, m: int, x: str) -> OdeResult:
    """Decide whether ``(x d/dx - a)^m f = 0`` and report the minimal power."""
    a = rat(a)
    cur = f
    for step in range(0, m + 1):
        if not cur:
            top = _top_nonzero(f, x, a, step - 1) if step > 0 else None
            return OdeResult(True, step, None, top)
        if step == m:
            break
        cur = euler(cur, x) - cur.scale(a)
    witness = min(cur, key=_mono_sort_key)
    return OdeResult(False, None, witness, None)


def _top_nonzero(f: LogSeries, x: str, a: Fraction, k: int) -> bool:
    return any(mono_part(m, x) == (a, k) for m in f)


# ---------------------------------------------------------------------------
# text grammar and canonical JSON

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:/\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*^()]))")


class _Parser:
    def __init__(self, text: str, line: int, variables: set[str] | None):
        self.line = line
        self.vars = variables
        self.toks = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            mt = _TOKEN.match(text, pos)
            if not mt or mt.end() == pos:
                raise ParseError(f"unexpected character {text[pos]!r}", line, pos + 1)
            kind = mt.lastgroup
            self.toks.append((kind, mt.group(kind), mt.start(kind) + 1))
            pos = mt.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None:
            raise ParseError("unexpected end of input", self.line)
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1]!r}", self.line, tok[2])
        self.i += 1
        return tok

    def exponent(self) -> Fraction:
        kind, val, col = self.peek()
        if val == "(":
            self.take("(")
            sign = 1
            if self.peek()[1] == "-":
                self.take("-")
                sign = -1
            k, v, c = self.take()
            if k != "num":
                raise ParseError("expected a rational exponent", self.line, c)
            self.take(")")
            return sign * Fraction(v)
        sign = 1
        if val == "-":
            self.take("-")
            sign = -1
        k, v, c = self.take()
        if k != "num" or "/" in v:
            raise ParseError("expected an integer exponent (use parentheses for p/q)", self.line, c)
        return sign * Fraction(v)

    def check_var(self, name, col):
        if self.vars is not None and name not in self.vars:
            raise ParseError(f"undeclared variable {name!r}", self.line, col)

    def term(self):
        coeff = Fraction(1)
        powers: dict[str, list] = {}
        first = True
        while True:
            kind, val, col = self.peek()
            if kind == "num":
                self.take()
                coeff *= Fraction(val)
            elif kind == "name" and val == "log":
                self.take()
                self.take("(")
                k2, name, c2 = self.take()
                if k2 != "name":
                    raise ParseError("expected a variable inside log()", self.line, c2)
                self.check_var(name, c2)
                self.take(")")
                deg = 1
                if self.peek()[1] == "^":
                    self.take("^")
                    d = self.exponent()
                    if d.denominator != 1 or d < 0:
                        raise ParseError("log degrees must be nonnegative integers", self.line, col)
                    deg = int(d)
                powers.setdefault(name, [Fraction(0), 0])[1] += deg
            elif kind == "name":
                self.take()
                self.check_var(val, col)
                e = Fraction(1)
                if self.peek()[1] == "^":
                    self.take("^")
                    e = self.exponent()
                powers.setdefault(val, [Fraction(0), 0])[0] += e
            else:
                if first:
                    raise ParseError(f"expected a term, found {val!r}", self.line, col)
                break
            first = False
            if self.peek()[1] == "*":
                self.take("*")
                continue
            break
        m = tuple(sorted((v, e, k) for v, (e, k) in powers.items() if e != 0 or k != 0))
        return m, coeff

    def series(self):
        terms: dict = {}
        sign = Fraction(1)
        if self.peek()[1] in ("+", "-"):
            sign = Fraction(-1) if self.take()[1] == "-" else Fraction(1)
        while True:
            m, c = self.term()
            terms[m] = terms.get(m, 0) + sign * c
            kind, val, col = self.peek()
            if kind is None:
                break
            if val not in ("+", "-"):
                raise ParseError(f"expected '+' or '-', found {val!r}", self.line, col)
            self.take()
            sign = Fraction(-1) if val == "-" else Fraction(1)
        return terms


def parse_series(text: str, policy: TruncationPolicy = NO_TRUNCATION) -> LogSeries:
    """Parse ``[vars: x, y]`` header plus ``c * x^(p/q) * log(x)^k`` terms."""
    lines = [ln for ln in text.splitlines()]
    variables = None
    body = []
    for no, ln in enumerate(lines, start=1):
        s = ln.strip()
        if not s or s.startswith("#"):
            continue
        if s.lower().startswith("vars:"):
            variables = {v.strip() for v in s[5:].split(",") if v.strip()}
            for v in variables:
                if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", v) or v == "log":
                    raise ParseError(f"bad variable name {v!r}", no)
            continue
        body.append((no, s))
    if not body:
        return LogSeries.zero(policy, variables or ())
    terms: dict = {}
    for no, s in body:
        for m, c in _Parser(s, no, variables).series().items():
            terms[m] = terms.get(m, 0) + c
    return LogSeries(terms, policy, variables or ())


def _coeff_to_json(c):
    if isinstance(c, QVec):
        return {"vec": {str(k): _coeff_to_json(v) for k, v in sorted(c.items(), key=lambda kv: str(kv[0]))}}
    if isinstance(c, (complex, float)):
        c = complex(c)
        return {"re": c.real, "im": c.imag}
    return rat_str(c)


def _coeff_from_json(obj):
    if isinstance(obj, dict) and "vec" in obj:
        return QVec({_key_from_json(k): _coeff_from_json(v) for k, v in obj["vec"].items()})
    if isinstance(obj, dict):
        return complex(obj["re"], obj["im"])
    return Fraction(obj)


def _key_from_json(k: str):
    try:
        return int(k)
    except ValueError:
        return k


def policy_to_json(p: TruncationPolicy) -> dict:
    return {
        "windows": {v: [None if lo is None else rat_str(lo), None if hi is None else rat_str(hi)]
                    for v, lo, hi in p.windows},
        "orders": dict(p.orders),
        "log_cap": p.log_cap,
    }


def policy_from_json(obj: dict) -> TruncationPolicy:
    return TruncationPolicy.make(
        {v: (lo, hi) for v, (lo, hi) in obj.get("windows", {}).items()},
        obj.get("orders", {}),
        obj.get("log_cap", DEFAULT_LOG_CAP),
    )


def to_json(f: LogSeries) -> str:
    """Canonical JSON: sorted variables and monomials, rationals as ``"p/q"`` strings."""
    terms = []
    for m in sorted(f, key=_mono_sort_key):
        terms.append({
            "coeff": _coeff_to_json(f[m]),
            "monomial": [[v, rat_str(e), k] for v, e, k in m],
        })
    doc = {"variables": sorted(f.variables), "policy": policy_to_json(f.policy), "terms": terms}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> LogSeries:
    doc = json.loads(text)
    terms = {}
    for t in doc["terms"]:
        m = tuple(sorted((v, Fraction(e), int(k)) for v, e, k in t["monomial"]))
        terms[m] = _coeff_from_json(t["coeff"])
    return LogSeries(terms, policy_from_json(doc.get("policy", {})), doc.get("variables", ()))

from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from logtensor.errors import (
    IncompatiblePolicies,
    LogDegreeOverflow,
    LogDegreePresent,
    MixedScalarLayers,
    ParseError,
    WindowEmpty,
)
from logtensor.formal_series import (
    LogSeries,
    Summand,
    TruncationPolicy,
    delta_expand,
    derive,
    euler,
    exp_diff_op,
    exp_series,
    from_json,
    log_one_plus,
    mono,
    ode_membership,
    parse_series,
    residue,
    ring_ops,
    subst_dilate,
    subst_scale,
    subst_shift,
    to_json,
)


def S(text):
    return parse_series(text)


X = LogSeries.var("x")
ONE = LogSeries.const(F(1))


# ---- ring operations ---------------------------------------------------

def test_cancellation():
    assert ring_ops(S("x^(1/2)"), S("-x^(1/2)"), "add") == 0


def test_log_degree_addition():
    assert ring_ops(S("log(x)"), S("log(x)"), "mul") == S("log(x)^2")


def test_cauchy_product():
    assert S("x^(1/2) + x") * S("x^(-1/2)") == S("1 + x^(1/2)")


def test_incompatible_policies():
    a = LogSeries.var("x", policy=TruncationPolicy.make(windows={"x": (-2, 2)}))
    b = LogSeries.var("x", policy=TruncationPolicy.make(windows={"x": (-3, 3)}))
    with pytest.raises(IncompatiblePolicies):
        a + b


def test_mixed_layers():
    with pytest.raises(MixedScalarLayers):
        S("x") + LogSeries.const(1j)
    # explicit conversion is fine
    assert (S("x").to_complex() + LogSeries.const(1j)).layer == "complex"


def test_policy_drops_terms_and_caps_logs():
    pol = TruncationPolicy.make(windows={"x": (0, 2)}, log_cap=2)
    f = parse_series("x^-1 + x + x^3", pol)
    assert f == S("x")
    with pytest.raises(LogDegreeOverflow):
        parse_series("log(x)^3", pol)


# ---- derivative --------------------------------------------------------

def test_derive_examples():
    assert derive(S("x^(1/2)*log(x)"), "x") == S("1/2*x^(-1/2)*log(x) + x^(-1/2)")
    assert derive(S("7"), "x") == 0
    assert derive(S("log(x)^2"), "x") == S("2*x^-1*log(x)")


def test_derive_matches_coefficient_formula():
    f = S("2*x^(3/2)*log(x)^2 + x^(3/2)*log(x) - 5*x^(1/3)")
    d = derive(f, "x")
    for n in (F(1, 2), F(-2, 3)):
        for m in range(3):
            want = (n + 1) * f.coeff(mono(x=(n + 1, m))) + (m + 1) * f.coeff(mono(x=(n + 1, m + 1)))
            assert d.coeff(mono(x=(n, m))) == want


# ---- substitutions -----------------------------------------------------

def test_shift_examples():
    assert subst_shift(S("log(x)"), "x", "y", 2) == S("log(x) + y*x^-1 - 1/2*y^2*x^-2")
    assert subst_shift(S("x^2"), "x", "y", 2) == S("x^2 + 2*x*y + y^2")
    assert subst_shift(S("x^(1/2)"), "x", "y", 1) == S("x^(1/2) + 1/2*x^(-1/2)*y")


def test_dilate_examples():
    assert subst_dilate(S("log(x)"), "x", "y", 5) == S("log(x) + y")
    n = F(5, 3)
    f = LogSeries.var("x", n)
    want = LogSeries({mono(x=n): F(1), mono(x=n, y=1): n, mono(x=n, y=2): n * n / 2})
    assert subst_dilate(f, "x", "y", 2) == want
    assert subst_dilate(S("x*log(x)"), "x", "y", 1) == S("x*log(x) + y*x*log(x) + y*x")


def test_scale_examples():
    assert subst_scale(S("log(x)"), "x", "y") == S("log(x) + log(y)")
    assert subst_scale(S("x^(1/2)"), "x", "y") == S("x^(1/2)*y^(1/2)")
    assert subst_scale(S("x*log(x)"), "x", "y") == S("x*y*log(x) + x*y*log(y)")


def test_substitution_needs_fresh_variable():
    with pytest.raises(ValueError):
        subst_shift(S("x*y"), "x", "y", 2)


def test_exp_diff_op_examples():
    assert exp_diff_op(S("log(x)"), ONE, "x", "y", 2) == S("log(x) + y*x^-1 - 1/2*y^2*x^-2")
    assert exp_diff_op(S("log(x)"), X, "x", "y", 5) == S("log(x) + y")
    assert exp_diff_op(S("x^3"), X, "x", "y", 2) == S("x^3 + 3*x^3*y + 9/2*x^3*y^2")


# ---- delta / binomial --------------------------------------------------

def test_delta_window():
    assert delta_expand("delta", "x", (-2, 2)) == S("x^-2 + x^-1 + 1 + x + x^2")
    with pytest.raises(WindowEmpty):
        delta_expand("delta", "x", (1, 0))


def test_binom_geometric():
    # window is the largest power of the second summand, inclusive
    got = delta_expand("binom", (Summand(F(1), "x1"), Summand(F(-1), "x2"), -1), 2)
    assert got == S("x1^-1 + x1^-2*x2 + x1^-3*x2^2")


def test_binom_half():
    got = delta_expand("binom", (Summand(F(1), "x1"), Summand(F(-1), "x2"), F(1, 2)), 2)
    assert got == S("x1^(1/2) - 1/2*x1^(-1/2)*x2 - 1/8*x1^(-3/2)*x2^2")


def test_delta_ratio_residue_is_one():
    # Res_{x0} x0^{-1} delta((x1 - x2)/x0) = 1
    d = delta_expand("delta_ratio", ("x0", Summand(F(1), "x1"), Summand(F(-1), "x2")), (-3, 3), order=4)
    assert residue(d, "x0") == ONE


# ---- residue -----------------------------------------------------------

def test_residue():
    assert residue(delta_expand("delta", "x", (-3, 3)), "x") == ONE
    assert residue(S("x^2 + 3*x^-1*y"), "x") == S("3*y")
    with pytest.raises(LogDegreePresent):
        residue(S("x^-1*log(x)"), "x")


# ---- ODE membership ----------------------------------------------------

def test_ode_membership():
    r = ode_membership(S("3*x^(1/2) + 5*x^(1/2)*log(x)"), F(1, 2), 2, "x")
    assert r.member and r.minimal == 2 and r.top_coefficient_nonzero
    r = ode_membership(S("x^(1/2)"), F(1, 2), 1, "x")
    assert r.member and r.minimal == 1
    r = ode_membership(S("x^(1/3)"), F(1, 2), 3, "x")
    assert not r.member and r.witness == mono(x=F(1, 3))


# ---- parsing and JSON --------------------------------------------------

def test_parse_errors_are_located():
    with pytest.raises(ParseError) as e:
        parse_series("vars: x\n2 * z")
    assert e.value.line == 2
    with pytest.raises(ParseError):
        parse_series("x ^ ^ 2")


def test_json_roundtrip():
    f = parse_series("vars: x, y\n3/2 * x^(1/2) * log(x)^2 - y + 5")
    text = to_json(f)
    assert from_json(text) == f
    assert to_json(from_json(text)) == text


# ---- properties --------------------------------------------------------

exps = st.fractions(min_value=-3, max_value=3, max_denominator=6)
terms = st.lists(st.tuples(exps, st.integers(0, 3), st.integers(-5, 5).filter(bool)), max_size=8)


def build(ts, var="x"):
    acc = {}
    for e, k, c in ts:
        m = mono(**{var: (e, k)})
        acc[m] = acc.get(m, 0) + F(c)
    return LogSeries(acc, variables=(var,))


@settings(max_examples=60, deadline=None)
@given(terms, terms)
def test_leibniz(a, b):
    f, g = build(a), build(b)
    assert derive(f * g, "x") == derive(f, "x") * g + f * derive(g, "x")


@settings(max_examples=40, deadline=None)
@given(terms, st.integers(0, 8))
def test_exponential_shift(a, K):
    f = build(a)
    assert exp_diff_op(f, ONE, "x", "y", K) == subst_shift(f, "x", "y", K)


@settings(max_examples=40, deadline=None)
@given(terms, st.integers(0, 8))
def test_exponential_dilation(a, K):
    f = build(a)
    assert exp_diff_op(f, X, "x", "y", K) == subst_dilate(f, "x", "y", K)


@settings(max_examples=30, deadline=None)
@given(terms, terms, st.integers(0, 5), st.sampled_from(["1", "x", "x^2", "x^-1 + 2*x"]))
def test_homomorphism(a, b, K, ptext):
    f, g = build(a), build(b)
    p = S(ptext)
    lhs = exp_diff_op(f * g, p, "x", "y", K)
    assert lhs == exp_diff_op(f, p, "x", "y", K) * exp_diff_op(g, p, "x", "y", K)


@pytest.mark.parametrize("order", [1, 3, 6, 10])
def test_log_of_exp(order):
    e = exp_series("x", order)
    assert log_one_plus(e - ONE.with_policy(e.policy), order) == LogSeries.var("x", policy=e.policy)


@settings(max_examples=60, deadline=None)
@given(terms, exps, st.integers(1, 5))
def test_ode_membership_brute_force(a, root, m):
    f = build(a)
    r = ode_membership(f, root, m, "x")
    g = f
    steps = r.minimal if r.member else m
    for _ in range(steps):
        g = euler(g, "x") - g.scale(root)
    assert (g == 0) == r.member
    if r.member and r.minimal:
        h = f
        for _ in range(r.minimal - 1):
            h = euler(h, "x") - h.scale(root)
        assert h != 0

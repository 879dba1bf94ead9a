from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from pi01_forge import logic
from pi01_forge.errors import NotACode, NotPi01, NotWellFormed, ParseError, UnassignedVariable
from pi01_forge.logic import (
    And, BoundedExists, BoundedForall, Eq, Forall, Implies, Lt, Not, One, Or, Plus, Times, Var, Zero,
)

X, Y, Z = Var(0), Var(1), Var(2)


# ---------------------------------------------------------------- parsing

@pytest.mark.parametrize("text, expected", [
    ("forall x (x*0 = 0)", Forall(0, Eq(Times(X, Zero()), Zero()))),
    ("0 = 1", Eq(Zero(), One())),
    ("∀x(x*0=0)", Forall(0, Eq(Times(X, Zero()), Zero()))),
])
def test_parse_examples(text, expected):
    assert logic.parse(text) == expected


def test_parse_bounded_exists_with_disjunction():
    f = logic.parse("forall x (exists y < x) (y+1 = x | x = 0)")
    assert isinstance(f, Forall)
    inner = f.body
    assert isinstance(inner, BoundedExists)
    assert inner.var == 1 and inner.bound == X
    assert inner.body == Or(Eq(Plus(Y, One()), X), Eq(X, Zero()))


@pytest.mark.parametrize("bad", ["forall x (", "0 = ", "x +", "(0 = 0"])
def test_parse_errors_carry_position(bad):
    with pytest.raises(ParseError):
        logic.parse(bad)


@pytest.mark.parametrize("text", [
    "forall x (0 = 0 | x < x+1)",
    "forall x forall y ((exists z < x+y) (z*z = x) -> !(x = y))",
    logic.GOLDBACH,
    logic.GOLDBACH_LITERAL,
])
def test_pretty_print_round_trip(text):
    f = logic.parse(text)
    assert logic.parse(logic.to_text(f)) == f
    assert logic.parse(logic.to_text(f, "unicode")) == f


# ---------------------------------------------------------------- Goedel codes

TIMES_ZERO_CODE = 2**3 * 3 * 5**6 * 7 * 11**4 * 13**2 * 17**5 * 19**2 * 23**7


def test_encode_times_zero_seven_symbol_table():
    code = logic.encode(logic.parse("∀x(x*0=0)"), scheme_version=0)
    assert code.value == TIMES_ZERO_CODE


def test_decode_times_zero_code():
    f = logic.decode(logic.GoedelCode(TIMES_ZERO_CODE, 0))
    assert f == logic.parse("forall x (x*0 = 0)")


def test_single_variable_term_code():
    assert logic.encode(X, 0).value == 2


def test_zero_eq_one_by_hand():
    # symbols 0 = 1 -> exponents from the extended table
    table = logic.SYMBOL_TABLE
    expected = 2 ** table["0"] * 3 ** table["="] * 5 ** table["1"]
    assert logic.encode(logic.parse("0=1")).value == expected
    assert logic.decode(expected) == Eq(Zero(), One())


def test_extended_table_keeps_seven_symbol_exponents():
    for sym, e in logic.SEVEN_SYMBOL_TABLE.items():
        assert logic.SYMBOL_TABLE[sym] == e
    assert len(set(logic.SYMBOL_TABLE.values())) == len(logic.SYMBOL_TABLE)


@pytest.mark.parametrize("value", [7, 0, 2 * 5, 2**99])
def test_decode_rejects_non_codes(value):
    with pytest.raises(NotACode):
        logic.decode(value)


def test_decode_rejects_ill_formed_strings():
    # "=0" is a symbol string but not a formula
    code = logic.encode_symbols("=0")
    with pytest.raises(NotWellFormed):
        logic.decode(code)


# ---------------------------------------------------------------- random formulas

def terms(depth=2):
    leaves = st.sampled_from([X, Y, Zero(), One()])
    if depth == 0:
        return leaves
    sub = terms(depth - 1)
    return st.one_of(leaves, st.builds(Plus, sub, sub), st.builds(Times, sub, sub))


def formulas(depth=2):
    atoms = st.one_of(st.builds(Eq, terms(1), terms(1)), st.builds(Lt, terms(1), terms(1)))
    if depth == 0:
        return atoms
    sub = formulas(depth - 1)
    small_bound = st.sampled_from([X, Plus(X, One()), Plus(One(), One()), Zero()])
    return st.one_of(
        atoms,
        st.builds(Not, sub),
        st.builds(And, sub, sub),
        st.builds(Or, sub, sub),
        st.builds(Implies, sub, sub),
        st.builds(BoundedForall, st.just(1), small_bound, sub),
        st.builds(BoundedExists, st.just(1), small_bound, sub),
    )


@settings(max_examples=200, deadline=None)
@given(formulas())
def test_encode_decode_round_trip(f):
    s = Forall(0, f)
    assert logic.decode(logic.encode(s)) == s


def _py(t):
    """Independent evaluator: translate to a Python expression with generators."""
    if isinstance(t, Var):
        return f"v{t.index}"
    if isinstance(t, Zero):
        return "0"
    if isinstance(t, One):
        return "1"
    if isinstance(t, Plus):
        return f"({_py(t.left)} + {_py(t.right)})"
    if isinstance(t, Times):
        return f"({_py(t.left)} * {_py(t.right)})"
    if isinstance(t, Eq):
        return f"({_py(t.left)} == {_py(t.right)})"
    if isinstance(t, Lt):
        return f"({_py(t.left)} < {_py(t.right)})"
    if isinstance(t, Not):
        return f"(not {_py(t.body)})"
    if isinstance(t, And):
        return f"({_py(t.left)} and {_py(t.right)})"
    if isinstance(t, Or):
        return f"({_py(t.left)} or {_py(t.right)})"
    if isinstance(t, Implies):
        return f"((not {_py(t.left)}) or {_py(t.right)})"
    if isinstance(t, BoundedForall):
        return f"all({_py(t.body)} for v{t.var} in range({_py(t.bound)}))"
    if isinstance(t, BoundedExists):
        return f"any({_py(t.body)} for v{t.var} in range({_py(t.bound)}))"
    raise TypeError(t)


def naive_eval(f, env):
    scope = {"all": all, "any": any, "range": range}
    scope.update({f"v{k}": v for k, v in env.items()})
    return bool(eval(_py(f), scope))


@settings(max_examples=300, deadline=None)
@given(formulas(), st.integers(0, 6), st.integers(0, 6))
def test_eval_delta0_matches_naive_expansion(f, x, y):
    env = {0: x, 1: y}
    assert logic.eval_delta0(f, env) == naive_eval(f, env)


@pytest.mark.parametrize("text, env, expected", [
    ("0 = 1", {}, False),
    ("(forall x < 3) (exists y < 3) (x+y = 2)", {}, True),
    ("(forall x < 3) (exists y < 2) (x+y = 2)", {}, False),
    ("(exists y < x) (y*y = x)", {"x": 4}, True),
])
def test_eval_delta0_examples(text, env, expected):
    assert logic.eval_delta0(logic.parse(text), env) is expected


def test_goldbach_matrix_at_four():
    s = logic.classify_pi01(logic.parse(logic.GOLDBACH))
    assert logic.eval_delta0(s.matrix, {0: 4})


def test_goldbach_matrix_matches_brute_force():
    s = logic.classify_pi01(logic.parse(logic.GOLDBACH))

    def is_prime(p):
        return p > 1 and all(p % d for d in range(2, p))

    for x in range(0, 30):
        brute = not (x % 2 == 0 and x > 2) or any(
            is_prime(y) and is_prime(x - y) for y in range(x))
        assert logic.eval_delta0(s.matrix, {0: x}) == brute, x


def test_unassigned_variable():
    with pytest.raises(UnassignedVariable):
        logic.eval_delta0(logic.parse("x = 0"), {})


# ---------------------------------------------------------------- classification

def test_classify_prefix_and_matrix():
    s = logic.classify_pi01(logic.parse("forall x (0 = 0 | x < x+1)"))
    assert s.universal_prefix == (0,)
    assert logic.is_delta0(s.matrix)


@pytest.mark.parametrize("text", ["exists y (y = 1)", "x = 0", "forall x exists y (x = y)"])
def test_classify_rejects(text):
    with pytest.raises(NotPi01):
        logic.classify_pi01(logic.parse(text))


def test_goldbach_shape():
    s = logic.classify_pi01(logic.parse(logic.GOLDBACH_LITERAL))
    assert s.universal_prefix == (0,)
    # (exists y, z < x) expands to two nested bounded existentials
    inner = s.matrix
    assert isinstance(inner, BoundedExists) and isinstance(inner.body, BoundedExists)
    assert inner.bound == X and inner.body.bound == X


# ---------------------------------------------------------------- enumeration

@pytest.mark.parametrize("m, i, expected", [
    (1, 5, (5,)),
    (2, 0, (0, 0)),
    (2, 1, (1, 0)),
    (2, 2, (0, 1)),
    (2, 4, (1, 1)),
    (3, 0, (0, 0, 0)),
])
def test_enumerate_tuples(m, i, expected):
    assert logic.enumerate_tuples(m, i) == expected


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_enumeration_is_a_bijection_on_a_prefix(m):
    seen = [logic.enumerate_tuples(m, i) for i in range(2000)]
    assert len(set(seen)) == len(seen)
    assert all(logic.tuple_rank(t) == i for i, t in enumerate(seen))


def test_pairs_by_diagonal():
    # diagonal order: every pair with sum d appears before any with sum d+1
    pairs = [logic.enumerate_tuples(2, i) for i in range(55)]
    sums = [a + b for a, b in pairs]
    assert sums == sorted(sums)
    assert set(pairs) == {(a, b) for a, b in product(range(10), repeat=2) if a + b < 10}


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=4))
def test_tuple_rank_inverse(t):
    t = tuple(t)
    assert logic.enumerate_tuples(len(t), logic.tuple_rank(t)) == t


@pytest.mark.parametrize("text, i, expected", [
    ("forall x (0 = 0)", 100, True),
    ("forall x !(x = x)", 0, False),
    (logic.GOLDBACH, 50, True),
    (logic.GOLDBACH_LITERAL, 0, False),
])
def test_check_prefix(text, i, expected):
    assert logic.check_prefix(logic.classify_pi01(logic.parse(text)), i) is expected


def test_check_prefix_monotone():
    s = logic.classify_pi01(logic.parse("forall x (x < 7)"))
    values = [logic.check_prefix(s, i) for i in range(12)]
    assert values == [True] * 7 + [False] * 5
    assert logic.first_counterexample(s, 20) == 7


# ---------------------------------------------------------------- Lagarias term

def test_lagarias_n1_exact():
    t = logic.lagarias_rh_term(1)
    assert t.lhs == 1 and t.harmonic == 1 and t.verdict
    assert t.rhs_interval[0] <= 1 <= t.rhs_interval[1]


@pytest.mark.parametrize("n, sigma", [(2, 3), (6, 12), (12, 28), (60, 168)])
def test_lagarias_verdicts(n, sigma):
    t = logic.lagarias_rh_term(n, precision=64)
    assert t.lhs == sigma
    assert t.harmonic == sum(Fraction(1, j) for j in range(1, n + 1))
    assert t.verdict


def test_lagarias_interval_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.prec = 200
    for n in (2, 6, 30):
        t = logic.lagarias_rh_term(n, precision=80)
        h = mpmath.mpf(t.harmonic.numerator) / t.harmonic.denominator
        ref = h + mpmath.exp(h) * mpmath.log(h)
        lo, hi = t.rhs_interval
        assert mpmath.mpf(lo.numerator) / lo.denominator <= ref
        assert ref <= mpmath.mpf(hi.numerator) / hi.denominator

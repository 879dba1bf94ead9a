"""First-order arithmetic: syntax, Gödel coding, Π⁰₁ recognition, truth.

Concrete grammar (whitespace is insignificant)::

    formula  := implies
    implies  := or ( ("->" | "→" | "implies") implies )?
    or       := and ( ("|" | "∨" | "or") and )*
    and      := unary ( ("&" | "∧" | "and") unary )*
    unary    := ("!" | "¬" | "not") unary
              | ("forall" | "∀" | "exists" | "∃") var ("<" term)? unary
              | "(" quant var ("," var)* ("<" term)? ")" unary
              | "(" formula ")"
              | term ("=" | "<") term
    term     := product ( "+" product )*
    product  := factor ( "*" factor )*
    factor   := var | "0" | "1" | numeral | "(" term ")"
    var      := x | y | z | u | v | w | "x_" digits | "x" subscript-digits

Numerals above 1 are sugar for ``1+1+...+1``. Variables are stored by
index: ``x, y, z, u, v, w`` are 0..5 and ``x_7`` (or ``x₇``) is 7.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import isqrt
from typing import Iterator, Mapping, Union

from sympy import divisor_sigma, prime

from .errors import (
    NotACode,
    NotEncodable,
    NotPi01,
    NotWellFormed,
    ParseError,
    PrecisionExhausted,
    UnassignedVariable,
)
from .intervals import exp_interval, log_interval


# ---------------------------------------------------------------- syntax

@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Zero:
    pass


@dataclass(frozen=True)
class One:
    pass


@dataclass(frozen=True)
class Plus:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Times:
    left: "Term"
    right: "Term"


Term = Union[Var, Zero, One, Plus, Times]


@dataclass(frozen=True)
class Eq:
    left: Term
    right: Term


@dataclass(frozen=True)
class Lt:
    left: Term
    right: Term


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Forall:
    var: int
    body: "Formula"


@dataclass(frozen=True)
class Exists:
    var: int
    body: "Formula"


@dataclass(frozen=True)
class BoundedForall:
    var: int
    bound: Term
    body: "Formula"


@dataclass(frozen=True)
class BoundedExists:
    var: int
    bound: Term
    body: "Formula"


Formula = Union[Eq, Lt, Not, And, Or, Implies, Forall, Exists,
                BoundedForall, BoundedExists]

ATOMS = (Eq, Lt)
BINARY = (And, Or, Implies)
UNBOUNDED = (Forall, Exists)
BOUNDED = (BoundedForall, BoundedExists)

VAR_NAMES = ("x", "y", "z", "u", "v", "w")
SUBSCRIPTS = "₀₁₂₃₄₅₆₇₈₉"


def var_name(index: int, style: str = "ascii") -> str:
    if style != "compact" and index < len(VAR_NAMES):
        return VAR_NAMES[index]
    if style == "ascii":
        return f"x_{index}"
    if index == 0:
        return "x"
    return "x" + "".join(SUBSCRIPTS[int(d)] for d in str(index))


def var_index(name: str) -> int:
    if name in VAR_NAMES:
        return VAR_NAMES.index(name)
    body = name[1:].lstrip("_")
    if name.startswith("x") and body:
        digits = "".join(str(SUBSCRIPTS.index(c)) if c in SUBSCRIPTS else c
                         for c in body)
        if digits.isdigit():
            return int(digits)
    raise ValueError(f"not a variable name: {name!r}")


def numeral(n: int) -> Term:
    if n == 0:
        return Zero()
    t: Term = One()
    for _ in range(n - 1):
        t = Plus(t, One())
    return t


# ---------------------------------------------------------------- printing

_STYLES = {
    "ascii": dict(forall="forall ", exists="exists ", not_="!", and_=" & ",
                  or_=" | ", implies=" -> ", eq=" = ", lt=" < ", plus="+",
                  times="*", space=" "),
    "unicode": dict(forall="∀", exists="∃", not_="¬", and_=" ∧ ", or_=" ∨ ",
                    implies=" → ", eq="=", lt="<", plus="+", times="*",
                    space=""),
    "compact": dict(forall="∀", exists="∃", not_="¬", and_="∧", or_="∨",
                    implies="→", eq="=", lt="<", plus="+", times="*",
                    space=""),
}

_FORMULA_PREC = {Implies: 1, Or: 2, And: 3}


def term_to_text(t: Term, style: str = "ascii", prec: int = 0) -> str:
    sym = _STYLES[style]
    if isinstance(t, Var):
        return var_name(t.index, style)
    if isinstance(t, Zero):
        return "0"
    if isinstance(t, One):
        return "1"
    own = 1 if isinstance(t, Plus) else 2
    op = sym["plus"] if own == 1 else sym["times"]
    text = term_to_text(t.left, style, own) + op + term_to_text(t.right, style, own + 1)
    return f"({text})" if own < prec else text


def _unary(f: Formula, style: str) -> str:
    if isinstance(f, (Not,) + UNBOUNDED + BOUNDED):
        return to_text(f, style)
    return "(" + to_text(f, style) + ")"


def to_text(f: Formula, style: str = "ascii", prec: int = 0) -> str:
    """Render a formula; ``parse(to_text(f, style)) == f`` for every style."""
    sym = _STYLES[style]
    if isinstance(f, ATOMS):
        op = sym["eq"] if isinstance(f, Eq) else sym["lt"]
        return term_to_text(f.left, style) + op + term_to_text(f.right, style)
    if isinstance(f, Not):
        return sym["not_"] + _unary(f.body, style)
    if isinstance(f, UNBOUNDED):
        q = sym["forall"] if isinstance(f, Forall) else sym["exists"]
        return q + var_name(f.var, style) + sym["space"] + _unary(f.body, style)
    if isinstance(f, BOUNDED):
        q = sym["forall"] if isinstance(f, BoundedForall) else sym["exists"]
        head = "(" + q + var_name(f.var, style) + sym["lt"] + term_to_text(f.bound, style) + ")"
        return head + sym["space"] + _unary(f.body, style)
    own = _FORMULA_PREC[type(f)]
    op = {And: sym["and_"], Or: sym["or_"], Implies: sym["implies"]}[type(f)]
    if isinstance(f, Implies):
        text = to_text(f.left, style, own + 1) + op + to_text(f.right, style, own)
    else:
        text = to_text(f.left, style, own) + op + to_text(f.right, style, own + 1)
    return f"({text})" if own < prec else text


# ---------------------------------------------------------------- parsing

_KEYWORDS = {"forall": "forall", "exists": "exists", "∀": "forall", "∃": "exists",
             "not": "!", "and": "&", "or": "|", "implies": "->"}
_SINGLE = {"(": "(", ")": ")", ",": ",", "=": "=", "<": "<", "+": "+",
           "*": "*", "&": "&", "∧": "&", "|": "|", "∨": "|", "!": "!",
           "¬": "!", "→": "->"}


def _tokenize(text: str) -> list[tuple[str, object, int]]:
    tokens = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif text.startswith("->", i):
            tokens.append(("->", None, i))
            i += 2
        elif c in "∀∃":
            tokens.append((_KEYWORDS[c], None, i))
            i += 1
        elif c in _SINGLE:
            tokens.append((_SINGLE[c], None, i))
            i += 1
        elif c.isdigit():
            j = i
            while j < len(text) and text[j].isdigit():
                j += 1
            tokens.append(("num", int(text[i:j]), i))
            i = j
        elif c.isalpha():
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"
                                     or text[j] in SUBSCRIPTS):
                j += 1
            word = text[i:j]
            if word in _KEYWORDS:
                tokens.append((_KEYWORDS[word], None, i))
            else:
                try:
                    tokens.append(("var", var_index(word), i))
                except ValueError:
                    raise ParseError(f"unknown identifier {word!r}", i) from None
            i = j
        else:
            raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("eof", None, len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, ahead: int = 0) -> str:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)][0]

    def take(self, kind: str | None = None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[0]!r}", tok[2])
        self.pos += 1
        return tok

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.tokens[self.pos][2])

    # formulas
    def formula(self) -> Formula:
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.formula())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.unary()
        while self.peek() == "&":
            self.take()
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        kind = self.peek()
        if kind == "!":
            self.take()
            return Not(self.unary())
        if kind in ("forall", "exists"):
            self.take()
            var = self.take("var")[1]
            bound = None
            if self.peek() == "<":
                self.take()
                bound = self.term()
            return _quantify(kind, [var], bound, self.unary())
        if kind == "(":
            if self.peek(1) in ("forall", "exists"):
                return self.quantifier_prefix()
            start = self.pos
            try:
                self.take("(")
                inner = self.formula()
                self.take(")")
                if self.peek() not in ("=", "<", "+", "*"):
                    return inner
            except ParseError:
                pass
            self.pos = start
        return self.atom()

    def quantifier_prefix(self) -> Formula:
        self.take("(")
        kind = self.take()[0]
        variables = [self.take("var")[1]]
        while self.peek() == ",":
            self.take()
            variables.append(self.take("var")[1])
        bound = None
        if self.peek() == "<":
            self.take()
            bound = self.term()
        self.take(")")
        return _quantify(kind, variables, bound, self.unary())

    def atom(self) -> Formula:
        left = self.term()
        kind = self.peek()
        if kind not in ("=", "<"):
            raise self.error("expected '=' or '<'")
        self.take()
        right = self.term()
        return Eq(left, right) if kind == "=" else Lt(left, right)

    # terms
    def term(self) -> Term:
        t = self.product()
        while self.peek() == "+":
            self.take()
            t = Plus(t, self.product())
        return t

    def product(self) -> Term:
        t = self.factor()
        while self.peek() == "*":
            self.take()
            t = Times(t, self.factor())
        return t

    def factor(self) -> Term:
        kind, value, _ = self.tokens[self.pos]
        if kind == "var":
            self.take()
            return Var(value)
        if kind == "num":
            self.take()
            return numeral(value)
        if kind == "(":
            self.take()
            t = self.term()
            self.take(")")
            return t
        raise self.error("expected a term")


def _quantify(kind: str, variables: list[int], bound, body: Formula) -> Formula:
    for var in reversed(variables):
        if bound is None:
            body = Forall(var, body) if kind == "forall" else Exists(var, body)
        else:
            body = (BoundedForall(var, bound, body) if kind == "forall"
                    else BoundedExists(var, bound, body))
    return body


def parse(text: str) -> Formula:
    """Parse a formula written in the grammar documented at module level."""
    p = _Parser(text)
    f = p.formula()
    if p.peek() != "eof":
        raise p.error("trailing input")
    return f


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    if p.peek() != "eof":
        raise p.error("trailing input")
    return t


# ---------------------------------------------------------------- variables

def term_vars(t: Term) -> set[int]:
    if isinstance(t, Var):
        return {t.index}
    if isinstance(t, (Plus, Times)):
        return term_vars(t.left) | term_vars(t.right)
    return set()


def free_vars(f: Formula) -> set[int]:
    if isinstance(f, ATOMS):
        return term_vars(f.left) | term_vars(f.right)
    if isinstance(f, Not):
        return free_vars(f.body)
    if isinstance(f, BINARY):
        return free_vars(f.left) | free_vars(f.right)
    if isinstance(f, UNBOUNDED):
        return free_vars(f.body) - {f.var}
    return term_vars(f.bound) | (free_vars(f.body) - {f.var})


def is_delta0(f: Formula) -> bool:
    if isinstance(f, ATOMS):
        return True
    if isinstance(f, Not):
        return is_delta0(f.body)
    if isinstance(f, BINARY):
        return is_delta0(f.left) and is_delta0(f.right)
    if isinstance(f, UNBOUNDED):
        return False
    return is_delta0(f.body)


# ---------------------------------------------------------------- Gödel codes

#: The seven-symbol table used for the worked example.
SEVEN_SYMBOL_TABLE = {"x": 1, "0": 2, "∀": 3, "*": 4, "=": 5, "(": 6, ")": 7}

#: Production table: the seven symbols above plus the rest of the grammar.
SYMBOL_TABLE = dict(SEVEN_SYMBOL_TABLE)
SYMBOL_TABLE.update({"¬": 8, "∧": 9, "∨": 10, "→": 11, "∃": 12, "+": 13,
                     "<": 14, ",": 15, "1": 16})
SYMBOL_TABLE.update({d: 17 + i for i, d in enumerate(SUBSCRIPTS)})

SCHEMES = {0: SEVEN_SYMBOL_TABLE, 1: SYMBOL_TABLE}


@dataclass(frozen=True)
class GoedelCode:
    value: int
    scheme_version: int = 1


def symbol_string(obj: Formula | Term) -> str:
    """The compact symbol string that gets prime-power coded."""
    if isinstance(obj, (Var, Zero, One, Plus, Times)):
        return term_to_text(obj, "compact")
    return to_text(obj, "compact")


def encode_symbols(symbols: str, scheme_version: int = 1) -> GoedelCode:
    table = SCHEMES[scheme_version]
    value = 1
    for i, s in enumerate(symbols):
        if s not in table:
            raise NotEncodable(f"symbol {s!r} not in table {scheme_version}")
        value *= prime(i + 1) ** table[s]
    return GoedelCode(value, scheme_version)


def encode(f: Formula | Term, scheme_version: int = 1) -> GoedelCode:
    return encode_symbols(symbol_string(f), scheme_version)


def decode_symbols(code: GoedelCode) -> str:
    table = SCHEMES[code.scheme_version]
    inverse = {v: k for k, v in table.items()}
    c = code.value
    if c < 1:
        raise NotACode("codes are positive integers")
    out = []
    i = 1
    while c > 1:
        p = prime(i)
        e = 0
        while c % p == 0:
            c //= p
            e += 1
        if e == 0:
            raise NotACode(f"exponent gap at prime {p}")
        if e not in inverse:
            raise NotACode(f"exponent {e} at prime {p} names no symbol")
        out.append(inverse[e])
        i += 1
    return "".join(out)


def decode(code: GoedelCode | int) -> Formula:
    if isinstance(code, int):
        code = GoedelCode(code)
    symbols = decode_symbols(code)
    try:
        return parse(symbols)
    except ParseError as exc:
        raise NotWellFormed(f"{symbols!r}: {exc}") from None


# ---------------------------------------------------------------- Π⁰₁

@dataclass(frozen=True)
class Pi01Sentence:
    universal_prefix: tuple[int, ...]
    matrix: Formula
    code: GoedelCode | None = None

    @property
    def arity(self) -> int:
        return len(self.universal_prefix)

    def formula(self) -> Formula:
        f = self.matrix
        for v in reversed(self.universal_prefix):
            f = Forall(v, f)
        return f


def classify_pi01(f: Formula) -> Pi01Sentence:
    free = free_vars(f)
    if free:
        names = ", ".join(var_name(v) for v in sorted(free))
        raise NotPi01(f"free variables: {names}")
    prefix = []
    matrix = f
    while isinstance(matrix, Forall):
        prefix.append(matrix.var)
        matrix = matrix.body
    if not is_delta0(matrix):
        raise NotPi01("matrix contains an unbounded quantifier")
    return Pi01Sentence(tuple(prefix), matrix, encode(f))


def eval_term(t: Term, env: Mapping[int, int]) -> int:
    if isinstance(t, Var):
        if t.index not in env:
            raise UnassignedVariable(var_name(t.index))
        return env[t.index]
    if isinstance(t, Zero):
        return 0
    if isinstance(t, One):
        return 1
    if isinstance(t, Plus):
        return eval_term(t.left, env) + eval_term(t.right, env)
    return eval_term(t.left, env) * eval_term(t.right, env)


def _normalize(assignment: Mapping) -> dict[int, int]:
    return {(var_index(k) if isinstance(k, str) else k): v
            for k, v in assignment.items()}


def eval_delta0(matrix: Formula, assignment: Mapping | None = None) -> bool:
    """Truth in the standard model; bounded quantifiers iterate below the bound."""
    return _eval(matrix, _normalize(assignment or {}))


def _eval(f: Formula, env: dict[int, int]) -> bool:
    if isinstance(f, Eq):
        return eval_term(f.left, env) == eval_term(f.right, env)
    if isinstance(f, Lt):
        return eval_term(f.left, env) < eval_term(f.right, env)
    if isinstance(f, Not):
        return not _eval(f.body, env)
    if isinstance(f, And):
        return _eval(f.left, env) and _eval(f.right, env)
    if isinstance(f, Or):
        return _eval(f.left, env) or _eval(f.right, env)
    if isinstance(f, Implies):
        return (not _eval(f.left, env)) or _eval(f.right, env)
    if isinstance(f, BOUNDED):
        bound = eval_term(f.bound, env)
        inner = dict(env)
        want_all = isinstance(f, BoundedForall)
        for value in range(bound):
            inner[f.var] = value
            if _eval(f.body, inner) != want_all:
                return not want_all
        return want_all
    raise NotPi01("unbounded quantifier inside a bounded matrix")


# ---------------------------------------------------------------- enumeration

def cantor_unpair(z: int) -> tuple[int, int]:
    w = (isqrt(8 * z + 1) - 1) // 2
    y = z - w * (w + 1) // 2
    return w - y, y


def cantor_pair(x: int, y: int) -> int:
    return (x + y) * (x + y + 1) // 2 + y


def enumerate_tuples(m: int, i: int) -> tuple[int, ...]:
    """The i-th m-tuple: unpair i, keep the first half, recurse on the second."""
    if m < 1:
        raise ValueError("m must be at least 1")
    out = []
    for _ in range(m - 1):
        head, i = cantor_unpair(i)
        out.append(head)
    out.append(i)
    return tuple(out)


def tuple_rank(t: tuple[int, ...]) -> int:
    """Inverse of :func:`enumerate_tuples`."""
    z = t[-1]
    for head in reversed(t[:-1]):
        z = cantor_pair(head, z)
    return z


def instance_holds(s: Pi01Sentence, j: int) -> bool:
    if s.arity == 0:
        return eval_delta0(s.matrix, {})
    values = enumerate_tuples(s.arity, j)
    return eval_delta0(s.matrix, dict(zip(s.universal_prefix, values)))


def check_prefix(s: Pi01Sentence, i: int) -> bool:
    """True iff the matrix holds at the first i+1 enumerated tuples."""
    return all(instance_holds(s, j) for j in range(i + 1))


def first_counterexample(s: Pi01Sentence, limit: int) -> int | None:
    for j in range(limit):
        if not instance_holds(s, j):
            return j
    return None


# ---------------------------------------------------------------- corpus

#: ``d | x``: (∃z<x+1)(d*z=x).
def divides(d: str, x: str, w: str) -> str:
    return f"(exists {w} < {x}+1) ({d}*{w} = {x})"


def is_prime_text(p: str, d: str, w: str) -> str:
    return f"(1 < {p} & (forall {d} < {p}) ({divides(d, p, w)} -> {d} = 1 | {d} = 0))"


GOLDBACH_LITERAL = (
    "forall x (exists y, z < x) ((exists u < x) (2*u = x) -> "
    "((forall v < y) ((exists w < y) (v*w = y) -> v = 1) & "
    "(forall v < z) ((exists w < z) (v*w = z) -> v = 1) & x = y+z))"
)
"""The textbook Π⁰₁ form with the divisibility and primality abbreviations
expanded literally. It is false at x = 0 (an empty bounded ∃)."""

GOLDBACH = (
    "forall x ((exists u < x+1) (2*u = x) & 2 < x -> (exists y, z < x) ("
    + is_prime_text("y", "v", "w") + " & " + is_prime_text("z", "v", "w")
    + " & x = y+z))"
)
"""Every even x > 2 is a sum of two primes, with a true primality test."""

CORPUS = {
    "always_true": "forall x (0 = 0)",
    "always_false": "forall x !(x = x)",
    "times_zero": "forall x (x*0 = 0)",
    "successor": "forall x (0 = 0 | x < x+1)",
    "goldbach": GOLDBACH,
}


# ---------------------------------------------------------------- Lagarias

@dataclass(frozen=True)
class LagariasTerm:
    n: int
    lhs: int
    harmonic: Fraction
    rhs_interval: tuple[Fraction, Fraction]
    verdict: bool


def harmonic(n: int) -> Fraction:
    return sum((Fraction(1, j) for j in range(1, n + 1)), Fraction(0))


def lagarias_rh_term(n: int, precision: int = 64) -> LagariasTerm:
    """Decide sigma(n) <= H_n + exp(H_n) log(H_n) with validated enclosures."""
    if n < 1:
        raise ValueError("n must be positive")
    lhs = int(divisor_sigma(n))
    h = harmonic(n)
    elo, ehi = exp_interval(h, precision)
    llo, lhi = log_interval(h, precision)
    lo = h + elo * llo
    hi = h + ehi * lhi
    if lhs <= lo:
        verdict = True
    elif lhs > hi:
        verdict = False
    else:
        raise PrecisionExhausted(
            f"n={n}: sigma={lhs} inside [{float(lo)}, {float(hi)}] at {precision} bits")
    return LagariasTerm(n, lhs, h, (lo, hi), verdict)


def iter_tuples(m: int) -> Iterator[tuple[int, ...]]:
    i = 0
    while True:
        yield enumerate_tuples(m, i)
        i += 1

"""Finite-window symbolic dynamics.

A :class:`Window` is a finite piece ``x[offset, offset + len(letters))`` of
a bi-infinite sequence; position 0 sits at ``letters[-offset]``. Every
statement about points is checked only on windows where the parse exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from sympy import primefactors

from .errors import AmbiguousParse, ClosureViolated, NotParseable, Undeterminable
from .circular import CircStage, _find_cover
from .odometer_words import WordStage


@dataclass(frozen=True)
class Window:
    offset: int
    letters: str
    alphabet: str = "01"

    def __post_init__(self):
        if not -len(self.letters) <= self.offset <= 0:
            raise ValueError("offset must lie in [-len(letters), 0]")

    @property
    def zero(self) -> int:
        return -self.offset

    def shift(self, t: int = 1) -> "Window":
        """The same letters seen from the shifted point (position 0 moves right)."""
        return Window(self.offset - t, self.letters, self.alphabet)

    @classmethod
    def parse(cls, text: str) -> "Window":
        """``"offset:letters"``, e.g. ``"-3:0110101"``."""
        off, _, letters = text.partition(":")
        alphabet = "01be" if any(c in "be" for c in letters) else "01"
        return cls(int(off), letters, alphabet)

    def __str__(self):
        return f"{self.offset}:{self.letters}"


@dataclass(frozen=True)
class EmpiricalDist:
    level: int
    weights: dict

    def total(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def variation(self, other: "EmpiricalDist") -> Fraction:
        """Half the L1 distance over the union of supports."""
        keys = set(self.weights) | set(other.weights)
        return sum((abs(self.weights.get(x, Fraction(0)) - other.weights.get(x, Fraction(0)))
                    for x in keys), Fraction(0)) / 2

    def to_csv(self) -> str:
        rows = ["word,num,den"]
        for w in sorted(self.weights):
            v = self.weights[w]
            rows.append(f"{w},{v.numerator},{v.denominator}")
        return "\n".join(rows) + "\n"


def _stage_words(stage) -> list[str]:
    if isinstance(stage, CircStage):
        return [stage.letters(w) for w in range(stage.count)]
    return [w.letters for w in stage.words()]


def principal_subword(win: Window, stage: WordStage | CircStage) -> dict:
    """The unique stage word occurrence ``[a_n, b_n)`` with ``a_n <= 0 < b_n``."""
    words = _stage_words(stage)
    hits = _find_cover(win.letters, win.zero, words)
    if not hits:
        raise NotParseable(f"no stage-{stage.n} word covers position 0 in window {win.offset}:...")
    if len(hits) > 1:
        raise AmbiguousParse(f"{len(hits)} stage-{stage.n} words cover position 0")
    start, wi = hits[0]
    a = start - win.zero
    return {"a_n": a, "b_n": a + len(words[0]), "word_index": wi, "r_n": -a}


# ---------------------------------------------------------------- odometer

def odometer_coordinate(win: Window, stages: Sequence[WordStage]) -> list[int]:
    """Digits ``d_0 .. d_{n-1}`` with ``r_{m+1} = r_m + d_m K_m`` where ``r_m``
    is the distance from the principal ``m``-block start to position 0."""
    r = [principal_subword(win, st)["r_n"] for st in stages]
    digits = []
    for m in range(len(stages) - 1):
        K = stages[m].length
        step = r[m + 1] - r[m]
        if step % K or not 0 <= step // K < stages[m + 1].k:
            raise NotParseable(f"stage {m} block is not aligned inside the stage {m + 1} block")
        digits.append(step // K)
    return digits


def odometer_add_carry(digits: Sequence[int], j: int, radices: Sequence[int]) -> tuple[list[int], int]:
    """Mixed-radix ``digits + j`` (least significant first) and the carry out."""
    out = list(digits)
    carry = j
    for m, k in enumerate(radices):
        carry, out[m] = divmod(out[m] + carry, k)
    return out, carry


def odometer_add(digits: Sequence[int], j: int, radices: Sequence[int]) -> list[int]:
    return odometer_add_carry(digits, j, radices)[0]


def odometer_neg(digits: Sequence[int], radices: Sequence[int]) -> list[int]:
    """The odometer inverse ``x -> -x`` on the finite prefix."""
    total = 0
    place = 1
    for d, k in zip(digits, radices):
        total += d * place
        place *= k
    return odometer_add([0] * len(radices), (-total) % place, radices)


# ---------------------------------------------------------------- distributions

def emp_dist(w, k: int, stage: WordStage | CircStage) -> EmpiricalDist:
    """Empirical distribution of level-``k`` blocks in ``w``.

    ``w`` is a letter string parsed greedily into words of ``stage`` (the
    level-``k`` stage; spacers between blocks are skipped), or a pair
    ``(stage_m, index)`` handled through the index arrays.
    """
    if isinstance(w, tuple):
        top, idx = w
        return _emp_dist_index(top, idx, k)
    text = w.letters if hasattr(w, "letters") else str(w)
    words = _stage_words(stage)
    lookup = {x: i for i, x in enumerate(words)}
    L = len(words[0])
    counts: dict[int, int] = {}
    pos = 0
    while pos < len(text):
        i = lookup.get(text[pos:pos + L])
        if i is not None:
            counts[i] = counts.get(i, 0) + 1
            pos += L
        elif text[pos] in "be":
            pos += 1
        else:
            raise NotParseable(f"position {pos} starts no level-{k} word")
    total = sum(counts.values())
    if not total:
        raise NotParseable("no level-k block found")
    return EmpiricalDist(k, {i: Fraction(c, total) for i, c in sorted(counts.items())})


def _emp_dist_index(top, idx: int, k: int) -> EmpiricalDist:
    if isinstance(top, CircStage):
        chain = top.chain()
        get = lambda st: st.prewords
        size = lambda st: st.count
    else:
        chain = top.chain()
        get = lambda st: st.index
        size = lambda st: st.s
    if not 0 <= k <= top.n:
        raise NotParseable(f"level {k} is not below stage {top.n}")
    counts = np.zeros(size(top), dtype=object)
    counts[idx] = 1
    for st in reversed(chain[k + 1: top.n + 1]):
        rows = get(st)
        below = np.zeros(size(st.prev), dtype=object)
        for x in np.flatnonzero(counts):
            below += counts[x] * np.bincount(rows[x], minlength=size(st.prev)).astype(object)
        counts = below
    total = int(sum(counts))
    return EmpiricalDist(k, {i: Fraction(int(c), total) for i, c in enumerate(counts) if c})


@dataclass(frozen=True)
class GenericReport:
    ok: bool
    N: int | None
    worst_tail: Fraction


def generic_check(seq: Sequence, k: int, eps, stage=None) -> GenericReport:
    """Finite Cauchy test: the least ``N`` with every pairwise variation
    distance among ``seq[N:]`` below ``eps``; passes when at least the last
    two terms are covered."""
    if len(seq) < 2:
        raise ValueError("generic_check needs at least two words")
    eps = Fraction(eps)
    dists = [x if isinstance(x, EmpiricalDist) else emp_dist(x, k, stage) for x in seq]
    n = len(dists)
    N = n - 1
    worst = Fraction(0)
    for start in range(n - 2, -1, -1):
        d = max(dists[start].variation(dists[j]) for j in range(start + 1, n))
        if d >= eps:
            break
        N = start
        worst = max(worst, d)
    return GenericReport(N <= n - 2, N if N <= n - 2 else None, worst)


# ---------------------------------------------------------------- eta_g

def eta_g_apply(stage: WordStage, level: int, class_word: Sequence[int]) -> list[int]:
    """Diagonal image ``g[c_0] .. g[c_{K-1}]`` of a stage-``m`` class-word;
    the result read backwards must again be a class-word of the stage."""
    prev = stage.prev
    if prev is None or level > prev.n:
        raise ClosureViolated(f"no level-{level} class-words at stage {stage.n}")
    cw = np.asarray(class_word, dtype=np.int64)
    g = prev.actions[level] if level >= 1 else None
    words = prev.classes[level][stage.index]
    keys = {r.tobytes() for r in words}
    if cw.tobytes() not in keys:
        raise ClosureViolated("input is not a class-word of this stage")
    img = cw if g is None else g[cw]
    if np.ascontiguousarray(img[::-1]).tobytes() not in keys:
        raise ClosureViolated("image does not land in the reversed collection")
    return img.tolist()


# ---------------------------------------------------------------- Kronecker pools

def kronecker_prime_sets(radicesA: Sequence[int], radicesB: Sequence[int],
                         tail_pools: tuple[set, set] | None = None) -> dict:
    """Compare the prime pools of two odometers.

    ``tail_pools`` declares the primes of the unseen tails; without it,
    equal prefix pools cannot decide the question.
    """
    poolA = set().union(*(primefactors(k) for k in radicesA)) if radicesA else set()
    poolB = set().union(*(primefactors(k) for k in radicesB)) if radicesB else set()
    if tail_pools is not None:
        poolA |= set(tail_pools[0])
        poolB |= set(tail_pools[1])
    diff = poolA ^ poolB
    if diff:
        return {"distinct": True, "witness": min(diff), "poolA": poolA, "poolB": poolB}
    if tail_pools is not None:
        return {"distinct": False, "witness": None, "poolA": poolA, "poolB": poolB}
    raise Undeterminable("prime pools agree on the given prefix; not distinct on prefix")

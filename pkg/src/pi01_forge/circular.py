"""Circular construction sequences built with the C-operator.

For words ``w_0 .. w_{k-1}`` of length ``q`` and coprime ``p, q``::

    C(w_0, .., w_{k-1}) = prod_{i<q} prod_{j<k} b^(q - j_i) w_j^(l-1) e^(j_i)

where ``j_i`` solves ``j_i * p = i (mod q)``. The output has length
``k * l * q^2``. Lifted stages keep only the preword index tuples and
expand letters on demand.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Sequence

import numpy as np

from .errors import CapacityExceeded, LengthMismatch, NotCoprime, NotParseable
from .odometer_words import WordStage, check_unique_readability, strong_uniformity
from .schedule import Schedule, StageParams

SPACERS = "be"
MAX_EXPANDED_LETTERS = 1 << 28


@dataclass(frozen=True)
class CircWord:
    letters: str
    stage: int

    def __len__(self):
        return len(self.letters)


def j_index(i: int, p: int, q: int) -> int:
    """The unique ``0 <= j < q`` with ``j * p = i (mod q)``."""
    if q == 1:
        return 0
    if gcd(p, q) != 1:
        raise NotCoprime(f"gcd({p}, {q}) != 1")
    return (i * pow(p, -1, q)) % q


def c_operator(words: Sequence[str | CircWord], p: int, q: int, l: int) -> CircWord:
    """Apply the C-operator to ``k`` words of length ``q``."""
    ws = [w.letters if isinstance(w, CircWord) else str(w) for w in words]
    stage = words[0].stage + 1 if words and isinstance(words[0], CircWord) else 0
    k = len(ws)
    if k < 1 or l < 1 or q < 1:
        raise LengthMismatch("need k, l, q >= 1")
    for w in ws:
        if len(w) != q:
            raise LengthMismatch(f"word {w[:20]!r} has length {len(w)}, expected q={q}")
    parts = []
    for i in range(q):
        ji = j_index(i, p, q)
        head, tail = "b" * (q - ji), "e" * ji
        for w in ws:
            parts.append(head)
            parts.append(w * (l - 1))
            parts.append(tail)
    return CircWord("".join(parts), stage)


@dataclass(eq=False)
class CircStage:
    """Stage ``n`` of a circular construction sequence.

    ``prewords[w]`` lists the previous-stage circular words fed to the
    C-operator (with ``k, l`` and the previous ``p, q``) to produce word ``w``.
    """
    n: int
    q: int
    p: int
    count: int
    prewords: np.ndarray | None = None
    prev: "CircStage | None" = None
    k: int | None = None
    l: int | None = None
    source: WordStage | None = None

    @property
    def length(self) -> int:
        return self.q

    def letters(self, w: int) -> str:
        if self.q > MAX_EXPANDED_LETTERS:
            raise CapacityExceeded(f"circular word length {self.q} exceeds the expansion ceiling")
        if self.prewords is None:
            return str(w)
        pre = [self.prev.letters(int(j)) for j in self.prewords[w]]
        return c_operator(pre, self.prev.p, self.prev.q, self.l).letters

    def word(self, w: int) -> CircWord:
        return CircWord(self.letters(w), self.n)

    def words(self) -> list[CircWord]:
        return [self.word(w) for w in range(self.count)]

    def chain(self) -> list["CircStage"]:
        out, st = [], self
        while st is not None:
            out.append(st)
            st = st.prev
        return out[::-1]

    def spacer_count_new(self) -> int:
        """Spacers added by the last C-operator application."""
        if self.prewords is None:
            return 0
        return self.k * self.prev.q ** 2


def circ_stage0(source: WordStage | None = None) -> CircStage:
    """c_0 is the identity on the letters."""
    return CircStage(n=0, q=1, p=0, count=2, source=source)


def lift_stage(odo: WordStage, params: StageParams, prev: CircStage | None = None) -> CircStage:
    """Lift odometer stage ``n`` using the stage ``n-1`` parameters.

    ``prev`` is the lifted stage ``n-1``; stage 0 needs neither.
    """
    if odo.index is None:
        return circ_stage0(odo)
    if prev is None:
        if odo.n != 1:
            raise LengthMismatch("lifting beyond stage 1 needs the previous circular stage")
        prev = circ_stage0(odo.prev)
    if params.n != odo.n - 1:
        raise LengthMismatch(f"parameters for stage {params.n} cannot lift stage {odo.n}")
    k = odo.index.shape[1]
    if k != params.k_n:
        raise LengthMismatch(f"stage {odo.n} words use k={k}, schedule has k_{params.n}={params.k_n}")
    if prev.q != params.q_n or prev.p != params.p_n:
        raise LengthMismatch(f"previous circular stage has (p,q)=({prev.p},{prev.q}), "
                             f"schedule has ({params.p_n},{params.q_n})")
    if prev.count != odo.prev.s:
        raise LengthMismatch("previous circular stage does not match the odometer stage")
    q_next = k * params.l_n * prev.q ** 2
    return CircStage(n=odo.n, q=q_next, p=params.p_next, count=odo.s,
                     prewords=odo.index.copy(), prev=prev, k=k, l=params.l_n, source=odo)


def lift_chain(odo: WordStage, sched: Schedule) -> CircStage:
    """Lift every stage of ``odo``'s chain."""
    circ = None
    for st in odo.chain():
        circ = circ_stage0(st) if st.index is None else lift_stage(st, sched.stages[st.n - 1], circ)
    return circ


def lift_with(odo: WordStage, ls: Sequence[int]) -> CircStage:
    """Lift ``odo``'s chain with explicit ``l`` values (p, q from the recurrences)."""
    circ = None
    for st in odo.chain():
        if st.index is None:
            circ = circ_stage0(st)
            continue
        k, l = st.index.shape[1], ls[st.n - 1]
        p_next = k * l * circ.p * circ.q + 1
        circ = CircStage(n=st.n, q=k * l * circ.q ** 2, p=p_next, count=st.s,
                         prewords=st.index.copy(), prev=circ, k=k, l=l, source=st)
    return circ


def spacer_total(circ: CircStage, w: int) -> int:
    """Number of b/e letters in word ``w``, computed from the prewords."""
    if circ.prewords is None:
        return 0
    inner = sum(spacer_total(circ.prev, int(j)) for j in circ.prewords[w])
    return circ.spacer_count_new() + (circ.l - 1) * circ.prev.q * inner


def project_to_Kalpha(w: str | CircWord) -> str:
    """Letters become ``*``; spacers stay."""
    s = w.letters if isinstance(w, CircWord) else w
    return "".join(c if c in SPACERS else "*" for c in s)


# ---------------------------------------------------------------- checks

def skeleton(circ: CircStage) -> str:
    """The common b/e/``*`` pattern of every word of the stage.

    The C-operator output pattern depends only on the input patterns, so
    all words of a lifted stage share it.
    """
    P = "*"
    for st in circ.chain()[1:]:
        P = c_operator([P] * st.k, st.prev.p, st.prev.q, st.l).letters
    return P


def lifted_unique_readability(circ: CircStage) -> tuple[bool, tuple | None, str]:
    """Exact unique readability of a lifted stage.

    An interior occurrence of a word in ``uv`` forces an interior
    occurrence of the shared skeleton in its square. Only those offsets
    are checked letter by letter; when there are none the stage is
    readable without expanding any word.
    """
    if circ.prewords is None:
        return True, None, "letters"
    P = skeleton(circ)
    L = len(P)
    PP = P + P
    offsets = []
    p = PP.find(P, 1)
    while 0 < p < L:
        offsets.append(p)
        p = PP.find(P, p + 1)
    if not offsets:
        return True, None, "skeleton"
    words = [circ.letters(w) for w in range(circ.count)]
    known = set(words)
    for u in words:
        for v in words:
            uv = u + v
            for off in offsets:
                if uv[off:off + L] in known:
                    return False, (u, v, off), "offsets"
    return True, None, "offsets"


def check_lift(circ: CircStage, brute_limit: int = 1 << 20) -> dict:
    """Structural checks on a lifted stage.

    Length law, injectivity, occurrence of every previous word, the newly
    added spacer fraction, unique readability (brute when small) and equal
    rotation-factor projections.
    """
    out = {"stage": circ.n, "length_law": True, "injective": True, "uniform": True,
           "spacer_fraction": Fraction(0), "spacer_ok": True, "ur": None,
           "projection_equal": None}
    if circ.prewords is None:
        return out
    prev = circ.prev
    out["length_law"] = circ.q == circ.k * circ.l * prev.q ** 2
    out["injective"] = len({r.tobytes() for r in circ.prewords}) == circ.count
    counts = np.stack([np.bincount(r, minlength=prev.count) for r in circ.prewords])
    out["uniform"] = bool((counts > 0).all())
    frac = Fraction(circ.spacer_count_new(), circ.q)
    out["spacer_fraction"] = frac
    out["spacer_ok"] = frac <= Fraction(1, circ.l) + Fraction(1, prev.q)
    if circ.q <= MAX_EXPANDED_LETTERS:
        out["ur"] = lifted_unique_readability(circ)[0]
    if circ.q * circ.count <= brute_limit:
        words = circ.words()
        assert all(len(w) == circ.q for w in words)
        out["ur_brute"] = check_unique_readability([w.letters for w in words])[0]
        proj = {project_to_Kalpha(w) for w in words}
        out["projection_equal"] = len(proj) == 1
        out["spacer_exact"] = all(
            w.letters.count("b") + w.letters.count("e") == spacer_total(circ, i)
            for i, w in enumerate(words))
    return out


# ---------------------------------------------------------------- rotation factor

def _find_cover(letters: str, zero: int, words: Sequence[str]) -> list[tuple[int, int]]:
    """All (start, word index) with ``words[w]`` at ``start`` covering ``zero``."""
    L = len(words[0])
    hits = []
    lo = max(0, zero - L + 1)
    hi = min(zero, len(letters) - L)
    for wi, w in enumerate(words):
        p = letters.find(w, lo)
        while p != -1 and p <= hi:
            hits.append((p, wi))
            p = letters.find(w, p + 1)
    return hits


def rotation_coordinate(window, circ: CircStage, n: int | None = None) -> Fraction:
    """``r * p_n / q_n mod 1`` where ``r`` is the distance from the start of
    the principal ``n``-block to position 0."""
    from .symbolic import principal_subword

    st = circ if n is None else circ.chain()[n]
    parse = principal_subword(window, st)
    r = -parse["a_n"]
    return Fraction(r * st.p, st.q) % 1


def circ_to_json(circ: CircStage) -> dict:
    return {"schema": "pi01-forge/circular/1", "n": circ.n,
            "stages": [{"n": st.n, "p": str(st.p), "q": str(st.q), "k": st.k, "l": st.l,
                        "count": st.count,
                        "prewords": None if st.prewords is None else st.prewords.tolist()}
                       for st in circ.chain()]}


def circ_from_json(doc: dict) -> CircStage:
    prev = None
    for d in doc["stages"]:
        pw = None if d["prewords"] is None else np.array(d["prewords"], dtype=np.int64)
        prev = CircStage(n=d["n"], q=int(d["q"]), p=int(d["p"]), count=d["count"],
                         prewords=pw, prev=prev, k=d["k"], l=d["l"])
    return prev

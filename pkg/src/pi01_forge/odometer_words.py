"""Odometer-based construction sequences over {0, 1}.

Stage ``n+1`` words are stored as index arrays over stage ``n`` words and
expanded to letters only on demand. Partitions are nested: at stage ``n``
the level-``i`` class of word ``w`` is ``w // E**(n+1-i)`` where ``E`` is
the per-level splitting count, so children of a class are contiguous.

The build is top-down. Level-``i`` class-words are balanced substitution
instances of their level-``i-1`` parents, paired under the skew-diagonal
action when the previous stage's action is nontrivial. The last level
splits each word into a long stem (shared by a new class) and a short tail.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import log, sqrt
from typing import Callable, Mapping, Sequence

import numpy as np
from numba import njit

from .errors import (CapacityExceeded, PreconditionViolated, SearchExhausted,
                     SubordinationImpossible)
from .logic import Pi01Sentence, check_prefix
from .schedule import Schedule, StageParams

MAX_INDEX_ENTRIES = 1 << 24
MAX_EXPANDED_LETTERS = 1 << 22


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class OdoWord:
    letters: str
    stage: int

    def __len__(self):
        return len(self.letters)


@dataclass(eq=False)
class WordStage:
    """One stage of the construction sequence.

    ``classes[i][w]`` is the level-``i`` class of word ``w`` (level 0 is the
    whole set). ``actions[i]`` is an involution on level-``i`` class ids or
    ``None`` for the trivial action; ``actions[0]`` is always ``None``.
    """
    n: int
    s: int
    Q: tuple[int, ...]
    classes: tuple[np.ndarray, ...]
    actions: tuple[np.ndarray | None, ...]
    index: np.ndarray | None = None
    prev: "WordStage | None" = None
    omega_hit: int | None = None
    kmax: int | None = None

    @property
    def length(self) -> int:
        if self.index is None:
            return 1
        return self.index.shape[1] * self.prev.length

    @property
    def k(self) -> int | None:
        return None if self.index is None else self.index.shape[1]

    @property
    def partitions(self) -> tuple[np.ndarray, ...]:
        return self.classes[1:]

    def words_in_class(self, level: int, c: int) -> np.ndarray:
        return np.flatnonzero(self.classes[level] == c)

    def letters(self, w: int) -> np.ndarray:
        """Letters of word ``w`` as a uint8 array."""
        if self.length > MAX_EXPANDED_LETTERS:
            raise CapacityExceeded(f"word length {self.length} exceeds expansion ceiling")
        if self.index is None:
            return np.array([w], dtype=np.uint8)
        table = np.stack([self.prev.letters(j) for j in range(self.prev.s)])
        return table[self.index[w]].reshape(-1)

    def word(self, w: int) -> OdoWord:
        return OdoWord("".join(map(str, self.letters(w))), self.n)

    def words(self) -> list[OdoWord]:
        return [self.word(w) for w in range(self.s)]

    def chain(self) -> list["WordStage"]:
        out = []
        st = self
        while st is not None:
            out.append(st)
            st = st.prev
        return out[::-1]


def init_stage0() -> WordStage:
    """Stage 0: the two letters, one class, trivial action."""
    return WordStage(n=0, s=2, Q=(1,), classes=(np.zeros(2, dtype=np.int64),),
                     actions=(None,))


# ---------------------------------------------------------------- skew action

def skew_diagonal_apply(g, class_word: Sequence) -> list:
    """Reverse ``class_word`` and apply ``g`` letterwise.

    ``g`` may be a callable, a mapping, a sequence indexed by class, or
    ``None`` for the identity.
    """
    if g is None:
        f = lambda c: c
    elif callable(g):
        f = g
    else:
        f = g.__getitem__
    return [f(c) for c in reversed(list(class_word))]


def _skew_rows(g: np.ndarray | None, rows: np.ndarray) -> np.ndarray:
    out = rows[..., ::-1]
    return out if g is None else g[out]


# ---------------------------------------------------------------- substitution

@dataclass
class SubstitutionResult:
    instances: np.ndarray          # (len(class_words) * E, k) atom ids
    action: np.ndarray | None      # pairing involution on instance rows
    freq_deviation: Fraction
    pair_deviation: Fraction
    attempts: int


def _offsets(class_sizes, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(class_sizes, (int, np.integer)):
        sizes = np.full(n_classes, int(class_sizes), dtype=np.int64)
    else:
        sizes = np.asarray(class_sizes, dtype=np.int64)
    offs = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return sizes, offs


def _balanced_instance(r: np.ndarray, sizes: np.ndarray, offs: np.ndarray,
                       block: int, rng: np.random.Generator) -> np.ndarray:
    """Replace each class in ``r`` by one of its atoms so that inside every
    aligned block each atom of a class appears equally often."""
    k = r.shape[0]
    key = (np.arange(k) // block) * (int(r.max()) + 1) + r
    order = np.lexsort((rng.random(k), key))
    sk = key[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    group_start = np.repeat(starts, np.diff(np.r_[starts, k]))
    pos = np.arange(k) - group_start
    rank = np.empty(k, dtype=np.int64)
    rank[order] = pos % sizes[r[order]]
    return offs[r] + rank


def _check_balance(r: np.ndarray, sizes: np.ndarray, block: int):
    k = r.shape[0]
    if k % block:
        raise PreconditionViolated(f"length {k} is not a multiple of block {block}")
    for b in range(k // block):
        seg = r[b * block:(b + 1) * block]
        counts = np.bincount(seg, minlength=len(sizes))
        bad = np.flatnonzero(counts % sizes)
        if bad.size:
            raise PreconditionViolated(
                f"class {bad[0]} occurs {counts[bad[0]]} times in block {b}, "
                f"not a multiple of its size {sizes[bad[0]]}")


def substitution_search(class_words, class_sizes, E: int, eps_a=1, eps_b=1,
                        k: int | None = None, G_free: bool = False, H_free: bool = False,
                        seed: int = 0, *, g_atoms: np.ndarray | None = None,
                        g_classes: np.ndarray | None = None, block: int | None = None,
                        rng: np.random.Generator | None = None,
                        max_attempts: int = 50) -> SubstitutionResult:
    """Choose ``E`` substitution instances for every class-word.

    Atoms of class ``c`` are ``offset[c] .. offset[c]+size[c]-1``. Instances
    are balanced inside aligned blocks, so every atom of a class occurs
    equally often. With ``G_free`` the class-word set must be closed under
    the skew action of ``g_classes`` and instances are paired through the
    skew action of ``g_atoms``; ``H_free`` additionally requires every
    instance to differ from the reversal of every instance.

    Conclusions checked after each attempt: exactly E distinct instances per
    class-word, letter frequencies within ``eps_a``, zero-shift pair
    frequencies between distinct instances within ``eps_b``.
    """
    cw = np.atleast_2d(np.asarray(class_words, dtype=np.int64))
    n_words, length = cw.shape
    if k is not None and k != length:
        raise PreconditionViolated(f"class-words have length {length}, expected k={k}")
    if E <= 0 or E % 2:
        raise PreconditionViolated(f"E must be a positive even number, got {E}")
    n_classes = int(cw.max()) + 1
    sizes, offs = _offsets(class_sizes, n_classes)
    if len(sizes) < n_classes:
        raise PreconditionViolated("class_sizes shorter than the class alphabet")
    block = length if block is None else block
    for r in cw:
        _check_balance(r, sizes, block)
    eps_a, eps_b = Fraction(eps_a), Fraction(eps_b)
    if rng is None:
        rng = np.random.default_rng(seed)

    partner = None
    if G_free:
        if g_atoms is None:
            raise PreconditionViolated("G_free needs g_atoms")
        g_atoms = np.asarray(g_atoms, dtype=np.int64)
        if g_classes is None:
            g_classes = np.array([int(np.searchsorted(offs, g_atoms[o], side="right") - 1)
                                  for o in offs])
        lookup = {r.tobytes(): i for i, r in enumerate(cw)}
        partner = np.empty(n_words, dtype=np.int64)
        for i, r in enumerate(cw):
            img = _skew_rows(g_classes, r)
            j = lookup.get(img.tobytes())
            if j is None:
                raise PreconditionViolated(f"class-word {i} has no skew image in the set")
            partner[i] = j

    best = (Fraction(10), Fraction(10))
    for attempt in range(1, max_attempts + 1):
        inst = np.empty((n_words * E, length), dtype=np.int64)
        done = np.zeros(n_words, dtype=bool)
        ok = True
        for i in range(n_words):
            if done[i]:
                continue
            rows = slice(i * E, (i + 1) * E)
            if partner is None:
                inst[rows] = [_balanced_instance(cw[i], sizes, offs, block, rng) for _ in range(E)]
            elif partner[i] != i:
                j = partner[i]
                inst[rows] = [_balanced_instance(cw[i], sizes, offs, block, rng) for _ in range(E)]
                inst[j * E:(j + 1) * E] = _skew_rows(g_atoms, inst[rows])
                done[j] = True
            else:
                half = np.array([_balanced_instance(cw[i], sizes, offs, block, rng)
                                 for _ in range(E // 2)])
                inst[i * E:(i + 1) * E:2] = half
                inst[i * E + 1:(i + 1) * E:2] = _skew_rows(g_atoms, half)
            done[i] = True
        for i in range(n_words):
            block_rows = inst[i * E:(i + 1) * E]
            if len({r.tobytes() for r in block_rows}) < E:
                ok = False
                break
        if ok and H_free:
            fwd = {r.tobytes() for r in inst}
            ok = not any(r[::-1].tobytes() in fwd for r in inst)
        fdev = _freq_deviation(cw, inst, E, sizes)
        pdev = _pair_deviation(cw, inst, E, sizes, offs) if eps_b < 1 else Fraction(0)
        best = min(best, (fdev, pdev))
        if ok and fdev < eps_a and pdev < eps_b:
            action = None
            if partner is not None:
                action = np.empty(n_words * E, dtype=np.int64)
                for i in range(n_words):
                    j = partner[i]
                    for t in range(E):
                        if j != i:
                            action[i * E + t] = j * E + t
                        else:
                            action[i * E + t] = i * E + (t ^ 1)
            return SubstitutionResult(inst, action, fdev, pdev, attempt)
    raise SearchExhausted(max_attempts, max(best))


def _freq_deviation(cw, inst, E, sizes) -> Fraction:
    k = cw.shape[1]
    worst = Fraction(0)
    n_atoms = int(sizes.sum())
    for i, r in enumerate(cw):
        expected = np.bincount(r, minlength=len(sizes))
        for row in inst[i * E:(i + 1) * E]:
            got = np.bincount(row, minlength=n_atoms)
            owner = np.repeat(np.arange(len(sizes)), sizes)
            # compare count*size with class count, i.e. r(x,w)/k vs share/size
            diff = np.abs(got * sizes[owner] - expected[owner]).max()
            worst = max(worst, Fraction(int(diff), k * int(sizes.max())))
    return worst


def _pair_deviation(cw, inst, E, sizes, offs) -> Fraction:
    k = cw.shape[1]
    n_atoms = int(sizes.sum())
    owner = np.repeat(np.arange(len(sizes)), sizes)
    worst = Fraction(0)
    for i, r in enumerate(cw):
        rows = inst[i * E:(i + 1) * E]
        share = np.bincount(r, minlength=len(sizes))
        for a in range(E):
            for b in range(a + 1, E):
                code = rows[a] * n_atoms + rows[b]
                got = np.bincount(code, minlength=n_atoms * n_atoms).reshape(n_atoms, n_atoms)
                same = owner[:, None] == owner[None, :]
                size = sizes[owner]
                # expected count share_c / size_c^2 for atom pairs in class c
                num = np.abs(got * (size[:, None] ** 2) - share[owner][:, None])
                num = np.where(same, num, got * 0)
                den = k * int(sizes.max()) ** 2
                worst = max(worst, Fraction(int(num.max()), den))
    return worst


# ---------------------------------------------------------------- building

def _classes_for(n: int, E: int, s: int) -> tuple[np.ndarray, ...]:
    w = np.arange(s, dtype=np.int64)
    return tuple(w // E ** (n + 1 - i) for i in range(n + 1))


def build_stage(prev: WordStage, params: StageParams, seed: int = 0,
                omega_open: bool = True, *, max_attempts: int = 40,
                max_entries: int = MAX_INDEX_ENTRIES) -> WordStage:
    """Build stage ``n+1`` from stage ``n`` using the stage-``n`` parameters."""
    n = prev.n
    if params.n != n:
        raise PreconditionViolated(f"params are for stage {params.n}, previous stage is {n}")
    if params.s_n != prev.s:
        raise PreconditionViolated(f"params expect s_{n}={params.s_n}, stage has {prev.s}")
    k = params.k_n
    E = 2 ** params.e_n
    s_next = E ** (n + 2)
    if s_next != params.s_next:
        raise PreconditionViolated("word count does not follow the s formula")
    if k * s_next > max_entries:
        raise CapacityExceeded(f"k*s_{{n+1}} = {k * s_next} exceeds the ceiling {max_entries}")
    kmax = params.kmax_n
    if kmax is None:
        raise PreconditionViolated("stage parameters carry no kmax (strict stage 0 has odd k_0)")
    B = kmax * prev.s
    if k % B or k // B < 2:
        raise PreconditionViolated(f"k_{n}={k} must be a multiple (>=2) of kmax*s_n={B}")
    if n >= 1 and k != kmax * kmax * prev.s:
        raise PreconditionViolated(f"k_{n}={k} is not kmax^2*s_n={kmax * kmax * prev.s}")

    best_dev = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, n, attempt])
        try:
            stage = _build_attempt(prev, k, E, B, kmax, omega_open, rng)
        except SearchExhausted as exc:
            best_dev = exc.best_deviation
            continue
        if index_unique_readability(stage)[0] and _distinct_words(stage):
            return stage
    raise SearchExhausted(max_attempts, best_dev)


def _distinct_words(stage: WordStage) -> bool:
    return len({r.tobytes() for r in stage.index}) == stage.s


def _build_attempt(prev, k, E, B, kmax, omega_open, rng) -> WordStage:
    n = prev.n
    parents = np.zeros((1, k), dtype=np.int64)
    new_actions: list[np.ndarray | None] = [None]
    for i in range(1, n + 1):
        m = prev.Q[i] // prev.Q[i - 1]
        g_child = prev.actions[i]
        res = substitution_search(
            parents, m, E, G_free=g_child is not None, g_atoms=g_child,
            g_classes=prev.actions[i - 1] if i > 1 else np.zeros(1, dtype=np.int64),
            block=B, rng=rng, max_attempts=10)
        parents = res.instances
        new_actions.append(res.action)
    m = prev.s // prev.Q[n]
    stems = substitution_search(parents[:, :k - B], m, E, block=B, rng=rng,
                                max_attempts=10).instances
    tails = substitution_search(parents[:, k - B:], m, E * E, block=B, rng=rng,
                                max_attempts=10).instances
    n_top = parents.shape[0]
    s_next = n_top * E * E
    index = np.empty((s_next, k), dtype=np.int64)
    for C in range(n_top):
        for a in range(E):
            for b in range(E):
                w = (C * E + a) * E + b
                index[w, :k - B] = stems[C * E + a]
                index[w, k - B:] = tails[w]
    # new top-level action, matched by rank under the level-n action
    top = None
    omega_hit = prev.omega_hit
    if omega_open and omega_hit is None:
        ids = np.arange(n_top * E, dtype=np.int64)
        if n == 0:
            top = ids ^ 1
        elif new_actions[n] is not None:
            top = new_actions[n][ids // E] * E + ids % E
        else:
            raise SubordinationImpossible("level-n action is trivial while the sentence holds")
    elif omega_hit is None:
        omega_hit = n + 1
    new_actions.append(top)
    Q = tuple(E ** i for i in range(n + 2))
    return WordStage(n=n + 1, s=s_next, Q=Q, classes=_classes_for(n + 1, E, s_next),
                     actions=tuple(new_actions), index=index, prev=prev,
                     omega_hit=omega_hit, kmax=kmax)


def random_uniform_stage(prev: WordStage, k: int, count: int, seed: int = 0,
                         max_attempts: int = 200) -> WordStage:
    """``count`` distinct words, each a concatenation of ``k`` previous words
    using every previous word exactly ``k / prev.s`` times, uniquely
    readable and with no word equal to a reversed word. Partitions and
    actions are left trivial; used for small circular lifts."""
    if k % prev.s:
        raise PreconditionViolated(f"k={k} is not a multiple of {prev.s}")
    base = np.repeat(np.arange(prev.s, dtype=np.int64), k // prev.s)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        rows = {}
        for _ in range(50 * count):
            r = rng.permutation(base)
            rows.setdefault(r.tobytes(), r)
            if len(rows) == count:
                break
        if len(rows) < count:
            continue
        index = np.stack(list(rows.values()))
        st = WordStage(n=prev.n + 1, s=count, Q=(1,),
                       classes=(np.zeros(count, dtype=np.int64),), actions=(None,),
                       index=index, prev=prev)
        if index_unique_readability(st)[0] and check_no_reversed_words(st)[0]:
            return st
    raise SearchExhausted(max_attempts, None)


def run_Rphi(sentence: Pi01Sentence, n: int, sched: Schedule, seed: int = 0,
             **kw) -> dict:
    """Run the stagewise construction for ``n`` stages, trivializing every
    later action once an instance check fails."""
    if len(sched.stages) < n:
        raise PreconditionViolated(f"schedule has {len(sched.stages)} stages, need {n}")
    stage = init_stage0()
    stages = [stage]
    open_ = True
    for i in range(n):
        open_ = open_ and check_prefix(sentence, i)
        stage = build_stage(stage, sched.stages[i], seed=seed, omega_open=open_, **kw)
        stages.append(stage)
    return {"stages": stages, "omega_hit": stage.omega_hit}


# ---------------------------------------------------------------- reports

@dataclass
class SpecReport:
    spec_id: str
    worst_deviation: Fraction
    threshold: Fraction
    passed: bool
    counterexample: dict | None = None
    worst_case: dict | None = None
    checked: int = 0
    sampled: bool = False
    notes: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.spec_id}: {verdict} worst={float(self.worst_deviation):.6g} "
                f"threshold={float(self.threshold):.6g} checked={self.checked}"
                + (" (sampled)" if self.sampled else ""))


def _report(spec_id, worst, threshold, case, **kw) -> SpecReport:
    worst, threshold = Fraction(worst), Fraction(threshold)
    passed = worst < threshold
    return SpecReport(spec_id, worst, threshold, passed,
                      counterexample=None if passed else case, worst_case=case, **kw)


# ---------------------------------------------------------------- unique readability

def check_unique_readability(words: Sequence[str | OdoWord], all_witnesses: bool = False):
    """Brute scan: no word occurs strictly inside a concatenation of two words.

    Returns ``(True, None)`` or ``(False, witness)``; with ``all_witnesses``
    the second item is the list of every witness ``(u, v, offset)``.
    """
    ws = [w.letters if isinstance(w, OdoWord) else str(w) for w in words]
    if not ws:
        return True, ([] if all_witnesses else None)
    L = len(ws[0])
    if any(len(w) != L for w in ws):
        raise PreconditionViolated("unique readability needs equal-length words")
    found = []
    for u in ws:
        for v in ws:
            uv = u + v
            for w in dict.fromkeys(ws):
                p = uv.find(w, 1)
                while 0 < p < L:
                    found.append((u, v, p))
                    if not all_witnesses:
                        return False, found[0]
                    p = uv.find(w, p + 1)
    if all_witnesses:
        found.sort(key=lambda t: (ws.index(t[0]), ws.index(t[1]), t[2]))
        return not found, found
    return True, None


def index_unique_readability(stage: WordStage):
    """UR of a stage from UR of the previous stage plus an index-level scan.

    If the previous words are uniquely readable, any occurrence of a new
    word inside a concatenation is aligned to the previous word length, so
    only index offsets 1..k-1 need checking.
    """
    if stage.index is None:
        return True, None
    idx = stage.index
    s, k = idx.shape
    keys = {r.tobytes() for r in idx}
    for u in range(s):
        for v in range(s):
            uv = np.concatenate([idx[u], idx[v]])
            win = np.lib.stride_tricks.sliding_window_view(uv, k)[1:k]
            # first element filter before hashing rows
            first = np.isin(win[:, 0], idx[:, 0])
            for t in np.flatnonzero(first):
                if np.ascontiguousarray(win[t]).tobytes() in keys:
                    return False, {"u": u, "v": v, "offset_blocks": int(t) + 1}
    return True, None


def stage_unique_readability(stage: WordStage):
    for st in stage.chain():
        ok, wit = index_unique_readability(st)
        if not ok:
            return False, dict(wit, stage=st.n)
    return True, None


def reversal_partner(stage: WordStage) -> np.ndarray:
    """``r[w] = w'`` when the letters of ``w`` reversed spell word ``w'``,
    else -1."""
    if stage.index is None:
        return np.arange(stage.s, dtype=np.int64)
    prev = reversal_partner(stage.prev)
    out = np.full(stage.s, -1, dtype=np.int64)
    if (prev < 0).all():
        return out
    lookup = {r.tobytes(): i for i, r in enumerate(stage.index)}
    for w, r in enumerate(stage.index):
        mapped = prev[r[::-1]]
        if (mapped >= 0).all():
            out[w] = lookup.get(np.ascontiguousarray(mapped).tobytes(), -1)
    return out


def check_no_reversed_words(stage: WordStage):
    hits = np.flatnonzero(reversal_partner(stage) >= 0)
    if hits.size:
        return False, {"word": int(hits[0]), "equals_reverse_of": int(reversal_partner(stage)[hits[0]])}
    return True, None


# ---------------------------------------------------------------- uniformity

def strong_uniformity(stage: WordStage):
    """Every previous word occurs the same number of times in every word."""
    if stage.index is None:
        return True, None
    counts = np.stack([np.bincount(r, minlength=stage.prev.s) for r in stage.index])
    f = int(counts[0, 0])
    ok = bool((counts == f).all())
    return ok, f if ok else None


# ---------------------------------------------------------------- Q4 / Q6

def lcp_matrix(stage: WordStage) -> np.ndarray:
    """Longest-common-prefix lengths in letters between all word pairs."""
    if stage.index is None:
        return np.eye(stage.s, dtype=np.int64)
    inner = lcp_matrix(stage.prev)
    idx = stage.index
    s, k = idx.shape
    Kp = stage.prev.length
    out = np.empty((s, s), dtype=np.int64)
    for a in range(s):
        diff = idx[a][None, :] != idx
        has = diff.any(axis=1)
        j = np.where(has, diff.argmax(axis=1), k)
        out[a] = j * Kp
        m = has
        out[a, m] += inner[idx[a, j[m]], idx[m, j[m]]]
    return out


def check_Q4(stage: WordStage, eps) -> SpecReport:
    eps = Fraction(eps)
    n = stage.n
    if n < 1:
        return _report("Q4", 0, eps, None, notes="no top-level classes at stage 0")
    lcp = lcp_matrix(stage)
    top = stage.classes[n]
    same = (top[:, None] == top[None, :]) & ~np.eye(stage.s, dtype=bool)
    if not same.any():
        return _report("Q4", 0, eps, None, notes="all classes are singletons")
    K = stage.length
    masked = np.where(same, lcp, K)
    a, b = np.unravel_index(np.argmin(masked), masked.shape)
    worst = 1 - Fraction(int(masked[a, b]), K)
    return _report("Q4", worst, eps, {"u": int(a), "v": int(b), "lcp": int(masked[a, b])},
                   checked=int(same.sum()) // 2)


def check_Q6(stage: WordStage, split: int | None = None) -> SpecReport:
    """Nested partitions, each class splitting into exactly ``split`` classes.

    Deviation is the number of violations found.
    """
    n = stage.n
    problems = []
    if split is None and n >= 1:
        split = stage.Q[1]
    for i in range(1, n + 1):
        child, parent = stage.classes[i], stage.classes[i - 1]
        pairs = {}
        for c, p in zip(child.tolist(), parent.tolist()):
            if pairs.setdefault(c, p) != p:
                problems.append({"level": i, "class": c, "issue": "not refining"})
                break
        per_parent = np.bincount(np.array(list(pairs.values()), dtype=np.int64),
                                 minlength=int(parent.max()) + 1)
        for p, cnt in enumerate(per_parent):
            if cnt != split:
                problems.append({"level": i, "class": p, "issue": f"splits into {cnt}, expected {split}"})
    if n >= 1:
        per_top = np.bincount(stage.classes[n])
        for c, cnt in enumerate(per_top):
            if cnt != split:
                problems.append({"level": n, "class": c, "issue": f"holds {cnt} words, expected {split}"})
    return _report("Q6", len(problems), Fraction(1, 2), problems[0] if problems else None,
                   checked=n, notes="; ".join(p["issue"] for p in problems[:3]))


# ---------------------------------------------------------------- actions

def check_actions(stage: WordStage) -> tuple[bool, list[str]]:
    """Nontrivial actions are free involutions subordinate level to level,
    and agree with the skew-diagonal image of class-words."""
    issues = []
    n = stage.n
    for i in range(1, n + 1):
        g = stage.actions[i]
        if g is None:
            continue
        ids = np.arange(len(g))
        if not (g[g] == ids).all():
            issues.append(f"level {i}: not an involution")
        if (g == ids).any():
            issues.append(f"level {i}: has a fixed class")
        split = stage.Q[i] // stage.Q[i - 1]
        parent = ids // split
        gp = stage.actions[i - 1] if i > 1 else None
        if i > 1 and gp is None:
            issues.append(f"level {i}: nontrivial above a trivial level")
            continue
        expect = parent if gp is None else gp[parent]
        if not (g // split == expect).all():
            issues.append(f"level {i}: not subordinate to level {i - 1}")
    if stage.index is not None:
        prev = stage.prev
        for i in range(1, n):
            g_new, g_old = stage.actions[i], prev.actions[i] if i <= prev.n else None
            if g_new is None:
                continue
            if g_old is None:
                issues.append(f"level {i}: extended from a trivial action")
                continue
            cw = prev.classes[i][stage.index]
            reps = {}
            for w in range(stage.s):
                reps.setdefault(int(stage.classes[i][w]), cw[w])
            for c, word in reps.items():
                img = g_old[word[::-1]]
                target = reps.get(int(g_new[c]))
                if target is None or not (img == target).all():
                    issues.append(f"level {i}: class {c} image is not the skew-diagonal image")
                    break
    return not issues, issues


def check_closure(stage: WordStage) -> tuple[bool, str | None]:
    """Class-word sets are closed under the skew-diagonal action."""
    if stage.index is None:
        return True, None
    prev = stage.prev
    for i in range(0, prev.n + 1):
        g = prev.actions[i] if i >= 1 else None
        if i >= 1 and g is None:
            continue
        cw = prev.classes[i][stage.index]
        keys = {r.tobytes() for r in cw}
        for r in cw:
            img = r[::-1] if g is None else g[r[::-1]]
            if np.ascontiguousarray(img).tobytes() not in keys:
                return False, f"level {i} class-word set not closed"
    return True, None


# ---------------------------------------------------------------- J10.1 / J11 / J11.1

@njit(cache=True)
def _prefix_scan(a, b, j0min, s, counts, hist):
    """Worst |count/j0 - 1/s^2| over prefixes j0 >= j0min of the pair
    sequence (a[j], b[j]). Returns (num, den, code, j0) with deviation
    num/den; code = -1 means no admissible window."""
    s2 = s * s
    L = a.shape[0]
    for c in range(s2):
        counts[c] = 0
    for c in range(L + 2):
        hist[c] = 0
    hist[0] = s2
    mn = 0
    mx = 0
    mx_code = 0
    best_num = -1
    best_den = 1
    best_code = -1
    best_j0 = 0
    for j in range(L):
        c = a[j] * s + b[j]
        v = counts[c]
        counts[c] = v + 1
        hist[v] -= 1
        hist[v + 1] += 1
        if v == mn and hist[v] == 0:
            mn += 1
        if v + 1 > mx:
            mx = v + 1
            mx_code = c
        j0 = j + 1
        if j0 >= j0min:
            up = mx * s2 - j0
            down = j0 - mn * s2
            num = up if up >= down else down
            den = j0 * s2
            if best_num < 0 or num * best_den > best_num * den:
                best_num = num
                best_den = den
                best_j0 = j0
                if up >= down:
                    best_code = mx_code
                else:
                    for q in range(s2):
                        if counts[q] == mn:
                            best_code = q
                            break
    return best_num, best_den, best_code, best_j0


@njit(cache=True)
def _j10_kernel(seqs, pairs, tmax, j0min, s):
    k = seqs.shape[1]
    counts = np.zeros(s * s, dtype=np.int64)
    hist = np.zeros(k + 2, dtype=np.int64)
    best = np.array([-1, 1, -1, 0, 0, 0, 0], dtype=np.int64)
    for p in range(pairs.shape[0]):
        u = pairs[p, 0]
        v = pairs[p, 1]
        for t in range(1, tmax):
            if k - t < j0min:
                break
            num, den, code, j0 = _prefix_scan(seqs[u, t:], seqs[v, :k - t], j0min, s,
                                              counts, hist)
            if code >= 0 and (best[0] < 0 or num * best[1] > best[0] * den):
                best[0] = num
                best[1] = den
                best[2] = code
                best[3] = j0
                best[4] = u
                best[5] = v
                best[6] = t
    return best


@njit(cache=True)
def _window_kernel(seqs, pairs, j0min, s):
    k = seqs.shape[1]
    counts = np.zeros(s * s, dtype=np.int64)
    hist = np.zeros(k + 2, dtype=np.int64)
    best = np.array([-1, 1, -1, 0, 0, 0, 0], dtype=np.int64)
    for p in range(pairs.shape[0]):
        u = pairs[p, 0]
        v = pairs[p, 1]
        for side in range(2):
            if side == 0:
                a = seqs[u]
                b = seqs[v]
            else:
                a = seqs[u, ::-1].copy()
                b = seqs[v, ::-1].copy()
            num, den, code, j0 = _prefix_scan(a, b, j0min, s, counts, hist)
            if code >= 0 and (best[0] < 0 or num * best[1] > best[0] * den):
                best[0] = num
                best[1] = den
                best[2] = code
                best[3] = j0
                best[4] = u
                best[5] = v
                best[6] = side
    return best


def _ceil_frac(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


def _parity_sequences(stage: WordStage) -> np.ndarray:
    """Rows 0..s-1 are the words, rows s..2s-1 their reversals, as
    sequences of previous-stage word indices (reversed rows stand for
    reversed previous words)."""
    idx = stage.index
    return np.ascontiguousarray(np.concatenate([idx, idx[:, ::-1]]), dtype=np.int64)


def _describe(stage, best, windows=False):
    s = stage.prev.s
    S = stage.s
    u, v = int(best[4]), int(best[5])
    code = int(best[2])
    case = {"u": u % S, "u_reversed": u >= S, "v": v % S, "v_reversed": v >= S,
            "u_prime": code // s, "v_prime": code % s, "j0": int(best[3])}
    if windows:
        case["window"] = "tail" if best[6] else "initial"
    else:
        case["t"] = int(best[6])
    return case


def hoeffding_prediction(events: int, n_min: int, budget=Fraction(1, 2)) -> float:
    """Deviation an i.i.d. sample of size ``n_min`` exceeds with total
    probability below ``budget`` across ``events`` statistics (two-sided
    Hoeffding)."""
    if events <= 0 or n_min <= 0:
        return 0.0
    return sqrt(log(2 * events / float(budget)) / (2 * n_min))


def check_J10_1(stage: WordStage, eps, *, max_work: int = 3 * 10 ** 8,
                seed: int = 0) -> SpecReport:
    """Shifted pair frequencies of previous words inside pairs of words."""
    eps = Fraction(eps)
    prev = stage.prev
    s = prev.s
    k = stage.k
    seqs = _parity_sequences(stage)
    rows = seqs.shape[0]
    tmax = _ceil_frac((1 - eps) * k)        # t < (1 - eps) k
    j0min = max(1, _ceil_frac(eps * k))
    pairs = np.array([(u, v) for u in range(rows) for v in range(rows)], dtype=np.int64)
    per_pair = sum(max(0, k - t) for t in range(1, tmax))
    sampled = False
    if per_pair * len(pairs) > max_work:
        keep = max(1, max_work // max(1, per_pair))
        rng = np.random.default_rng(seed)
        pairs = pairs[np.sort(rng.choice(len(pairs), size=keep, replace=False))]
        sampled = True
    if s == 1 or tmax <= 1:
        return _report("J10.1", 0, eps, None, checked=0,
                       notes="single previous word or no admissible shift")
    best = _j10_kernel(seqs, pairs, tmax, j0min, s)
    if best[2] < 0:
        return _report("J10.1", 0, eps, None, notes="no admissible window")
    worst = Fraction(int(best[0]), int(best[1]))
    windows = sum(max(0, k - t - j0min + 1) for t in range(1, tmax))
    events = len(pairs) * windows * s * s
    pred = hoeffding_prediction(events, j0min)
    return _report("J10.1", worst, eps, _describe(stage, best), checked=events, sampled=sampled,
                   notes=f"hoeffding_prediction={pred:.6g}; j0_min={j0min}")


def check_J11_1(stage: WordStage, eps) -> SpecReport:
    """Initial and tail window pair frequencies for pairs whose level-1
    classes are not related by the level-1 action."""
    eps = Fraction(eps)
    prev = stage.prev
    s = prev.s
    k = stage.k
    S = stage.s
    seqs = _parity_sequences(stage)
    j0min = max(1, _ceil_frac(eps * k))
    pairs = [(u, v) for u in range(S) for v in range(2 * S) if not _related(stage, 1, u, v)]
    if not pairs or s == 1:
        return _report("J11.1", 0, eps, None, notes="no unrelated pairs")
    best = _window_kernel(seqs, np.array(pairs, dtype=np.int64), j0min, s)
    worst = Fraction(int(best[0]), int(best[1]))
    events = len(pairs) * 2 * (k - j0min + 1) * s * s
    pred = hoeffding_prediction(events, j0min)
    return _report("J11.1", worst, eps, _describe(stage, best, windows=True), checked=events,
                   notes=f"hoeffding_prediction={pred:.6g}; j0_min={j0min}")


def _omega(stage: WordStage) -> int | None:
    return stage.omega_hit


def _related(stage: WordStage, i: int, u: int, v: int) -> bool:
    """Level-``i`` classes of ``u`` and ``v`` are related positionwise:
    equal for a forward ``v``; the level-``i`` action image for a reversed
    ``v`` (always at level 0)."""
    S = stage.s
    if i == 0:
        return True
    if i > stage.n:
        return False
    cu = stage.classes[i][u]
    if v < S:
        return bool(stage.classes[i][v] == cu)
    g = stage.actions[i]
    if g is None:
        return False
    return bool(stage.classes[i][v - S] == g[cu])


def j11_level(stage: WordStage, u: int, v: int) -> int:
    """The largest level below Omega at which ``u`` and ``v`` are related."""
    om = _omega(stage)
    top = stage.n if om is None else min(stage.n, om - 1)
    for i in range(top, 0, -1):
        if _related(stage, i, u, v):
            return i
    return 0


def check_J11(stage: WordStage, eps) -> SpecReport:
    """Zero-shift full-overlap pair frequencies against the class-weighted
    expectation ``1/(Q_s C_s^2)``.

    Pairs whose relation reaches the top level (the same new class, or its
    image) are skipped: no previous-stage statistics exist there.
    """
    eps = Fraction(eps)
    prev = stage.prev
    n = prev.n
    s = prev.s
    k = stage.k
    S = stage.s
    seqs = _parity_sequences(stage)
    worst = Fraction(-1)
    case = None
    skipped = checked = 0
    for u in range(S):
        for v in range(2 * S):
            lvl = j11_level(stage, u, v)
            if lvl == stage.n:
                skipped += 1
                continue
            Qs = prev.Q[lvl]
            Cs = s // Qs
            cls = prev.classes[lvl]
            a = seqs[u]
            b = seqs[v]
            if v < S:
                g = None
            else:
                g = prev.actions[lvl] if lvl >= 1 else None
            hist = np.bincount(a * s + b, minlength=s * s).reshape(s, s)
            ca = cls[:, None]
            cb = cls[None, :]
            cand = (cb == ca) if g is None else (cb == g[cls][:, None])
            expected_den = Qs * Cs * Cs
            num = np.abs(hist * expected_den - k)
            num = np.where(cand, num, -1)
            pos = np.unravel_index(int(np.argmax(num)), num.shape)
            dev = Fraction(int(num[pos]), k * expected_den)
            checked += int(cand.sum())
            if dev > worst:
                worst = dev
                case = {"u": u, "v": v % S, "v_reversed": v >= S, "level": lvl,
                        "u_prime": int(pos[0]), "v_prime": int(pos[1]),
                        "count": int(hist[pos])}
    if case is None:
        return _report("J11", 0, eps, None, notes="every pair shares the top-level class")
    return _report("J11", worst, eps, case, checked=checked,
                   notes=f"zero-shift full overlap; skipped {skipped} top-level related pairs")


def check_specs(stage: WordStage, eps, spec: str | None = None) -> list[SpecReport]:
    """Run the checkers on a stage (and its link to the previous stage)."""
    out = []
    want = (lambda x: spec is None or spec == x)
    if want("Q4"):
        out.append(check_Q4(stage, eps))
    if want("Q6"):
        out.append(check_Q6(stage))
    if stage.index is not None:
        if want("J10.1"):
            out.append(check_J10_1(stage, eps))
        if want("J11"):
            out.append(check_J11(stage, eps))
        if want("J11.1"):
            out.append(check_J11_1(stage, eps))
    if want("UR"):
        ok, wit = stage_unique_readability(stage)
        out.append(_report("UR", 0 if ok else 1, Fraction(1, 2), wit,
                           notes="hierarchical index scan"))
    return out


# ---------------------------------------------------------------- JSON

def stage_to_json(stage: WordStage, include_letters: int = 4096) -> dict:
    """Artifact for a whole chain; letters are included for short words."""
    chain = []
    for st in stage.chain():
        chain.append({
            "n": st.n, "s": st.s, "Q": list(st.Q), "kmax": st.kmax,
            "index": None if st.index is None else st.index.tolist(),
            "partitions": [c.tolist() for c in st.classes[1:]],
            "actions": [None if a is None else a.tolist() for a in st.actions],
            "omega_hit": st.omega_hit,
        })
    doc = {"schema": "pi01-forge/words/1", "n": stage.n, "omega_hit": stage.omega_hit,
           "stages": chain}
    if stage.length <= include_letters:
        doc["words"] = [w.letters for w in stage.words()]
    return doc


def stage_from_json(doc: dict) -> WordStage:
    prev = None
    for d in doc["stages"]:
        classes = (np.zeros(d["s"], dtype=np.int64),) + tuple(
            np.array(c, dtype=np.int64) for c in d["partitions"])
        actions = tuple(None if a is None else np.array(a, dtype=np.int64) for a in d["actions"])
        index = None if d["index"] is None else np.array(d["index"], dtype=np.int64)
        prev = WordStage(n=d["n"], s=d["s"], Q=tuple(d["Q"]), classes=classes,
                         actions=actions, index=index, prev=prev,
                         omega_hit=d["omega_hit"], kmax=d["kmax"])
    return prev

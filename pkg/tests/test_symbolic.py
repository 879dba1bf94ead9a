from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pi01_forge import circular as c, logic, odometer_words as ow, symbolic as sy
from pi01_forge.errors import ClosureViolated, NotParseable, Undeterminable
from pi01_forge.schedule import build_schedule, toy_config
from pi01_forge.symbolic import EmpiricalDist, Window


@pytest.fixture(scope="module")
def odo():
    s0 = ow.init_stage0()
    s1 = ow.random_uniform_stage(s0, 8, 4, seed=1)
    s2 = ow.random_uniform_stage(s1, 8, 4, seed=2)
    return [s0, s1, s2]


@pytest.fixture(scope="module")
def built():
    sched = build_schedule(toy_config(1, kmax=4), 2)
    s = logic.classify_pi01(logic.parse("forall x (0 = 0)"))
    return ow.run_Rphi(s, 2, sched)["stages"]


def text_of(stage, ids):
    return "".join(stage.word(i).letters for i in ids)


# ---------------------------------------------------------------- windows

def test_window_literal():
    w = Window.parse("-3:0110101")
    assert (w.offset, w.letters, w.zero) == (-3, "0110101", 3)
    assert str(w) == "-3:0110101"
    assert Window.parse("0:b0b1").alphabet == "01be"
    with pytest.raises(ValueError):
        Window(1, "01")


def test_principal_subword_aligned(odo):
    s2 = odo[2]
    p = sy.principal_subword(Window(0, s2.word(0).letters), s2)
    assert p == {"a_n": 0, "b_n": s2.length, "word_index": 0, "r_n": 0}


def test_principal_subword_shifted(odo):
    s2 = odo[2]
    w = s2.word(0).letters
    p = sy.principal_subword(Window(-1, w + w), s2)
    assert p["a_n"] == -1 and p["b_n"] == s2.length - 1


def test_principal_subword_on_spacer():
    s0 = ow.init_stage0()
    s1 = ow.random_uniform_stage(s0, 8, 4, seed=1)
    c1 = c.lift_with(s1, (2,))
    text = c1.letters(1) + c1.letters(2) + c1.letters(3)
    zero = len(c1.letters(1))            # first letter of word 2 is a spacer b
    assert text[zero] == "b"
    p = sy.principal_subword(Window(-zero, text), c1)
    assert p["a_n"] == 0 and p["word_index"] == 2


def test_principal_subword_too_short(odo):
    with pytest.raises(NotParseable):
        sy.principal_subword(Window(0, "0101"), odo[2])


# ---------------------------------------------------------------- odometer

@pytest.mark.parametrize("digits, j, radices, expected, carry", [
    ([0, 0], 1, [2, 3], [1, 0], 0),
    ([1, 2], 1, [2, 3], [0, 0], 1),
    ([1, 0], 1, [2, 3], [0, 1], 0),
    ([0, 0, 0], 23, [2, 3, 4], [1, 2, 3], 0),
])
def test_odometer_add(digits, j, radices, expected, carry):
    assert sy.odometer_add_carry(digits, j, radices) == (expected, carry)


radix_lists = st.lists(st.integers(2, 9), min_size=1, max_size=5)


@given(radix_lists.flatmap(lambda r: st.tuples(
    st.just(r), st.tuples(*[st.integers(0, k - 1) for k in r]))))
def test_odometer_neg_is_inverse(rd):
    radices, digits = rd
    neg = sy.odometer_neg(list(digits), radices)
    assert sy.odometer_add(list(digits), 0, radices) == list(digits)
    # add -x as an integer
    value = sum(d * int(np.prod(radices[:i])) for i, d in enumerate(neg))
    assert sy.odometer_add(list(digits), value, radices) == [0] * len(radices)


def test_odometer_coordinate_matches_mixed_radix(odo):
    s0, s1, s2 = odo
    text = text_of(s2, [3, 1, 2])
    base = s2.length
    for r in (0, 1, 9, 43, 63):
        win = Window(-(base + r), text)
        assert sy.odometer_coordinate(win, odo) == [r % 8, r // 8]


def test_odometer_coordinate_shift_is_successor(odo):
    s2 = odo[2]
    text = text_of(s2, [3, 1, 2])
    win = Window(-s2.length - 20, text)
    radices = [odo[1].k, odo[2].k]
    for t in range(30):
        now = sy.odometer_coordinate(win.shift(t), odo)
        nxt = sy.odometer_coordinate(win.shift(t + 1), odo)
        assert sy.odometer_add(now, 1, radices) == nxt


# ---------------------------------------------------------------- empirical distributions

def test_emp_dist_letters():
    d = sy.emp_dist("0101", 0, ow.init_stage0())
    assert d.weights == {0: Fraction(1, 2), 1: Fraction(1, 2)}
    assert d.to_csv() == "word,num,den\n0,1,2\n1,1,2\n"


def test_emp_dist_strongly_uniform(odo):
    s1, s2 = odo[1], odo[2]
    d = sy.emp_dist(s2.word(2).letters, 1, s1)
    assert d.weights == {i: Fraction(1, 4) for i in range(4)}
    assert sy.emp_dist((s2, 2), 1, None) == d
    assert sy.emp_dist((s2, 2), 0, None).weights == {0: Fraction(1, 2), 1: Fraction(1, 2)}


def test_emp_dist_circular_equals_odometer(odo):
    circ = c.lift_with(odo[2], (2, 2))
    c1 = circ.chain()[1]
    for w in range(circ.count):
        from_letters = sy.emp_dist(circ.letters(w), 1, c1)
        assert from_letters == sy.emp_dist((circ, w), 1, None) == sy.emp_dist((odo[2], w), 1, None)


def test_emp_dist_rejects_unparseable(odo):
    with pytest.raises(NotParseable):
        sy.emp_dist("0120", 0, ow.init_stage0())


def test_emp_dist_sums_to_one(built):
    top = built[-1]
    for w in range(top.s):
        for k in range(top.n):
            assert sy.emp_dist((top, w), k, None).total() == 1


def test_variation_is_half_l1():
    a = EmpiricalDist(0, {0: Fraction(1, 2), 1: Fraction(1, 2)})
    b = EmpiricalDist(0, {0: Fraction(1, 4), 2: Fraction(3, 4)})
    assert a.variation(b) == Fraction(3, 4)
    assert a.variation(a) == 0


# ---------------------------------------------------------------- generic sequences

def test_generic_constant_sequence():
    rep = sy.generic_check(["0101", "0101", "0101"], 0, Fraction(1, 100), ow.init_stage0())
    assert rep.ok and rep.N == 0 and rep.worst_tail == 0


def test_generic_uniform_tower(built):
    top = built[-1]
    seq = [sy.emp_dist((top, w), 1, None) for w in range(top.s)]
    assert sy.generic_check(seq, 1, Fraction(1, 100)).ok


def test_generic_alternating_fails():
    s0 = ow.init_stage0()
    rep = sy.generic_check(["0001", "0111"] * 3, 0, Fraction(1, 4), s0)
    assert not rep.ok and rep.N is None


# ---------------------------------------------------------------- eta_g

def test_eta_g_level_zero_identity(built):
    s2 = built[2]
    cw = s2.prev.classes[0][s2.index[0]]
    assert sy.eta_g_apply(s2, 0, cw) == cw.tolist()


def test_eta_g_level_one_lands_in_reversed_collection(built):
    s2 = built[2]
    g = s2.prev.actions[1]
    keys = {tuple(r) for r in s2.prev.classes[1][s2.index].tolist()}
    for w in range(s2.s):
        cw = s2.prev.classes[1][s2.index[w]]
        img = sy.eta_g_apply(s2, 1, cw)
        assert img == g[cw].tolist()
        assert tuple(img[::-1]) in keys
        # involution: g twice and reversal twice
        assert sy.eta_g_apply(s2, 1, img[::-1])[::-1] == cw.tolist()


def test_eta_g_rejects_foreign_word(built):
    s2 = built[2]
    with pytest.raises(ClosureViolated):
        sy.eta_g_apply(s2, 1, [0] * s2.k)


def test_eta_g_diagonal_not_skew():
    g = {"A": "B", "B": "A"}
    word = ["A", "A", "B"]
    assert [g[x] for x in word] == ["B", "B", "A"]
    assert ow.skew_diagonal_apply(g, word) == ["A", "B", "B"]


# ---------------------------------------------------------------- Kronecker pools

def test_kronecker_examples():
    r = sy.kronecker_prime_sets([2, 2, 2], [3, 3, 3])
    assert r["distinct"] and r["witness"] == 2
    r = sy.kronecker_prime_sets([10, 2, 2], [14, 2, 2])
    assert r["distinct"] and r["witness"] == 5
    with pytest.raises(Undeterminable):
        sy.kronecker_prime_sets([4, 6], [6, 4])
    r = sy.kronecker_prime_sets([4, 6], [6, 4], tail_pools=({2}, {2}))
    assert not r["distinct"]

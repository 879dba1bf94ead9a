import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pi01_forge import logic, odometer_words as ow, torus as T
from pi01_forge.errors import CountMismatch, PrecisionMismatch
from pi01_forge.schedule import build_schedule, toy_config
from pi01_forge.torus import CellPair, DyadicPoint, RectPartition, RectPerm


@pytest.fixture(scope="module")
def toy():
    sched = build_schedule(toy_config(1, kmax=4), 3)
    s = logic.classify_pi01(logic.parse("forall x (0 = 0)"))
    return sched, ow.run_Rphi(s, 3, sched)["stages"]


def random_perm(q, s, seed):
    rng = np.random.default_rng(seed)
    return RectPerm(RectPartition(q, s), rng.permutation(q * s), q, 1)


# ---------------------------------------------------------------- index permutations

def test_rotation_index_examples():
    part = RectPartition(5, 3)
    assert T.rotation_index(part, 0).is_identity()
    r = T.rotation_index(part, 2)
    for j in range(3):
        assert r.mapping[part.cell(0, j)] == part.cell(2, j)


@pytest.mark.parametrize("q, p", [(5, 2), (6, 4), (12, 9), (7, 0), (8, 8)])
def test_rotation_order(q, p):
    r = T.rotation_index(RectPartition(q, 2), p)
    assert r.order() == q // math.gcd(p, q)


def test_rect_perm_validates():
    with pytest.raises(ValueError):
        RectPerm(RectPartition(2, 2), np.array([0, 0, 1, 2]), 2, 1)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_build_h_in_place_and_equivariant(toy, n):
    sched, stages = toy
    params = sched.stages[n - 1]
    perm = T.build_h(stages[n], params)
    ok, atoms = T.check_in_place(perm, stages[n], params)
    assert ok and atoms == params.k_n * params.s_next
    assert T.commutes_with_rotation(perm, params.p_n * params.k_n)
    assert T.commutes_with_rotation(perm, params.k_n)


def test_build_h_counting(toy):
    # each strip holds k s_next / s_n atoms and receives as many occurrences
    sched, stages = toy
    params = sched.stages[0]
    perm = T.build_h(stages[1], params)
    m = params.s_next // params.s_n
    _, rows = perm.block.coords(perm.mapping)
    counts = np.bincount(rows // m, minlength=params.s_n)
    assert (counts == params.k_n * m).all()
    letters = np.bincount(stages[1].index.ravel(), minlength=params.s_n)
    assert (letters == counts).all()


def test_build_h_single_word_is_identity():
    from pi01_forge.schedule import StageParams
    single = ow.WordStage(n=0, s=1, Q=(1,), classes=(np.zeros(1, dtype=np.int64),), actions=(None,))
    st1 = ow.WordStage(n=1, s=1, Q=(1,), classes=(np.zeros(1, dtype=np.int64),), actions=(None,),
                       index=np.zeros((1, 3), dtype=np.int64), prev=single)
    params = StageParams(n=0, e_n=0, s_n=1, s_next=1, Q1_n=1, C1_n=1, eps_n=Fraction(1, 3),
                         vareps_n=Fraction(1, 2), mu_n=Fraction(1), gamma_n=None, kmax_n=1,
                         k_n=3, l_n=2, K_n=1, q_n=1, p_n=0, alpha_n=Fraction(0))
    assert T.build_h(st1, params).is_identity()


def test_build_h_count_mismatch(toy):
    sched, stages = toy
    with pytest.raises(CountMismatch):
        T.build_h(stages[2], sched.stages[0])


# ---------------------------------------------------------------- transpositions

def test_decompose_identity():
    perm = RectPerm(RectPartition(3, 2), np.arange(6), 3, 1)
    assert T.decompose_transpositions(perm) == []


def test_decompose_single_adjacent_swap():
    mapping = np.arange(6)
    mapping[[0, 1]] = [1, 0]
    swaps = T.decompose_transpositions(RectPerm(RectPartition(3, 2), mapping, 3, 1))
    assert swaps == [(0, 1)]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_decompose_recompose(q, s, seed):
    perm = random_perm(q, s, seed)
    swaps = T.decompose_transpositions(perm)
    assert len(swaps) <= (q * s) ** 2
    assert (T.compose_transpositions(swaps, q * s) == perm.mapping).all()
    part = perm.block
    for a, b in swaps:
        (ia, ja), (ib, jb) = divmod(a, s), divmod(b, s)
        assert abs(ia - ib) + abs(ja - jb) == 1


def test_snake_order_round_trip():
    part = RectPartition(4, 3)
    pos = np.arange(part.size)
    assert (T.snake_pos(T.snake_cell(pos, part), part) == pos).all()


# ---------------------------------------------------------------- bump and swap

@pytest.mark.parametrize("x, expected", [(-1, 0.0), (0, 0.0), (0.5, 0.5), (1, 1.0), (2, 1.0)])
def test_bump_values(x, expected):
    assert T.bump_f(x) == pytest.approx(expected, abs=1e-15)


def test_bump_monotone_and_symmetric():
    x = np.linspace(0, 1, 1001)
    y = T.bump_f(x)
    assert (np.diff(y) >= 0).all()
    assert np.allclose(y + T.bump_f(1 - x), 1.0)


def test_superellipse_chart_round_trip():
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(-1, 1, (2, 5000))
    rho, tau = T._to_polar(X, Y, 16)
    X2, Y2 = T._from_polar(rho, tau, 16)
    assert np.abs(X2 - X).max() < 1e-12 and np.abs(Y2 - Y).max() < 1e-12


def test_area_fraction_against_quadrature():
    from scipy.integrate import quad
    p = 16
    quarter, _ = quad(lambda x: (1 - x ** p) ** (1 / p), 0, 1)
    assert T.area_fraction(p) == pytest.approx(quarter, rel=1e-10)


@pytest.fixture(scope="module")
def params():
    return T.swap_params(Fraction(1, 10))


def test_swap_params_contract(params):
    assert params.collar == pytest.approx(1 / 320)
    assert params.collar < 1 - params.gamma
    assert params.unswapped_mass() <= 0.75 * 0.1 + 1e-12


def test_collar_is_fixed_exactly(params):
    pair = CellPair(0.0, 0.0, 1.0, 2.0, True)
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 1, 500)
    c = params.collar * 0.9
    edge = np.concatenate([
        np.column_stack([t, np.full_like(t, c)]),
        np.column_stack([t, 2 - np.full_like(t, c)]),
        np.column_stack([np.full_like(t, c / 2), 2 * t]),
        np.column_stack([1 - np.full_like(t, c / 2), 2 * t]),
    ])
    assert (T.smooth_swap(edge, params, pair) == edge).all()


def test_outside_points_fixed(params):
    pair = CellPair(0.25, 0.25, 0.25, 0.5, True)
    pts = np.array([[0.1, 0.1], [0.9, 0.3], [0.3, 0.9]])
    assert (T.smooth_swap(pts, params, pair) == pts).all()


def test_center_of_cell_goes_to_mirrored_center(params):
    pair = CellPair(0.0, 0.0, 1.0, 2.0, True)
    out = T.smooth_swap([0.5, 0.5], params, pair)
    assert out == pytest.approx([0.5, 1.5], abs=1e-12)


def test_swap_inverse(params):
    pair = CellPair(0.0, 0.0, 2.0, 1.0, False)
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(0, 2, 2000), rng.uniform(0, 1, 2000)])
    back = T.smooth_swap(T.smooth_swap(pts, params, pair), params, pair, inverse=True)
    assert np.abs(back - pts).max() < 1e-10


def test_swap_jacobian_near_one(params):
    pair = CellPair(0.0, 0.0, 1.0, 2.0, True)
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(0.01, 0.99, 2000), rng.uniform(0.02, 1.98, 2000)])
    det = T.swap_jacobian(pts, params, pair)
    assert np.abs(det - 1).max() < 1e-6


def test_mass_swap_fraction(params):
    frac, n = T.mass_swap_fraction(params, samples=200_000, seed=4)
    assert frac >= 0.9 - 3 * math.sqrt(0.09 / n)


# ---------------------------------------------------------------- smooth permutations

def test_smooth_perm_identity():
    perm = RectPerm(RectPartition(2, 2), np.arange(4), 2, 1)
    sp = T.smooth_perm(perm, Fraction(1, 20))
    pts = np.random.default_rng(0).random((10, 2))
    assert (sp(pts) == pts).all() and sp.lipschitz == 1


def test_smooth_perm_single_swap():
    mapping = np.array([1, 0, 2, 3])
    sp = T.smooth_perm(RectPerm(RectPartition(2, 2), mapping, 2, 1), Fraction(1, 20))
    assert sp.t == 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_smooth_perm_random_2x2(seed):
    perm = random_perm(2, 2, seed)
    sp = T.smooth_perm(perm, Fraction(1, 20))
    assert T.perm_agreement(sp, samples=40_000, seed=seed) >= 0.95 - 0.05 * (sp.t - 1)
    pts = np.random.default_rng(seed).random((1000, 2))
    assert np.abs(sp.inverse(sp(pts)) - pts).max() < 1e-9


def test_conjugate_trivial_is_rotation():
    S = T.conjugate_S(0, [], Fraction(1, 3))
    pts = np.random.default_rng(0).random((100, 2))
    assert np.allclose(S(pts), T.rotate(pts, Fraction(1, 3)))


def test_conjugate_inverse(toy):
    sched, stages = toy
    h1 = T.smooth_perm(T.build_h(stages[1], sched.stages[0]), Fraction(1, 10))
    S = T.conjugate_S(1, [h1], sched.stages[0].alpha_next)
    pts = np.random.default_rng(5).random((500, 2))
    assert np.abs(T._wrap(S.inverse(S(pts)) - pts)).max() < 1e-9


def test_conjugate_by_zero_rotation_is_identity(toy):
    sched, stages = toy
    h1 = T.smooth_perm(T.build_h(stages[1], sched.stages[0]), Fraction(1, 10))
    S = T.conjugate_S(1, [h1], 0)
    pts = np.random.default_rng(6).random((2000, 2))
    assert np.abs(T._wrap(S(pts) - pts)).max() < 1e-9


# ---------------------------------------------------------------- d-infinity

def test_d_infty_equal_maps():
    R = lambda p: T.rotate(p, Fraction(1, 7))
    assert T.d_infty_estimate(R, R, grid=16).estimate == 0


def test_d_infty_rotations():
    a, b = 0.1, 0.13
    Ra = lambda p: T.rotate(p, a)
    Rb = lambda p: T.rotate(p, b)
    est = T.d_infty_estimate(Ra, Rb, k_max=2, grid=16)
    assert est.terms[0] == pytest.approx(0.03, abs=1e-12)
    assert est.terms[1] < 1e-9 and est.terms[2] < 1e-3
    half = T.d_infty_estimate(Ra, lambda p: T.rotate(p, 0.115), k_max=0, grid=16)
    assert est.terms[0] == pytest.approx(2 * half.terms[0])
    assert est.estimate == pytest.approx(est.terms[0] / (1 + est.terms[0]))


# ---------------------------------------------------------------- modulus and approx

@pytest.mark.parametrize("t, L, expected", [(3, 4, 6), (0, 9, 0), (1, 1, 0), (2, Fraction(3, 2), 2), (5, 2, 5)])
def test_factor_offset(t, L, expected):
    assert T.factor_offset(t, L) == expected


@given(st.integers(1, 50), st.fractions(min_value=1, max_value=1000))
def test_factor_offset_is_exact_ceiling(t, L):
    c = T.factor_offset(t, L)
    assert Fraction(2) ** c >= L ** t
    assert c == 0 or Fraction(2) ** (c - 1) < L ** t


def test_rotation_code_modulus():
    code = T.rotation_code(Fraction(1, 5))
    assert all(T.modulus(code, 0, n) == n for n in range(20))
    assert T.emitted_modulus(code, 7) == 8


def test_modulus_adds_offsets():
    code = T.rotation_code(Fraction(1, 5))
    code.hs = [T.SmoothPerm(None, Fraction(1, 10), None, [(0, 1)] * 3, Fraction(4))]
    assert T.modulus(code, 0, 5) == 5 + 2 * 6 + 1
    code.hs.append(T.SmoothPerm(None, Fraction(1, 10), None, [(0, 1)] * 2, Fraction(8)))
    assert T.modulus(code, 0, 5) == 5 + 2 * 6 + 2 * 6 + 1
    assert T.modulus(code, 2, 3) == T.modulus(code, 0, 3 * 4 + 2)


@pytest.mark.parametrize("n", [1, 8, 60])
def test_approx_rotation_at_origin(n):
    alpha = Fraction(31, 150)
    code = T.rotation_code(alpha)
    out = T.approx(code, 0, DyadicPoint.from_ints(0, 0, n), n)
    assert out.as_fractions() == (Fraction(math.floor(alpha * 2 ** n), 2 ** n), 0)


def test_approx_identity_truncates():
    code = T.rotation_code(0)
    pt = DyadicPoint.from_fractions(Fraction(5, 7), Fraction(2, 3), 10)
    assert T.approx(code, 0, pt, 10) == pt


def test_approx_precision_mismatch():
    code = T.rotation_code(Fraction(1, 3))
    with pytest.raises(PrecisionMismatch):
        T.approx(code, 0, DyadicPoint.from_ints(0, 0, 4), 5)
    with pytest.raises(PrecisionMismatch):
        T.approx(code, 3, DyadicPoint.from_ints(0, 0, T.modulus(code, 3, 2)), 2)


def test_approx_refinement_is_stable():
    code = T.rotation_code(Fraction(1, 3))
    x, y = Fraction(3, 11), Fraction(5, 13)
    coarse = T.approx(code, 0, DyadicPoint.from_fractions(x, y, 12), 12)
    fine = T.approx(code, 0, DyadicPoint.from_fractions(x, y, 30), 30)
    fx, fy = fine.as_fractions()
    cx, cy = coarse.as_fractions()
    assert abs(fx - cx) <= Fraction(1, 2 ** 11) and abs(fy - cy) <= Fraction(1, 2 ** 11)


def test_rotation_certificate():
    code = T.rotation_code(Fraction(2, 7))
    rep = T.modulus_certificate(code, 10, pairs=200)
    assert rep["failures"] == 0 and rep["d"] == 10

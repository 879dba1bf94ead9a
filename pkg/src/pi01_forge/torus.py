"""Torus realization of a circular construction.

Cells of a :class:`RectPartition` are indexed column-major,
``c = i * s + j`` for column ``i`` and row ``j``. Permutations act on
cell contents: ``mapping[c]`` is where the content of cell ``c`` goes.

Smooth swaps live on the union of two adjacent cells. That rectangle is
scaled affinely onto ``[-1, 1]^2`` where a point is written in
superellipse coordinates ``(rho, tau)``: ``rho = (|x|^p + |y|^p)^(1/p)``
and ``tau`` the fraction of the enclosed area swept from the positive
x-axis. Area is ``c_p * rho^2 * tau`` up to constants, so the twist
``tau -> tau + F(rho) / 2pi`` preserves area exactly. ``F = pi`` near
the centre (a point reflection, which exchanges the two cells) and
``F = 0`` near the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import beta as beta_fn, betainc

from .errors import CountMismatch, GateUnreachable, PrecisionMismatch
from .schedule import Schedule, StageParams

SUPERELLIPSE_P = 16
FLOAT_BITS = 40


# ---------------------------------------------------------------- partitions

@dataclass(frozen=True)
class RectPartition:
    q: int
    s: int

    @property
    def size(self) -> int:
        return self.q * self.s

    def cell(self, i: int, j: int) -> int:
        return i * self.s + j

    def coords(self, c):
        return np.divmod(c, self.s)


@dataclass(eq=False)
class RectPerm:
    """Permutation of the cells of ``domain``.

    ``mapping`` covers one block of ``block_cols`` columns; the full map
    repeats it on each of the ``period`` blocks, so it commutes with the
    column shift by ``block_cols``.
    """
    domain: RectPartition
    mapping: np.ndarray
    block_cols: int
    period: int = 1

    def __post_init__(self):
        if self.block_cols * self.period != self.domain.q:
            raise ValueError("blocks do not tile the partition")
        n = self.block_cols * self.domain.s
        if sorted(self.mapping.tolist()) != list(range(n)):
            raise ValueError("mapping is not a bijection")

    @property
    def block(self) -> RectPartition:
        return RectPartition(self.block_cols, self.domain.s)

    def full(self, limit: int = 1 << 22) -> np.ndarray:
        if self.domain.size > limit:
            raise MemoryError(f"{self.domain.size} cells exceed the expansion limit")
        per = self.block_cols * self.domain.s
        offs = np.arange(self.period, dtype=np.int64)[:, None] * per
        return (self.mapping[None, :] + offs).reshape(-1)

    def compose(self, other: "RectPerm") -> "RectPerm":
        """``self`` after ``other`` on the full partition."""
        a, b = self.full(), other.full()
        return RectPerm(self.domain, a[b], self.domain.q, 1)

    def is_identity(self) -> bool:
        return bool((self.mapping == np.arange(self.mapping.size)).all())

    def order(self) -> int:
        m = self.full()
        seen = np.zeros(m.size, dtype=bool)
        out = 1
        for c in range(m.size):
            if seen[c]:
                continue
            length, x = 0, c
            while not seen[x]:
                seen[x] = True
                x = m[x]
                length += 1
            out = math.lcm(out, length)
        return out


def rotation_index(part: RectPartition, p: int) -> RectPerm:
    """Column translation ``(i, j) -> (i + p mod q, j)``."""
    i, j = part.coords(np.arange(part.size, dtype=np.int64))
    return RectPerm(part, ((i + p) % part.q) * part.s + j, part.q, 1)


def build_h(odo_next, params: StageParams) -> RectPerm:
    """Atom ``(i, w)`` of ``[0, 1/q_n)`` goes into the row strip of the
    ``i``-th letter of stage ``n+1`` word ``w``; copied to every block.

    Occurrences of a letter are matched to its strip in (column, row)
    order, so the map keeps columns whenever the counts allow it.
    """
    index = np.asarray(odo_next.index)
    k, s_n, s_next = params.k_n, params.s_n, params.s_next
    if index.shape != (s_next, k):
        raise CountMismatch(f"stage words have shape {index.shape}, expected {(s_next, k)}")
    if s_next % s_n:
        raise CountMismatch(f"s_n={s_n} does not divide s_next={s_next}")
    m = s_next // s_n
    need = k * m
    block = RectPartition(k, s_next)
    mapping = np.empty(block.size, dtype=np.int64)
    for t in range(s_n):
        w, i = np.nonzero(index == t)
        if w.size != need:
            raise CountMismatch(f"letter {t} occurs {w.size} times, its strip holds {need} atoms")
        src = np.lexsort((w, i))
        cols = np.repeat(np.arange(k), m)
        rows = np.tile(np.arange(t * m, (t + 1) * m), k)
        mapping[block.cell(i[src], w[src])] = block.cell(cols, rows)
    return RectPerm(RectPartition(k * params.q_n, s_next), mapping, k, params.q_n)


def check_in_place(perm: RectPerm, odo_next, params: StageParams) -> tuple[bool, int]:
    """Exhaustive check that every atom lands in its letter's strip."""
    index = np.asarray(odo_next.index)
    m = params.s_next // params.s_n
    i, w = perm.block.coords(np.arange(perm.mapping.size))
    ti, tr = perm.block.coords(perm.mapping)
    ok = tr // m == index[w, i]
    return bool(ok.all()), int(ok.size)


def commutes_with_rotation(perm: RectPerm, shift: int, limit: int = 1 << 22) -> bool:
    """Exact check of ``h R = R h`` for the column shift ``shift``.

    Small domains are compared cell by cell. Larger ones use the block
    structure: the map repeats one block permutation, so it commutes with
    every shift that is a multiple of the block width.
    """
    if perm.domain.size <= limit:
        rot = rotation_index(perm.domain, shift)
        return bool((perm.compose(rot).full() == rot.compose(perm).full()).all())
    if shift % perm.block_cols:
        raise MemoryError("non-block shift on a domain above the expansion limit")
    return True


# ---------------------------------------------------------------- transpositions

def snake_cell(pos, part: RectPartition):
    """Cell at position ``pos`` of the column-wise boustrophedon order."""
    i, r = np.divmod(pos, part.s)
    j = np.where(i % 2 == 0, r, part.s - 1 - r)
    return i * part.s + j


def snake_pos(cell, part: RectPartition):
    i, j = np.divmod(cell, part.s)
    r = np.where(i % 2 == 0, j, part.s - 1 - j)
    return i * part.s + r


def decompose_transpositions(perm: RectPerm) -> list[tuple[int, int]]:
    """Swaps of neighbouring cells (in boustrophedon order, so every pair
    shares an edge) whose left-to-right application moves each content to
    ``perm``'s target. Works on one block."""
    part = perm.block
    n = part.size
    pos = np.arange(n)
    pi = snake_pos(perm.mapping[snake_cell(pos, part)], part)
    arr = np.empty(n, dtype=np.int64)
    arr[pi] = pos
    arr = arr.tolist()
    sort_swaps = []
    for i in range(1, n):
        j = i
        while j > 0 and arr[j - 1] > arr[j]:
            arr[j - 1], arr[j] = arr[j], arr[j - 1]
            sort_swaps.append(j - 1)
            j -= 1
    cells = snake_cell(np.arange(n), part).tolist()
    return [(cells[t], cells[t + 1]) for t in reversed(sort_swaps)]


def compose_transpositions(swaps: Sequence[tuple[int, int]], n: int) -> np.ndarray:
    """Content mapping produced by applying ``swaps`` in order."""
    where = list(range(n))
    at = list(range(n))
    for a, b in swaps:
        ca, cb = at[a], at[b]
        at[a], at[b] = cb, ca
        where[ca], where[cb] = b, a
    return np.array(where, dtype=np.int64)


# ---------------------------------------------------------------- bump and twist

def bump_f(x):
    """``g(x) / (g(x) + g(1 - x))`` with ``g(x) = exp(-1/x)`` for x > 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g0 = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        y = 1.0 - x
        g1 = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        out = g0 / (g0 + g1)
    out = np.where(x <= 0, 0.0, np.where(x >= 1, 1.0, out))
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def _beta_const(p: int) -> float:
    return float(beta_fn(1.0 / p, 1.0 / p))


@lru_cache(maxsize=None)
def area_fraction(p: int = SUPERELLIPSE_P) -> float:
    """Area of the unit superellipse over the area of ``[-1, 1]^2``."""
    return math.gamma(1 + 1 / p) ** 2 / math.gamma(1 + 2 / p)


def _U(s, p):
    """Quadrant area fraction swept up to the point with ``y/rho = s``."""
    a = 1.0 / p
    return betainc(a, a, np.clip(s, 0.0, 1.0) ** p)


def _U_inv(u, p):
    """Inverse of :func:`_U` on ``[0, 1/2]`` by safeguarded Newton."""
    a = 1.0 / p
    B = _beta_const(p)
    smax = 0.5 ** a
    s = np.clip(u * a * B, 0.0, smax)
    lo = np.zeros_like(s)
    hi = np.full_like(s, smax)
    for _ in range(60):
        f = _U(s, p) - u
        lo = np.where(f < 0, s, lo)
        hi = np.where(f > 0, s, hi)
        d = p * (1.0 - s ** p) ** (a - 1.0) / B
        step = f / d
        nxt = s - step
        bad = (nxt <= lo) | (nxt >= hi)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        done = np.abs(nxt - s) <= 1e-17
        s = nxt
        if done.all():
            break
    return s


def _to_polar(X, Y, p):
    """``(rho, tau)`` with ``tau`` in ``[0, 1)``."""
    rho = (np.abs(X) ** p + np.abs(Y) ** p) ** (1.0 / p)
    q = np.where(Y >= 0, np.where(X > 0, 0, 1), np.where(X < 0, 2, 3))
    if np.isscalar(q):
        q = np.asarray(q)
    A = np.choose(q, [X, Y, -X, -Y])
    Bc = np.choose(q, [Y, -X, -Y, X])
    safe = np.where(rho > 0, rho, 1.0)
    lowY = Bc <= A
    u = np.where(lowY, _U(Bc / safe, p), 1.0 - _U(A / safe, p))
    tau = (q + u) / 4.0
    return rho, np.where(rho > 0, tau % 1.0, 0.0)


def _from_polar(rho, tau, p):
    t4 = (tau % 1.0) * 4.0
    q = np.floor(t4).astype(np.int64) % 4
    u = t4 - np.floor(t4)
    low = u <= 0.5
    s = _U_inv(np.where(low, u, 1.0 - u), p)
    c = (1.0 - s ** p) ** (1.0 / p)
    A = rho * np.where(low, c, s)
    Bc = rho * np.where(low, s, c)
    X = np.choose(q, [A, -Bc, -A, Bc])
    Y = np.choose(q, [Bc, A, -Bc, -A])
    return X, Y


@dataclass(frozen=True)
class SmoothSwapParams:
    """``gamma``: radius of full half-turn; ``outer``: radius beyond which
    the map is the identity (``collar = 1 - outer`` in normalized units);
    ``eps``: mass left unswapped, at most; ``lipschitz_bound``: bound for
    the normalized map."""
    gamma: float
    eps: Fraction
    lipschitz_bound: Fraction
    outer: float
    p: int = SUPERELLIPSE_P

    def __post_init__(self):
        if not 0 < self.gamma < self.outer < 1:
            raise ValueError("need 0 < gamma < outer < 1")
        if not self.collar < 1 - self.gamma:
            raise ValueError("collar must be narrower than 1 - gamma")

    @property
    def collar(self) -> float:
        return 1.0 - self.outer

    def twist(self, rho):
        """Twist angle ``F(rho)``: pi inside ``gamma``, 0 beyond ``outer``."""
        return math.pi * (1.0 - bump_f((rho - self.gamma) / (self.outer - self.gamma)))

    def unswapped_mass(self) -> float:
        """Predicted fraction of the pair that stays on its side."""
        from scipy.integrate import quad
        c = area_fraction(self.p)
        inner = c * self.gamma ** 2
        band, _ = quad(lambda r: 2 * c * r * float(self.twist(r)) / math.pi,
                       self.gamma, self.outer, epsabs=1e-13, limit=200)
        return 1.0 - inner - band


def _twist_deriv_sup(gamma: float, outer: float) -> float:
    x = np.linspace(0, 1, 20001)
    h = 1e-6
    d = (bump_f(np.clip(x + h, 0, 1)) - bump_f(np.clip(x - h, 0, 1))) / (2 * h)
    return math.pi * float(d.max()) / (outer - gamma)


@lru_cache(maxsize=None)
def swap_params(eps: Fraction | str | float, p: int = SUPERELLIPSE_P) -> SmoothSwapParams:
    """Parameters whose predicted unswapped mass is at most ``3 eps / 4``.

    The collar is ``eps / 32`` (normalized half-width 1); ``gamma`` is the
    largest radius that still meets the mass target, found by bisection.
    """
    eps = Fraction(eps).limit_denominator(10 ** 9)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    outer = 1.0 - float(eps) / 32
    target = 0.75 * float(eps)
    if 1 - area_fraction(p) * outer ** 2 > target:
        raise ValueError(f"superellipse exponent {p} cannot reach eps={eps}")
    lo, hi = 1e-3, outer - 1e-6
    # widest transition band that still meets the target
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        trial = SmoothSwapParams(mid, eps, Fraction(1), outer, p)
        if trial.unswapped_mass() <= target:
            hi = mid
        else:
            lo = mid
    gamma = hi
    # |D phi| <= 1 + rho |F'| times the chart distortion; the chart factor
    # is measured once on a grid and padded by 25%
    L = _normalized_lipschitz(gamma, outer, p)
    return SmoothSwapParams(gamma, eps, Fraction(L).limit_denominator(1000) + 1, outer, p)


def _normalized_lipschitz(gamma: float, outer: float, p: int) -> float:
    params = SmoothSwapParams(gamma, Fraction(1, 2), Fraction(1), outer, p)
    g = np.linspace(-0.999, 0.999, 241)
    X, Y = np.meshgrid(g, g)
    X, Y = X.ravel(), Y.ravel()
    J = _jacobian_normalized(X, Y, params, h=1e-6)
    norms = np.linalg.norm(J, ord=2, axis=(1, 2))
    est = max(float(norms.max()), 1.0 + _twist_deriv_sup(gamma, outer))
    return 1.25 * est


def _swap_normalized(X, Y, params: SmoothSwapParams, sign: int = 1):
    rho, tau = _to_polar(X, Y, params.p)
    inside = rho < params.outer
    F = np.where(inside, params.twist(rho), 0.0)
    X2, Y2 = _from_polar(rho, tau + sign * F / (2 * math.pi), params.p)
    return np.where(inside, X2, X), np.where(inside, Y2, Y)


def _jacobian_normalized(X, Y, params, h=1e-6, sign=1):
    """Fourth-order central differences, shape ``(n, 2, 2)``."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    J = np.empty(X.shape + (2, 2))
    for col, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
        pts = [_swap_normalized(X + c * dx, Y + c * dy, params, sign) for c in (-2, -1, 1, 2)]
        for row in range(2):
            f = [pt[row] for pt in pts]
            J[..., row, col] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return J


@dataclass(frozen=True)
class CellPair:
    """Union rectangle ``[x0, x0 + w) x [y0, y0 + h)`` of two adjacent cells;
    ``vertical`` when the cells are stacked."""
    x0: float
    y0: float
    w: float
    h: float
    vertical: bool

    @property
    def aspect(self) -> float:
        return max(self.w / self.h, self.h / self.w)


def smooth_swap(points, params: SmoothSwapParams, pair: CellPair, inverse: bool = False):
    """Apply the smooth swap to ``points`` (shape ``(n, 2)`` or a pair);
    points outside the pair are fixed."""
    pts = np.array(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    X = 2 * (pts[:, 0] - pair.x0) / pair.w - 1
    Y = 2 * (pts[:, 1] - pair.y0) / pair.h - 1
    inside = (np.abs(X) < 1) & (np.abs(Y) < 1)
    if inside.any():
        X2, Y2 = _swap_normalized(X[inside], Y[inside], params, -1 if inverse else 1)
        # write back only moved points so the collar is fixed bit for bit
        idx = np.flatnonzero(inside)
        moved = (X2 != X[inside]) | (Y2 != Y[inside])
        idx = idx[moved]
        pts[idx, 0] = pair.x0 + (X2[moved] + 1) * pair.w / 2
        pts[idx, 1] = pair.y0 + (Y2[moved] + 1) * pair.h / 2
    return pts[0] if single else pts


def swap_jacobian(points, params: SmoothSwapParams, pair: CellPair, h: float = 1e-6):
    """Numerical Jacobian determinants at ``points`` (torus units)."""
    pts = np.atleast_2d(np.asarray(points, float))
    X = 2 * (pts[:, 0] - pair.x0) / pair.w - 1
    Y = 2 * (pts[:, 1] - pair.y0) / pair.h - 1
    J = _jacobian_normalized(X, Y, params, h)
    return np.linalg.det(J)


def mass_swap_fraction(params: SmoothSwapParams, samples: int = 10 ** 6, seed: int = 0,
                       pair: CellPair | None = None) -> tuple[float, int]:
    """Monte Carlo fraction of the pair that changes cell; returns
    ``(fraction, samples)``."""
    pair = pair or CellPair(0.0, 0.0, 1.0, 2.0, True)
    rng = np.random.default_rng(seed)
    pts = np.column_stack([pair.x0 + rng.random(samples) * pair.w,
                           pair.y0 + rng.random(samples) * pair.h])
    out = smooth_swap(pts, params, pair)
    if pair.vertical:
        mid = pair.y0 + pair.h / 2
        changed = (pts[:, 1] < mid) != (out[:, 1] < mid)
    else:
        mid = pair.x0 + pair.w / 2
        changed = (pts[:, 0] < mid) != (out[:, 0] < mid)
    return float(changed.mean()), samples


# ---------------------------------------------------------------- smooth permutations

@dataclass(eq=False)
class SmoothPerm:
    """Composition of smooth swaps realizing ``perm`` up to ``eps`` mass
    per swap. Evaluates on torus points of shape ``(n, 2)``."""
    perm: RectPerm
    eps: Fraction
    params: SmoothSwapParams | None
    swaps: list[tuple[int, int]]
    lipschitz: Fraction = Fraction(1)

    @property
    def t(self) -> int:
        return len(self.swaps)

    def _pairs(self):
        block = self.perm.block
        cw = 1.0 / (block.q * self.perm.period)
        ch = 1.0 / block.s
        out = []
        for a, b in self.swaps:
            (ia, ja), (ib, jb) = divmod(a, block.s), divmod(b, block.s)
            i0, j0 = min(ia, ib), min(ja, jb)
            vertical = ia == ib
            out.append(CellPair(i0 * cw, j0 * ch, cw * (1 if vertical else 2),
                                ch * (2 if vertical else 1), vertical))
        return out

    def __call__(self, points, inverse: bool = False):
        pts = np.array(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if not self.swaps:
            return pts[0] if single else pts
        period = self.perm.period
        block = self.perm.block
        bw = 1.0 / period
        x = pts[:, 0] % 1.0
        blk = np.minimum(np.floor(x * period), period - 1)
        local = np.column_stack([x - blk * bw, pts[:, 1] % 1.0])
        pairs = self._pairs()
        order = range(len(pairs) - 1, -1, -1) if inverse else range(len(pairs))
        cw = bw / block.q
        ch = 1.0 / block.s
        for n in order:
            pr = pairs[n]
            m = ((local[:, 0] >= pr.x0) & (local[:, 0] < pr.x0 + pr.w)
                 & (local[:, 1] >= pr.y0) & (local[:, 1] < pr.y0 + pr.h))
            if m.any():
                local[m] = smooth_swap(local[m], self.params, pr, inverse=inverse)
        out = np.column_stack([(local[:, 0] + blk * bw) % 1.0, local[:, 1] % 1.0])
        return out[0] if single else out

    def inverse(self, points):
        return self(points, inverse=True)

    def cell_of(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        dom = self.perm.domain
        i = np.minimum(np.floor(pts[:, 0] * dom.q), dom.q - 1).astype(np.int64)
        j = np.minimum(np.floor(pts[:, 1] * dom.s), dom.s - 1).astype(np.int64)
        return i * dom.s + j


def smooth_perm(perm: RectPerm, eps) -> SmoothPerm:
    """Smooth realization of ``perm`` from its adjacent transpositions."""
    eps = Fraction(eps)
    swaps = decompose_transpositions(perm)
    if not swaps:
        return SmoothPerm(perm, eps, None, [], Fraction(1))
    params = swap_params(eps)
    block = perm.block
    cw = Fraction(1, block.q * perm.period)
    ch = Fraction(1, block.s)
    aspects = set()
    for a, b in swaps:
        if a // block.s == b // block.s:
            aspects.add(max(cw / (2 * ch), (2 * ch) / cw))
        else:
            aspects.add(max(2 * cw / ch, ch / (2 * cw)))
    L = params.lipschitz_bound * max(aspects)
    return SmoothPerm(perm, eps, params, swaps, L)


def perm_agreement(sp: SmoothPerm, samples: int = 10 ** 5, seed: int = 0) -> float:
    """Fraction of sampled points whose image lies in the target cell."""
    rng = np.random.default_rng(seed)
    pts = rng.random((samples, 2))
    full = sp.perm.full()
    src = sp.cell_of(pts)
    dst = sp.cell_of(sp(pts))
    return float((full[src] == dst).mean())


# ---------------------------------------------------------------- conjugates

def rotate(points, alpha) -> np.ndarray:
    pts = np.array(points, dtype=float)
    pts[..., 0] = (pts[..., 0] + float(alpha)) % 1.0
    return pts


@dataclass(eq=False)
class ConjugateS:
    """``S = H R_alpha H^-1`` with ``H = h_1 o h_2 o ... o h_m``."""
    hs: list[SmoothPerm]
    alpha: Fraction

    def _H(self, pts, inverse=False):
        seq = self.hs if inverse else self.hs[::-1]
        for h in seq:
            pts = h(pts, inverse=inverse)
        return pts

    def __call__(self, points):
        return self._H(rotate(self._H(np.atleast_2d(points), inverse=True), self.alpha))

    def inverse(self, points):
        return self._H(rotate(self._H(np.atleast_2d(points), inverse=True), -self.alpha))


def conjugate_S(m: int, hs: Sequence[SmoothPerm], alpha) -> ConjugateS:
    """Evaluator for ``S_m`` from the first ``m`` smooth permutations."""
    return ConjugateS(list(hs[:m]), Fraction(alpha))


# ---------------------------------------------------------------- d-infinity

def _wrap(d):
    return (d + 0.5) % 1.0 - 0.5


def _differential(f, pts, order: int, h: float):
    """Central-difference differential of order 1 or 2 (component-wise
    entries, shape ``(n, 2, 2)`` or ``(n, 2, 2, 2)``)."""
    base = f(pts) if order == 2 else None
    e = np.eye(2) * h
    if order == 1:
        out = np.empty((len(pts), 2, 2))
        for c in range(2):
            out[:, :, c] = _wrap(f(pts + e[c]) - f(pts - e[c])) / (2 * h)
        return out
    out = np.empty((len(pts), 2, 2, 2))
    for a in range(2):
        for b in range(2):
            if a == b:
                d = _wrap(f(pts + e[a]) - base) - _wrap(base - f(pts - e[a]))
                out[:, :, a, b] = d / h ** 2
            else:
                d = (_wrap(f(pts + e[a] + e[b]) - f(pts + e[a] - e[b]))
                     - _wrap(f(pts - e[a] + e[b]) - f(pts - e[a] - e[b])))
                out[:, :, a, b] = d / (4 * h * h)
    return out


@dataclass(frozen=True)
class DInfty:
    estimate: Fraction
    terms: tuple
    tail_bound: Fraction
    k_max: int
    grid: int
    note: str = ""

    @property
    def c0(self) -> float:
        return self.terms[0]


def d_infty_estimate(S, T, k_max: int = 2, grid: int = 1024, h: float = 2 ** -14,
                     Sinv: Callable | None = None, Tinv: Callable | None = None) -> DInfty:
    """Truncated ``sum_k 2^-k d_k / (1 + d_k)`` over a ``grid x grid`` lattice.

    ``d_0`` is the largest torus distance between images; ``d_1, d_2`` are
    the largest entry differences of finite-difference differentials. With
    inverses given, each ``d_k`` also covers them.
    """
    g = (np.arange(grid) + 0.5) / grid
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pairs = [(S, T)] + ([(Sinv, Tinv)] if Sinv is not None and Tinv is not None else [])
    terms = []
    for k in range(k_max + 1):
        dk = 0.0
        for A, B in pairs:
            if k == 0:
                d = _wrap(A(pts) - B(pts))
                dk = max(dk, float(np.sqrt((d ** 2).sum(axis=1)).max()))
            else:
                d = _differential(A, pts, k, h) - _differential(B, pts, k, h)
                dk = max(dk, float(np.abs(d).max()))
        terms.append(dk)
    est = sum(2.0 ** -k * d / (1 + d) for k, d in enumerate(terms))
    return DInfty(Fraction(est), tuple(terms), Fraction(1, 2 ** k_max), k_max, grid,
                  note=f"truncated after order {k_max}; tail <= 2^-{k_max}")


# ---------------------------------------------------------------- codes

def factor_offset(t: int, L) -> int:
    """``ceil(t * log2 L)`` exactly, for rational ``L >= 1``."""
    L = Fraction(L)
    if t == 0 or L <= 1:
        return 0
    a, b = L.numerator ** t, L.denominator ** t
    c = max(0, (a // b).bit_length() - 1)
    while (b << c) < a:
        c += 1
    while c > 0 and (b << (c - 1)) >= a:
        c -= 1
    return c


@dataclass
class DyadicPoint:
    x_bits: str
    y_bits: str
    precision: int

    @classmethod
    def from_ints(cls, kx: int, ky: int, precision: int) -> "DyadicPoint":
        m = 1 << precision
        return cls(format(kx % m, f"0{precision}b") if precision else "",
                   format(ky % m, f"0{precision}b") if precision else "", precision)

    @classmethod
    def from_fractions(cls, x, y, precision: int) -> "DyadicPoint":
        return cls.from_ints(math.floor(Fraction(x) * 2 ** precision),
                             math.floor(Fraction(y) * 2 ** precision), precision)

    @property
    def kx(self) -> int:
        return int(self.x_bits, 2) if self.x_bits else 0

    @property
    def ky(self) -> int:
        return int(self.y_bits, 2) if self.y_bits else 0

    def as_fractions(self) -> tuple[Fraction, Fraction]:
        return Fraction(self.kx, 2 ** self.precision), Fraction(self.ky, 2 ** self.precision)

    def as_floats(self) -> tuple[float, float]:
        x, y = self.as_fractions()
        return float(x), float(y)


@dataclass
class DiffeoCode:
    N: int
    stages: list = field(default_factory=list)
    alpha: Fraction = Fraction(0)
    modulus_table: dict = field(default_factory=dict)
    lipschitz_per_stage: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    hs: list = field(default_factory=list, repr=False)
    schedule: Schedule | None = field(default=None, repr=False)

    @property
    def rotation_only(self) -> bool:
        return all(h.t == 0 for h in self.hs)

    def evaluator(self) -> ConjugateS:
        return ConjugateS(self.hs, self.alpha)

    def fill_modulus_table(self, ks=(0, 1, 2), ns=range(0, 17)):
        for k in ks:
            for n in ns:
                self.modulus_table[(k, n)] = modulus(self, k, n)


def rotation_code(alpha, N: int = 0) -> DiffeoCode:
    return DiffeoCode(N=N, alpha=Fraction(alpha))


def modulus(code: DiffeoCode, k: int, n: int) -> int:
    """Input bits that pin the ``k``-th differential to ``n`` output bits.

    Each ``h_m`` enters twice (forward and inverse) with ``t_m`` swaps of
    Lipschitz constant ``L_m``; one more bit absorbs the sqrt 2 between the
    coordinate and Euclidean metrics. Order ``k`` uses central differences
    with step ``2^-(n+1)``, which needs order-0 precision ``(k+1)(n+1)+k``.
    """
    if k < 0 or n < 0:
        raise ValueError("k and n must be natural")
    if k > 0:
        return modulus(code, 0, (k + 1) * (n + 1) + k)
    offsets = sum(2 * factor_offset(h.t, h.lipschitz) for h in code.hs)
    return n if offsets == 0 else n + offsets + 1


def emitted_modulus(code: DiffeoCode, n: int) -> int:
    """The emitted sequence ``n -> d(0, n + 1)``."""
    return modulus(code, 0, n + 1)


def _trunc_bits(v: float, n: int) -> int:
    return math.floor((v % 1.0) * 2 ** n) % (1 << n) if n else 0


def approx(code: DiffeoCode, k: int, point: DyadicPoint, n: int):
    """Dyadic approximation of the ``k``-th differential of the code's map.

    ``point.precision`` must equal ``modulus(code, k, n)``. Order 0 returns
    a :class:`DyadicPoint` at precision ``n``; orders 1 and 2 return the
    truncated central-difference entries as fractions.
    """
    need = modulus(code, k, n)
    if point.precision != need:
        raise PrecisionMismatch(f"input has {point.precision} bits, modulus gives {need}")
    if k > 2:
        raise PrecisionMismatch("differentials above order 2 are emitted as formulas only")
    if code.rotation_only and k == 0:
        x, y = point.as_fractions()
        return DyadicPoint.from_fractions((x + code.alpha) % 1, y, n)
    if n > FLOAT_BITS:
        raise PrecisionMismatch(f"float evaluation supports at most {FLOAT_BITS} output bits")
    S = code.evaluator()
    pt = np.array([point.as_floats()])
    if k == 0:
        out = S(pt)[0]
        return DyadicPoint.from_ints(_trunc_bits(out[0], n), _trunc_bits(out[1], n), n)
    h = 2.0 ** -(n + 1)
    D = _differential(S, pt, k, h)[0]
    scale = 2 ** n
    return np.vectorize(lambda v: Fraction(math.floor(v * scale), scale), otypes=[object])(D)


def modulus_certificate(code: DiffeoCode, n: int, pairs: int = 1000, seed: int = 0) -> dict:
    """Sample pairs agreeing to ``d(0, n)`` bits and compare outputs.

    Two outputs agree to ``n`` bits when their torus distance per
    coordinate is at most ``2^-n``.
    """
    d = modulus(code, 0, n)
    rng = np.random.default_rng(seed)
    bases, others = [], []
    for _ in range(pairs):
        kx, ky = (int(v) for v in rng.integers(0, 2 ** 62, size=2))
        base = DyadicPoint.from_fractions(Fraction(kx, 2 ** 62), Fraction(ky, 2 ** 62), d)
        dx, dy = (int(v) for v in rng.integers(-1, 2, size=2))
        bases.append(base)
        others.append(DyadicPoint.from_ints(base.kx + dx, base.ky + dy, d))
    if code.rotation_only:
        gaps = []
        for base, other in zip(bases, others):
            (x0, y0), (x1, y1) = (approx(code, 0, pt, n).as_fractions() for pt in (base, other))
            gaps.append(max(abs(_wrap(float(x0 - x1))), abs(_wrap(float(y0 - y1)))))
        gaps = np.array(gaps)
    else:
        # one batched evaluation of all 2 * pairs points
        S = code.evaluator()
        out = S(np.array([pt.as_floats() for pt in bases + others]))
        gaps = np.abs(_wrap(out[:pairs] - out[pairs:])).max(axis=1)
    fails = int((gaps > 2.0 ** -n).sum())
    worst = float(gaps.max()) if pairs else 0.0
    return {"n": n, "d": d, "pairs": pairs, "failures": fails, "worst_gap": worst}


# ---------------------------------------------------------------- pipeline

def _with_l(config, m: int, l: int):
    from dataclasses import replace
    ov = dict(config.overrides)
    ov[f"l_{m}"] = str(l)
    return replace(config, overrides=tuple(sorted(ov.items())))


def emit_code(sentence_or_N, n: int, sched: Schedule | None = None, seed: int = 0,
              eps=Fraction(1, 10), grid: int = 32, gate_kmax: int = 0,
              l_ceiling: int = 1 << 16, words=None) -> DiffeoCode:
    """Run words -> circular -> h_m -> smooth h_m -> S_m for ``n`` stages.

    After building ``h_{m+1}`` the length ``l_m`` is doubled until the
    truncated d-infinity gap between ``S_{m+1}`` and ``S_m`` drops below
    ``2^-(m+1)``. ``words`` may supply a prebuilt odometer chain.
    """
    from .logic import classify_pi01, decode, parse
    from .odometer_words import run_Rphi
    from .schedule import build_schedule, toy_config
    from .circular import lift_stage, circ_stage0

    if isinstance(sentence_or_N, int):
        N = sentence_or_N
        sentence = None
    else:
        sentence = sentence_or_N if hasattr(sentence_or_N, "matrix") else \
            classify_pi01(parse(sentence_or_N))
        N = sentence.code.value if sentence.code is not None else 0
    if sched is None:
        sched = build_schedule(toy_config(1), n)
    config = sched.config
    if words is None:
        if sentence is None:
            sentence = classify_pi01(decode(N))
        words = run_Rphi(sentence, n, sched, seed)["stages"]
    hs: list[SmoothPerm] = []
    stages_out = []
    gates = []
    circ = circ_stage0(words[0])
    for m in range(n):
        params = sched.stages[m]
        perm = build_h(words[m + 1], params)
        sp = smooth_perm(perm, eps)
        hs.append(sp)
        S_prev = ConjugateS(list(hs), params.alpha_n)
        l = params.l_n
        while True:
            S_next = ConjugateS(list(hs), params.alpha_next)
            est = d_infty_estimate(S_next, S_prev, k_max=gate_kmax, grid=grid,
                                   Sinv=S_next.inverse, Tinv=S_prev.inverse)
            if est.estimate < Fraction(1, 2 ** (m + 1)):
                break
            l *= 2
            if l > l_ceiling:
                raise GateUnreachable(f"stage {m}: l ceiling {l_ceiling} reached", est.estimate)
            config = _with_l(config, m, l)
            sched = build_schedule(config, max(n, len(sched.stages)))
            params = sched.stages[m]
        gates.append({"m": m, "l": l, "estimate": est.estimate, "terms": est.terms,
                      "threshold": Fraction(1, 2 ** (m + 1)), "passed": True})
        circ = lift_stage(words[m + 1], params, circ)
        stages_out.append({"m": m + 1, "perm": perm, "transpositions": sp.swaps,
                           "swap_params": sp.params, "alpha": params.alpha_next,
                           "q": circ.q, "p": circ.p, "k": params.k_n, "l": l})
    code = DiffeoCode(N=N, stages=stages_out,
                      alpha=sched.stages[n - 1].alpha_next if n else Fraction(0),
                      lipschitz_per_stage=[h.lipschitz for h in hs], gates=gates, hs=hs,
                      schedule=sched)
    code.fill_modulus_table()
    return code


def code_to_json(code: DiffeoCode) -> dict:
    return {
        "schema": "pi01-forge/diffeo/1", "N": code.N,
        "alpha": str(code.alpha),
        "stages": [{"m": st["m"], "q": str(st["q"]), "p": str(st["p"]), "k": st["k"],
                    "l": st["l"], "alpha": str(st["alpha"]),
                    "perm": {"cols": st["perm"].domain.q, "rows": st["perm"].domain.s,
                             "block_cols": st["perm"].block_cols,
                             "period": st["perm"].period,
                             "mapping": st["perm"].mapping.tolist()},
                    "transpositions": [list(t) for t in st["transpositions"]],
                    "eps": str(code.hs[i].eps),
                    "swap": None if st["swap_params"] is None else {
                        "gamma": st["swap_params"].gamma, "outer": st["swap_params"].outer,
                        "eps": str(st["swap_params"].eps), "p": st["swap_params"].p,
                        "lipschitz": str(st["swap_params"].lipschitz_bound)}}
                   for i, st in enumerate(code.stages)],
        "lipschitz_per_stage": [str(L) for L in code.lipschitz_per_stage],
        "gates": [{"m": g["m"], "l": g["l"], "estimate": str(g["estimate"]),
                   "threshold": str(g["threshold"]), "passed": g["passed"]} for g in code.gates],
        "modulus_table": [[k, n, d] for (k, n), d in sorted(code.modulus_table.items())],
    }


def code_from_json(doc: dict) -> DiffeoCode:
    code = DiffeoCode(N=doc["N"], alpha=Fraction(doc["alpha"]))
    for st in doc["stages"]:
        p = st["perm"]
        perm = RectPerm(RectPartition(p["cols"], p["rows"]),
                        np.array(p["mapping"], dtype=np.int64), p["block_cols"], p["period"])
        sw = st["swap"]
        params = None if sw is None else SmoothSwapParams(
            sw["gamma"], Fraction(sw["eps"]), Fraction(sw["lipschitz"]), sw["outer"], sw["p"])
        swaps = [tuple(t) for t in st["transpositions"]]
        sp = SmoothPerm(perm, Fraction(st["eps"]), params, swaps, Fraction(1))
        code.hs.append(sp)
        code.stages.append({"m": st["m"], "perm": perm, "transpositions": swaps,
                            "swap_params": params, "alpha": Fraction(st["alpha"]),
                            "q": int(st["q"]), "p": int(st["p"]), "k": st["k"], "l": st["l"]})
    for sp, L in zip(code.hs, doc["lipschitz_per_stage"]):
        sp.lipschitz = Fraction(L)
    code.lipschitz_per_stage = [Fraction(L) for L in doc["lipschitz_per_stage"]]
    code.gates = [{"m": g["m"], "l": g["l"], "estimate": Fraction(g["estimate"]),
                   "threshold": Fraction(g["threshold"]), "passed": g["passed"]}
                  for g in doc["gates"]]
    code.modulus_table = {(k, n): d for k, n, d in doc["modulus_table"]}
    return code

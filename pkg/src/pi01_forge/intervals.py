"""Validated enclosures for exp and log over exact rationals.

Results are closed intervals ``(lo, hi)`` of ``Fraction`` with dyadic
endpoints. Truncated Taylor/atanh series carry an explicit remainder bound
and every rounding step is outward, so the true value always lies inside.
"""

from __future__ import annotations

from fractions import Fraction
from math import floor, ceil, isqrt

Interval = tuple[Fraction, Fraction]


def round_down(x: Fraction, bits: int) -> Fraction:
    scale = 1 << bits
    return Fraction(floor(x * scale), scale)


def round_up(x: Fraction, bits: int) -> Fraction:
    scale = 1 << bits
    return Fraction(ceil(x * scale), scale)


def _exp_fixed(y: int, w: int, upper: bool) -> int:
    """exp(y / 2^w) scaled by 2^w, for 0 <= y <= 2^(w-1).

    Rounded down (upper=False) or up (upper=True) including the remainder.
    """
    total = 0
    term = 1 << w
    j = 0
    while term > 0:
        total += term
        j += 1
        if upper:
            c = -((-term * y) >> w)
            term = -(-c // j)
        else:
            term = ((term * y) >> w) // j
        if upper and term <= 1:
            # terms were rounded up; the tail is below 2 * term since y <= 1/2
            return total + 2 * term
    return total


def exp_interval(x: Fraction | int, bits: int = 64) -> Interval:
    """Enclosure of ``exp(x)`` with ``bits`` fractional bits."""
    x = Fraction(x)
    if x == 0:
        return Fraction(1), Fraction(1)
    if x < 0:
        lo, hi = exp_interval(-x, bits + 4)
        return round_down(1 / hi, bits), round_up(1 / lo, bits)
    # reduce to y <= 2^-r, r ~ sqrt(precision), then square k times
    approx = bits + int(x * Fraction(3, 2)) + 8
    r = max(1, isqrt(approx) // 2)
    k = 0
    y = x
    while y > Fraction(1, 1 << r):
        y /= 2
        k += 1
    # Squaring k times multiplies the relative error by about 2^k and the
    # magnitude by exp(x); pad the working precision accordingly.
    w = approx + 2 * k + 1
    scale = 1 << w
    # exp is increasing, so outward-rounded arguments keep the enclosure
    lo = _exp_fixed(floor(y * scale), w, upper=False)
    hi = _exp_fixed(ceil(y * scale), w, upper=True)
    for _ in range(k):
        lo = (lo * lo) >> w
        hi = -((-(hi * hi)) >> w)
    return round_down(Fraction(lo, scale), bits), round_up(Fraction(hi, scale), bits)


def _atanh_sum(z: Fraction, bits: int) -> Interval:
    """Enclosure of ``2*atanh(z)`` for ``0 <= z <= 1/3``."""
    target = Fraction(1, 1 << (bits + 2))
    z2 = z * z
    total = Fraction(0)
    power = z
    j = 0
    while True:
        total += power / (2 * j + 1)
        j += 1
        power *= z2
        tail = power / ((2 * j + 1) * (1 - z2))
        if 2 * tail < target:
            break
    return round_down(2 * total, bits), round_up(2 * (total + tail), bits)


def log_interval(x: Fraction | int, bits: int = 64) -> Interval:
    """Enclosure of the natural log of a positive rational."""
    x = Fraction(x)
    if x <= 0:
        raise ValueError("log of a non-positive number")
    if x == 1:
        return Fraction(0), Fraction(0)
    if x < 1:
        lo, hi = log_interval(1 / x, bits)
        return -hi, -lo
    k = 0
    m = x
    while m >= 2:
        m /= 2
        k += 1
    work = bits + k.bit_length() + 4
    mlo, mhi = _atanh_sum((m - 1) / (m + 1), work)
    if k:
        l2lo, l2hi = _atanh_sum(Fraction(1, 3), work)
        mlo += k * l2lo
        mhi += k * l2hi
    return round_down(mlo, bits), round_up(mhi, bits)


def mul_pos(a: Interval, b: Interval) -> Interval:
    """Product of two intervals with non-negative endpoints."""
    return a[0] * b[0], a[1] * b[1]

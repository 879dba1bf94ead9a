"""Numerical parameter schedules and their requirement audit.

Each stage ``n`` chooses, in this order::

    Q1_n, vareps_n, mu_n, eps_n, s_{n+1} (via e(n)), k_n, l_n

and derives ``s_n, K_n, q_n, p_n, alpha_n, gamma_n`` from earlier stages.
Strict mode picks closed forms that satisfy every checkable requirement
(big integers, never used to build words). Relaxed mode takes small user
values and reports which requirements they break.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, asdict, replace
from fractions import Fraction
from math import gcd
from typing import Iterable, Sequence

from sympy import nextprime

from .errors import GrowthTooSlow, InconsistentOverride, PremiseViolated, RelaxedViolation
from .intervals import exp_interval, log_interval

CHOICE_ORDER = ("Q1", "vareps", "mu", "eps", "e", "kmax", "k", "l")

REQUIREMENT_IDS = (
    ["A", "B", "C", "D", "E", "F", "G"]
    + [f"I{i}" for i in range(1, 9)]
    + [f"N{i}" for i in range(1, 14)]
)

STATUSES = ("pass", "fail", "deferred", "strict-only", "certified")


# ---------------------------------------------------------------- Hoeffding

def hoeffding_klb(delta: Fraction | int | str, event_count: int,
                  failure_budget: Fraction | int | str = Fraction(1, 2)) -> int:
    """Least n with ``event_count * exp(-n delta^2 / 6) < failure_budget``.

    The threshold ``6 ln(event_count / budget) / delta^2`` is enclosed with a
    validated log; the answer is then confirmed against a validated exp.
    """
    delta = Fraction(delta)
    budget = Fraction(failure_budget)
    if not 0 < delta < 1 or budget <= 0 or event_count < 1:
        raise ValueError("need 0 < delta < 1, budget > 0, event_count >= 1")
    ratio = Fraction(event_count) / budget
    if ratio < 1:
        return 0
    bits = 64 + 2 * delta.denominator.bit_length() + ratio.numerator.bit_length().bit_length()
    while True:
        lo, hi = log_interval(ratio, bits)
        xlo = 6 * lo / delta ** 2
        xhi = 6 * hi / delta ** 2
        n = xlo.__floor__() + 1
        if xhi < n:
            break
        bits *= 2
        if bits > 1 << 14:
            # the threshold is an exact integer only if ratio == 1
            n = xhi.__floor__() + 1
            break
    assert _hoeffding_holds(n, delta, event_count, budget)
    assert n == 0 or not _hoeffding_holds(n - 1, delta, event_count, budget)
    return n


def _hoeffding_holds(n: int, delta: Fraction, events: int, budget: Fraction) -> bool:
    """Decide ``events * exp(-n delta^2/6) < budget``, i.e.
    ``exp(n delta^2/6) > events/budget``, by exp enclosure."""
    ratio = Fraction(events) / budget
    bits = 16 + 2 * delta.denominator.bit_length()
    while True:
        lo, hi = exp_interval(n * delta ** 2 / 6, bits)
        if lo > ratio:
            return True
        if hi <= ratio:
            return False
        bits *= 2


def substitution_event_count(k: int, s_n: int, s_next: int) -> int:
    """Number of pair statistics one J10.1-style audit looks at."""
    return (2 * s_next) ** 2 * k * k * (2 * s_n) ** 2


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class StageParams:
    n: int
    e_n: int
    s_n: int
    s_next: int
    Q1_n: int
    C1_n: int
    eps_n: Fraction
    vareps_n: Fraction
    mu_n: Fraction
    gamma_n: Fraction | None
    kmax_n: int | None
    k_n: int
    l_n: int
    K_n: int
    q_n: int
    p_n: int
    alpha_n: Fraction
    choice_log: tuple[str, ...] = ()

    @property
    def q_next(self) -> int:
        return self.k_n * self.l_n * self.q_n ** 2

    @property
    def p_next(self) -> int:
        return self.k_n * self.l_n * self.p_n * self.q_n + 1

    @property
    def alpha_next(self) -> Fraction:
        return self.alpha_n + Fraction(1, self.q_next)

    @property
    def K_next(self) -> int:
        return self.K_n * self.k_n


@dataclass(frozen=True)
class RequirementReport:
    id: str
    stage: int
    status: str
    witness: str


@dataclass(frozen=True)
class ScheduleConfig:
    mode: str = "relaxed"
    N: int = 1
    P0: int = 23
    kmax: int = 4
    alpha_bookkeeping: bool = False
    overrides: tuple[tuple[str, str], ...] = ()

    def override(self, key: str, n: int | None = None):
        table = dict(self.overrides)
        if n is not None and f"{key}_{n}" in table:
            return table[f"{key}_{n}"]
        return table.get(key)


@dataclass(frozen=True)
class Schedule:
    config: ScheduleConfig
    stages: tuple[StageParams, ...]
    P_N: int
    P0_effective: int
    audits: tuple[RequirementReport, ...] = ()

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def mode(self) -> str:
        return self.config.mode

    def failed(self) -> list[str]:
        return sorted({f"{r.id}@{r.stage}" for r in self.audits if r.status == "fail"})


def parse_overrides(items: Iterable[str]) -> tuple[tuple[str, str], ...]:
    out = []
    for item in items:
        if "=" not in item:
            raise InconsistentOverride(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out.append((key.strip(), value.strip()))
    return tuple(out)


# ---------------------------------------------------------------- primes

def prime_above(P0: int, N: int) -> int:
    """The N-th prime strictly greater than P0 (N >= 1)."""
    if N < 1:
        raise ValueError("sentence index N must be at least 1")
    p = P0
    for _ in range(N):
        p = int(nextprime(p))
    return p


# ---------------------------------------------------------------- strict forms

def _strict_eps_exponent(n: int, prev_exponent: int | None, s_n: int) -> int:
    """eps_n = 2^-a_n with a_n large enough for I3, I8, N9 and vareps."""
    a = max(3 * n + 3, n + 1, 6)
    if prev_exponent is not None:
        a = max(a, prev_exponent + 2 * (s_n.bit_length() - 1) + 2)
    return a


def _strict_vareps(n: int) -> Fraction:
    # ratio 1/8 gives vareps_N > 4 * sum_{n>N} vareps_n
    return Fraction(1, 2 ** (3 * n + 1))


def _strict_l(n: int) -> int:
    # ratio 4 gives 1/l_{n-1} > sum_{k>=n} 1/l_k; 32*4^n > 20*2^n
    return 32 * 4 ** n


def _power_of_two_at_least(x) -> int:
    p = 1
    while p < x:
        p *= 2
    return p


def _strict_k_floor(n: int, eps: Fraction, s_n: int, s_prev: int, s_next: int,
                    prev_eps_k: Fraction | None) -> Fraction:
    """Lower bound on k_n collected from D, N10, N12, I4, F, N8."""
    need = max(
        100 / eps ** 3 + 1,
        Fraction(n, 1) / eps,
        Fraction(s_prev ** 2 * 2 ** n) / eps,
        Fraction(12 ** n),
        Fraction(s_next.bit_length() - 1, max(1, s_n.bit_length() - 1)),
    )
    if n == 0:
        need = max(need, 20 / eps + 1)
    if prev_eps_k is not None:
        need = max(need, prev_eps_k / eps + 1)
    return need


def _strict_k0_floor(eps0: Fraction, s0: int, s1: int) -> int:
    need = _strict_k_floor(0, eps0, s0, 1, s1, None)
    k = int(need) + 1
    while True:
        klb = hoeffding_klb(eps0 / 100, substitution_event_count(k, s0, s1))
        if k >= klb:
            return k
        k = klb


# ---------------------------------------------------------------- building

def _frac(v) -> Fraction:
    return Fraction(str(v)) if not isinstance(v, Fraction) else v


class _StageChooser:
    """Enforces the choice order: a same-stage parameter can only be read
    after it has been chosen."""

    def __init__(self):
        self.values: dict[str, object] = {}
        self.order: list[str] = []

    def choose(self, name: str, value):
        if name in self.values:
            raise RuntimeError(f"{name} chosen twice")
        expected = CHOICE_ORDER[len(self.order)]
        if name != expected:
            raise RuntimeError(f"chose {name} before {expected}")
        self.values[name] = value
        self.order.append(name)
        return value

    def __getitem__(self, name: str):
        if name not in self.values:
            raise RuntimeError(f"{name} read before it was chosen")
        return self.values[name]


def _e_prev(stages: Sequence[StageParams]) -> int:
    return stages[-1].e_n if stages else 1


def next_stage(history: Schedule | Sequence[StageParams], n: int,
               config: ScheduleConfig | None = None, P_N: int | None = None) -> StageParams:
    """Choose the parameters of stage ``n`` given stages ``0..n-1``."""
    if isinstance(history, Schedule):
        config = history.config
        P_N = history.P_N
        stages = list(history.stages[:n])
    else:
        stages = list(history)
    if config is None or P_N is None:
        raise ValueError("config and P_N are required with a bare stage list")
    if len(stages) != n:
        raise ValueError(f"stage {n} needs stages 0..{n - 1}")
    strict = config.mode == "strict"
    prev = stages[-1] if stages else None

    # derived from earlier stages
    e_prev = _e_prev(stages)
    s_n = 2 ** ((n + 1) * e_prev)
    K_n = prev.K_next if prev else 1
    q_n = prev.q_next if prev else 1
    p_n = prev.p_next if prev else 0
    alpha_n = prev.alpha_next if prev else Fraction(0)
    for key, derived in (("s", s_n), ("K", K_n), ("q", q_n), ("p", p_n)):
        given = config.override(key, n)
        if given is not None and int(given) != derived:
            raise InconsistentOverride(f"{key}_{n}={given} but the recurrences give {derived}")
    given_alpha = config.override("alpha", n)
    if given_alpha is not None and _frac(given_alpha) != alpha_n:
        raise InconsistentOverride(f"alpha_{n}={given_alpha} but the recurrence gives {alpha_n}")
    gamma_n = _gamma(stages, n)

    c = _StageChooser()
    Q1 = 2 ** e_prev if n >= 1 else 1
    given_Q1 = config.override("Q1", n)
    if given_Q1 is not None and int(given_Q1) != Q1:
        raise InconsistentOverride(f"Q1_{n}={given_Q1} but e({n - 1}) forces {Q1}")
    c.choose("Q1", Q1)

    vareps = config.override("vareps", n)
    c.choose("vareps", _frac(vareps) if vareps is not None and not strict else _strict_vareps(n))

    t = [min(st.vareps_n, Fraction(1, st.Q1_n)) for st in stages]
    t.append(min(c["vareps"], Fraction(1, c["Q1"])))
    mu_default = t[-1] * Fraction(1, 2 ** (n + 3)) / max(t)
    mu = config.override("mu", n)
    c.choose("mu", _frac(mu) if mu is not None and not strict else mu_default)

    if strict:
        prev_a = None if prev is None else (prev.eps_n.denominator.bit_length() - 1)
        eps = Fraction(1, 2 ** _strict_eps_exponent(n, prev_a, s_n))
    else:
        eps = _frac(config.override("eps", n) or Fraction(1, 3))
    c.choose("eps", eps)

    if strict:
        a = eps.denominator.bit_length() - 1
        e_n = n + a + 2
        e_n = max(e_n, e_prev + 1)
        step = (n + 1) * e_prev
        if n >= 1:
            e_n = -(-e_n // step) * step
    else:
        e_n = int(config.override("e", n) or 1)
    c.choose("e", e_n)
    s_next = 2 ** ((n + 2) * e_n)
    given_s = config.override("s", n + 1)
    if given_s is not None and int(given_s) != s_next:
        raise InconsistentOverride(f"s_{n + 1}={given_s} but e({n})={e_n} gives {s_next}")

    # kmax and k_n
    if n == 0:
        # relaxed stage 0 keeps a block size for letter-balanced words
        c.choose("kmax", None if strict else int(config.override("kmax", 0) or config.kmax))
        k = P_N
        if not strict and config.override("k", 0) is not None:
            k = int(config.override("k", 0))
        c.choose("k", k)
    else:
        if strict:
            s_prev = prev.s_n
            need = _strict_k_floor(n, eps, s_n, s_prev, s_next, prev.eps_n * prev.k_n)
            next_a = _strict_eps_exponent(n + 1, eps.denominator.bit_length() - 1, s_next)
            kmax = _power_of_two_at_least(max(2 ** next_a + 1,
                                              (eps.denominator.bit_length())))
            while kmax * kmax * s_n < need:
                kmax *= 2
            while True:
                k = kmax * kmax * s_n
                klb = hoeffding_klb(eps / 100, substitution_event_count(k, s_n, s_next))
                if k >= klb:
                    break
                kmax *= 2
        else:
            kmax = int(config.override("kmax", n) or config.kmax)
        c.choose("kmax", kmax)
        k = c["kmax"] ** 2 * s_n
        if not strict and config.override("k", n) is not None:
            k = int(config.override("k", n))
        c.choose("k", k)

    if n == 0 and config.alpha_bookkeeping:
        l = 1
    elif strict:
        l = _strict_l(n)
    else:
        l = int(config.override("l", n) or 2)
    c.choose("l", l)

    return StageParams(
        n=n, e_n=c["e"], s_n=s_n, s_next=s_next, Q1_n=c["Q1"],
        C1_n=s_n // c["Q1"], eps_n=c["eps"], vareps_n=c["vareps"], mu_n=c["mu"],
        gamma_n=gamma_n, kmax_n=c["kmax"], k_n=c["k"], l_n=c["l"], K_n=K_n,
        q_n=q_n, p_n=p_n, alpha_n=alpha_n, choice_log=tuple(c.order),
    )


def _gamma(stages: Sequence[StageParams], n: int) -> Fraction | None:
    if n < 1:
        return None
    s0 = stages[0]
    g1 = ((1 - Fraction(1, 4) - s0.eps_n) * (1 - 1 / (s0.eps_n * s0.k_n))
          * (1 - Fraction(1, s0.l_n)))
    g = g1
    for m in range(1, n):
        st = stages[m]
        g *= 1 - 10 * (1 / (st.k_n * st.eps_n) + Fraction(1, st.q_n)
                       + Fraction(1, st.l_n) + Fraction(1, st.Q1_n)
                       + stages[m - 1].eps_n)
    return g


def effective_P0(config: ScheduleConfig) -> int:
    """Strict mode raises P0 until k_0 = P_N meets the stage-0 requirements."""
    if config.mode != "strict":
        return config.P0
    eps0 = Fraction(1, 2 ** _strict_eps_exponent(0, None, 2))
    e0 = 0 + (eps0.denominator.bit_length() - 1) + 2
    floor_k0 = _strict_k0_floor(eps0, 2, 2 ** (2 * e0))
    return max(config.P0, floor_k0)


def build_schedule(config: ScheduleConfig, stages: int) -> Schedule:
    """Build stages ``0..stages-1`` and audit them."""
    P0 = effective_P0(config)
    P_N = prime_above(P0, config.N)
    built: list[StageParams] = []
    for n in range(stages):
        built.append(next_stage(built, n, config=config, P_N=P_N))
    sched = Schedule(config, tuple(built), P_N, P0)
    return replace(sched, audits=tuple(check_requirements(sched)))


def relaxed_violations(sched: Schedule) -> None:
    """Raise :class:`RelaxedViolation` when a relaxed schedule fails audits."""
    failed = sched.failed()
    if failed:
        raise RelaxedViolation(failed)


# ---------------------------------------------------------------- audits

def _geometric_tail(values: Sequence[Fraction], start: int) -> tuple[Fraction, bool]:
    """Sum of values[start:] plus a geometric tail bound when the prefix
    decays by a factor of at least 2 per step."""
    prefix = sum(values[start:], Fraction(0))
    ratios_ok = all(values[i + 1] * 2 <= values[i] for i in range(len(values) - 1))
    if not ratios_ok or not values:
        return prefix, False
    worst = max((values[i + 1] / values[i] for i in range(len(values) - 1)),
                default=Fraction(1, 2))
    tail = values[-1] * worst / (1 - worst)
    return prefix + tail, True


def check_requirements(sched: Schedule, sibling: Schedule | None = None) -> list[RequirementReport]:
    """One report per requirement id per stage.

    ``sibling`` is the schedule for sentence index N-1; without it the
    cross-N requirements B and E are deferred.
    """
    st = sched.stages
    strict = sched.mode == "strict"
    out: list[RequirementReport] = []
    eps = [x.eps_n for x in st]
    vareps = [x.vareps_n for x in st]
    inv_l = [Fraction(1, x.l_n) for x in st]
    last = len(st) - 1

    def add(rid, n, ok, witness, status=None):
        if status is None:
            status = "pass" if ok else "fail"
        out.append(RequirementReport(rid, n, status, witness))

    for x in st:
        n = x.n
        e_prev = st[n - 1].e_n if n else 1
        s_prev = st[n - 1].s_n if n else 1
        # A
        add("A", n, x.s_n == 2 ** ((n + 1) * e_prev),
            f"s_{n}={_short(x.s_n)} vs 2^({n + 1}*{_short(e_prev)})")
        # B, E
        if sibling is None or n >= len(sibling.stages):
            add("B", n, None, "needs the N-1 schedule", "deferred")
            add("E", n, None, "needs the N-1 schedule", "deferred")
        else:
            o = sibling.stages[n]
            add("B", n, x.k_n >= o.k_n, f"k_{n}(N)={_short(x.k_n)} >= k_{n}(N-1)={_short(o.k_n)}")
            add("E", n, x.l_n >= o.l_n, f"l_{n}(N)={_short(x.l_n)} >= l_{n}(N-1)={_short(o.l_n)}")
        # C and N8: s_{n+1} <= s_n^{k_n}, compared through exponents of 2
        lg_next = x.s_next.bit_length() - 1
        lg_n = x.s_n.bit_length() - 1
        ok_c = lg_next <= x.k_n * lg_n
        add("C", n, ok_c, f"log2 s_{n + 1}={_short(lg_next)} <= k_{n}*log2 s_{n}={_short(x.k_n * lg_n)}")
        # D
        add("D", n, x.k_n * x.eps_n ** 3 > 100,
            f"1/k_{n}={_short(Fraction(1, x.k_n))} < eps^3/100={_short(x.eps_n ** 3 / 100)}")
        # F: certified when k_m >= 12^m along the computed prefix
        ok_f = all(y.k_n >= 12 ** y.n for y in st[: n + 1])
        add("F", n, ok_f, f"k_m >= 12^m for m<={n} bounds sum 6^m/k_m by 2",
            "certified" if ok_f else "fail")
        add("G", n, None, "checked by the torus gate when a code is emitted", "deferred")
        # I1: eps_n <= eps_0 2^-n
        ok_i1 = all(y.eps_n <= eps[0] / 2 ** y.n for y in st[: n + 1])
        add("I1", n, ok_i1, "eps_m <= eps_0 2^-m for m<=" + str(n),
            "certified" if ok_i1 else "fail")
        add("I2", n, Fraction(2 ** n, 2 ** x.e_n) < x.eps_n,
            f"2^{n}*2^-{_short(x.e_n)} < eps_{n}={_short(x.eps_n)}")
        if n == 0:
            add("I3", n, True, "no predecessor at n=0")
        else:
            add("I3", n, 2 * x.eps_n * x.s_n ** 2 < eps[n - 1],
                f"2*eps_{n}*s_{n}^2={_short(2 * x.eps_n * x.s_n ** 2)} < eps_{n - 1}={_short(eps[n - 1])}")
        ratio = x.eps_n * x.k_n / s_prev ** 2
        add("I4", n, ratio >= 2 ** n, f"eps_n k_n / s_(n-1)^2 = {_short(ratio)} >= 2^{n}")
        add("I5", n, ok_i1, "equivalent to I1 (product of 1-eps_n positive)",
            "certified" if ok_i1 else "fail")
        K_next = x.K_next
        pow2 = K_next % sched.P_N == 0 and _is_power_of_two(K_next // sched.P_N)
        if n == 0:
            add("I6", n, x.k_n == sched.P_N, f"k_0={_short(x.k_n)} vs P_N={_short(sched.P_N)}")
        else:
            add("I6", n, pow2 and x.k_n % x.s_n == 0 and _is_power_of_two(x.k_n // x.s_n),
                f"k_{n}={_short(x.k_n)}=2^l*s_{n} and K_{n + 1}=P_N*2^l")
        add("I7", n, _is_power_of_two(x.s_n), f"s_{n}={_short(x.s_n)}")
        add("I8", n, x.eps_n < Fraction(1, 2 ** n), f"eps_{n}={_short(x.eps_n)} < 2^-{n}")
        # N1
        big = x.l_n > 20 * 2 ** n
        if n == 0:
            add("N1", n, big, f"l_0={_short(x.l_n)} > 20")
        else:
            total, certified = _geometric_tail(inv_l, n)
            ok = big and inv_l[n - 1] > total
            status = None if certified or not ok else "deferred"
            add("N1", n, ok, f"l_{n}={_short(x.l_n)} > {_short(20 * 2 ** n)}; 1/l_{n - 1} > tail {_short(total)}"
                + ("" if certified else " (prefix only)"), status)
        # N2
        total, certified = _geometric_tail(vareps, n + 1)
        ok = vareps[n] > 4 * total
        add("N2", n, ok, f"vareps_{n}={_short(vareps[n])} > 4*{_short(total)}",
            None if certified or not ok else "deferred")
        # N3 on the computed horizon
        if n == 0:
            add("N3", n, True, "no predecessor at n=0")
        else:
            qs = [y.q_n for y in st] + [st[-1].q_next]
            worst = Fraction(0)
            for m in range(n + 1, len(qs)):
                acc = sum((3 * vareps[kk] * qs[kk + 1] for kk in range(n, min(m, len(st)))),
                          Fraction(0))
                worst = max(worst, acc / qs[m])
            add("N3", n, vareps[n - 1] > worst,
                f"vareps_{n - 1}={_short(vareps[n - 1])} > sup over m<={_short(len(qs) - 1)}: {_short(worst)}",
                None if vareps[n - 1] > worst and n < last else
                ("deferred" if vareps[n - 1] > worst else None))
        # N4
        t = [min(y.vareps_n, Fraction(1, y.Q1_n)) for y in st[: n + 1]]
        bound = t[n] * Fraction(1, 2 ** (n + 2)) / max(t)
        add("N4", n, 0 < x.mu_n < bound, f"0 < mu_{n}={_short(x.mu_n)} < {_short(bound)}")
        # N5
        ok5 = all(y.Q1_n >= 2 ** y.n for y in st[1: n + 1])
        add("N5", n, ok5, f"Q1_m >= 2^m for 1<=m<={n}", "certified" if ok5 else "fail")
        add("N6", n, None, "superseded by the gate G", "deferred")
        lg_n1 = x.s_next.bit_length() - 1
        add("N7", n, x.s_next > x.s_n and lg_n1 % max(1, lg_n) == 0,
            f"s_{n + 1}=2^{_short(lg_n1)} is a power of s_{n}=2^{_short(lg_n)}")
        add("N8", n, ok_c, f"s_{n + 1} <= s_{n}^k_{n}")
        ok9 = x.eps_n < x.vareps_n and (n == 0 or x.eps_n < eps[n - 1])
        if n == 0:
            ok9 = ok9 and x.eps_n < Fraction(1, 40)
        add("N9", n, ok9, f"eps_{n}={_short(x.eps_n)}, vareps_{n}={_short(x.vareps_n)}"
            + (", eps_0 < 1/40" if n == 0 else f", eps_{n - 1}={_short(eps[n - 1])}"))
        ok10 = x.k_n * x.eps_n ** 3 > 4
        klb_ok = True
        if strict:
            klb = hoeffding_klb(x.eps_n / 100, substitution_event_count(x.k_n, x.s_n, x.s_next))
            klb_ok = x.k_n >= klb
        status10 = None
        if ok10 and not strict:
            status10 = "strict-only"
        add("N10", n, ok10 and klb_ok, f"1/k_{n} < eps^3/4; Hoeffding bound "
            + ("checked" if strict else "checked in strict mode only"), status10)
        add("N11", n, None, "no closed form for delta(mu, q, s) is given", "deferred")
        if n == 0:
            add("N12", n, x.eps_n * x.k_n > 20, f"eps_0 k_0={_short(x.eps_n * x.k_n)} > 20")
        else:
            prev = st[n - 1]
            add("N12", n, x.eps_n * x.k_n > prev.eps_n * prev.k_n,
                f"eps_{n} k_{n}={_short(x.eps_n * x.k_n)} > {_short(prev.eps_n * prev.k_n)}")
        add("N13", n, None, f"gamma_{n}={_short(x.gamma_n)}; the dbar bound needs circular words",
            "deferred")
    return out


def _short(v) -> str:
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return _short(v.numerator)
        return f"{_short(v.numerator)}/{_short(v.denominator)}"
    if isinstance(v, int) and not isinstance(v, bool) and v.bit_length() > 128:
        return f"<{v.bit_length()}-bit integer>"
    return str(v)


def _is_power_of_two(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


# ---------------------------------------------------------------- alpha

def alpha_bounds(sched: Schedule, n: int) -> tuple[Fraction, Fraction]:
    """Interval ``[alpha_n, alpha_n + 2/q_{n+1}]`` containing the limit."""
    st = sched.stages
    if n >= len(st):
        raise ValueError(f"stage {n} not in schedule")
    qs = [x.q_n for x in st] + [st[-1].q_next]
    for m in range(n + 1, len(qs) - 1):
        if qs[m + 1] < 2 * qs[m]:
            raise GrowthTooSlow(f"q_{m + 1}={_short(qs[m + 1])} < 2*q_{m}={_short(2 * qs[m])}")
    if qs[-1] < 2:
        raise GrowthTooSlow(f"q_{len(qs) - 1}={qs[-1]} < 2 cannot start geometric growth")
    return st[n].alpha_n, st[n].alpha_n + Fraction(2, qs[n + 1])


@dataclass(frozen=True)
class AlphaComparison:
    result: str           # "less", "equal", "inconclusive"
    method: str           # "interval", "monotone", "identical", ""
    witness: str


def compare_alpha(schedN: Schedule, schedM: Schedule, n: int) -> AlphaComparison:
    """Certify alpha(N) < alpha(M) for N > M."""
    if schedN.stages[: n + 1] == schedM.stages[: n + 1] and schedN.P_N == schedM.P_N:
        return AlphaComparison("equal", "identical", "same schedule prefix")
    for m in range(n + 1):
        a, b = schedN.stages[m], schedM.stages[m]
        if m >= 1 and a.k_n < b.k_n:
            raise PremiseViolated(f"k_{m}(N)={a.k_n} < k_{m}(M)={b.k_n}")
        if a.l_n < b.l_n:
            raise PremiseViolated(f"l_{m}(N)={a.l_n} < l_{m}(M)={b.l_n}")
    try:
        loN, hiN = alpha_bounds(schedN, n)
        loM, hiM = alpha_bounds(schedM, n)
        if hiN < loM:
            return AlphaComparison("less", "interval",
                                   f"alpha(N) <= {_short(hiN)} < {_short(loM)} <= alpha(M)")
    except GrowthTooSlow:
        pass
    qN = [x.q_n for x in schedN.stages[: n + 1]] + [schedN.stages[n].q_next]
    qM = [x.q_n for x in schedM.stages[: n + 1]] + [schedM.stages[n].q_next]
    if len(qN) > 1 and qN[1] > qM[1] and all(a >= b for a, b in zip(qN, qM)):
        return AlphaComparison(
            "less", "monotone",
            f"q_1(N)={_short(qN[1])} > q_1(M)={_short(qM[1])} and q_m(N) >= q_m(M) for m<={n + 1}; "
            "k,l monotone so every later q_m(N) >= q_m(M)")
    return AlphaComparison("inconclusive", "", "intervals overlap and q_1 does not separate")


# ---------------------------------------------------------------- JSON

def _enc(v):
    if isinstance(v, Fraction):
        return {"num": str(v.numerator), "den": str(v.denominator)}
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, int):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_enc(x) for x in v]
    return v


def _dec_frac(d) -> Fraction:
    return Fraction(int(d["num"]), int(d["den"]))


def _lift_digit_limit():
    # decimal big integers can exceed the default int<->str digit limit
    if hasattr(sys, "set_int_max_str_digits"):
        sys.set_int_max_str_digits(0)


def schedule_to_json(sched: Schedule) -> str:
    _lift_digit_limit()
    cfg = sched.config
    doc = {
        "schema": "pi01-forge/schedule/1",
        "config": {"mode": cfg.mode, "N": cfg.N, "P0": cfg.P0, "kmax": cfg.kmax,
                   "alpha_bookkeeping": cfg.alpha_bookkeeping,
                   "overrides": [list(x) for x in cfg.overrides]},
        "P_N": str(sched.P_N),
        "P0_effective": str(sched.P0_effective),
        "stages": [{k: _enc(v) for k, v in asdict(s).items()} for s in sched.stages],
        "audits": [asdict(r) for r in sched.audits],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


_FRACTION_FIELDS = {"eps_n", "vareps_n", "mu_n", "gamma_n", "alpha_n"}


def schedule_from_json(text: str) -> Schedule:
    _lift_digit_limit()
    doc = json.loads(text)
    c = doc["config"]
    config = ScheduleConfig(mode=c["mode"], N=c["N"], P0=c["P0"], kmax=c["kmax"],
                            alpha_bookkeeping=c["alpha_bookkeeping"],
                            overrides=tuple(tuple(x) for x in c["overrides"]))
    stages = []
    for s in doc["stages"]:
        kw = {}
        for k, v in s.items():
            if k == "choice_log":
                kw[k] = tuple(v)
            elif k in _FRACTION_FIELDS:
                kw[k] = None if v is None else _dec_frac(v)
            elif k == "n":
                kw[k] = int(v)
            else:
                kw[k] = None if v is None else int(v)
        stages.append(StageParams(**kw))
    audits = tuple(RequirementReport(**r) for r in doc["audits"])
    return Schedule(config, tuple(stages), int(doc["P_N"]), int(doc["P0_effective"]), audits)


def toy_config(N: int = 1, kmax: int = 4, P0: int = 3, **extra) -> ScheduleConfig:
    """Small relaxed configuration used by the word, circular and torus layers.

    k_0 is set to ``2*kmax*P_N`` so that stage-1 words can be exactly
    letter-balanced while keeping P_N as a factor of every K_n.
    """
    P_N = prime_above(P0, N)
    overrides = {"k_0": str(2 * kmax * P_N), "e": "1", "eps": "1/3", "l": "2"}
    overrides.update({k: str(v) for k, v in extra.items()})
    return ScheduleConfig(mode="relaxed", N=N, P0=P0, kmax=kmax,
                          overrides=tuple(sorted(overrides.items())))

"""Exact width-scaling exponent algebra and regime classification.

A quantity that behaves like ``width**p`` as the width n grows is tracked
by its exponent p, an exact rational. The distinguished NEG_INF element
encodes an exactly-zero quantity. The calculus is max-plus:

    product of quantities   -> exponents add
    sum of quantities       -> exponents max (assuming no exact cancellation)
    inner product over a fixed-size dimension  -> exponents add
    inner product over the width dimension     -> exponents add, plus one

From these rules the closed-form conditions for an adapter's update terms
and output feature to stay O(1) follow, for Adam-style normalized updates
and for raw SGD updates. Everything here is exact Fraction arithmetic;
floats never enter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

GammaLike = Union["GammaExp", Fraction, int, str]


@dataclass(frozen=True)
class GammaExp:
    """An exact scaling exponent: a rational number or NEG_INF.

    NEG_INF absorbs addition (zero times anything is zero) and loses every
    max (adding zero changes nothing).
    """

    value: Optional[Fraction]  # None encodes NEG_INF

    @property
    def is_neg_inf(self) -> bool:
        return self.value is None

    @property
    def finite(self) -> bool:
        return self.value is not None

    def __add__(self, other: GammaLike) -> "GammaExp":
        other = as_gamma(other)
        if self.value is None or other.value is None:
            return NEG_INF
        return GammaExp(self.value + other.value)

    __radd__ = __add__

    def __neg__(self) -> "GammaExp":
        if self.value is None:
            raise ValueError("cannot negate -inf exponent")
        return GammaExp(-self.value)

    def __eq__(self, other) -> bool:
        try:
            other = as_gamma(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.value == other.value

    def __hash__(self) -> int:
        return hash(self.value)

    def __lt__(self, other: GammaLike) -> bool:
        other = as_gamma(other)
        if self.value is None:
            return other.value is not None
        if other.value is None:
            return False
        return self.value < other.value

    def __le__(self, other: GammaLike) -> bool:
        other = as_gamma(other)
        return self == other or self < other

    def __gt__(self, other: GammaLike) -> bool:
        return as_gamma(other) < self

    def __ge__(self, other: GammaLike) -> bool:
        return as_gamma(other) <= self

    def __float__(self) -> float:
        if self.value is None:
            return float("-inf")
        return float(self.value)

    def __str__(self) -> str:
        if self.value is None:
            return "-inf"
        return str(self.value)

    def __repr__(self) -> str:
        return f"GammaExp({self})"


NEG_INF = GammaExp(None)
ZERO = GammaExp(Fraction(0))
ONE = GammaExp(Fraction(1))


def as_gamma(x: GammaLike) -> GammaExp:
    """Coerce ints, Fractions, and 'p/q' / '-inf' strings to GammaExp."""
    if isinstance(x, GammaExp):
        return x
    if isinstance(x, (int, Fraction)):
        return GammaExp(Fraction(x))
    if isinstance(x, str):
        return parse_gamma(x)
    raise TypeError(f"cannot interpret {x!r} as an exponent")


def parse_gamma(text: str) -> GammaExp:
    """Parse an exponent rendered as 'p/q', an integer, a decimal, or '-inf'."""
    s = text.strip().lower()
    if s in ("-inf", "-infinity", "neg_inf"):
        return NEG_INF
    try:
        return GammaExp(Fraction(s))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a rational exponent: {text!r}") from exc


def gmul(u: GammaLike, v: GammaLike) -> GammaExp:
    """Exponent of a product: u + v, with NEG_INF absorbing."""
    return as_gamma(u) + as_gamma(v)


def gadd(u: GammaLike, v: GammaLike) -> GammaExp:
    """Exponent of a sum: max(u, v).

    The caller asserts the two quantities do not exactly cancel; with
    cancellation the sum's exponent can be anything below the max.
    """
    u, v = as_gamma(u), as_gamma(v)
    return u if v < u else v


def contract_rank(u: GammaLike, v: GammaLike) -> GammaExp:
    """Inner product over a width-independent dimension: exponents add."""
    return gmul(u, v)


def contract_width(u: GammaLike, v: GammaLike) -> GammaExp:
    """Inner product over the width-n dimension: exponents add plus one.

    Summing n aligned terms of size n^(u+v) gives n^(u+v+1).
    """
    return gmul(gmul(u, v), ONE)


@dataclass(frozen=True)
class RegimeReport:
    """Predicted exponents and verdicts for one (init, learning-rate) config.

    Flags:
      stable            adapter output feature is exactly O(1)  (gamma_zB = 0)
      bounded           adapter output does not grow            (gamma_zB <= 0)
      efficient         stable and both linear update terms are O(1)
      internally_stable rank-space feature is O(1)              (gamma_zA = 0)
      robust_in_etaA    gamma_d2 is independent of etaA (the init wins the max)
      robust_in_etaB    gamma_d1 is independent of etaB (the init wins the max)
    """

    a0: GammaExp
    b0: GammaExp
    eta_a: GammaExp
    eta_b: GammaExp
    gamma_d1: GammaExp
    gamma_d2: GammaExp
    gamma_d3: GammaExp
    gamma_zA: GammaExp
    gamma_zB: GammaExp
    stable: bool
    bounded: bool
    efficient: bool
    internally_stable: bool
    robust_in_etaA: bool
    robust_in_etaB: bool
    require_internal: bool = False
    # set for per-step SGD reports; None for Adam closed forms
    step: Optional[int] = None
    gamma_a: Optional[GammaExp] = None
    gamma_b: Optional[GammaExp] = None

    @property
    def satisfied(self) -> bool:
        """Efficient, and internally stable too when that was required."""
        if self.require_internal:
            return self.efficient and self.internally_stable
        return self.efficient

    CSV_HEADER = (
        "a0,b0,eta_a,eta_b,gamma_d1,gamma_d2,gamma_d3,gamma_za,gamma_zb,"
        "stable,bounded,efficient,internally_stable,robust_in_eta_a,robust_in_eta_b"
    )

    def csv_row(self) -> str:
        cells = [
            self.a0, self.b0, self.eta_a, self.eta_b,
            self.gamma_d1, self.gamma_d2, self.gamma_d3,
            self.gamma_zA, self.gamma_zB,
        ]
        flags = [
            self.stable, self.bounded, self.efficient,
            self.internally_stable, self.robust_in_etaA, self.robust_in_etaB,
        ]
        return ",".join([str(c) for c in cells] + [str(f).lower() for f in flags])


def adam_regime(
    a0: GammaLike,
    b0: GammaLike,
    eta_a: GammaLike,
    eta_b: GammaLike,
    require_internal: bool = False,
) -> RegimeReport:
    """Closed-form regime for Adam-style training, where per-coordinate
    normalized updates make every raw gradient O(1).

    With g-exponents zero, each factor's running exponent is the max of its
    init exponent and its learning-rate exponent, and the update terms are
    width contractions of those factors:

        gamma_d1 = max(b0, eta_b) + eta_a + 1
        gamma_d2 = max(a0, eta_a) + eta_b + 1
        gamma_zB = max(a0, eta_a) + max(b0, eta_b) + 1
        gamma_zA = max(a0, eta_a) + 1
        gamma_d3 = eta_a + eta_b + 1
    """
    a0, b0 = as_gamma(a0), as_gamma(b0)
    eta_a, eta_b = as_gamma(eta_a), as_gamma(eta_b)
    if a0.is_neg_inf and b0.is_neg_inf:
        raise ValueError(
            "both factors initialized to zero: every gradient vanishes and "
            "no training step can move the adapter"
        )
    a_run = gadd(a0, eta_a)
    b_run = gadd(b0, eta_b)
    gamma_d1 = contract_width(b_run, eta_a)
    gamma_d2 = contract_width(a_run, eta_b)
    gamma_zB = contract_width(a_run, b_run)
    gamma_zA = contract_width(a_run, ZERO)
    gamma_d3 = contract_width(eta_a, eta_b)
    stable = gamma_zB == ZERO
    return RegimeReport(
        a0=a0, b0=b0, eta_a=eta_a, eta_b=eta_b,
        gamma_d1=gamma_d1, gamma_d2=gamma_d2, gamma_d3=gamma_d3,
        gamma_zA=gamma_zA, gamma_zB=gamma_zB,
        stable=stable,
        bounded=gamma_zB <= ZERO,
        efficient=stable and gamma_d1 == ZERO and gamma_d2 == ZERO,
        internally_stable=gamma_zA == ZERO,
        robust_in_etaA=a0 >= eta_a,
        robust_in_etaB=b0 >= eta_b,
        require_internal=require_internal,
    )


def sgd_regime(
    a0: GammaLike,
    b0: GammaLike,
    eta_a: GammaLike,
    eta_b: GammaLike,
    steps: int,
) -> list[RegimeReport]:
    """Per-step regime for raw SGD in the rank-one adapter model.

    SGD gradients are not normalized: the gradient of the input factor
    scales like the output factor, and vice versa with one width
    contraction. Iterating the max-plus recurrences

        gamma_a[t] = max(gamma_a[t-1], eta_a + gamma_b[t-1])
        gamma_b[t] = max(gamma_b[t-1], eta_b + gamma_a[t-1] + 1)

    gives, for the step from t-1 to t,

        gamma_d1 = eta_a + 2*gamma_b[t-1] + 1
        gamma_d2 = eta_b + 2*gamma_a[t-1] + 2
        gamma_f  = gamma_a[t-1] + gamma_b[t-1] + 1   (the output scale)

    reported with gamma_zB = gamma_f and gamma_zA = gamma_a[t-1] + 1.
    """
    a0, b0 = as_gamma(a0), as_gamma(b0)
    eta_a, eta_b = as_gamma(eta_a), as_gamma(eta_b)
    if steps < 1:
        raise ValueError(f"need at least one step, got {steps}")
    if a0.is_neg_inf and b0.is_neg_inf:
        raise ValueError(
            "both factors initialized to zero: every gradient vanishes and "
            "no training step can move the adapter"
        )
    reports: list[RegimeReport] = []
    ga, gb = a0, b0
    for t in range(1, steps + 1):
        gamma_d1 = eta_a + gb + gb + ONE
        gamma_d2 = eta_b + ga + ga + ONE + ONE
        gamma_f = ga + gb + ONE
        gamma_zA = ga + ONE
        gamma_d3 = eta_a + eta_b + ga + gb + ONE + ONE
        stable = gamma_f == ZERO
        # the init decides the factor's exponent iff it wins (or ties) the max
        robust_a = ga >= eta_a + gb
        robust_b = gb >= eta_b + ga + ONE
        reports.append(RegimeReport(
            a0=a0, b0=b0, eta_a=eta_a, eta_b=eta_b,
            gamma_d1=gamma_d1, gamma_d2=gamma_d2, gamma_d3=gamma_d3,
            gamma_zA=gamma_zA, gamma_zB=gamma_f,
            stable=stable,
            bounded=gamma_f <= ZERO,
            efficient=stable and gamma_d1 == ZERO and gamma_d2 == ZERO,
            internally_stable=gamma_zA == ZERO,
            robust_in_etaA=robust_a,
            robust_in_etaB=robust_b,
            step=t,
            gamma_a=ga,
            gamma_b=gb,
        ))
        ga, gb = gadd(ga, eta_a + gb), gadd(gb, eta_b + ga + ONE)
    return reports


def default_lr_grid(lo: Fraction = Fraction(-2), hi: Fraction = Fraction(0),
                    step: Fraction = Fraction(1, 4)) -> list[GammaExp]:
    """Rational exponent grid lo, lo+step, ..., hi."""
    grid = []
    x = lo
    while x <= hi:
        grid.append(GammaExp(x))
        x += step
    return grid


@dataclass(frozen=True)
class SchemeVerdict:
    scheme: str
    stable: bool
    efficient: bool
    robust: bool

    def csv_row(self) -> str:
        return ",".join([
            self.scheme,
            str(self.stable).lower(),
            str(self.efficient).lower(),
            str(self.robust).lower(),
        ])


#: init-exponent pairs for the three named schemes under uniform Adam rates
SCHEME_EXPONENTS: dict[str, tuple[GammaExp, GammaExp]] = {
    "init_b": (NEG_INF, ZERO),
    "init_a": (GammaExp(Fraction(-1)), NEG_INF),
    "init_ab": (GammaExp(Fraction(-1, 2)), GammaExp(Fraction(-1, 2))),
}


def classify_table(
    configs: Optional[Iterable[tuple[str, GammaLike, GammaLike]]] = None,
    lr_grid: Optional[Sequence[GammaLike]] = None,
) -> list[SchemeVerdict]:
    """Scheme comparison table under uniform Adam learning rates.

    For each (scheme, a0, b0) the uniform-rate grid is scanned:
      stable     some rate keeps the output feature exactly O(1)
      efficient  some rate additionally keeps both linear updates O(1)
      robust     some efficient rate at which both init exponents win their
                 maxes, so lowering either rate leaves the verdict intact
    """
    if configs is None:
        configs = [(name, a0, b0) for name, (a0, b0) in SCHEME_EXPONENTS.items()]
    grid = [as_gamma(g) for g in (lr_grid or default_lr_grid())]
    out = []
    for name, a0, b0 in configs:
        reports = [adam_regime(a0, b0, eta, eta) for eta in grid]
        stable = any(r.stable for r in reports)
        efficient = any(r.efficient for r in reports)
        robust = any(
            r.efficient and r.robust_in_etaA and r.robust_in_etaB for r in reports
        )
        out.append(SchemeVerdict(name, stable, efficient, robust))
    return out

"""Closed-form step bounds and critical batch sizes.

Lower curve:  K_lo(b) = A b / ((eps^2 - (C + D)) b - B),  b > B / (eps^2 - (C + D))
Upper curve:  K_up(b) = E b / ((delta eps^2 + G) b - F),  b > F / (delta eps^2 + G)

Both are decreasing and convex in b; K(b) * b has a unique minimizer at
twice the domain threshold.  Batch size is a positive real here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .optimizer import fmt

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class OutOfDomainError(ValueError):
    def __init__(self, message, threshold=None):
        super().__init__(message)
        self.threshold = threshold


class InvalidConstantsError(ValueError):
    pass


@dataclass(frozen=True)
class LowerBoundInputs:
    alpha: float
    beta: float
    gamma: float
    d: int
    dist: float
    h_cap: float
    sigma2: float
    p2: float
    h0_star: float


@dataclass(frozen=True)
class UpperBoundInputs:
    alpha: float
    beta: float
    gamma: float
    x_star: float
    sigma2: float
    p2: float
    c1: float
    c2: float


def lower_constants(inp: LowerBoundInputs):
    """(A, B, C, D) of the lower step bound."""
    if inp.h0_star <= 0:
        raise ZeroDivisionError("h0_star must be positive")
    tb = 1.0 - inp.beta
    tg = 1.0 - inp.gamma
    a = inp.d * inp.dist * inp.h_cap / (2.0 * inp.alpha * tb)
    b = inp.sigma2 * inp.alpha / (2.0 * tb * tg**2 * inp.h0_star)
    c = inp.p2 * inp.alpha / (2.0 * tb * tg**2 * inp.h0_star)
    d = math.sqrt(inp.d * inp.dist * (inp.sigma2 + inp.p2)) * inp.beta / tb
    return a, b, c, d


class UpperConstants(NamedTuple):
    E: float
    F: float
    G: float

    @property
    def vacuous(self):
        return self.F <= 0


def upper_constants(inp: UpperBoundInputs) -> UpperConstants:
    """(E, F, G) of the upper step bound; ``.vacuous`` when F <= 0."""
    tb = 1.0 - inp.beta
    tg = 1.0 - inp.gamma
    e = inp.x_star / (2.0 * inp.alpha * tb)
    f = inp.sigma2 * (inp.c1 * inp.alpha * tg - 2.0 * inp.c2 * inp.beta) / (2.0 * tb)
    g = inp.c2 * inp.beta * inp.p2 / tb
    return UpperConstants(e, f, g)


@dataclass(frozen=True)
class BoundConstants:
    A: float = 0.0
    B: float = 0.0
    C: float = 0.0
    D: float = 0.0
    E: float = 0.0
    F: float = 0.0
    G: float = 0.0
    eps: float = 0.1
    delta: float = 0.01

    @classmethod
    def from_inputs(cls, lower: LowerBoundInputs, upper: UpperBoundInputs, eps=0.1, delta=0.01):
        a, b, c, d = lower_constants(lower)
        e, f, g = upper_constants(upper)
        return cls(a, b, c, d, e, f, g, eps, delta)

    @property
    def lower_gap(self):
        """eps^2 - (C + D); the lower curve exists only when positive."""
        return self.eps**2 - (self.C + self.D)

    @property
    def upper_rate(self):
        return self.delta * self.eps**2 + self.G

    @property
    def lower_valid(self):
        return self.lower_gap > 0

    @property
    def upper_valid(self):
        return self.upper_rate > 0 and self.F > 0

    @property
    def lower_threshold(self):
        return self.B / self.lower_gap

    @property
    def upper_threshold(self):
        return self.F / self.upper_rate

    @property
    def lower_asymptote(self):
        return self.A / self.lower_gap

    @property
    def upper_asymptote(self):
        return self.E / self.upper_rate


def lower_steps(b, k: BoundConstants):
    if not k.lower_valid:
        raise OutOfDomainError(
            f"lower curve undefined: eps^2 = {k.eps**2:g} <= C + D = {k.C + k.D:g}"
        )
    thr = k.lower_threshold
    if not b > thr:
        raise OutOfDomainError(f"b = {b:g} must exceed {thr:.17g}", thr)
    return k.A * b / (k.lower_gap * b - k.B)


def upper_steps(b, k: BoundConstants):
    """Upper step bound; NaN when the curve is not informative (F <= 0)."""
    if k.F <= 0 or k.upper_rate <= 0:
        return math.nan
    thr = k.upper_threshold
    if not b > thr:
        raise OutOfDomainError(f"b = {b:g} must exceed {thr:.17g}", thr)
    return k.E * b / (k.upper_rate * b - k.F)


class CriticalBatch(NamedTuple):
    b: Optional[float]
    sfo: Optional[float]
    informative: bool = True
    reason: str = ""


def critical_batch_lower(k: BoundConstants) -> CriticalBatch:
    if not k.lower_valid:
        raise OutOfDomainError("lower curve undefined: eps^2 <= C + D")
    if k.B <= 0:
        return CriticalBatch(None, None, False, "B = 0: K(b) b increases on its whole domain")
    gap = k.lower_gap
    return CriticalBatch(2.0 * k.B / gap, 4.0 * k.A * k.B / gap**2)


def critical_batch_upper(k: BoundConstants) -> CriticalBatch:
    if k.F <= 0:
        return CriticalBatch(None, None, False, "F <= 0: upper bound not informative")
    if k.upper_rate <= 0:
        return CriticalBatch(None, None, False, "delta eps^2 + G <= 0")
    rate = k.upper_rate
    return CriticalBatch(2.0 * k.F / rate, 4.0 * k.E * k.F / rate**2)


def fit_condition_residuals(k: BoundConstants):
    """Signed residuals of the two conditions under which b_* ~ b^* and the
    two minimum SFO values agree.  Both are zero when they match exactly."""
    ef = k.E * k.F
    ab = k.A * k.B
    if ef < 0 or ab < 0:
        raise InvalidConstantsError(f"need E*F >= 0 and A*B >= 0, got {ef:g}, {ab:g}")
    cd = k.C + k.D
    e2 = k.eps**2
    r1 = cd * k.F + k.B * k.G - (k.F - k.delta * k.B) * e2
    sef, sab = math.sqrt(ef), math.sqrt(ab)
    r2 = cd * sef + k.G * sab - (sef - k.delta * sab) * e2
    return r1, r2


class CurveRow(NamedTuple):
    b: float
    k_lower: Optional[float]
    k_upper: Optional[float]
    sfo_lower: Optional[float]
    sfo_upper: Optional[float]


def _maybe(fn, b, k):
    try:
        v = fn(b, k)
    except OutOfDomainError:
        return None
    return None if math.isnan(v) else v


def curve_table(k: BoundConstants, grid):
    rows = []
    for b in grid:
        lo = _maybe(lower_steps, b, k) if k.lower_valid else None
        up = _maybe(upper_steps, b, k)
        rows.append(CurveRow(
            b, lo, up,
            None if lo is None else lo * b,
            None if up is None else up * b,
        ))
    return rows


def curve_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "k_lower", "k_upper", "sfo_lower", "sfo_upper"])
    for r in rows:
        w.writerow(["" if v is None else fmt(v) for v in r])
    return buf.getvalue()


def golden_section_minimize(f, lo, hi, xtol=1e-12, max_iter=500):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``.

    Stops once the bracket is narrower than ``xtol * |x|``.
    """
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol * max(abs(c), abs(d)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = c if fc < fd else d
    return x, min(fc, fd)

"""
Small statistics toolkit for the benchmark analysis.

Pure Python on purpose: every routine here is checked against hand-derived
values and an independent reference, so nothing is delegated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class StatsError(ValueError):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


def _sample(values: Sequence[float]) -> list[float]:
    xs = [float(v) for v in values]
    if not xs:
        raise StatsError("empty_sample")
    if not all(math.isfinite(v) for v in xs):
        raise StatsError("non_finite", "sample contains NaN or infinity")
    return xs


def mean(values: Sequence[float]) -> float:
    xs = _sample(values)
    return math.fsum(xs) / len(xs)


def percentile(values: Sequence[float], p: float) -> float:
    """Linear interpolation between closest ranks, rank = (N - 1) * p / 100."""
    if not 0 <= p <= 100:
        raise StatsError("bad_percentile", str(p))
    xs = sorted(_sample(values))
    h = (len(xs) - 1) * p / 100
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def median(values: Sequence[float]) -> float:
    return percentile(values, 50)


def _paired(x, y, min_len: int) -> tuple[list[float], list[float]]:
    xs, ys = _sample(x), _sample(y)
    if len(xs) != len(ys):
        raise StatsError("length_mismatch", f"{len(xs)} vs {len(ys)}")
    if len(xs) < min_len:
        raise StatsError("too_short", f"need at least {min_len} pairs")
    return xs, ys


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    xs, ys = _paired(x, y, 2)
    mx, my = math.fsum(xs) / len(xs), math.fsum(ys) / len(ys)
    dx = [v - mx for v in xs]
    dy = [v - my for v in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise StatsError("constant_input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks; ties share the average of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    xs, ys = _paired(x, y, 2)
    return pearson(rankdata(xs), rankdata(ys))


# -- Student t via the regularized incomplete beta function --------------------


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise StatsError("no_convergence", "incomplete beta continued fraction")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise StatsError("domain", f"x={x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if df <= 0:
        raise StatsError("domain", f"df={df}")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    p_value: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r_squared, self.p_value))

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "p_value": self.p_value,
        }


def linear_fit(x: Sequence[float], y: Sequence[float]) -> LinearFit:
    """Ordinary least squares y = slope*x + intercept, two-sided t-test on the slope."""
    xs, ys = _paired(x, y, 3)
    n = len(xs)
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    sxx = math.fsum((v - mx) ** 2 for v in xs)
    if sxx == 0:
        raise StatsError("constant_input", "x is constant")
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    syy = math.fsum((v - my) ** 2 for v in ys)
    slope = sxy / sxx
    intercept = my - slope * mx
    sse = max(0.0, math.fsum((b - (slope * a + intercept)) ** 2 for a, b in zip(xs, ys)))
    if syy == 0:
        return LinearFit(slope, intercept, 1.0, 1.0)
    r_squared = max(0.0, min(1.0, 1.0 - sse / syy))
    df = n - 2
    # exact fits: relative residual at rounding level
    if sse <= 1e-24 * syy:
        return LinearFit(slope, intercept, 1.0, 0.0)
    se = math.sqrt(sse / df / sxx)
    return LinearFit(slope, intercept, r_squared, t_two_sided_p(slope / se, df))


# -- two-sample Kolmogorov-Smirnov -------------------------------------------


def kolmogorov_q(lam: float) -> float:
    """Q(lam) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2), clamped to [0, 1]."""
    if lam < 0.2:
        # the alternating series does not settle here; Q is 1 to machine precision
        return 1.0
    total, sign, prev = 0.0, 1.0, 0.0
    for k in range(1, 101):
        term = sign * 2.0 * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) <= 1e-10 * prev or abs(term) <= 1e-16 * abs(total):
            return max(0.0, min(1.0, total))
        sign = -sign
        prev = abs(term)
    return 1.0


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    xs, ys = sorted(_sample(a)), sorted(_sample(b))
    m, n = len(xs), len(ys)
    i = j = 0
    d = 0.0
    while i < m and j < n:
        t = min(xs[i], ys[j])
        while i < m and xs[i] == t:
            i += 1
        while j < n and ys[j] == t:
            j += 1
        d = max(d, abs(i / m - j / n))
    return d


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Returns (D, asymptotic p-value) with the usual small-sample lambda correction."""
    d = ks_statistic(a, b)
    m, n = len(a), len(b)
    en = math.sqrt(m * n / (m + n))
    return d, kolmogorov_q((en + 0.12 + 0.11 / en) * d)

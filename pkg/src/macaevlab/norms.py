"""Rearrangement-invariant norms on finite value multisets.

A value multiset is the decreasing rearrangement of ``|f|`` stored as
``(value, count)`` blocks, so that level counts such as ``2**48`` never have
to be materialised.  Norms whose evaluation needs harmonic numbers beyond the
exact-summation threshold come back as an :class:`Interval`.
"""

from __future__ import annotations

import functools
import json
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

EULER_GAMMA = 0.57721566490153286060651209
HARMONIC_EXACT_LIMIT = 10**6

_EPS = float(np.finfo(float).eps)
_EPS_LD = float(np.finfo(np.longdouble).eps)


class Interval(NamedTuple):
    """Closed interval ``[lo, hi]`` carrying a rigorously bounded value."""

    lo: float
    hi: float

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi

    def __add__(self, other: "Interval") -> "Interval":  # type: ignore[override]
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def scale(self, a: float) -> "Interval":
        if a < 0:
            raise ValueError("scale factor must be nonnegative")
        return Interval(a * self.lo, a * self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def widen(self, rel: float = 4 * _EPS) -> "Interval":
        """Pad outward by a relative amount (floating-point rounding slack)."""
        lo = math.nextafter(self.lo - rel * abs(self.lo), -math.inf) if self.lo else 0.0
        hi = math.nextafter(self.hi + rel * abs(self.hi), math.inf) if self.hi else 0.0
        return Interval(lo, hi)


def _around(x: float, err: float) -> Interval:
    """``[x - err, x + err]`` rounded outward."""
    return Interval(math.nextafter(x - err, -math.inf), math.nextafter(x + err, math.inf))


def _enclose(q: Fraction) -> Interval:
    """Tightest float interval containing the rational ``q``."""
    x = float(q)
    fx = Fraction(x)
    if fx == q:
        return Interval.point(x)
    return Interval(x, math.nextafter(x, math.inf)) if fx < q else Interval(math.nextafter(x, -math.inf), x)


# --------------------------------------------------------------------------
# harmonic numbers


@functools.lru_cache(maxsize=1)
def _harmonic_table() -> np.ndarray:
    # extended precision keeps the accumulated error near 1e-13 at n = 1e6
    terms = 1.0 / np.arange(1, HARMONIC_EXACT_LIMIT + 1, dtype=np.longdouble)
    table = np.empty(HARMONIC_EXACT_LIMIT + 1, dtype=np.longdouble)
    table[0] = 0
    np.cumsum(terms, out=table[1:])
    return table


_SMALL_HARMONIC = 64


@functools.lru_cache(maxsize=None)
def _small_harmonic(n: int) -> Interval:
    return _enclose(sum((Fraction(1, k) for k in range(1, n + 1)), Fraction(0)))


def harmonic(n: int) -> Interval:
    """Harmonic number ``H_n`` as an interval.

    Exact summation (a point interval) for ``n <= 10**6``; above that the
    expansion ``ln n + gamma + 1/(2n) - 1/(12 n^2)`` whose remainder lies in
    ``(0, 1/(120 n^4))``.  ``n`` may be an arbitrarily large Python int.
    """
    n = int(n)
    if n < 0:
        raise ValueError("harmonic number of a negative index")
    if n <= _SMALL_HARMONIC:
        return _small_harmonic(n)
    if n <= HARMONIC_EXACT_LIMIT:
        v = _harmonic_table()[n]
        # n rounded terms and n rounded additions, each within eps_ld * H_n
        return _around(float(v), float((2 * n + 1) * _EPS_LD * v))
    log_n = math.log(n)
    if n < 2**60:
        inv = 1.0 / n
        val = log_n + EULER_GAMMA + 0.5 * inv - inv * inv / 12.0
        tail = inv**4 / 120.0
    else:
        # the dropped 1/(2n) - 1/(12n^2) is positive and below 2**-61
        val = log_n + EULER_GAMMA
        tail = 2.0**-60
    slack = 8 * _EPS * abs(val)
    return Interval(val - slack, val + tail + slack)


def harmonic_diff(a: int, b: int) -> Interval:
    """``H_b - H_a`` for ``0 <= a <= b``."""
    if a > b:
        raise ValueError("harmonic_diff needs a <= b")
    if b <= _SMALL_HARMONIC:
        return _enclose(sum((Fraction(1, k) for k in range(a + 1, b + 1)), Fraction(0)))
    if b <= HARMONIC_EXACT_LIMIT:
        t = _harmonic_table()
        # only the b - a additions between the two entries differ
        return _around(float(t[b] - t[a]), float((2 * (b - a) + 2) * _EPS_LD * t[b]))
    if a == b:
        return Interval.point(0.0)
    d = harmonic(b) - harmonic(a)
    # the difference of two positive blocks is never negative
    return Interval(max(d.lo, 0.0), d.hi)


# --------------------------------------------------------------------------
# value multisets


@dataclass(frozen=True)
class ValueMultiset:
    """Multiset of nonnegative values with exact (unbounded) integer counts."""

    entries: tuple[tuple[float, int], ...] = ()

    def __post_init__(self) -> None:
        clean = []
        for value, count in self.entries:
            value = float(value)
            if isinstance(count, float):
                if not count.is_integer():
                    raise ValueError(f"non-integer count {count!r}")
            count = int(count)
            if count < 1:
                raise ValueError(f"count must be positive, got {count}")
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"multiset values must be finite and >= 0, got {value}")
            clean.append((value, count))
        object.__setattr__(self, "entries", tuple(clean))

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "ValueMultiset":
        """Multiset of the given nonnegative values (one count each)."""
        counts = Counter(float(v) for v in values)
        return cls(tuple(counts.items()))

    @classmethod
    def of_abs(cls, values: Iterable[float], drop_zeros: bool = True) -> "ValueMultiset":
        """Multiset of ``|v|`` for a signed sequence, zeros dropped by default."""
        vals = (abs(float(v)) for v in values)
        if drop_zeros:
            vals = (v for v in vals if v != 0.0)
        return cls.from_values(vals)

    @property
    def total_count(self) -> int:
        return sum(c for _, c in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def scaled(self, a: float) -> "ValueMultiset":
        if a < 0:
            raise ValueError("scale factor must be nonnegative")
        return ValueMultiset(tuple((a * v, c) for v, c in self.entries))

    def nonzero(self) -> "ValueMultiset":
        return ValueMultiset(tuple((v, c) for v, c in self.entries if v != 0.0))

    def expand(self, limit: int = 10**7) -> np.ndarray:
        """Decreasing array of all values; refuses huge total counts."""
        r = rearrange(self)
        if r.total_count > limit:
            raise ValueError(f"total count {r.total_count} exceeds expansion limit {limit}")
        return np.repeat([v for v, _ in r.entries], [c for _, c in r.entries]).astype(float)

    def same_as(self, other: "ValueMultiset", ignore_zeros: bool = True) -> bool:
        a, b = (self.nonzero(), other.nonzero()) if ignore_zeros else (self, other)
        return rearrange(a).entries == rearrange(b).entries

    def to_json(self) -> str:
        return json.dumps([[v, str(c)] for v, c in self.entries])

    @classmethod
    def from_json(cls, text: str) -> "ValueMultiset":
        data = json.loads(text)
        return cls(tuple((float(v), int(c)) for v, c in data))


def rearrange(v: ValueMultiset) -> ValueMultiset:
    """Sort descending and merge equal values."""
    merged: dict[float, int] = {}
    for value, count in v.entries:
        merged[value] = merged.get(value, 0) + count
    return ValueMultiset(tuple(sorted(merged.items(), key=lambda e: -e[0])))


# --------------------------------------------------------------------------
# norming functions


_FAMILIES = ("macaev", "dual_plus", "schatten", "trace", "kyfan")


@dataclass(frozen=True)
class NormingFunction:
    """A symmetric gauge function.

    ``family`` is one of ``macaev``, ``dual_plus``, ``schatten`` (with
    ``param = p >= 1``), ``trace`` or ``kyfan`` (``param = k >= 1``).
    ``kyfan(1)`` is the sup norm.
    """

    family: str
    param: float | None = None

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unsupported norming function family {self.family!r}")
        if self.family == "schatten":
            if self.param is None or not self.param >= 1:
                raise ValueError("schatten needs p >= 1")
            if self.param == 1:
                object.__setattr__(self, "family", "trace")
                object.__setattr__(self, "param", None)
        elif self.family == "kyfan":
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise ValueError("kyfan needs an integer k >= 1")
            object.__setattr__(self, "param", int(self.param))
        elif self.param is not None:
            raise ValueError(f"{self.family} takes no parameter")

    @classmethod
    def macaev(cls) -> "NormingFunction":
        return cls("macaev")

    @classmethod
    def dual_plus(cls) -> "NormingFunction":
        return cls("dual_plus")

    @classmethod
    def trace(cls) -> "NormingFunction":
        return cls("trace")

    @classmethod
    def schatten(cls, p: float) -> "NormingFunction":
        return cls("schatten", float(p))

    @classmethod
    def kyfan(cls, k: int) -> "NormingFunction":
        return cls("kyfan", int(k))

    @classmethod
    def parse(cls, text: str) -> "NormingFunction":
        """Parse ``macaev``, ``dual_plus``, ``trace``, ``schatten:p``, ``kyfan:k``, ``sup``."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("macaev", "dual_plus", "trace") and not arg:
            return cls(name)
        if name == "sup" and not arg:
            return cls.kyfan(1)
        if name == "schatten" and arg:
            return cls.schatten(float(arg))
        if name == "kyfan" and arg:
            return cls.kyfan(int(arg))
        raise ValueError(f"cannot parse norming function {text!r}")

    def __str__(self) -> str:
        if self.family == "schatten":
            p = self.param
            return f"schatten:{int(p) if float(p).is_integer() else p}"
        if self.family == "kyfan":
            return f"kyfan:{self.param}"
        return self.family

    def dual(self) -> "NormingFunction":
        """Dual norming function, where it stays inside the supported families."""
        if self.family == "macaev":
            return NormingFunction.dual_plus()
        if self.family == "dual_plus":
            return NormingFunction.macaev()
        if self.family == "trace":
            return NormingFunction.kyfan(1)
        if self.family == "kyfan" and self.param == 1:
            return NormingFunction.trace()
        if self.family == "schatten":
            p = float(self.param)
            return NormingFunction.schatten(p / (p - 1.0))
        raise ValueError(f"dual of {self} is not a supported family")


MACAEV = NormingFunction.macaev()
TRACE = NormingFunction.trace()


# --------------------------------------------------------------------------
# norm evaluation


def macaev_interval(v: ValueMultiset) -> Interval:
    """``sum_k f*(k)/k`` with each flat block summed via harmonic differences."""
    lo = hi = 0.0
    k = blocks = 0
    for value, count in rearrange(v).entries:
        if value > 0:
            block = harmonic_diff(k, k + count)
            lo += value * block.lo
            hi += value * block.hi
            blocks += 1
        k += count
    if blocks == 1 and rearrange(v).entries[0][0] == 1.0:
        return Interval(lo, hi)
    # nonnegative terms: a product and a sum per block, each within eps/2
    return Interval(lo, hi).widen(blocks * _EPS)


def macaev_norm(v: ValueMultiset) -> float:
    """Macaev (Lorentz ``(inf,1)``) norm; midpoint when the asymptotic path is taken."""
    return macaev_interval(v).mid


def dual_plus_interval(v: ValueMultiset) -> Interval:
    """``sup_k (f*(1)+...+f*(k)) / H_k``.

    Inside a flat block the ratio is quasi-convex in ``k``, so its maximum
    over the block is attained at the block's first or last position; only
    those two candidates are evaluated per block.
    """
    best_lo = best_hi = 0.0
    k0 = 0
    partial = Fraction(0)
    for value, count in rearrange(v).entries:
        if value <= 0:
            break
        for t in {1, count}:
            num = _enclose(partial + Fraction(value) * t)
            den = harmonic(k0 + t)
            lo, hi = num.lo / den.hi, num.hi / den.lo
            if not (num.is_point and den.is_point and Fraction(lo) * Fraction(den.lo) == Fraction(num.lo)):
                lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
            best_lo = max(best_lo, lo)
            best_hi = max(best_hi, hi)
        partial += Fraction(value) * count
        k0 += count
    return Interval(best_lo, best_hi)


def dual_plus_norm(v: ValueMultiset) -> float:
    return dual_plus_interval(v).mid


def dual_plus_full_scan(v: ValueMultiset) -> float:
    """Reference ``ell_1^+`` norm scanning every ``k`` (small multisets only)."""
    vals = v.expand(limit=10**6)
    if vals.size == 0:
        return 0.0
    ratios = np.cumsum(vals) / np.cumsum(1.0 / np.arange(1, vals.size + 1))
    return float(ratios.max())


def _schatten_interval(v: ValueMultiset, p: float) -> Interval:
    entries = [(a, c) for a, c in v.entries if a > 0]
    if not entries:
        return Interval.point(0.0)
    top = max(a for a, _ in entries)
    if all(c <= 2**53 for _, c in entries):
        s = math.fsum(c * (a / top) ** p for a, c in entries)
        val = top * s ** (1.0 / p)
        if p.is_integer() and p <= 8 and len(entries) <= 64:
            exact = sum((c * Fraction(a) ** int(p) for a, c in entries), Fraction(0))
            if Fraction(val) ** int(p) == exact:
                return Interval.point(val)
        # a ratio, a power and a product per entry, then the root and the scale
        return Interval.point(val).widen((len(entries) + 4) * 2 * _EPS)
    # huge counts: sum in the log domain
    logs = [p * math.log(a / top) + math.log(c) for a, c in entries]
    m = max(logs)
    lse = m + math.log(math.fsum(math.exp(x - m) for x in logs))
    try:
        val = top * math.exp(lse / p)
    except OverflowError:
        return Interval.point(math.inf)
    return Interval(val, val).widen(64 * _EPS * max(1.0, abs(lse)))


def gauge_interval(v: ValueMultiset, phi: NormingFunction) -> Interval:
    """Value of the norming function on the decreasing rearrangement of ``v``."""
    fam = phi.family
    if fam == "macaev":
        return macaev_interval(v)
    if fam == "dual_plus":
        return dual_plus_interval(v)
    if fam == "trace":
        return _enclose(sum((Fraction(a) * c for a, c in v.entries), Fraction(0)))
    if fam == "schatten":
        return _schatten_interval(v, float(phi.param))
    if fam == "kyfan":
        k = int(phi.param)
        total, taken = [], 0
        for a, c in rearrange(v).entries:
            use = min(c, k - taken)
            if use <= 0:
                break
            total.append(Fraction(a) * use)
            taken += use
        return _enclose(sum(total, Fraction(0)))
    raise ValueError(f"unsupported family {fam!r}")


def gauge_norm(v: ValueMultiset, phi: NormingFunction) -> float:
    return gauge_interval(v, phi).mid


def phi_rank_interval(phi: NormingFunction, m: int) -> Interval:
    """Norm of a rank-``m`` projection (``m`` ones) via closed forms."""
    m = int(m)
    if m < 1:
        raise ValueError("rank must be >= 1")
    fam = phi.family
    if fam == "macaev":
        return harmonic(m)
    if fam == "dual_plus":
        h = harmonic(m)
        mf = float(m)
        return Interval(mf / h.hi, mf / h.lo)
    if fam == "trace":
        try:
            return Interval.point(float(m))
        except OverflowError:
            return Interval.point(math.inf)
    if fam == "schatten":
        p = float(phi.param)
        val = math.exp(math.log(m) / p)
        if m <= 2**53:
            val = float(m) ** (1.0 / p)
            root = round(val)
            if root**p == m:
                return Interval.point(float(root))
        return Interval(val, val).widen(16 * _EPS)
    if fam == "kyfan":
        return Interval.point(float(min(int(phi.param), m)))
    raise ValueError(f"unsupported family {fam!r}")


def phi_rank(phi: NormingFunction, m: int) -> float:
    return phi_rank_interval(phi, m).mid


# --------------------------------------------------------------------------
# dense fast path (optimizer inner loop)


@functools.lru_cache(maxsize=64)
def _rank_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float)
    w.flags.writeable = False
    return w


def _harmonic_prefix(n: int) -> np.ndarray:
    return np.asarray(_harmonic_table()[1 : n + 1], dtype=float)


def gauge_array(values: np.ndarray, phi: NormingFunction) -> float:
    """Norm of ``|values|`` for a dense (moderate size) array."""
    a = np.abs(np.asarray(values, dtype=float))
    fam = phi.family
    if fam == "trace":
        return float(a.sum())
    if fam == "schatten":
        p = float(phi.param)
        top = a.max(initial=0.0)
        if top == 0:
            return 0.0
        return float(top * np.sum((a / top) ** p) ** (1.0 / p))
    s = -np.sort(-a)
    if fam == "macaev":
        return float(s @ _rank_weights(s.size))
    if fam == "kyfan":
        return float(s[: int(phi.param)].sum())
    if fam == "dual_plus":
        if s.size == 0:
            return 0.0
        return float(np.max(np.cumsum(s) / _harmonic_prefix(s.size)))
    raise ValueError(f"unsupported family {fam!r}")


def gauge_subgradient(values: np.ndarray, phi: NormingFunction) -> np.ndarray:
    """A subgradient of ``x -> Phi(|x|)`` at ``values``.

    Ties in the sort are broken by position (stable sort), which makes the
    choice deterministic.
    """
    x = np.asarray(values, dtype=float)
    a = np.abs(x)
    sign = np.sign(x)
    n = x.size
    g = np.zeros(n)
    fam = phi.family
    if n == 0:
        return g
    if fam == "trace":
        return sign
    if fam == "schatten":
        p = float(phi.param)
        nrm = gauge_array(x, phi)
        if nrm == 0:
            return g
        return sign * (a / nrm) ** (p - 1.0)
    order = np.argsort(-a, kind="stable")
    if fam == "macaev":
        g[order] = _rank_weights(n)
        return g * sign
    if fam == "kyfan":
        g[order[: int(phi.param)]] = 1.0
        return g * sign
    if fam == "dual_plus":
        s = a[order]
        hk = _harmonic_prefix(n)
        k = int(np.argmax(np.cumsum(s) / hk))
        g[order[: k + 1]] = 1.0 / hk[k]
        return g * sign
    raise ValueError(f"unsupported family {fam!r}")


# --------------------------------------------------------------------------
# duality pairing


def _as_mapping(f) -> Mapping:
    # FiniteFunction keeps its data in ``.values``; plain dicts are used as is
    inner = getattr(f, "values", None)
    return inner if isinstance(inner, Mapping) else f


def pairing(f: Mapping, g: Mapping) -> float:
    """``sum_x f(x) g(x)`` over finitely supported signed maps."""
    fg = getattr(f, "group", None)
    gg = getattr(g, "group", None)
    if fg is not None and gg is not None and fg != gg:
        raise ValueError("pairing of functions on different groups")
    fv = _as_mapping(f)
    gv = _as_mapping(g)
    if fv and gv:
        kf = type(next(iter(fv)))
        kg = type(next(iter(gv)))
        if kf is not kg:
            raise ValueError("pairing of maps over mismatched index domains")
    if len(fv) > len(gv):
        fv, gv = gv, fv
    return math.fsum(val * gv[x] for x, val in fv.items() if x in gv)


def abs_multiset(values: Mapping) -> ValueMultiset:
    """Multiset of ``|f(x)|`` over the support of a signed map."""
    fv = _as_mapping(values)
    return ValueMultiset.of_abs(fv.values())

"""Complementary-branching trees, shift isometries and the tensor-pair orbit.

Two rooted trees ``X`` and ``Y`` branch (two children) or not (one child)
depending only on depth; a schedule ``h_1 <= h_2 <= ...`` with partial sums
``S(p)`` makes ``X`` non-branching on ``[S(2k-2), S(2k-1))`` and ``Y`` on
``[S(2k-1), S(2k))`` (the roots always branch).  Level widths reach ``2**S``
with ``S`` in the millions, so the symbolic side works with exponents and
run-length segments; :class:`SparseSlice` materialises shallow trees for
cross-checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ResourceCapError, ScheduleError
from .groups import GroupSpec, ball, left_translate
from .norms import (
    MACAEV,
    Interval,
    NormingFunction,
    ValueMultiset,
    gauge_array,
    gauge_interval,
    phi_rank_interval,
)

# --------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class Schedule:
    h: tuple[int, ...]

    def __post_init__(self):
        h = tuple(int(x) for x in self.h)
        if any(x < 1 for x in h):
            raise ValueError("schedule entries must be >= 1")
        if any(b < a for a, b in zip(h, h[1:])):
            raise ValueError("schedule must be nondecreasing")
        object.__setattr__(self, "h", h)

    def S(self, p: int) -> int:
        """``h_1 + ... + h_p`` (``S(0) = 0``)."""
        if not 0 <= p <= len(self.h):
            raise IndexError(f"S({p}) needs {p} schedule entries, have {len(self.h)}")
        return sum(self.h[:p])

    def hk(self, k: int) -> int:
        return self.h[k - 1]

    @property
    def partial_sums(self) -> list[int]:
        return list(itertools.accumulate(self.h))

    @property
    def n_max(self) -> int:
        return len(self.h) // 2


_MAX_EXPONENT = 1 << 24


def _admissible(phi: NormingFunction, exponent: int, h: int, n: int) -> bool:
    # h^-1 phi(2^exponent h) <= 1/n, using the rigorous upper end
    return phi_rank_interval(phi, (1 << exponent) * h).hi * n <= h


def minimal_h(phi: NormingFunction, exponent: int, n: int, h_min: int = 1) -> int:
    """Least ``h >= h_min`` with ``phi(2^exponent h) / h <= 1/n``.

    ``phi(m)/m`` is nonincreasing for symmetric norming functions, so the
    admissible set is an up-ray and bisection applies.
    """
    if _admissible(phi, exponent, h_min, n):
        return h_min
    lo, hi = h_min, 2 * h_min
    while not _admissible(phi, exponent, hi, n):
        lo, hi = hi, 2 * hi
        if hi > 1 << 80:
            raise ScheduleError(f"no admissible h found for {phi} (exponent {exponent}, n {n})")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _admissible(phi, exponent, mid, n):
            hi = mid
        else:
            lo = mid
    return hi


def build_schedule(phi: NormingFunction, n_max: int) -> Schedule:
    """Greedy minimal ``h_1, ..., h_{2 n_max}``.

    Odd index ``2n-1``: ``h^-1 phi(2^S(2n-2) h) <= 1/n``; even index ``2n``:
    ``h^-1 phi(2^S(2n-1) h) <= 1/n``.  Each entry is also at least the
    previous one.  The trace class has ``phi(m)/m = 1`` and admits no schedule.
    """
    if phi.family == "trace":
        raise ScheduleError("trace norm: phi(m)/m does not tend to 0, no schedule exists")
    h: list[int] = []
    for n in range(1, n_max + 1):
        for _ in range(2):
            if sum(h) > _MAX_EXPONENT:
                raise ResourceCapError(f"schedule for {phi} outgrows 2^{_MAX_EXPONENT} at stage n={n}")
            h.append(minimal_h(phi, sum(h), n, h[-1] if h else 1))
    return Schedule(tuple(h))


# --------------------------------------------------------------------------
# level trees


@dataclass(frozen=True)
class LevelTree:
    """Level-homogeneous rooted tree.

    ``nonbranching`` holds half-open depth intervals on which every vertex has
    one child; elsewhere (and always at the root) vertices have two.
    """

    parity: str
    nonbranching: tuple[tuple[int, int], ...]
    depth_max: int

    @classmethod
    def from_schedule(cls, schedule: Schedule, parity: str, depth_max: int) -> "LevelTree":
        if parity not in ("X", "Y"):
            raise ValueError("parity must be 'X' or 'Y'")
        S = [0] + schedule.partial_sums
        if depth_max > S[-1]:
            raise DomainError(f"schedule covers depths < {S[-1]}, requested {depth_max}")
        shift = 0 if parity == "X" else 1
        intervals = []
        k = 1
        while 2 * k - 1 + shift < len(S):
            a, b = S[2 * k - 2 + shift], S[2 * k - 1 + shift]
            if a < depth_max and a < b:
                intervals.append((a, min(b, depth_max)))
            k += 1
        return cls(parity, tuple(intervals), depth_max)

    def branching(self, d: int) -> bool:
        if d == 0:
            return True
        return not any(a <= d < b for a, b in self.nonbranching)

    def children(self, d: int) -> int:
        return 2 if self.branching(d) else 1

    def breakpoints(self) -> list[int]:
        pts = {0, 1, self.depth_max}
        for a, b in self.nonbranching:
            pts.update((a, b))
        return sorted(p for p in pts if 0 <= p <= self.depth_max)

    def segments(self, extra=()) -> list[tuple[int, int, bool]]:
        """Maximal runs ``[start, end)`` of constant branching within ``[0, depth_max)``."""
        pts = sorted(set(self.breakpoints()) | {p for p in extra if 0 <= p <= self.depth_max})
        return [(a, b, self.branching(a)) for a, b in zip(pts, pts[1:]) if a < b]

    def width_exponent(self, d: int) -> int:
        """Number of branching depths strictly below ``d``; ``width(d) = 2**exponent``."""
        if d < 0:
            raise ValueError("negative depth")
        total = 0
        for a, b, br in self.segments(extra=(d,)):
            if a >= d:
                break
            if br:
                total += min(b, d) - a
        if d > self.depth_max:
            raise DomainError(f"depth {d} beyond depth_max {self.depth_max}")
        return total

    def width(self, d: int) -> int:
        return 1 << self.width_exponent(d)

    def level_sum(self, d0: int, d1: int) -> int:
        """``sum_{d0 <= d < d1} width(d)``, exactly."""
        if d1 > self.depth_max + 1:
            raise DomainError(f"level sum up to {d1} beyond depth_max {self.depth_max}")
        total = 0
        e = self.width_exponent(d0)
        for a, b, br in self.segments(extra=(d0, min(d1, self.depth_max))):
            lo, hi = max(a, d0), min(b, d1)
            if lo >= hi:
                continue
            L = hi - lo
            if br:
                total += (1 << e) * ((1 << L) - 1)
                e += L
            else:
                total += L << e
        if d1 == self.depth_max + 1:
            total += 1 << self.width_exponent(self.depth_max)
        return total


def build_trees(schedule: Schedule, depth: int) -> tuple[LevelTree, LevelTree]:
    X = LevelTree.from_schedule(schedule, "X", depth)
    Y = LevelTree.from_schedule(schedule, "Y", depth)
    bad = complementarity_defects(X, Y)
    if bad:
        raise AssertionError(f"trees are not complementary at depths {bad[:5]}")
    return X, Y


def complementarity_defects(X: LevelTree, Y: LevelTree) -> list[int]:
    """Depths ``1 <= d < depth_max`` where both or neither tree branches."""
    top = min(X.depth_max, Y.depth_max)
    pts = sorted({p for p in X.breakpoints() + Y.breakpoints() + [1, top] if 1 <= p <= top})
    bad = []
    for a, b in zip(pts, pts[1:]):
        if X.branching(a) == Y.branching(a):
            bad.extend(range(a, min(b, a + 10)))
    return bad


# --------------------------------------------------------------------------
# ramps and commutator spectra


@dataclass(frozen=True)
class DiagonalRamp:
    """Cutoff profile: 1 up to depth ``start``, then ``(1 - (d - start)/h)_+``.

    X side: ``start = S(2n-2)``, ``h = h_{2n-1}``; Y side: ``start = S(2n-1)``,
    ``h = h_{2n}``.
    """

    side: str
    n: int
    start: int
    h: int

    @classmethod
    def for_schedule(cls, schedule: Schedule, side: str, n: int) -> "DiagonalRamp":
        if side == "X":
            return cls("X", n, schedule.S(2 * n - 2), schedule.hk(2 * n - 1))
        if side == "Y":
            return cls("Y", n, schedule.S(2 * n - 1), schedule.hk(2 * n))
        raise ValueError("side must be 'X' or 'Y'")

    def value(self, d: int) -> Fraction:
        if d <= self.start:
            return Fraction(1)
        return max(Fraction(0), 1 - Fraction(d - self.start, self.h))

    @property
    def end(self) -> int:
        """First depth where the profile vanishes."""
        return self.start + self.h


def commutator_spectrum(tree: LevelTree, ramp: DiagonalRamp, j: int = 1) -> ValueMultiset:
    """Nonzero eigenvalues of ``A - S_j^* A S_j`` for the diagonal ramp ``A``.

    ``S_j^* A S_j`` is diagonal with entry ``f(d+1)`` at depth ``d``, so the
    difference is ``1/h`` on the ``h`` levels ``start <= d < start + h`` and 0
    elsewhere; the multiplicity is the sum of those level widths.
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    if ramp.side != tree.parity:
        raise ValueError("ramp side does not match tree parity")
    if ramp.end > tree.depth_max:
        raise DomainError("tree is too shallow for this ramp")
    m = tree.level_sum(ramp.start, ramp.end)
    return ValueMultiset(((1.0 / ramp.h, m),))


def commutator_ideal_norm(spectrum: ValueMultiset, phi: NormingFunction = MACAEV) -> Interval:
    return gauge_interval(spectrum, phi)


def rank_upper_bound(ramp: DiagonalRamp) -> int:
    """``2^start * h``: rank bound for the commutator difference."""
    return (1 << ramp.start) * ramp.h


@dataclass(frozen=True)
class StageReport:
    n: int
    side: str
    h: int
    rank: int
    norm: Interval
    rank_bound: int

    @property
    def ok(self) -> bool:
        return self.norm.hi <= 1.0 / self.n and self.rank <= self.rank_bound


def schedule_stages(schedule: Schedule, phi: NormingFunction = MACAEV) -> list[StageReport]:
    """Commutator norms for both ramps at every ``n`` covered by the schedule."""
    depth = schedule.S(2 * schedule.n_max)
    X, Y = build_trees(schedule, depth)
    out = []
    for n in range(1, schedule.n_max + 1):
        for tree in (X, Y):
            ramp = DiagonalRamp.for_schedule(schedule, tree.parity, n)
            spec = commutator_spectrum(tree, ramp)
            (_, m), = spec.entries
            out.append(
                StageReport(n, tree.parity, ramp.h, m, commutator_ideal_norm(spec, phi), rank_upper_bound(ramp))
            )
    return out


# --------------------------------------------------------------------------
# explicit slices

SLICE_MAX_VERTICES = 200_000


@dataclass(frozen=True, eq=False)
class SparseSlice:
    """Materialised tree to depth ``depth`` with the two shift isometries.

    ``S_1 v`` is the first child, ``S_2 v`` the second (or again the first when
    ``v`` has only one).  Columns of leaf vertices at ``depth`` are zero.
    """

    tree: LevelTree
    depth: int
    vertex_depth: np.ndarray
    parent: np.ndarray
    children: tuple
    shifts: tuple

    @classmethod
    def build(cls, tree: LevelTree, depth: int) -> "SparseSlice":
        if depth > tree.depth_max:
            raise DomainError("slice deeper than the tree")
        if tree.width_exponent(depth) > 20 or tree.level_sum(0, depth + 1) > SLICE_MAX_VERTICES:
            raise ResourceCapError("slice too large to materialise")
        vdepth = [0]
        parent = [-1]
        children: list[tuple[int, ...]] = []
        level = [0]
        for d in range(depth):
            nxt = []
            for v in level:
                kids = []
                for _ in range(tree.children(d)):
                    kids.append(len(vdepth))
                    vdepth.append(d + 1)
                    parent.append(v)
                children.append(tuple(kids))
                nxt.extend(kids)
            level = nxt
        children.extend(() for _ in level)
        N = len(vdepth)
        shifts = []
        for j in (0, 1):
            rows, cols = [], []
            for v, kids in enumerate(children):
                if kids:
                    rows.append(kids[min(j, len(kids) - 1)])
                    cols.append(v)
            shifts.append(sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N)))
        return cls(tree, depth, np.asarray(vdepth), np.asarray(parent), tuple(children), tuple(shifts))

    @property
    def size(self) -> int:
        return len(self.vertex_depth)

    def shift(self, j: int) -> sp.csr_matrix:
        return self.shifts[j - 1]

    def isometry_defect(self, j: int) -> float:
        """``max |S_j^* S_j - I|`` on columns above the leaf level."""
        S = self.shift(j)
        gram = (S.T @ S).toarray()
        inner = self.vertex_depth < self.depth
        return float(np.abs(gram[np.ix_(inner, inner)] - np.eye(int(inner.sum()))).max())

    def images_are_children(self) -> bool:
        for v, kids in enumerate(self.children):
            if not kids:
                continue
            img = {int(self.shift(j)[:, [v]].nonzero()[0][0]) for j in (1, 2)}
            if img != set(kids):
                return False
        return True

    def diagonal(self, ramp: DiagonalRamp) -> sp.dia_matrix:
        vals = np.array([float(ramp.value(int(d))) for d in self.vertex_depth])
        return sp.diags(vals)

    def explicit_spectrum(self, ramp: DiagonalRamp, j: int = 1) -> ValueMultiset:
        """Nonzero entries of ``A - S_j^* A S_j`` restricted to non-leaf vertices."""
        if ramp.end > self.depth:
            raise DomainError("slice too shallow for this ramp")
        A = self.diagonal(ramp)
        S = self.shift(j)
        D = (A - S.T @ A @ S).tocsr()
        inner = np.flatnonzero(self.vertex_depth < self.depth)
        block = D[inner][:, inner]
        off = block - sp.diags(block.diagonal())
        if off.count_nonzero():
            raise AssertionError("commutator difference is not diagonal")
        return ValueMultiset.of_abs(block.diagonal())

    def commutator_singular_values(self, ramp: DiagonalRamp, j: int = 1) -> np.ndarray:
        if self.size > 4000:
            raise ResourceCapError("dense SVD limited to 4000 vertices")
        if ramp.end > self.depth:
            raise DomainError("slice too shallow for this ramp")
        A = self.diagonal(ramp).toarray()
        S = self.shift(j).toarray()
        return np.linalg.svd(S @ A - A @ S, compute_uv=False)


# --------------------------------------------------------------------------
# tensor orbit


@dataclass(frozen=True)
class OrbitTable:
    words: tuple
    vectors: dict
    collisions: tuple
    orthonormal: bool | None

    @property
    def count(self) -> int:
        return len(self.words)

    @property
    def injective(self) -> bool:
        return not self.collisions

    @property
    def first_collision_length(self) -> int | None:
        if not self.collisions:
            return None
        return min(len(w) for pair in self.collisions for w in pair)


def monoid_words(max_len: int, letters=(1, 2)):
    for m in range(max_len + 1):
        yield from itertools.product(letters, repeat=m)


def tensor_orbit(xs: SparseSlice, ys: SparseSlice, max_word_len: int, verify_gram: bool = True) -> OrbitTable:
    """Apply every word ``R_{i_1} ... R_{i_m}`` (``R_j = S_j (x) T_j``) to the root tensor.

    Words are tuples over ``{1, 2}``; the rightmost letter acts first.  Each
    image is an elementary tensor ``(v, u)`` of basis vectors; distinct words
    must give distinct pairs.  With ``verify_gram`` the images are also built
    as sparse vectors in ``l2(X) (x) l2(Y)`` and their Gram matrix compared with
    the identity.
    """
    if min(xs.depth, ys.depth) < max_word_len:
        raise DomainError("slices are shallower than the requested word length")
    child = {}
    for sl, key in ((xs, "x"), (ys, "y")):
        for j in (1, 2):
            child[key, j] = {
                v: (kids[min(j - 1, len(kids) - 1)] if kids else None)
                for v, kids in enumerate(sl.children)
            }
    vectors = {(): (0, 0)}
    words = list(monoid_words(max_word_len))
    for w in words[1:]:
        v, u = vectors[w[1:]]
        vectors[w] = (child["x", w[0]][v], child["y", w[0]][u])
    seen: dict = {}
    collisions = []
    for w in words:
        key = vectors[w]
        if key in seen:
            collisions.append((seen[key], w))
        else:
            seen[key] = w
    orthonormal = None
    if verify_gram:
        orthonormal = _gram_check(xs, ys, words) and not collisions
    return OrbitTable(tuple(words), vectors, tuple(collisions), orthonormal)


def _gram_check(xs: SparseSlice, ys: SparseSlice, words) -> bool:
    R = {j: sp.kron(xs.shift(j), ys.shift(j), format="csr") for j in (1, 2)}
    dim = xs.size * ys.size
    xi = sp.csr_matrix(([1.0], ([0], [0])), shape=(dim, 1))
    cols = {(): xi}
    for w in words[1:]:
        cols[w] = R[w[0]] @ cols[w[1:]]
    V = sp.hstack([cols[w] for w in words]).tocsr()
    gram = (V.T @ V).toarray()
    return bool(np.allclose(gram, np.eye(len(words)), atol=1e-12, rtol=0))


def sabotaged_trees(schedule: Schedule, depth: int, bad_depth: int) -> tuple[LevelTree, LevelTree]:
    """Schedule trees with both forced to be non-branching at ``bad_depth``."""
    if bad_depth < 1:
        raise ValueError("the root always branches; sabotage needs depth >= 1")
    X = LevelTree.from_schedule(schedule, "X", depth)
    Y = LevelTree.from_schedule(schedule, "Y", depth)
    extra = ((bad_depth, bad_depth + 1),)
    return (
        LevelTree("X", tuple(sorted(X.nonbranching + extra)), depth),
        LevelTree("Y", tuple(sorted(Y.nonbranching + extra)), depth),
    )


# --------------------------------------------------------------------------
# diagonal lower bound for the tensor pair


def witness_dual_norm(depth: int) -> Interval:
    """``ell_1^+`` norm interval of the first-letter ``H_p`` family."""
    from .kphi import AnalyticDualFamily

    return AnalyticDualFamily("first", 1, depth).dual_norm(MACAEV.dual())


def orbit_witness_pairing(a: Mapping, depth: int) -> float:
    """``sum_p sum_w H_p(p w) (a(w) - a(p w))``; equals ``a(empty)`` when ``a``
    lives on words shorter than ``depth``."""
    total = []
    for w, aw in a.items():
        if len(w) + 1 > depth:
            continue
        for p in (1, 2):
            weight = 2.0 ** -(len(w) + 1)
            total.append(weight * (aw - a.get((p,) + w, 0.0)))
    return math.fsum(total)


def diagonal_tensor_lower_bound(a: Mapping, witness_depth: int, orbit: OrbitTable | None = None) -> float:
    """Lower bound on ``max_j |[R_j, A]|_Macaev`` for ``A`` diagonal with entries
    ``a(w)`` on the orbit vectors (any diagonal extension elsewhere).

    Pairing ``[R_p, A]`` with the weighted partial isometry
    ``sum_w H_p(p w) e_w e_{p w}^*`` and summing over ``p`` telescopes to
    ``a(empty)``, so the bound is ``|a(empty)| / (2 upper|H_p|)``.
    """
    if a.get((), 0.0) != 1.0:
        raise ValueError("coefficients must satisfy a(xi) = 1")
    for w in a:
        if not isinstance(w, tuple) or any(i not in (1, 2) for i in w):
            raise DomainError(f"{w!r} is not a monoid word")
        if len(w) >= witness_depth:
            raise DomainError("coefficient support reaches the witness truncation depth")
        if orbit is not None and w not in orbit.vectors:
            raise DomainError(f"{w!r} is outside the orbit table")
    paired = orbit_witness_pairing(a, witness_depth)
    if abs(paired - 1.0) > 1e-12:
        raise AssertionError(f"witness pairing gave {paired}, expected a(xi) = 1")
    hi = witness_dual_norm(witness_depth).hi
    return math.nextafter(1.0 / (2.0 * hi), 0.0)


def explicit_tensor_commutator_norms(
    xs: SparseSlice, ys: SparseSlice, a: Mapping, orbit: OrbitTable, phi: NormingFunction = MACAEV
) -> list[float]:
    """``|[R_j, A]|_Phi`` by dense SVD, ``A`` = ``a`` on orbit vectors, 0 elsewhere."""
    dim = xs.size * ys.size
    if dim > 6000:
        raise ResourceCapError("dense tensor commutator limited to 6000 dimensions")
    diag = np.zeros(dim)
    for w, val in a.items():
        v, u = orbit.vectors[w]
        diag[v * ys.size + u] = val
    A = np.diag(diag)
    out = []
    for j in (1, 2):
        R = sp.kron(xs.shift(j), ys.shift(j)).toarray()
        sv = np.linalg.svd(R @ A - A @ R, compute_uv=False)
        out.append(gauge_array(sv, phi))
    return out


# --------------------------------------------------------------------------
# regular representation cross-check


@dataclass(frozen=True)
class CrosscheckReport:
    generator: object
    singular_values: np.ndarray
    difference_values: np.ndarray
    max_deviation: float
    operator_norm: float
    function_norm: float

    @property
    def equal(self) -> bool:
        return self.max_deviation <= 1e-12


def regular_representation_crosscheck(
    spec: GroupSpec,
    f,
    phi: NormingFunction = MACAEV,
    max_dim: int = 3000,
) -> list[CrosscheckReport]:
    """Singular values of ``[lambda(g), M_f]`` against the values of ``beta(g) f - f``.

    ``[lambda(g), M_f] e_y = (f(y) - f(g y)) e_{g y}``, so the matrix is built on a
    ball large enough to contain ``supp f``, ``g supp f`` and ``g^-1 supp f``.
    """
    values = f.values
    if any(v < 0 or v > 1 for v in values.values()):
        raise ValueError("cross-check expects 0 <= f <= 1")
    grp = spec.group
    sym = spec.symmetrized()
    radius = max((sym.length(x) for x in f.support()), default=0) + 1
    b = ball(sym, radius, max_elements=max_dim + 1, with_adjacency=False)
    N = len(b)
    reports = []
    for g in spec.generators:
        C = np.zeros((N, N))
        for y in b.elements:
            gy = grp.mul(g, y)
            c = f(y) - f(gy)
            if c == 0.0:
                continue
            if gy not in b:
                raise AssertionError("ball too small for the commutator support")
            C[b.position(gy), b.position(y)] = c
        sv = np.sort(np.linalg.svd(C, compute_uv=False))[::-1]
        dv = np.sort(np.abs(np.array(list(left_translate(f, g).__sub__(f).values.values()))))[::-1]
        padded = np.zeros(N)
        padded[: dv.size] = dv
        dev = float(np.abs(sv - padded).max()) if N else 0.0
        reports.append(
            CrosscheckReport(g, sv, dv, dev, gauge_array(sv, phi), gauge_array(dv, phi))
        )
    return reports

"""Built-in finitely generated groups, Cayley balls and translation actions.

Elements are hashable canonical forms (nested tuples of ints), so equality of
elements is equality of forms.  Words are strings of generator letters:
lowercase for a generator, uppercase for its inverse, ``1`` for the identity.
"""

from __future__ import annotations

import functools
import string
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator

import numpy as np

from .errors import DomainError, ResourceCapError
from .norms import ValueMultiset

Element = Hashable

DEFAULT_MAX_ELEMENTS = 2_000_000


class Group:
    """Base class.  Subclasses are frozen dataclasses (equality by parameters)."""

    is_group = True

    def identity(self) -> Element:
        raise NotImplementedError

    def mul(self, a: Element, b: Element) -> Element:
        raise NotImplementedError

    def inv(self, a: Element) -> Element:
        raise NotImplementedError

    def letter(self, ch: str) -> Element:
        raise NotImplementedError

    def standard_generators(self) -> tuple[Element, ...]:
        raise NotImplementedError

    def format(self, g: Element) -> str:
        raise NotImplementedError

    @property
    def label(self) -> str:
        raise NotImplementedError

    def word(self, text: str) -> Element:
        """Multiply out a word left to right."""
        g = self.identity()
        for ch in text.strip():
            if ch in "1 ":
                continue
            g = self.mul(g, self.letter(ch))
        return g

    def from_json(self, data) -> Element:
        return _tuplify(data)


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(y) for y in x)
    return x


def _letter_index(ch: str, rank: int) -> int:
    """``a`` -> 1, ``A`` -> -1, ...; raises for letters outside the rank."""
    if len(ch) != 1 or ch not in string.ascii_letters:
        raise ValueError(f"unknown generator symbol {ch!r}")
    i = string.ascii_lowercase.index(ch.lower()) + 1
    if i > rank:
        raise ValueError(f"unknown generator symbol {ch!r} (rank {rank})")
    return i if ch.islower() else -i


def _index_letter(i: int) -> str:
    ch = string.ascii_lowercase[abs(i) - 1]
    return ch if i > 0 else ch.upper()


@dataclass(frozen=True)
class FreeGroup(Group):
    """Free group; elements are freely reduced tuples of nonzero ints."""

    rank: int = 2

    def __post_init__(self):
        if not 1 <= self.rank <= 26:
            raise ValueError("free group rank must be in 1..26")

    @property
    def label(self) -> str:
        return f"free:{self.rank}"

    def identity(self):
        return ()

    def mul(self, a, b):
        k = 0
        n = min(len(a), len(b))
        while k < n and a[-1 - k] == -b[k]:
            k += 1
        return a[: len(a) - k] + b[k:]

    def inv(self, a):
        return tuple(-x for x in reversed(a))

    def letter(self, ch):
        return (_letter_index(ch, self.rank),)

    def standard_generators(self):
        return tuple((i,) for i in range(1, self.rank + 1)) + tuple(
            (-i,) for i in range(1, self.rank + 1)
        )

    def format(self, g):
        return "".join(_index_letter(i) for i in g) or "1"


@dataclass(frozen=True)
class FreeAbelian(Group):
    """``Z^d`` with integer-tuple elements."""

    dim: int = 1

    def __post_init__(self):
        if not 1 <= self.dim <= 26:
            raise ValueError("dimension must be in 1..26")

    @property
    def label(self) -> str:
        return f"zd:{self.dim}"

    def identity(self):
        return (0,) * self.dim

    def mul(self, a, b):
        return tuple(x + y for x, y in zip(a, b))

    def inv(self, a):
        return tuple(-x for x in a)

    def letter(self, ch):
        i = _letter_index(ch, self.dim)
        v = [0] * self.dim
        v[abs(i) - 1] = 1 if i > 0 else -1
        return tuple(v)

    def standard_generators(self):
        gens = []
        for sgn in (1, -1):
            for i in range(self.dim):
                v = [0] * self.dim
                v[i] = sgn
                gens.append(tuple(v))
        return tuple(gens)

    def format(self, g):
        out = []
        for i, x in enumerate(g):
            out.append(_index_letter((i + 1) if x > 0 else -(i + 1)) * abs(x))
        return "".join(out) or "1"


@dataclass(frozen=True)
class Lamplighter(Group):
    """``Z/2 wr Z``; elements are ``(sorted lit lamps, head position)``.

    Letters: ``t``/``T`` move the head, ``a`` (= ``A``) toggles the lamp under it.
    """

    @property
    def label(self) -> str:
        return "lamplighter"

    def identity(self):
        return ((), 0)

    def mul(self, a, b):
        lamps_a, p = a
        lamps_b, q = b
        lit = set(lamps_a)
        lit.symmetric_difference_update(x + p for x in lamps_b)
        return (tuple(sorted(lit)), p + q)

    def inv(self, a):
        lamps, p = a
        return (tuple(sorted(x - p for x in lamps)), -p)

    def letter(self, ch):
        if ch == "t":
            return ((), 1)
        if ch == "T":
            return ((), -1)
        if ch in "aA":
            return ((0,), 0)
        raise ValueError(f"unknown generator symbol {ch!r}")

    def standard_generators(self):
        return (((), 1), ((), -1), ((0,), 0))

    def format(self, g):
        lamps, p = g
        out, pos = [], 0
        for x in lamps:
            out.append(("t" if x > pos else "T") * abs(x - pos))
            out.append("a")
            pos = x
        out.append(("t" if p > pos else "T") * abs(p - pos))
        return "".join(out) or "1"


@dataclass(frozen=True)
class Heisenberg(Group):
    """Integer Heisenberg group, ``(x,y,z)(x',y',z') = (x+x', y+y', z+z'+x y')``."""

    @property
    def label(self) -> str:
        return "heisenberg"

    def identity(self):
        return (0, 0, 0)

    def mul(self, a, b):
        return (a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1])

    def inv(self, a):
        return (-a[0], -a[1], -a[2] + a[0] * a[1])

    def letter(self, ch):
        table = {"a": (1, 0, 0), "A": (-1, 0, 0), "b": (0, 1, 0), "B": (0, -1, 0)}
        if ch not in table:
            raise ValueError(f"unknown generator symbol {ch!r}")
        return table[ch]

    def standard_generators(self):
        return ((1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, -1, 0))

    def format(self, g):
        x, y, z = g
        c = z - x * y  # (x,y,z) = a^x b^y [a,b]^c with [a,b] = abAB = (0,0,1)
        out = ("a" if x > 0 else "A") * abs(x) + ("b" if y > 0 else "B") * abs(y)
        out += ("abAB" if c > 0 else "baBA") * abs(c)
        return out or "1"


@dataclass(frozen=True)
class FreeMonoid(Group):
    """Free monoid on ``rank`` letters (no inverses)."""

    rank: int = 2
    is_group = False

    @property
    def label(self) -> str:
        return f"monoid:{self.rank}"

    def identity(self):
        return ()

    def mul(self, a, b):
        return a + b

    def inv(self, a):
        if a:
            raise DomainError("free monoid elements other than e have no inverse")
        return ()

    def letter(self, ch):
        i = _letter_index(ch, self.rank)
        if i < 0:
            raise ValueError(f"free monoid has no inverse letter {ch!r}")
        return (i,)

    def standard_generators(self):
        return tuple((i,) for i in range(1, self.rank + 1))

    def format(self, g):
        return "".join(_index_letter(i) for i in g) or "1"


# --------------------------------------------------------------------------
# group specs


@dataclass(frozen=True)
class GroupSpec:
    """A group together with an explicit finite generating list ``K``."""

    group: Group
    generators: tuple = ()

    def __post_init__(self):
        gens = tuple(self.generators) or self.group.standard_generators()
        if not gens:
            raise ValueError("generating set must be nonempty")
        uniq = tuple(dict.fromkeys(gens))
        if self.group.identity() in uniq and len(uniq) == 1:
            raise ValueError("generating set consists of the identity only")
        object.__setattr__(self, "generators", uniq)

    @property
    def symmetric(self) -> bool:
        if not self.group.is_group:
            return False
        gs = set(self.generators)
        return all(self.group.inv(g) in gs for g in gs)

    def symmetrized(self) -> "GroupSpec":
        if self.symmetric:
            return self
        inv = tuple(self.group.inv(g) for g in self.generators)
        return GroupSpec(self.group, self.generators + inv)

    @property
    def is_standard(self) -> bool:
        return set(self.generators) == set(self.group.standard_generators())

    def label(self) -> str:
        base = self.group.label
        if self.is_standard:
            return base
        return base + ";gens=" + ",".join(self.group.format(g) for g in self.generators)

    def word(self, text: str) -> Element:
        return self.group.word(text)

    def length(self, g: Element, max_radius: int = 10_000) -> int:
        """Word length of ``g`` with respect to the symmetrized generators."""
        grp = self.group
        if self.is_standard or (self.symmetrized().is_standard and grp.is_group):
            if isinstance(grp, (FreeGroup, FreeMonoid)):
                return len(g)
            if isinstance(grp, FreeAbelian):
                return sum(abs(x) for x in g)
        gens = self.symmetrized().generators if grp.is_group else self.generators
        return _bfs_length(grp, gens, g, max_radius)


class _SphereGrowth:
    """Breadth-first distances from ``e``, grown on demand and shared per metric."""

    def __init__(self, grp: Group, gens):
        self.grp = grp
        self.gens = gens
        e = grp.identity()
        self.dist = {e: 0}
        self.frontier = [e]
        self.radius = 0

    def length(self, target, max_radius: int) -> int:
        while target not in self.dist:
            if self.radius >= max_radius or not self.frontier:
                raise DomainError(f"element not within radius {max_radius}")
            self.radius += 1
            nxt = []
            for x in self.frontier:
                for s in self.gens:
                    y = self.grp.mul(x, s)
                    if y not in self.dist:
                        self.dist[y] = self.radius
                        nxt.append(y)
            self.frontier = nxt
            if len(self.dist) > DEFAULT_MAX_ELEMENTS:
                raise ResourceCapError("word length search exceeded element cap")
        return self.dist[target]


@functools.lru_cache(maxsize=16)
def _sphere_growth(grp: Group, gens: tuple) -> _SphereGrowth:
    return _SphereGrowth(grp, gens)


def _bfs_length(grp: Group, gens, target, max_radius: int) -> int:
    return _sphere_growth(grp, tuple(gens)).length(target, max_radius)


def make_group(family: str, rank: int | None = None) -> Group:
    if family == "free":
        return FreeGroup(rank or 2)
    if family in ("zd", "free_abelian"):
        return FreeAbelian(rank or 1)
    if family == "lamplighter":
        return Lamplighter()
    if family == "heisenberg":
        return Heisenberg()
    if family in ("monoid", "free_monoid"):
        return FreeMonoid(rank or 2)
    raise ValueError(f"unknown group family {family!r}")


def parse_group_spec(text: str) -> GroupSpec:
    """Parse ``free:2``, ``zd:3``, ``lamplighter``, ``heisenberg``, ``monoid:2``,
    optionally followed by ``;gens=w1,w2,...``."""
    head, _, tail = text.strip().partition(";")
    family, _, arg = head.strip().partition(":")
    try:
        rank = int(arg) if arg else None
    except ValueError as exc:
        raise ValueError(f"bad group rank in {text!r}") from exc
    if family in ("lamplighter", "heisenberg") and rank is not None:
        raise ValueError(f"{family} takes no rank")
    group = make_group(family, rank)
    gens: tuple = ()
    if tail:
        key, _, val = tail.partition("=")
        if key.strip() != "gens" or not val.strip():
            raise ValueError(f"bad generator suffix in {text!r}")
        gens = tuple(group.word(w) for w in val.split(","))
    return GroupSpec(group, gens)


def canonicalize(family: str, raw_word: str, rank: int | None = None) -> Element:
    return make_group(family, rank).word(raw_word)


# --------------------------------------------------------------------------
# balls


@dataclass(frozen=True)
class BallIndex:
    """The ball ``B_R``: products of at most ``R`` generators.

    Elements are listed breadth first, each sphere sorted by canonical form.
    ``adjacency[j, i]`` is the index of ``elements[i] * generators[j]`` or -1.
    """

    spec: GroupSpec
    radius: int
    elements: tuple
    depth: np.ndarray
    adjacency: np.ndarray | None = None
    index: dict = field(default_factory=dict, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, g) -> bool:
        return g in self.index

    def position(self, g) -> int:
        return self.index[g]


def ball(
    spec: GroupSpec,
    radius: int,
    max_elements: int = DEFAULT_MAX_ELEMENTS,
    with_adjacency: bool = True,
) -> BallIndex:
    """Breadth-first closure of ``{e}`` under right multiplication by ``K``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    grp = spec.group
    gens = spec.generators
    e = grp.identity()
    elements = [e]
    index = {e: 0}
    depth = [0]
    frontier = [e]
    for r in range(1, radius + 1):
        new = set()
        for x in frontier:
            for s in gens:
                y = grp.mul(x, s)
                if y not in index:
                    new.add(y)
        if len(elements) + len(new) > max_elements:
            raise ResourceCapError(
                f"ball of radius {r} in {spec.label()} exceeds {max_elements} elements"
            )
        layer = sorted(new)
        for y in layer:
            index[y] = len(elements)
            elements.append(y)
            depth.append(r)
        frontier = layer
    adj = None
    if with_adjacency:
        adj = np.full((len(gens), len(elements)), -1, dtype=np.int64)
        for j, s in enumerate(gens):
            row = adj[j]
            for i, x in enumerate(elements):
                row[i] = index.get(grp.mul(x, s), -1)
    return BallIndex(spec, radius, tuple(elements), np.asarray(depth, dtype=np.int64), adj, index)


def free_ball_size(rank: int, radius: int) -> int:
    """Closed form ``|B_R|`` in the free group with standard generators."""
    if rank == 1:
        return 2 * radius + 1
    return (rank * (2 * rank - 1) ** radius - 1) // (rank - 1)


# --------------------------------------------------------------------------
# finitely supported functions


@dataclass(frozen=True, eq=False)
class FiniteFunction:
    """Finitely supported real function on a group; explicit zeros are dropped."""

    group: Group
    values: dict

    def __post_init__(self):
        object.__setattr__(
            self, "values", {x: float(v) for x, v in self.values.items() if v != 0}
        )

    @classmethod
    def delta(cls, group: Group, g=None) -> "FiniteFunction":
        return cls(group, {group.identity() if g is None else g: 1.0})

    def __call__(self, x) -> float:
        return self.values.get(x, 0.0)

    def __getitem__(self, x) -> float:
        return self.values[x]

    def __iter__(self) -> Iterator:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteFunction):
            return NotImplemented
        return self.group == other.group and self.values == other.values

    __hash__ = None  # type: ignore[assignment]

    def support(self) -> set:
        return set(self.values)

    def multiset(self) -> ValueMultiset:
        return ValueMultiset.of_abs(self.values.values())

    def sup_norm(self) -> float:
        return max((abs(v) for v in self.values.values()), default=0.0)

    def _check(self, other: "FiniteFunction"):
        if self.group != other.group:
            raise ValueError("functions live on different groups")

    def __add__(self, other: "FiniteFunction") -> "FiniteFunction":
        self._check(other)
        out = dict(self.values)
        for x, v in other.values.items():
            out[x] = out.get(x, 0.0) + v
        return FiniteFunction(self.group, out)

    def __sub__(self, other: "FiniteFunction") -> "FiniteFunction":
        return self + other.scaled(-1.0)

    def scaled(self, a: float) -> "FiniteFunction":
        return FiniteFunction(self.group, {x: a * v for x, v in self.values.items()})

    def map_values(self, fn) -> "FiniteFunction":
        return FiniteFunction(self.group, {x: fn(v) for x, v in self.values.items()})


def translate(f: FiniteFunction, g) -> FiniteFunction:
    """Right translation ``(alpha(g) f)(x) = f(x g)``."""
    grp = f.group
    gi = grp.inv(g)
    return FiniteFunction(grp, {grp.mul(y, gi): v for y, v in f.values.items()})


def left_translate(f: FiniteFunction, g) -> FiniteFunction:
    """Left translation ``(beta(g) f)(x) = f(g^-1 x)``."""
    grp = f.group
    return FiniteFunction(grp, {grp.mul(g, y): v for y, v in f.values.items()})


def invert(f: FiniteFunction) -> FiniteFunction:
    """``x -> f(x^-1)``; conjugates the left action into the right one."""
    grp = f.group
    return FiniteFunction(grp, {grp.inv(y): v for y, v in f.values.items()})


def difference(f: FiniteFunction, g, action: str = "right") -> FiniteFunction:
    """``alpha(g) f - f`` (``action="right"``) or ``beta(g) f - f``."""
    moved = translate(f, g) if action == "right" else left_translate(f, g)
    return moved - f


def function_on_ball(b: BallIndex, values: Iterable[float]) -> FiniteFunction:
    return FiniteFunction(b.spec.group, dict(zip(b.elements, values)))

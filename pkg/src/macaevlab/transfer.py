"""Pulling lower bounds through injective Lipschitz maps.

For ``rho: G_1 -> G_2`` injective with ``rho(h g_p) in rho(h) K^M`` and a
symmetric ``K`` on the target,

    |alpha(g_p)(f o rho) - f o rho|_Phi <= M |K|^M max_{k in K} |alpha(k) f - f|_Phi,

so a certified bound ``c`` on ``G_1`` gives ``c / (M |K|^M)`` on ``G_2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DomainError
from .groups import FiniteFunction, GroupSpec, parse_group_spec
from .kphi import Certificate, certify_lower
from .norms import NormingFunction


@dataclass(frozen=True, eq=False)
class EmbeddingMap:
    """Finite table of an injective map on a source ball.

    ``lipschitz_M`` is the displacement radius in the target; ``distortion``
    (optional) is ``L`` with ``|h|_source <= L |rho(h)|_target``, declared for
    maps known globally and checked on the table.  Without it the pullback of
    a target function cannot be confined to the table domain.
    """

    source: GroupSpec
    target: GroupSpec
    table: dict
    lipschitz_M: int
    domain_radius: int
    distortion: int | None = None

    def __post_init__(self):
        src, tgt = self.source.group, self.target.group
        if self.table.get(src.identity()) != tgt.identity():
            raise DomainError("embedding must send e to e")
        images = list(self.table.values())
        if len(set(images)) != len(images):
            raise DomainError("embedding table is not injective")
        if self.lipschitz_M < 1:
            raise DomainError("Lipschitz constant must be a positive integer")
        M = lipschitz_displacement(self.source, self.target, self.table)
        if M > self.lipschitz_M:
            raise DomainError(f"table needs M >= {M}, declared {self.lipschitz_M}")
        if self.distortion is not None:
            for h, x in self.table.items():
                if self.source.length(h) > self.distortion * self.target.length(x):
                    raise DomainError(f"distortion bound fails at {src.format(h)}")

    def __call__(self, h):
        try:
            return self.table[h]
        except KeyError:
            raise DomainError(f"{self.source.group.format(h)} is outside the table domain") from None


def lipschitz_displacement(source: GroupSpec, target: GroupSpec, table: dict) -> int:
    """Largest target length of ``rho(h)^-1 rho(h g)`` over table-adjacent pairs."""
    src, tgt = source.group, target.group
    gens = source.symmetrized().generators if src.is_group else source.generators
    worst = 0
    for h, x in table.items():
        for g in gens:
            hg = src.mul(h, g)
            if hg in table:
                worst = max(worst, target.length(tgt.mul(tgt.inv(x), table[hg])))
    return worst


def homomorphism_embedding(
    source: GroupSpec,
    target: GroupSpec,
    images: dict,
    domain_radius: int,
    lipschitz_M: int | None = None,
    distortion: int | None = None,
) -> EmbeddingMap:
    """Tabulate the homomorphism fixed by ``images`` (source generator -> target
    element) on the source ball of radius ``domain_radius``."""
    src, tgt = source.group, target.group
    gen_img = dict(images)
    if src.is_group:
        for g in list(gen_img):
            gen_img.setdefault(src.inv(g), tgt.inv(gen_img[g]))
    gens = source.symmetrized().generators if src.is_group else source.generators
    missing = [g for g in gens if g not in gen_img]
    if missing:
        raise ValueError(f"no image given for generator {src.format(missing[0])}")
    table = {src.identity(): tgt.identity()}
    frontier = [src.identity()]
    for _ in range(domain_radius):
        nxt = []
        for h in frontier:
            for g in gens:
                y = src.mul(h, g)
                if y not in table:
                    table[y] = tgt.mul(table[h], gen_img[g])
                    nxt.append(y)
        frontier = nxt
    if lipschitz_M is None:
        lipschitz_M = max(1, lipschitz_displacement(source, target, table))
    return EmbeddingMap(source, target, table, lipschitz_M, domain_radius, distortion)


def generator_inclusion(n_source: int, n_target: int, domain_radius: int) -> EmbeddingMap:
    """``F_n -> F_m`` sending ``g_i`` to ``g_i``; isometric, so ``L = 1``."""
    if n_target < n_source:
        raise ValueError("target rank must be at least the source rank")
    source = parse_group_spec(f"free:{n_source}")
    target = parse_group_spec(f"free:{n_target}")
    images = {(i,): (i,) for i in range(1, n_source + 1)}
    return homomorphism_embedding(source, target, images, domain_radius, distortion=1)


def identity_reexpression(source: GroupSpec, target: GroupSpec, domain_radius: int) -> EmbeddingMap:
    """Identity map between two generating sets of one group.

    ``M`` is measured on the table; the distortion is the largest source length
    of a target generator.
    """
    if source.group != target.group:
        raise ValueError("re-expression needs the same group on both sides")
    images = {g: g for g in source.generators}
    L = max(source.length(k) for k in target.symmetrized().generators)
    return homomorphism_embedding(source, target, images, domain_radius, distortion=L)


def free_monoid_inclusion(rank: int, domain_radius: int) -> EmbeddingMap:
    """Positive words of the free monoid into ``F_rank``."""
    source = parse_group_spec(f"monoid:{rank}")
    target = parse_group_spec(f"free:{rank}")
    images = {(i,): (i,) for i in range(1, rank + 1)}
    return homomorphism_embedding(source, target, images, domain_radius, lipschitz_M=1, distortion=1)


# --------------------------------------------------------------------------
# operations


def pullback(f: FiniteFunction, emb: EmbeddingMap) -> FiniteFunction:
    """``f o rho`` on the source.  By injectivity its value multiset is a
    sub-multiset of ``f``'s, so every gauge norm contracts."""
    if f.group != emb.target.group:
        raise ValueError("function does not live on the embedding target")
    if emb.distortion is not None:
        reach = max((emb.target.length(x) for x in f.support()), default=0)
        if emb.distortion * reach > emb.domain_radius:
            raise DomainError("support of f o rho may leave the table domain")
    else:
        image = set(emb.table.values())
        if not f.support() <= image:
            raise DomainError("support of f is not covered by the table image")
    return FiniteFunction(emb.source.group, {h: f(x) for h, x in emb.table.items() if f(x) != 0})


def transfer_bound(emb: EmbeddingMap, K_target: GroupSpec | None = None) -> int:
    """The factor ``M |K|^M`` of the pullback chain.

    ``K`` defaults to the symmetrized target generators; an explicit ``K``
    must be symmetric and generate the metric ``M`` was measured in.
    """
    K = emb.target.symmetrized() if K_target is None else K_target
    if not K.symmetric:
        raise DomainError("transfer needs a symmetric target generating set")
    if K.group != emb.target.group or set(K.generators) != set(emb.target.symmetrized().generators):
        raise DomainError("K differs from the metric the Lipschitz constant was measured in")
    return emb.lipschitz_M * len(K.generators) ** emb.lipschitz_M


@dataclass(frozen=True)
class TransferResult:
    bound: float
    valid_radius: int
    factor: int
    source_bound: float


def transfer_lower(
    cert: Certificate,
    emb: EmbeddingMap,
    phi: NormingFunction,
    K_target: GroupSpec | None = None,
) -> TransferResult:
    """Lower bound on the target from a right-action certificate on the source.

    A target ``f`` supported in ``B_r`` pulls back into ``B_{L r}``; ``r`` is
    chosen so that ``L r`` stays inside the table and strictly inside the
    certificate's residual radius.
    """
    if cert.action != "right":
        raise DomainError("transfer uses the right translation action; need a right-action certificate")
    if cert.spec.group != emb.source.group:
        raise DomainError("certificate and embedding source differ")
    if cert.phi != phi:
        raise DomainError(f"certificate is for {cert.phi}, not {phi}")
    if set(cert.spec.symmetrized().generators) != set(emb.source.symmetrized().generators):
        raise DomainError("certificate and embedding use different source metrics")
    if emb.distortion is None:
        raise DomainError("radius bookkeeping needs a distortion bound on the embedding")
    factor = transfer_bound(emb, K_target)
    L = emb.distortion
    r = min(emb.domain_radius - 1, cert.residual_radius - 1) // L
    if r < 0:
        raise DomainError("no target radius is covered by the table and certificate")
    source_bound = certify_lower(cert, L * r)
    return TransferResult(source_bound / factor, r, factor, source_bound)


# --------------------------------------------------------------------------
# file format


def embedding_to_json(emb: EmbeddingMap) -> str:
    src, tgt = emb.source.group, emb.target.group
    data = {
        "source": emb.source.label(),
        "target": emb.target.label(),
        "M": emb.lipschitz_M,
        "domain_radius": emb.domain_radius,
        "distortion": emb.distortion,
        "pairs": [[src.format(h), tgt.format(x)] for h, x in emb.table.items()],
    }
    return json.dumps(data, indent=1)


def embedding_from_json(text: str) -> EmbeddingMap:
    data = json.loads(text)
    source = parse_group_spec(data["source"])
    target = parse_group_spec(data["target"])
    table = {source.word(a): target.word(b) for a, b in data["pairs"]}
    radius = data.get("domain_radius")
    if radius is None:
        radius = max(source.length(h) for h in table)
    return EmbeddingMap(source, target, table, int(data["M"]), int(radius), data.get("distortion"))

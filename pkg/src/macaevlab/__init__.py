"""Rearrangement-invariant norms, minimax bounds on Cayley balls and tree-isometry simulations."""

__version__ = "0.1.0"

from .errors import (
    CertificateError,
    DomainError,
    InvariantViolation,
    InvertedSandwich,
    MacaevLabError,
    ResourceCapError,
    ScheduleError,
)
from .norms import (
    MACAEV,
    TRACE,
    Interval,
    NormingFunction,
    ValueMultiset,
    dual_plus_norm,
    gauge_norm,
    harmonic,
    macaev_norm,
    pairing,
    phi_rank,
    rearrange,
)
from .groups import (
    FiniteFunction,
    GroupSpec,
    ball,
    canonicalize,
    left_translate,
    parse_group_spec,
    translate,
)

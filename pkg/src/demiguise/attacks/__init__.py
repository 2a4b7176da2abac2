"""Attack algorithms and their shared configuration/result types."""

from .base import (
    AttackConfig,
    AttackResult,
    DistanceKind,
    f_margin,
    f_margin_t,
    make_distance_fn,
    scalar_distance,
    tanh_decode,
    tanh_encode,
)
from .cw import cw_attack
from .hsja import hsja_attack
from .mifgsm import input_diversity, mifgsm_attack

__all__ = [
    "AttackConfig",
    "AttackResult",
    "DistanceKind",
    "f_margin",
    "f_margin_t",
    "make_distance_fn",
    "scalar_distance",
    "tanh_decode",
    "tanh_encode",
    "cw_attack",
    "hsja_attack",
    "input_diversity",
    "mifgsm_attack",
]

"""Visibility-mask generators.

The training-time random mask strategy draws a fresh ratio r ~ U(0,1) per
sample, builds floor(T*r) zeros and T - floor(T*r) ones, and shuffles the
positions uniformly.  At least one timestamp is always left visible so the
layout-pooling encoder has something to pool.  Deterministic prefix masks
cover the extremely-short-input protocol.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ValidationError, VisibilityMask


class MaskKind(enum.Enum):
    RANDOM_RATIO = "random_ratio"
    FIXED_RATIO = "fixed_ratio"
    PREFIX = "prefix"
    FULL = "full"


@dataclass(frozen=True)
class MaskSpec:
    """Declarative mask recipe, expressible in the CLI config.

    ratio applies to fixed_ratio only, prefix_len to prefix only.
    """

    kind: MaskKind = MaskKind.RANDOM_RATIO
    ratio: float | None = None
    prefix_len: int | None = None

    def __post_init__(self):
        if self.kind is MaskKind.FIXED_RATIO:
            if self.ratio is None or not 0.0 <= self.ratio <= 1.0:
                raise ValidationError(f"fixed_ratio mask needs ratio in [0, 1], got {self.ratio}")
        if self.kind is MaskKind.PREFIX:
            if self.prefix_len is None or self.prefix_len < 1:
                raise ValidationError(f"prefix mask needs prefix_len >= 1, got {self.prefix_len}")

    @classmethod
    def parse(cls, text: str) -> "MaskSpec":
        """Parse mask spec strings: 'random', 'full', 'fixed:0.5', 'prefix:10'."""
        head, _, arg = text.strip().partition(":")
        head = head.lower()
        if head in ("random", "random_ratio"):
            return cls(MaskKind.RANDOM_RATIO)
        if head == "full":
            return cls(MaskKind.FULL)
        if head in ("fixed", "fixed_ratio"):
            try:
                return cls(MaskKind.FIXED_RATIO, ratio=float(arg))
            except ValueError:
                raise ValidationError(f"bad fixed mask ratio: {arg!r}")
        if head == "prefix":
            try:
                return cls(MaskKind.PREFIX, prefix_len=int(arg))
            except ValueError:
                raise ValidationError(f"bad prefix mask length: {arg!r}")
        raise ValidationError(f"unknown mask spec {text!r}")

    def describe(self) -> str:
        if self.kind is MaskKind.FIXED_RATIO:
            return f"fixed:{self.ratio}"
        if self.kind is MaskKind.PREFIX:
            return f"prefix:{self.prefix_len}"
        return "random" if self.kind is MaskKind.RANDOM_RATIO else "full"


def _shuffled_mask(length: int, zeros: int, rng: np.random.Generator) -> VisibilityMask:
    zeros = min(zeros, length - 1)  # keep at least one frame visible
    flags = np.ones(length, dtype=np.int8)
    flags[:zeros] = 0
    rng.shuffle(flags)
    return VisibilityMask(flags)


def random_mask(length: int, rng: np.random.Generator) -> tuple[VisibilityMask, float]:
    """Draw r ~ U(0,1) and return a uniformly shuffled mask with
    min(floor(T*r), T-1) zeros, together with the drawn ratio."""
    if length < 1:
        raise ValidationError(f"mask length must be >= 1, got {length}")
    ratio = float(rng.uniform(0.0, 1.0))
    mask = _shuffled_mask(length, math.floor(length * ratio), rng)
    return mask, ratio


def fixed_ratio_mask(length: int, ratio: float, rng: np.random.Generator) -> VisibilityMask:
    """Like random_mask but with the ratio held constant (controlled runs)."""
    if length < 1:
        raise ValidationError(f"mask length must be >= 1, got {length}")
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"ratio must be in [0, 1], got {ratio}")
    return _shuffled_mask(length, math.floor(length * ratio), rng)


def prefix_mask(length: int, visible_len: int) -> VisibilityMask:
    """First visible_len frames visible, the rest hidden; deterministic."""
    if length < 1:
        raise ValidationError(f"mask length must be >= 1, got {length}")
    if not 1 <= visible_len <= length:
        raise ValidationError(
            f"prefix length must be in [1, {length}], got {visible_len}"
        )
    flags = np.zeros(length, dtype=np.int8)
    flags[:visible_len] = 1
    return VisibilityMask(flags)


def full_mask(length: int) -> VisibilityMask:
    if length < 1:
        raise ValidationError(f"mask length must be >= 1, got {length}")
    return VisibilityMask(np.ones(length, dtype=np.int8))


def make_mask(spec: MaskSpec, length: int, rng: np.random.Generator | None = None) -> VisibilityMask:
    """Materialize a MaskSpec; rng is required for the stochastic kinds."""
    if spec.kind is MaskKind.FULL:
        return full_mask(length)
    if spec.kind is MaskKind.PREFIX:
        return prefix_mask(length, spec.prefix_len)
    if rng is None:
        raise ValidationError(f"mask kind {spec.kind.value} needs a random source")
    if spec.kind is MaskKind.FIXED_RATIO:
        return fixed_ratio_mask(length, spec.ratio, rng)
    return random_mask(length, rng)[0]

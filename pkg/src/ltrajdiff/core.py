"""Shared domain types plus the masking/selection primitives every other
module builds on.

Type constructors check structure (shapes, dtypes, value domains that would
make an object meaningless, e.g. a mask entry of 7).  Value-level invariants
such as finiteness, non-negative box sizes or "at least one visible frame"
are deliberately *not* enforced at construction time: `validate_sample`
reports them, so malformed data stays representable and diagnosable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LAYOUT_DIM = 5  # (x, y, w, h, d)

SPLITS = ("train", "val", "test")


class ValidationError(ValueError):
    """An operation's input contract was violated."""


def _readonly(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LayoutFrame:
    """One timestamp of the visual layout: bbox left-bottom corner, size, depth.

    x, y, w, h are in pixels; d is the forward camera distance in meters.
    """

    x: float
    y: float
    w: float
    h: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h, self.d], dtype=np.float64)


class LayoutSequence:
    """Ordered layout frames over T uniformly spaced timestamps, stored as a
    read-only (T, 5) float array with columns [x, y, w, h, d]."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != LAYOUT_DIM:
            raise ValidationError(f"layout values must be (T, 5), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValidationError("layout sequence needs at least one frame")
        object.__setattr__(self, "values", _readonly(arr))

    def __setattr__(self, name, value):
        raise AttributeError("LayoutSequence is immutable")

    @classmethod
    def from_frames(cls, frames: Iterable[LayoutFrame]) -> "LayoutSequence":
        return cls(np.stack([f.as_array() for f in frames]))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, LayoutSequence) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        return f"LayoutSequence(T={len(self)})"

    def frame(self, t: int) -> LayoutFrame:
        return LayoutFrame(*self.values[t])

    @property
    def frames(self) -> list[LayoutFrame]:
        return [LayoutFrame(*row) for row in self.values]


class MobileSignalSequence:
    """Per-timestamp sensor vector (T, C); channel meaning is opaque here and
    only assigned by the synthetic generator."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"mobile values must be (T, C), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("mobile sequence needs T >= 1 and C >= 1")
        object.__setattr__(self, "values", _readonly(arr))

    def __setattr__(self, name, value):
        raise AttributeError("MobileSignalSequence is immutable")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, MobileSignalSequence) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        return f"MobileSignalSequence(T={len(self)}, C={self.channel_count})"

    @property
    def channel_count(self) -> int:
        return self.values.shape[1]


class VisibilityMask:
    """Per-timestamp visibility flags; 1 = observed by the camera.

    An all-zero mask is constructible (so `validate_sample` can report it)
    but violates the domain invariant and is rejected by every consumer
    that needs a visible frame.
    """

    __slots__ = ("flags",)

    def __init__(self, flags):
        arr = np.asarray(flags)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValidationError(f"mask flags must be a non-empty 1-d list, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValidationError("mask flags must all be 0 or 1")
        object.__setattr__(self, "flags", _readonly(arr, dtype=np.int8))

    def __setattr__(self, name, value):
        raise AttributeError("VisibilityMask is immutable")

    def __len__(self) -> int:
        return self.flags.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, VisibilityMask) and np.array_equal(
            self.flags, other.flags
        )

    def __repr__(self) -> str:
        return f"VisibilityMask({self.flags.tolist()})"

    @property
    def visible_count(self) -> int:
        return int(self.flags.sum())


@dataclass(frozen=True)
class AgentSample:
    """One agent's paired modalities.  The mask is optional at rest; training
    draws a fresh one per epoch."""

    agent_id: str
    layout: LayoutSequence
    mobile: MobileSignalSequence
    mask: VisibilityMask | None = None


@dataclass
class Dataset:
    samples: list[AgentSample]
    split: str = "train"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.samples:
            raise ValidationError("dataset must contain at least one sample")
        channels = {s.mobile.channel_count for s in self.samples}
        if len(channels) != 1:
            raise ValidationError(f"all samples must share a channel count, got {sorted(channels)}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def channel_count(self) -> int:
        return self.samples[0].mobile.channel_count


def apply_mask(layout: LayoutSequence, mask: VisibilityMask) -> LayoutSequence:
    """Zero out every frame the camera did not observe (elementwise product
    of the layout with the 0/1 mask); visible frames pass through unchanged."""
    if len(layout) != len(mask):
        raise ValidationError(
            f"layout length {len(layout)} != mask length {len(mask)}"
        )
    return LayoutSequence(layout.values * mask.flags[:, None])


def visible_timestamps(mask: VisibilityMask) -> list[int]:
    """Ascending indices of the visible (flag = 1) timestamps."""
    return np.flatnonzero(mask.flags).tolist()


def validate_sample(sample: AgentSample) -> list[str]:
    """Check every domain invariant and return the full list of violations
    (empty list = valid).  Never raises on bad data."""
    violations: list[str] = []
    t_layout = len(sample.layout)
    if len(sample.mobile) != t_layout:
        violations.append(
            f"length mismatch: layout T={t_layout}, mobile T={len(sample.mobile)}"
        )
    if sample.mask is not None and len(sample.mask) != t_layout:
        violations.append(
            f"length mismatch: layout T={t_layout}, mask T={len(sample.mask)}"
        )
    if not np.isfinite(sample.layout.values).all():
        violations.append("non-finite layout value")
    if not np.isfinite(sample.mobile.values).all():
        violations.append("non-finite mobile value")
    lv = sample.layout.values
    if (lv[:, 2] < 0).any():
        violations.append("negative width")
    if (lv[:, 3] < 0).any():
        violations.append("negative height")
    if (lv[:, 4] <= 0).any():
        violations.append("non-positive depth")
    if sample.mask is not None and sample.mask.visible_count == 0:
        violations.append("empty mask (no visible timestamp)")
    return violations

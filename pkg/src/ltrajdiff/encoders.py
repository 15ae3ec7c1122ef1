"""Twin masked-sequence encoders.

Both run the same pre-norm transformer-encoder architecture but hold
independent weights (their input widths differ, so sharing is impossible
anyway).  The temporal alignment module (TAM) embeds the concatenated
masked-layout + mobile rows into one vector per timestamp.  The layout
extracting module (LEM) encodes only the visible layout frames, each tagged
with the positional encoding of its original index, and mean-pools them into
a single layout/size embedding.

Pre-norm layers without a final norm keep the residual path clean: zeroing
the attention output and second feed-forward projections turns every layer
into an exact identity, which the wiring probes in the test-suite rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import ValidationError

LAYOUT_DIM = 5


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    feedforward_dim: int = 128
    max_len: int = 128

    def __post_init__(self):
        for name in ("embed_dim", "num_heads", "feedforward_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ValidationError("num_layers must be >= 0")
        if self.embed_dim % self.num_heads != 0:
            raise ValidationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )


def sinusoidal_encoding(positions: torch.Tensor, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Standard fixed sin/cos encoding for integer positions, shape (..., dim)."""
    positions = positions.to(dtype)
    half = (dim + 1) // 2
    freqs = torch.exp(
        -torch.arange(half, dtype=dtype) * (torch.log(torch.tensor(10000.0, dtype=dtype)) / max(half - 1, 1))
    )
    args = positions[..., None] * freqs
    enc = torch.zeros(*positions.shape, dim, dtype=dtype)
    enc[..., 0::2] = torch.sin(args)[..., : (dim + 1) // 2]
    enc[..., 1::2] = torch.cos(args)[..., : dim // 2]
    return enc


def _encoder_stack(config: EncoderConfig, dtype) -> nn.ModuleList:
    return nn.ModuleList(
        nn.TransformerEncoderLayer(
            d_model=config.embed_dim,
            nhead=config.num_heads,
            dim_feedforward=config.feedforward_dim,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
            dtype=dtype,
        )
        for _ in range(config.num_layers)
    )


class _SequenceEncoder(nn.Module):
    """Input projection + positional encoding + pre-norm transformer stack."""

    def __init__(self, input_dim: int, config: EncoderConfig, dtype=torch.float64):
        super().__init__()
        self.config = config
        self.in_proj = nn.Linear(input_dim, config.embed_dim, dtype=dtype)
        self.layers = _encoder_stack(config, dtype)
        pe = sinusoidal_encoding(torch.arange(config.max_len), config.embed_dim, dtype)
        self.register_buffer("pos_encoding", pe)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[-2]
        if t > self.config.max_len:
            raise ValidationError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        return self.in_proj(x) + self.pos_encoding[:t]

    def encode(self, h: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        for layer in self.layers:
            h = layer(h, src_key_padding_mask=key_padding_mask)
        return h


class TemporalAlignmentModule(_SequenceEncoder):
    """Aligns the concatenated (masked layout, mobile) rows into per-timestamp
    embeddings of width embed_dim."""

    def __init__(self, mobile_channels: int, config: EncoderConfig, dtype=torch.float64):
        super().__init__(LAYOUT_DIM + mobile_channels, config, dtype)
        self.out_proj = nn.Linear(config.embed_dim, config.embed_dim, dtype=dtype)

    def forward(self, masked_layout: torch.Tensor, mobile: torch.Tensor) -> torch.Tensor:
        """(B, T, 5) + (B, T, C) -> (B, T, D); also accepts unbatched (T, *)."""
        unbatched = masked_layout.dim() == 2
        if unbatched:
            masked_layout, mobile = masked_layout[None], mobile[None]
        if masked_layout.shape[:2] != mobile.shape[:2]:
            raise ValidationError(
                f"layout {tuple(masked_layout.shape)} and mobile {tuple(mobile.shape)} disagree on (B, T)"
            )
        x = torch.cat([masked_layout, mobile], dim=-1)
        if not torch.isfinite(x).all():
            raise ValidationError("non-finite encoder input")
        out = self.out_proj(self.encode(self.embed(x)))
        return out[0] if unbatched else out


class LayoutExtractingModule(_SequenceEncoder):
    """Pools the visible layout frames into a single embedding.

    The full sequence is embedded (so each frame keeps the positional code of
    its original index) but hidden timestamps are excluded both as attention
    keys and from the mean pool, making the output exactly invariant to
    whatever values sit in the hidden slots.
    """

    def __init__(self, config: EncoderConfig, dtype=torch.float64):
        super().__init__(LAYOUT_DIM, config, dtype)

    def forward(self, layout: torch.Tensor, visible: torch.Tensor) -> torch.Tensor:
        """(B, T, 5) + (B, T) visibility -> (B, D); also accepts unbatched."""
        unbatched = layout.dim() == 2
        if unbatched:
            layout, visible = layout[None], visible[None]
        visible = visible.to(torch.bool)
        if visible.shape != layout.shape[:2]:
            raise ValidationError(
                f"visibility shape {tuple(visible.shape)} does not match layout {tuple(layout.shape)}"
            )
        if not visible.any(dim=1).all():
            raise ValidationError("every sample needs at least one visible frame")
        if not torch.isfinite(layout[visible]).all():
            raise ValidationError("non-finite encoder input")

        # Hidden slots may hold garbage; zero them so the (masked-out)
        # projections stay finite, then drop them from keys and pooling.
        safe = torch.where(visible[..., None], layout, torch.zeros_like(layout))
        h = self.encode(self.embed(safe), key_padding_mask=~visible)
        weights = visible.to(h.dtype)
        pooled = (h * weights[..., None]).sum(dim=1) / weights.sum(dim=1, keepdim=True)
        return pooled[0] if unbatched else pooled


def count_params(module: nn.Module) -> int:
    """Total scalar parameter count."""
    return sum(p.numel() for p in module.parameters())

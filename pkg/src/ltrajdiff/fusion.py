"""Modality fusion: the temporal embedding is mapped per timestamp to a mean
and a positive scale, which affinely modulate the (time-broadcast) projected
layout embedding: z_t = scale_t * g(o) + mu_t.

The scale passes through softplus by default so it stays positive; `raw`
mode keeps the unconstrained linear output for ablation.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ValidationError

SIGMA_MODES = ("softplus", "raw")


class ModalityFusionModule(nn.Module):
    def __init__(self, embed_dim: int, sigma_mode: str = "softplus", dtype=torch.float64):
        super().__init__()
        if sigma_mode not in SIGMA_MODES:
            raise ValidationError(f"sigma_mode must be one of {SIGMA_MODES}, got {sigma_mode!r}")
        self.embed_dim = embed_dim
        self.sigma_mode = sigma_mode
        self.stats_proj = nn.Linear(embed_dim, 2 * embed_dim, dtype=dtype)  # f: e_t -> (mu_t, raw_t)
        self.layout_proj = nn.Linear(embed_dim, embed_dim, dtype=dtype)  # g: o -> g(o)

    def statistics(self, temporal: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-timestamp (mu, scale) derived from the temporal embedding."""
        mu, raw = self.stats_proj(temporal).chunk(2, dim=-1)
        scale = F.softplus(raw) if self.sigma_mode == "softplus" else raw
        return mu, scale

    def forward(self, temporal: torch.Tensor, layout_embed: torch.Tensor | None) -> torch.Tensor:
        """(B, T, D) temporal + (B, D) layout embedding -> (B, T, D) fused
        conditioning; layout_embed None degenerates to the mu branch alone.
        Unbatched (T, D) + (D,) inputs are accepted too."""
        unbatched = temporal.dim() == 2
        if unbatched:
            temporal = temporal[None]
            layout_embed = None if layout_embed is None else layout_embed[None]
        if temporal.shape[-1] != self.embed_dim:
            raise ValidationError(
                f"temporal embedding width {temporal.shape[-1]} != embed_dim {self.embed_dim}"
            )
        mu, scale = self.statistics(temporal)
        if layout_embed is None:
            z = mu
        else:
            if layout_embed.shape != (temporal.shape[0], self.embed_dim):
                raise ValidationError(
                    f"layout embedding shape {tuple(layout_embed.shape)} incompatible with temporal {tuple(temporal.shape)}"
                )
            z = scale * self.layout_proj(layout_embed)[:, None, :] + mu
        return z[0] if unbatched else z

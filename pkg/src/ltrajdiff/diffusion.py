"""Denoising-diffusion machinery for layout sequences.

The forward corruption interpolates the clean sequence toward unit Gaussian
noise using the cumulative signal level: y_k = sqrt(abar_k) y0 +
sqrt(1 - abar_k) eps, with abar the cumulative product of the per-step
survival rates (1 - beta).  The reverse chain is the standard ancestral
update from the predicted noise, with sigma_k = sqrt(beta_k) for k > 1 and a
deterministic final step; a fully deterministic mode (all injected noise
suppressed) exists for testing and reproducible evaluation.

Steps are 1-indexed: k runs over [1, K].  The array helpers accept numpy
arrays or torch tensors alike (they only use elementwise arithmetic), so the
same code path serves training, sampling and the numpy-based test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .core import ValidationError
from .encoders import EncoderConfig, sinusoidal_encoding

LAYOUT_DIM = 5


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (K,) in (0, 1), non-decreasing
    alphas: np.ndarray  # 1 - betas
    alpha_bars: np.ndarray  # cumulative product of alphas

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.shape[0] < 1:
            raise ValidationError("betas must be a non-empty 1-d array")
        if not ((betas > 0) & (betas < 1)).all():
            raise ValidationError("betas must lie in (0, 1)")
        if (np.diff(betas) < 0).any():
            raise ValidationError("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64))
        object.__setattr__(self, "alpha_bars", np.asarray(self.alpha_bars, dtype=np.float64))

    @property
    def K(self) -> int:
        return self.betas.shape[0]

    def check_step(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ValidationError(f"diffusion step must be in [1, {self.K}], got {k}")


def linear_schedule(K: int, beta_start: float = 1e-4, beta_end: float = 0.05) -> NoiseSchedule:
    """Linearly spaced betas (inclusive endpoints) with derived alpha series."""
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, K)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def _gather(series: np.ndarray, k, like):
    """Schedule value(s) at step(s) k, shaped to broadcast over `like`."""
    if np.ndim(k) == 0:
        return float(series[int(k) - 1])
    idx = np.asarray(k, dtype=np.int64) - 1
    vals = series[idx].reshape((-1,) + (1,) * (like.ndim - 1))
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(vals, dtype=like.dtype, device=like.device)
    return vals


def forward_diffuse(y0, k, eps, schedule: NoiseSchedule):
    """Corrupt y0 to step k given the caller-supplied noise draw.

    k may be a scalar step or a per-row vector matching y0's leading axis.
    """
    if np.ndim(k) == 0:
        schedule.check_step(int(k))
    else:
        for step in np.asarray(k).ravel():
            schedule.check_step(int(step))
    abar = _gather(schedule.alpha_bars, k, y0)
    return abar**0.5 * y0 + (1.0 - abar) ** 0.5 * eps


def diffusion_loss(eps_hat, eps, weight: float = 1.0):
    """weight * mean squared elementwise difference (works for numpy or torch)."""
    if weight <= 0:
        raise ValidationError(f"loss weight must be > 0, got {weight}")
    return weight * ((eps_hat - eps) ** 2).mean()


def denoise_step(
    y_k,
    eps_hat,
    k: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
):
    """One ancestral reverse step: remove the predicted noise and, for k > 1,
    re-inject sigma_k = sqrt(beta_k) Gaussian noise (suppressed when
    deterministic)."""
    schedule.check_step(k)
    beta = float(schedule.betas[k - 1])
    alpha = float(schedule.alphas[k - 1])
    abar = float(schedule.alpha_bars[k - 1])
    mean = (y_k - (beta / math.sqrt(1.0 - abar)) * eps_hat) / math.sqrt(alpha)
    if k == 1 or deterministic:
        return mean
    if rng is None:
        raise ValidationError("stochastic denoise_step needs a random source")
    xi = rng.standard_normal(tuple(y_k.shape))
    if isinstance(y_k, torch.Tensor):
        xi = torch.as_tensor(xi, dtype=y_k.dtype, device=y_k.device)
    return mean + math.sqrt(beta) * xi


class NoisePredictor(nn.Module):
    """Transformer decoder predicting the injected noise from the noisy
    layout sequence, cross-attending to the fused conditioning sequence.

    The step index enters through a sinusoidal embedding followed by a
    learned projection, added to every timestamp.
    """

    def __init__(self, config: EncoderConfig, num_layers: int | None = None, dtype=torch.float64):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        layers = config.num_layers if num_layers is None else num_layers
        self.in_proj = nn.Linear(LAYOUT_DIM, dim, dtype=dtype)
        self.step_proj = nn.Linear(dim, dim, dtype=dtype)
        self.layers = nn.ModuleList(
            nn.TransformerDecoderLayer(
                d_model=dim,
                nhead=config.num_heads,
                dim_feedforward=config.feedforward_dim,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
                norm_first=True,
                dtype=dtype,
            )
            for _ in range(layers)
        )
        self.out_proj = nn.Linear(dim, LAYOUT_DIM, dtype=dtype)
        pe = sinusoidal_encoding(torch.arange(config.max_len), dim, dtype)
        self.register_buffer("pos_encoding", pe)

    def forward(self, noisy: torch.Tensor, conditioning: torch.Tensor, k) -> torch.Tensor:
        """(B, T, 5) noisy + (B, T, D) conditioning + step(s) k -> (B, T, 5).

        k is an int applied to the whole batch or a (B,) tensor of steps.
        Unbatched (T, *) inputs are accepted.
        """
        unbatched = noisy.dim() == 2
        if unbatched:
            noisy, conditioning = noisy[None], conditioning[None]
        if noisy.shape[:2] != conditioning.shape[:2]:
            raise ValidationError(
                f"noisy {tuple(noisy.shape)} and conditioning {tuple(conditioning.shape)} disagree on (B, T)"
            )
        t = noisy.shape[1]
        if t > self.config.max_len:
            raise ValidationError(f"sequence length {t} exceeds max_len {self.config.max_len}")

        steps = torch.as_tensor(k, dtype=torch.long)
        if steps.dim() == 0:
            steps = steps.expand(noisy.shape[0])
        step_embed = self.step_proj(
            sinusoidal_encoding(steps, self.config.embed_dim, self.in_proj.weight.dtype)
        )
        h = self.in_proj(noisy) + self.pos_encoding[:t] + step_embed[:, None, :]
        for layer in self.layers:
            h = layer(h, memory=conditioning)
        out = self.out_proj(h)
        return out[0] if unbatched else out


def sample_sequence(
    predict_fn,
    conditioning: torch.Tensor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> torch.Tensor:
    """Run the full reverse chain from unit Gaussian noise.

    predict_fn(y, k) must return the predicted noise for the batch at step k;
    conditioning only provides the output shape here (its use lives inside
    predict_fn).  Returns (B, T, 5), or (T, 5) for unbatched conditioning.
    """
    unbatched = conditioning.dim() == 2
    shape = (
        (1, conditioning.shape[0], LAYOUT_DIM)
        if unbatched
        else (conditioning.shape[0], conditioning.shape[1], LAYOUT_DIM)
    )
    y = torch.as_tensor(rng.standard_normal(shape), dtype=conditioning.dtype)
    with torch.no_grad():
        for k in range(schedule.K, 0, -1):
            eps_hat = predict_fn(y if not unbatched else y[0], k)
            if unbatched and eps_hat.dim() == 2:
                eps_hat = eps_hat[None]
            y = denoise_step(y, eps_hat, k, schedule, rng=rng, deterministic=deterministic)
    return y[0] if unbatched else y

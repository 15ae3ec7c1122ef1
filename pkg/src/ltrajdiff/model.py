"""End-to-end model assembly, the training loop, checkpointing, the two
sequence-to-sequence baselines, and the ablation switchboard.

The diffusion operates in a standardized space: layout components and mobile
channels are shifted/scaled by statistics fitted on the training split (kept
as module buffers, so checkpoints carry them).  Hidden timestamps stay
exactly zero after standardization, preserving the zero sentinel.
Predictions are mapped back to raw pixel/meter units before any metric
touches them.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .core import Dataset, LayoutSequence, MobileSignalSequence, ValidationError, VisibilityMask
from .diffusion import (
    NoisePredictor,
    NoiseSchedule,
    diffusion_loss,
    forward_diffuse,
    linear_schedule,
    sample_sequence,
)
from .encoders import EncoderConfig, LayoutExtractingModule, TemporalAlignmentModule, sinusoidal_encoding
from .fusion import ModalityFusionModule
from .masking import MaskKind, MaskSpec, make_mask
from .metrics import EvalBatch, evaluate, mse_t

LAYOUT_DIM = 5
CHECKPOINT_SCHEMA = 1


def _to_tensor(values, dtype: torch.dtype) -> torch.Tensor:
    """Copying converter: accepts read-only numpy arrays."""
    return torch.as_tensor(np.array(values, dtype=np.float64), dtype=dtype)

ABLATION_NAMES = {
    "complete": {},
    "w/o-rms": {"disable_rms": True},
    "w/o-mfm": {"disable_mfm": True},
    "w/o-tam": {"disable_tam": True},
    "w/o-lem": {"disable_lem": True},
    "w/o-mobile": {"drop_mobile": True},
    "w/o-visual": {"drop_visual": True},
}


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable or incompatible."""


@dataclass(frozen=True)
class AblationFlags:
    disable_rms: bool = False
    disable_mfm: bool = False
    disable_tam: bool = False
    disable_lem: bool = False
    drop_mobile: bool = False
    drop_visual: bool = False

    def __post_init__(self):
        if self.drop_mobile and self.drop_visual:
            raise ValidationError("cannot drop both modalities")
        if self.disable_tam and (self.disable_lem or self.drop_visual):
            raise ValidationError("disabling both encoders leaves no conditioning path")

    @classmethod
    def parse(cls, name: str) -> "AblationFlags":
        key = name.strip().lower()
        if key not in ABLATION_NAMES:
            raise ValidationError(
                f"unknown ablation {name!r}; choose from {sorted(ABLATION_NAMES)}"
            )
        return cls(**ABLATION_NAMES[key])

    @property
    def name(self) -> str:
        for name, kwargs in ABLATION_NAMES.items():
            if AblationFlags(**kwargs) == self:
                return name
        return "custom"


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    feedforward_dim: int = 128
    max_len: int = 128
    decoder_layers: int = 2
    mobile_channels: int = 19
    sigma_mode: str = "softplus"
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.05
    loss_weight: float = 1.0
    deterministic_sampling: bool = False
    dtype: str = "float32"

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            embed_dim=self.embed_dim,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            feedforward_dim=self.feedforward_dim,
            max_len=self.max_len,
        )

    def torch_dtype(self) -> torch.dtype:
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_gamma: float = 0.98
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    optimizer: str = "adam"
    mask_spec: MaskSpec = field(default_factory=MaskSpec)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    eval_every: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ValidationError("learning_rate, batch_size, epochs, eval_every must be positive")
        if not 0 < self.lr_gamma <= 1:
            raise ValidationError(f"lr_gamma must be in (0, 1], got {self.lr_gamma}")
        if self.optimizer != "adam":
            raise ValidationError(f"unsupported optimizer {self.optimizer!r}")


class _Normalizer(nn.Module):
    """Per-component shift/scale buffers shared by all predictors."""

    def __init__(self, channels: int, dtype: torch.dtype):
        super().__init__()
        self.register_buffer("layout_mean", torch.zeros(LAYOUT_DIM, dtype=dtype))
        self.register_buffer("layout_std", torch.ones(LAYOUT_DIM, dtype=dtype))
        self.register_buffer("mobile_mean", torch.zeros(channels, dtype=dtype))
        self.register_buffer("mobile_std", torch.ones(channels, dtype=dtype))

    def fit(self, layouts: np.ndarray, mobiles: np.ndarray) -> None:
        dtype = self.layout_mean.dtype
        lm = layouts.reshape(-1, LAYOUT_DIM)
        mm = mobiles.reshape(-1, mobiles.shape[-1])
        self.layout_mean.copy_(torch.as_tensor(lm.mean(axis=0), dtype=dtype))
        self.layout_std.copy_(torch.as_tensor(np.maximum(lm.std(axis=0), 1e-6), dtype=dtype))
        self.mobile_mean.copy_(torch.as_tensor(mm.mean(axis=0), dtype=dtype))
        self.mobile_std.copy_(torch.as_tensor(np.maximum(mm.std(axis=0), 1e-6), dtype=dtype))

    def layout_to_norm(self, layout: torch.Tensor) -> torch.Tensor:
        return (layout - self.layout_mean) / self.layout_std

    def layout_from_norm(self, layout: torch.Tensor) -> torch.Tensor:
        return layout * self.layout_std + self.layout_mean

    def mobile_to_norm(self, mobile: torch.Tensor) -> torch.Tensor:
        return (mobile - self.mobile_mean) / self.mobile_std


class LTrajDiff(nn.Module):
    """Conditional layout-sequence diffusion model.

    Pipeline: temporal alignment over (masked layout ++ mobile), layout
    pooling over the visible frames, affine fusion into a per-timestamp
    conditioning sequence, then a noise-predicting transformer decoder run
    through the reverse diffusion chain.  Ablation flags swap conditioning
    paths rather than crash.
    """

    def __init__(self, config: ModelConfig, ablation: AblationFlags | None = None):
        super().__init__()
        self.config = config
        self.ablation = ablation or AblationFlags()
        dtype = config.torch_dtype()
        enc = config.encoder_config()

        self.normalizer = _Normalizer(config.mobile_channels, dtype)
        flags = self.ablation
        self.tam = (
            None
            if flags.disable_tam
            else TemporalAlignmentModule(config.mobile_channels, enc, dtype)
        )
        self.lem = (
            None
            if flags.disable_lem or flags.drop_visual
            else LayoutExtractingModule(enc, dtype)
        )
        self.mfm = ModalityFusionModule(config.embed_dim, config.sigma_mode, dtype)
        self.concat_proj = (
            nn.Linear(2 * config.embed_dim, config.embed_dim, dtype=dtype)
            if flags.disable_mfm
            else None
        )
        self.decoder = NoisePredictor(enc, num_layers=config.decoder_layers, dtype=dtype)
        self.schedule: NoiseSchedule = linear_schedule(
            config.diffusion_steps, config.beta_start, config.beta_end
        )

    def fit_normalizer(self, dataset: Dataset) -> None:
        layouts, mobiles, _ = stack_dataset(dataset)
        self.normalizer.fit(layouts, mobiles)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {"fusion": list(self.mfm.parameters()), "decoder": list(self.decoder.parameters())}
        if self.tam is not None:
            groups["tam"] = list(self.tam.parameters())
        if self.lem is not None:
            groups["lem"] = list(self.lem.parameters())
        if self.concat_proj is not None:
            groups["fusion"] += list(self.concat_proj.parameters())
        return groups

    def conditioning(
        self, masked_norm: torch.Tensor, mobile_norm: torch.Tensor, visible: torch.Tensor
    ) -> torch.Tensor:
        """Fused (B, T, D) conditioning honoring the ablation flags."""
        flags = self.ablation
        layout_in = torch.zeros_like(masked_norm) if flags.drop_visual else masked_norm
        mobile_in = torch.zeros_like(mobile_norm) if flags.drop_mobile else mobile_norm

        temporal = None if self.tam is None else self.tam(layout_in, mobile_in)
        pooled = None if self.lem is None else self.lem(masked_norm, visible)

        if self.tam is None:
            projected = self.mfm.layout_proj(pooled)
            return projected[:, None, :].expand(-1, masked_norm.shape[1], -1)
        if pooled is None:
            return self.mfm(temporal, None)
        if flags.disable_mfm:
            projected = self.mfm.layout_proj(pooled)[:, None, :].expand_as(temporal)
            return self.concat_proj(torch.cat([temporal, projected], dim=-1))
        return self.mfm(temporal, pooled)

    def training_loss(
        self,
        masked_norm: torch.Tensor,
        mobile_norm: torch.Tensor,
        visible: torch.Tensor,
        target_norm: torch.Tensor,
        rng: np.random.Generator,
    ) -> torch.Tensor:
        """One denoising step on a batch: random step index and noise draw
        per sample, noise-prediction L2 loss."""
        batch, horizon = target_norm.shape[:2]
        steps = rng.integers(1, self.schedule.K + 1, size=batch)
        eps = torch.as_tensor(
            rng.standard_normal((batch, horizon, LAYOUT_DIM)), dtype=target_norm.dtype
        )
        noisy = forward_diffuse(target_norm, steps, eps, self.schedule)
        z = self.conditioning(masked_norm, mobile_norm, visible)
        eps_hat = self.decoder(noisy, z, torch.as_tensor(steps))
        return diffusion_loss(eps_hat, eps, self.config.loss_weight)

    @torch.no_grad()
    def predict_batch(
        self,
        masked_layout: np.ndarray,
        mobile: np.ndarray,
        mask: np.ndarray,
        rng: np.random.Generator,
        deterministic: bool | None = None,
    ) -> np.ndarray:
        """Raw-unit batched prediction: (N, T, 5) masked layouts + (N, T, C)
        mobile + (N, T) flags -> (N, T, 5) predicted layouts."""
        if deterministic is None:
            deterministic = self.config.deterministic_sampling
        was_training = self.training
        self.eval()  # pin one attention kernel path so outputs are mode-independent
        try:
            dtype = self.normalizer.layout_mean.dtype
            flags = _to_tensor(mask, dtype)
            masked_norm = self.normalizer.layout_to_norm(_to_tensor(masked_layout, dtype)) * flags[..., None]
            mobile_norm = self.normalizer.mobile_to_norm(_to_tensor(mobile, dtype))
            z = self.conditioning(masked_norm, mobile_norm, flags)
            sample = sample_sequence(
                lambda y, k: self.decoder(y, z, k), z, self.schedule, rng, deterministic=deterministic
            )
            return self.normalizer.layout_from_norm(sample).numpy()
        finally:
            self.train(was_training)

    def predict(
        self,
        masked_layout: LayoutSequence,
        mobile: MobileSignalSequence,
        mask: VisibilityMask,
        rng: np.random.Generator,
        deterministic: bool | None = None,
    ) -> LayoutSequence:
        if not (len(masked_layout) == len(mobile) == len(mask)):
            raise ValidationError("masked layout, mobile and mask must share T")
        out = self.predict_batch(
            masked_layout.values[None], mobile.values[None], mask.flags[None], rng, deterministic
        )
        return LayoutSequence(out[0])


class Seq2SeqBaseline(nn.Module):
    """Direct-regression encoder-decoder baselines over the synchronized
    (layout ++ mobile) rows: a recurrent variant with hidden-state handoff
    and an attention variant with transformer cross-attention."""

    KINDS = ("recurrent", "attention")

    def __init__(self, kind: str, config: ModelConfig):
        super().__init__()
        if kind not in self.KINDS:
            raise ValidationError(f"baseline kind must be one of {self.KINDS}, got {kind!r}")
        self.kind = kind
        self.config = config
        dtype = config.torch_dtype()
        dim = config.embed_dim
        input_dim = LAYOUT_DIM + config.mobile_channels
        self.normalizer = _Normalizer(config.mobile_channels, dtype)
        pe = sinusoidal_encoding(torch.arange(config.max_len), dim, dtype)
        self.register_buffer("pos_encoding", pe)
        self.out_proj = nn.Linear(dim, LAYOUT_DIM, dtype=dtype)
        if kind == "recurrent":
            self.encoder_rnn = nn.LSTM(input_dim, dim, batch_first=True, dtype=dtype)
            self.decoder_rnn = nn.LSTM(dim, dim, batch_first=True, dtype=dtype)
        else:
            enc = config.encoder_config()
            self.in_proj = nn.Linear(input_dim, dim, dtype=dtype)
            self.encoder_layers = nn.ModuleList(
                nn.TransformerEncoderLayer(
                    d_model=dim, nhead=enc.num_heads, dim_feedforward=enc.feedforward_dim,
                    dropout=0.0, activation="gelu", batch_first=True, norm_first=True, dtype=dtype,
                )
                for _ in range(enc.num_layers)
            )
            self.decoder_layers = nn.ModuleList(
                nn.TransformerDecoderLayer(
                    d_model=dim, nhead=enc.num_heads, dim_feedforward=enc.feedforward_dim,
                    dropout=0.0, activation="gelu", batch_first=True, norm_first=True, dtype=dtype,
                )
                for _ in range(enc.num_layers)
            )

    def fit_normalizer(self, dataset: Dataset) -> None:
        layouts, mobiles, _ = stack_dataset(dataset)
        self.normalizer.fit(layouts, mobiles)

    def _forward_norm(self, masked_norm: torch.Tensor, mobile_norm: torch.Tensor) -> torch.Tensor:
        x = torch.cat([masked_norm, mobile_norm], dim=-1)
        horizon = x.shape[1]
        queries = self.pos_encoding[:horizon].expand(x.shape[0], -1, -1)
        if self.kind == "recurrent":
            _, state = self.encoder_rnn(x)
            h, _ = self.decoder_rnn(queries, state)
        else:
            h = self.in_proj(x) + self.pos_encoding[:horizon]
            for layer in self.encoder_layers:
                h = layer(h)
            memory, h = h, queries
            for layer in self.decoder_layers:
                h = layer(h, memory=memory)
        return self.out_proj(h)

    def training_loss(self, masked_norm, mobile_norm, visible, target_norm, rng) -> torch.Tensor:
        pred = self._forward_norm(masked_norm, mobile_norm)
        return ((pred - target_norm) ** 2).mean()

    @torch.no_grad()
    def predict_batch(self, masked_layout, mobile, mask, rng=None, deterministic=None) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            dtype = self.normalizer.layout_mean.dtype
            flags = _to_tensor(mask, dtype)
            masked_norm = self.normalizer.layout_to_norm(_to_tensor(masked_layout, dtype)) * flags[..., None]
            mobile_norm = self.normalizer.mobile_to_norm(_to_tensor(mobile, dtype))
            return self.normalizer.layout_from_norm(self._forward_norm(masked_norm, mobile_norm)).numpy()
        finally:
            self.train(was_training)


class ModelPredictor:
    """Adapter exposing any trained model through the evaluation protocol."""

    def __init__(self, model, rng: np.random.Generator, deterministic: bool = True):
        self.model = model
        self.rng = rng
        self.deterministic = deterministic

    def predict_batch(self, batch: EvalBatch) -> np.ndarray:
        return self.model.predict_batch(
            batch.masked_layout, batch.mobile, batch.mask, self.rng, self.deterministic
        )


def stack_dataset(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Stack a uniform-horizon dataset into (N, T, 5) and (N, T, C) arrays."""
    horizons = {len(s.layout) for s in dataset.samples}
    if len(horizons) != 1:
        raise ValidationError(f"training requires a uniform horizon, got lengths {sorted(horizons)}")
    layouts = np.stack([s.layout.values for s in dataset.samples])
    mobiles = np.stack([s.mobile.values for s in dataset.samples])
    return layouts, mobiles, [s.agent_id for s in dataset.samples]


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_mse_t: float | None = None


def _epoch_lr(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_gamma ** (epoch - 1)


def training_mask_spec(config: TrainConfig) -> MaskSpec:
    """Disabling the random-mask strategy trains on fully visible inputs;
    evaluation masks are unaffected."""
    return MaskSpec(MaskKind.FULL) if config.ablation.disable_rms else config.mask_spec


def train_model(
    train_ds: Dataset,
    val_ds: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    model_cls=LTrajDiff,
    baseline_kind: str | None = None,
    progress=None,
) -> tuple[nn.Module, list[EpochLog], dict]:
    """Train a model (diffusion by default, or a seq2seq baseline) and return
    it loaded with its best-validation weights.

    Randomness fan-out from train_config.seed: +1 masks, +2 parameter init,
    +3 noise/shuffle/sampling.  A fresh visibility mask is drawn for every
    sample in every epoch unless the RMS flag disables masking at train time.
    """
    flags = train_config.ablation
    torch.manual_seed(train_config.seed + 2)
    if baseline_kind is not None:
        model = Seq2SeqBaseline(baseline_kind, model_config)
    else:
        model = model_cls(model_config, flags)
    model.fit_normalizer(train_ds)

    layouts, mobiles, _ = stack_dataset(train_ds)
    val_layouts, val_mobiles, _ = stack_dataset(val_ds)
    horizon = layouts.shape[1]
    dtype = model.normalizer.layout_mean.dtype

    layout_norm = model.normalizer.layout_to_norm(_to_tensor(layouts, dtype))
    mobile_norm = model.normalizer.mobile_to_norm(_to_tensor(mobiles, dtype))

    mask_rng = np.random.default_rng(train_config.seed + 1)
    run_rng = np.random.default_rng(train_config.seed + 3)
    # Fixed eval masks keep per-epoch validation comparable.
    val_masks = np.stack(
        [make_mask(train_config.mask_spec, horizon, mask_rng).flags for _ in range(len(val_layouts))]
    )

    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    train_mask_spec = training_mask_spec(train_config)

    n = layouts.shape[0]
    logs: list[EpochLog] = []
    best = {"val_mse_t": math.inf, "epoch": 0, "state": copy.deepcopy(model.state_dict())}

    for epoch in range(1, train_config.epochs + 1):
        lr = _epoch_lr(train_config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        order = run_rng.permutation(n)
        losses = []
        for start in range(0, n, train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            flags_batch = np.stack(
                [make_mask(train_mask_spec, horizon, mask_rng).flags for _ in idx]
            )
            flags_t = torch.as_tensor(flags_batch, dtype=dtype)
            target = layout_norm[idx]
            masked = target * flags_t[..., None]
            loss = model.training_loss(masked, mobile_norm[idx], flags_t, target, run_rng)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // train_config.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())

        val_mse = None
        if epoch % train_config.eval_every == 0 or epoch == train_config.epochs:
            val_mse = _validation_mse(model, val_layouts, val_mobiles, val_masks, train_config.seed)
            if val_mse < best["val_mse_t"]:
                best = {
                    "val_mse_t": val_mse,
                    "epoch": epoch,
                    "state": copy.deepcopy(model.state_dict()),
                }
        logs.append(EpochLog(epoch=epoch, lr=lr, train_loss=float(np.mean(losses)), val_mse_t=val_mse))
        if progress is not None:
            progress(logs[-1])

    model.load_state_dict(best["state"])
    model.eval()
    info = {"best_epoch": best["epoch"], "best_val_mse_t": best["val_mse_t"]}
    return model, logs, info


def _validation_mse(model, layouts, mobiles, mask_flags, seed) -> float:
    masked = layouts * mask_flags[..., None]
    preds = model.predict_batch(
        masked, mobiles, mask_flags, np.random.default_rng(seed + 3), deterministic=True
    )
    return float(np.mean([mse_t(t, p) for t, p in zip(layouts, preds)]))


def config_hash(model_config: ModelConfig, train_config: TrainConfig) -> str:
    blob = json.dumps(
        {"model": asdict(model_config), "train": _train_config_dict(train_config)},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _train_config_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["mask_spec"] = config.mask_spec.describe()
    out["ablation"] = config.ablation.name
    return out


def save_checkpoint(
    path: Path | str,
    model: nn.Module,
    model_config: ModelConfig,
    train_config: TrainConfig,
    info: dict,
) -> None:
    """Binary checkpoint plus a plain-text manifest next to it."""
    path = Path(path)
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "kind": "baseline:" + model.kind if isinstance(model, Seq2SeqBaseline) else "diffusion",
        "model_config": asdict(model_config),
        "train_config": _train_config_dict(train_config),
        "state_dict": model.state_dict(),
        "info": dict(info),
        "config_hash": config_hash(model_config, train_config),
        "rng_state": {
            "torch": torch.get_rng_state(),
        },
    }
    torch.save(payload, path)
    manifest = {
        "schema": CHECKPOINT_SCHEMA,
        "config_hash": payload["config_hash"],
        "kind": payload["kind"],
        "epoch": info.get("best_epoch"),
        "val_mse_t": info.get("best_val_mse_t"),
    }
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: Path | str) -> tuple[nn.Module, dict]:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(
            f"checkpoint schema mismatch: expected {CHECKPOINT_SCHEMA}, got {payload.get('schema') if isinstance(payload, dict) else type(payload)}"
        )
    model_config = ModelConfig(**payload["model_config"])
    kind = payload.get("kind", "diffusion")
    if kind.startswith("baseline:"):
        model = Seq2SeqBaseline(kind.split(":", 1)[1], model_config)
    else:
        ablation = AblationFlags.parse(payload["train_config"].get("ablation", "complete"))
        model = LTrajDiff(model_config, ablation)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    meta = {
        "kind": kind,
        "config_hash": payload.get("config_hash"),
        "train_config": payload.get("train_config", {}),
        "info": payload.get("info", {}),
        "model_config": model_config,
    }
    return model, meta


def run_ablation_suite(
    train_ds: Dataset,
    val_ds: Dataset,
    test_ds: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds: list[int],
    variants: list[str] | None = None,
    eval_mask_spec: MaskSpec | None = None,
    progress=None,
) -> list[dict]:
    """Train and evaluate the complete model and each ablation variant per
    seed; per-variant failures are recorded without aborting the suite."""
    if not seeds:
        raise ValidationError("need at least one seed")
    variants = list(variants) if variants else list(ABLATION_NAMES)
    eval_mask_spec = eval_mask_spec or MaskSpec(MaskKind.RANDOM_RATIO)

    rows: list[dict] = []
    for variant in variants:
        for seed in seeds:
            row = {"variant": variant, "seed": seed}
            try:
                cfg = TrainConfig(
                    learning_rate=train_config.learning_rate,
                    lr_gamma=train_config.lr_gamma,
                    batch_size=train_config.batch_size,
                    epochs=train_config.epochs,
                    seed=seed,
                    mask_spec=train_config.mask_spec,
                    ablation=AblationFlags.parse(variant),
                    eval_every=train_config.eval_every,
                )
                model, _, info = train_model(train_ds, val_ds, model_config, cfg)
                report = evaluate(
                    ModelPredictor(model, np.random.default_rng(seed + 3)),
                    test_ds,
                    eval_mask_spec,
                    np.random.default_rng(seed + 1),
                )
                row.update(
                    status="ok",
                    mse_t=report.mse_t,
                    iou_d=report.iou_d,
                    best_epoch=info["best_epoch"],
                )
            except Exception as exc:
                row.update(status="error", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows

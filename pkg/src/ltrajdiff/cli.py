"""Command-line entry point for reproducible runs.

Subcommands: generate, train, evaluate, ablate, plot.  Every command reads a
single JSON config document (defaults apply when omitted, unknown keys are
rejected, flags win over the file) and writes its outputs plus a resolved
copy of the config into the output directory.

All randomness flows from one seed, fanned out as: data generation = seed,
visibility masks = seed + 1, parameter init = seed + 2, noise/shuffling/
sampling = seed + 3.  Exit codes: 0 success, 2 input or config error,
3 training divergence.  The LTRAJDIFF_THREADS environment variable caps
torch's worker threads.
"""

from __future__ import annotations

import copy
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .core import Dataset, ValidationError
from .masking import MaskSpec
from .metrics import (
    CopyFirstVisiblePredictor,
    OraclePredictor,
    ZerosPredictor,
    evaluate,
    read_report,
    write_report,
)
from .model import (
    AblationFlags,
    CheckpointError,
    DivergenceError,
    LTrajDiff,
    ModelConfig,
    ModelPredictor,
    TrainConfig,
    load_checkpoint,
    run_ablation_suite,
    save_checkpoint,
    train_model,
)
from .synthdata import DatasetFormatError, NoiseLevels, SceneConfig, generate_dataset, read_dataset, write_dataset
from . import plotting

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "scene": {
        "T": 50,
        "dt": 0.1,
        "camera_focal": 500.0,
        "image_size": [1280, 720],
        "agent_size": [0.5, 1.7],
        "camera_height": 1.5,
        "receiver_position": [0.0, 3.0],
        "channel_count": 19,
        "speed_range": [0.5, 2.0],
        "accel_std": 0.4,
        "spawn_depth_range": [4.0, 10.0],
        "spawn_lateral_range": [-3.0, 3.0],
        "min_depth": 0.5,
        "noise": {
            "accel_std": 0.05,
            "gyro_std": 0.02,
            "mag_std": 0.05,
            "ftm_std": 0.3,
            "orientation_std": 0.02,
        },
    },
    "data": {"n_samples": 2000, "split_fractions": [0.8, 0.1, 0.1]},
    "model": {
        "embed_dim": 64,
        "num_heads": 4,
        "num_layers": 2,
        "feedforward_dim": 128,
        "max_len": 128,
        "decoder_layers": 2,
        "dtype": "float32",
    },
    "diffusion": {
        "K": 100,
        "beta_start": 1e-4,
        "beta_end": 0.05,
        "lambda": 1.0,
        "deterministic_sampling": False,
    },
    "fusion": {"sigma_mode": "softplus"},
    "train": {
        "learning_rate": 1e-3,
        "lr_gamma": 0.98,
        "batch_size": 64,
        "epochs": 50,
        "eval_every": 1,
        "mask": "random",
        "ablation": "complete",
    },
    "metrics": {"iou_d_mode": "agreement"},
}


class ConfigError(ValueError):
    pass


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be an object")
            out[key] = _merge_config(base[key], value, dotted)
        else:
            out[key] = value
    return out


def load_config(config_path: str | None) -> dict:
    if config_path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        user = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge_config(DEFAULT_CONFIG, user)


def scene_config(cfg: dict) -> SceneConfig:
    scene = cfg["scene"]
    return SceneConfig(
        T=scene["T"],
        dt=scene["dt"],
        camera_focal=scene["camera_focal"],
        image_size=tuple(scene["image_size"]),
        agent_size=tuple(scene["agent_size"]),
        camera_height=scene["camera_height"],
        receiver_position=tuple(scene["receiver_position"]),
        noise=NoiseLevels(**scene["noise"]),
        channel_count=scene["channel_count"],
        speed_range=tuple(scene["speed_range"]),
        accel_std=scene["accel_std"],
        spawn_depth_range=tuple(scene["spawn_depth_range"]),
        spawn_lateral_range=tuple(scene["spawn_lateral_range"]),
        min_depth=scene["min_depth"],
    )


def model_config(cfg: dict) -> ModelConfig:
    m, d = cfg["model"], cfg["diffusion"]
    return ModelConfig(
        embed_dim=m["embed_dim"],
        num_heads=m["num_heads"],
        num_layers=m["num_layers"],
        feedforward_dim=m["feedforward_dim"],
        max_len=m["max_len"],
        decoder_layers=m["decoder_layers"],
        mobile_channels=cfg["scene"]["channel_count"],
        sigma_mode=cfg["fusion"]["sigma_mode"],
        diffusion_steps=d["K"],
        beta_start=d["beta_start"],
        beta_end=d["beta_end"],
        loss_weight=d["lambda"],
        deterministic_sampling=d["deterministic_sampling"],
        dtype=m["dtype"],
    )


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"],
        lr_gamma=t["lr_gamma"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        seed=cfg["seed"],
        mask_spec=MaskSpec.parse(t["mask"]),
        ablation=AblationFlags.parse(t["ablation"]),
        eval_every=t["eval_every"],
    )


def _write_resolved(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _apply_threads_cap() -> None:
    cap = os.environ.get("LTRAJDIFF_THREADS")
    if cap:
        try:
            torch.set_num_threads(max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"LTRAJDIFF_THREADS must be an integer, got {cap!r}")


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map domain errors onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DivergenceError as exc:
            _fail(str(exc), 3)
        except (ConfigError, ValidationError, DatasetFormatError, CheckpointError) as exc:
            _fail(str(exc), 2)
        except OSError as exc:
            _fail(str(exc), 2)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@_guarded
def main():
    """Layout-sequence diffusion: data generation, training, evaluation,
    ablations and plots."""
    _apply_threads_cap()


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--out", "out_dir", type=str, required=True, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@_guarded
def generate(config_path, out_dir, seed):
    """Generate the synthetic dataset splits plus manifests."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    scene = scene_config(cfg)
    out = Path(out_dir)
    _write_resolved(cfg, out)
    splits = generate_dataset(
        scene,
        cfg["data"]["n_samples"],
        tuple(cfg["data"]["split_fractions"]),
        seed=cfg["seed"],
    )
    for ds in splits:
        write_dataset(ds, out / f"{ds.split}.jsonl")
        click.echo(f"wrote {ds.split}: {len(ds)} samples")
    manifest = dict(splits[0].metadata)
    manifest.pop("split", None)
    manifest["splits"] = {ds.split: len(ds) for ds in splits}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_split(data_dir: Path, split: str) -> Dataset:
    path = data_dir / f"{split}.jsonl"
    if not path.exists():
        raise ConfigError(f"dataset split not found: {path}")
    return read_dataset(path)


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True, help="Directory with train/val splits.")
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--mask", "mask_text", type=str, default=None, help="Training mask spec (random, fixed:R, prefix:K, full).")
@click.option("--ablate", "ablation", type=str, default=None, help="Variant to train, e.g. 'w/o-rms'.")
@click.option("--baseline", type=click.Choice(["recurrent", "attention"]), default=None,
              help="Train a seq2seq baseline instead of the diffusion model.")
@_guarded
def train(config_path, data_dir, out_dir, seed, epochs, batch_size, mask_text, ablation, baseline):
    """Train on an existing dataset and write a checkpoint plus the epoch log."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    if epochs is not None:
        cfg["train"]["epochs"] = epochs
    if batch_size is not None:
        cfg["train"]["batch_size"] = batch_size
    if mask_text is not None:
        cfg["train"]["mask"] = mask_text
    if ablation is not None:
        cfg["train"]["ablation"] = ablation

    data = Path(data_dir)
    train_ds = _load_split(data, "train")
    val_ds = _load_split(data, "val")
    out = Path(out_dir)
    _write_resolved(cfg, out)

    mcfg = model_config(cfg)
    tcfg = train_config(cfg)
    log_path = out / "training_log.jsonl"
    records = []

    def progress(entry):
        records.append(
            {"epoch": entry.epoch, "lr": entry.lr, "train_loss": entry.train_loss, "val_mse_t": entry.val_mse_t}
        )
        val = f" val_mse_t={entry.val_mse_t:.4f}" if entry.val_mse_t is not None else ""
        click.echo(f"epoch {entry.epoch:3d} lr={entry.lr:.6g} loss={entry.train_loss:.4f}{val}")

    model, _, info = train_model(
        train_ds, val_ds, mcfg, tcfg, baseline_kind=baseline, progress=progress
    )
    log_path.write_text("\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n")
    ckpt_path = out / "checkpoint.pt"
    save_checkpoint(ckpt_path, model, mcfg, tcfg, info)
    click.echo(f"best epoch {info['best_epoch']} val_mse_t={info['best_val_mse_t']:.4f}")
    click.echo(f"wrote {ckpt_path}")


@main.command(name="evaluate")
@click.option("--checkpoint", "checkpoint_path", type=str, default=None)
@click.option("--data", "data_path", type=str, required=True, help="Dataset file to evaluate on.")
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--mask", "mask_text", type=str, default=None, help="Eval mask spec (default: config train.mask).")
@click.option("--iou-mode", type=click.Choice(["agreement", "paper_literal", "both"]), default=None,
              help="'both' scores in agreement mode and adds the paper-literal factor alongside.")
@click.option("--predictor", type=click.Choice(["model", "oracle", "zeros", "copy-first"]), default="model")
@click.option("--deterministic/--stochastic", "deterministic", default=True,
              help="Deterministic reverse chain (no re-injected noise).")
@click.option("--dump-sequences/--no-dump-sequences", default=True,
              help="Keep truth/pred sequences in the report for plotting.")
@click.option("--figures/--no-figures", default=True, help="Render figures next to the report.")
@_guarded
def evaluate_cmd(checkpoint_path, data_path, out_dir, config_path, seed, mask_text,
                 iou_mode, predictor, deterministic, dump_sequences, figures):
    """Score a predictor on a dataset and write the line-delimited report
    (plus rendered figures)."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    if mask_text is not None:
        cfg["train"]["mask"] = mask_text
    include_literal = False
    if iou_mode == "both":
        include_literal = True
        cfg["metrics"]["iou_d_mode"] = "agreement"
    elif iou_mode is not None:
        cfg["metrics"]["iou_d_mode"] = iou_mode

    data_file = Path(data_path)
    if data_file.is_dir():
        data_file = data_file / "test.jsonl"
    if not data_file.exists():
        raise ConfigError(f"dataset not found: {data_file}")
    dataset = read_dataset(data_file)
    out = Path(out_dir)
    _write_resolved(cfg, out)

    if predictor == "model":
        if checkpoint_path is None:
            raise ConfigError("--checkpoint is required with the model predictor")
        model, meta = load_checkpoint(checkpoint_path)
        expected = model_config(cfg)
        if meta["model_config"] != expected:
            click.echo(
                "warning: checkpoint model config differs from the requested config; "
                "using the checkpoint's own configuration",
                err=True,
            )
        pred = ModelPredictor(
            model, np.random.default_rng(cfg["seed"] + 3), deterministic=deterministic
        )
    elif predictor == "oracle":
        pred = OraclePredictor(dataset)
    elif predictor == "zeros":
        pred = ZerosPredictor()
    else:
        pred = CopyFirstVisiblePredictor()

    report = evaluate(
        pred,
        dataset,
        MaskSpec.parse(cfg["train"]["mask"] if mask_text is None else mask_text),
        np.random.default_rng(cfg["seed"] + 1),
        iou_d_mode=cfg["metrics"]["iou_d_mode"],
        keep_sequences=dump_sequences,
        include_literal=include_literal,
    )
    report_path = out / "report.jsonl"
    write_report(report, report_path)
    click.echo(f"mse_t={report.mse_t:.6g} iou_d={report.iou_d:.6g} ({report.n_scored} samples)")
    click.echo(f"wrote {report_path}")
    if figures:
        for path in plotting.plot_report(report, out / "figures"):
            click.echo(f"wrote {path}")


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--seeds", type=str, default="0,1,2", help="Comma-separated training seeds.")
@click.option("--variants", type=str, default=None,
              help="Comma-separated variant names (default: all seven).")
@_guarded
def ablate(config_path, data_dir, out_dir, seeds, variants):
    """Train/evaluate the complete model and its ablation variants."""
    cfg = load_config(config_path)
    data = Path(data_dir)
    train_ds = _load_split(data, "train")
    val_ds = _load_split(data, "val")
    test_ds = _load_split(data, "test")
    out = Path(out_dir)
    _write_resolved(cfg, out)

    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {seeds!r}")
    variant_list = [v.strip() for v in variants.split(",")] if variants else None

    def progress(row):
        status = row.get("status")
        if status == "ok":
            click.echo(
                f"{row['variant']:12s} seed={row['seed']} mse_t={row['mse_t']:.4f} iou_d={row['iou_d']:.4f}"
            )
        else:
            click.echo(f"{row['variant']:12s} seed={row['seed']} FAILED: {row.get('error')}", err=True)

    rows = run_ablation_suite(
        train_ds, val_ds, test_ds,
        model_config(cfg), train_config(cfg),
        seeds=seed_list, variants=variant_list,
        eval_mask_spec=MaskSpec.parse(cfg["train"]["mask"]),
        progress=progress,
    )

    ok = [r for r in rows if r["status"] == "ok"]
    aggregates = []
    for variant in dict.fromkeys(r["variant"] for r in rows):
        hits = [r for r in ok if r["variant"] == variant]
        if hits:
            aggregates.append(
                {
                    "record": "aggregate",
                    "variant": variant,
                    "mse_t_mean": float(np.mean([r["mse_t"] for r in hits])),
                    "iou_d_mean": float(np.mean([r["iou_d"] for r in hits])),
                    "n_seeds": len(hits),
                }
            )
    table_path = out / "ablation.jsonl"
    lines = [json.dumps({"record": "run", **r}, sort_keys=True) for r in rows]
    lines += [json.dumps(a, sort_keys=True) for a in aggregates]
    table_path.write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {table_path}")
    if ok:
        fig_path = plotting.plot_ablation_rows(rows, out / "ablation.png")
        click.echo(f"wrote {fig_path}")


@main.command()
@click.argument("input_path", type=str)
@click.option("--out", "out_dir", type=str, required=True, help="Directory for rendered images.")
@click.option("--max-samples", type=int, default=4)
@_guarded
def plot(input_path, out_dir, max_samples):
    """Render a dataset file or an evaluation report to PNG images."""
    path = Path(input_path)
    if not path.exists():
        raise ConfigError(f"input not found: {path}")
    first = ""
    with open(path) as fh:
        for line in fh:
            if line.strip():
                first = line
                break
    if not first:
        raise ConfigError(f"{path} is empty")
    try:
        record = json.loads(first)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is neither a dataset nor a report: {exc}")

    if isinstance(record, dict) and record.get("record") == "summary":
        paths = plotting.plot_report(read_report(path), out_dir, max_samples=max_samples)
    else:
        paths = plotting.plot_dataset(read_dataset(path), out_dir, max_samples=max_samples)
    for p in paths:
        click.echo(f"wrote {p}")


if __name__ == "__main__":
    main()

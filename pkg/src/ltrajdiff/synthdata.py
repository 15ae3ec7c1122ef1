"""Synthetic multimodal scene generator and the on-disk dataset format.

A static pinhole camera sits at the origin looking down +x; agents perform a
smooth random-acceleration walk on the ground plane.  Each sample pairs the
projected layout sequence (bbox + depth) with a noisy mobile-sensor matrix
whose channel layout is fixed below.  The generative process is known in
closed form, so a dead-reckoning reconstruction from the noiseless channels
serves as the oracle proving the mobile signal suffices to solve the task.

Channel layout (indices, filled only while they fit in channel_count):
    0-2   body-frame acceleration (m/s^2), z carries gravity
    3-5   gyroscope (rad/s), yaw rate on z
    6-8   magnetometer: world-north unit vector rotated into the body frame
    9-12  orientation as a yaw-only quaternion (w, x, y, z)
    13    wifi round-trip distance to the receiver (m)
    14    reported std of the distance channel (constant)
    15    speed magnitude (m/s)
    16+   zero padding

The first 13 channels (inertial + orientation) are the minimum with assigned
meaning; distance/speed channels require channel_count >= 16 and are what the
dead-reckoning oracle consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import (
    AgentSample,
    Dataset,
    LayoutSequence,
    MobileSignalSequence,
    ValidationError,
    VisibilityMask,
)

SCHEMA_VERSION = "1"
GRAVITY = 9.80665
MIN_MEANINGFUL_CHANNELS = 13
ORACLE_MIN_CHANNELS = 16  # distance + speed channels must be present

CHANNELS = {
    "accel": (0, 3),
    "gyro": (3, 3),
    "mag": (6, 3),
    "quat": (9, 4),
    "ftm": (13, 1),
    "ftm_std": (14, 1),
    "speed": (15, 1),
}


class GenerationError(RuntimeError):
    """The scene generator produced an unprojectable state."""


class DatasetFormatError(ValueError):
    """A dataset file does not follow the line-delimited schema."""


@dataclass(frozen=True)
class NoiseLevels:
    """Additive Gaussian noise std per sensor group (sensor units).

    accel_std also applies to the derived speed channel; the reported-std
    channel is emitted noise-free.
    """

    accel_std: float = 0.05
    gyro_std: float = 0.02
    mag_std: float = 0.05
    ftm_std: float = 0.3
    orientation_std: float = 0.02

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValidationError(f"noise std {name} must be >= 0, got {value}")


@dataclass(frozen=True)
class SceneConfig:
    T: int = 50
    dt: float = 0.1
    camera_focal: float = 500.0
    image_size: tuple[int, int] = (1280, 720)
    agent_size: tuple[float, float] = (0.5, 1.7)  # meters (width, height)
    camera_height: float = 1.5
    receiver_position: tuple[float, float] = (0.0, 3.0)
    noise: NoiseLevels = field(default_factory=NoiseLevels)
    channel_count: int = 19
    speed_range: tuple[float, float] = (0.5, 2.0)
    accel_std: float = 0.4  # also scales the per-step heading diffusion
    spawn_depth_range: tuple[float, float] = (4.0, 10.0)
    spawn_lateral_range: tuple[float, float] = (-3.0, 3.0)
    min_depth: float = 0.5

    def __post_init__(self):
        if self.T < 2:
            raise ValidationError(f"T must be >= 2, got {self.T}")
        if self.channel_count < MIN_MEANINGFUL_CHANNELS:
            raise ValidationError(
                f"channel_count must be >= {MIN_MEANINGFUL_CHANNELS}, got {self.channel_count}"
            )
        for name in ("dt", "camera_focal", "camera_height", "min_depth"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if min(self.image_size) <= 0 or min(self.agent_size) <= 0:
            raise ValidationError("image_size and agent_size must be positive")
        if not 0 < self.speed_range[0] <= self.speed_range[1]:
            raise ValidationError(f"bad speed_range {self.speed_range}")
        if self.accel_std < 0:
            raise ValidationError("accel_std must be >= 0")


@dataclass(frozen=True)
class WorldTrack:
    """Ground-plane trajectory: positions (T, 2) in meters with x = camera
    forward axis, plus per-step headings (rad) and speeds (m/s)."""

    positions: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]


def simulate_track(config: SceneConfig, rng: np.random.Generator) -> WorldTrack:
    """Random-acceleration walk in front of the camera.

    Step t >= 1 perturbs speed and heading by N(0, accel_std * dt), clamps the
    speed to speed_range and moves positions[t] = positions[t-1] +
    dt * speeds[t] * (cos h_t, sin h_t).  Steps that would cross the minimum
    camera distance are resampled (heading forced downrange as a last resort).
    """
    T, dt = config.T, config.dt
    positions = np.empty((T, 2))
    headings = np.empty(T)
    speeds = np.empty(T)

    positions[0] = (
        rng.uniform(*config.spawn_depth_range),
        rng.uniform(*config.spawn_lateral_range),
    )
    headings[0] = rng.uniform(-math.pi, math.pi)
    speeds[0] = rng.uniform(*config.speed_range)

    step_std = config.accel_std * dt
    for t in range(1, T):
        for _ in range(20):
            speed = float(np.clip(speeds[t - 1] + rng.normal(0.0, step_std), *config.speed_range))
            heading = headings[t - 1] + rng.normal(0.0, step_std)
            pos = positions[t - 1] + dt * speed * np.array([math.cos(heading), math.sin(heading)])
            if pos[0] > config.min_depth:
                break
        else:
            heading = 0.0  # point away from the camera
            speed = float(np.clip(speeds[t - 1], *config.speed_range))
            pos = positions[t - 1] + dt * speed * np.array([1.0, 0.0])
        positions[t] = pos
        headings[t] = heading
        speeds[t] = speed

    return WorldTrack(positions=positions, headings=headings, speeds=speeds)


def project_to_layout(track: WorldTrack, config: SceneConfig) -> LayoutSequence:
    """Pinhole-project the agent billboard into layout frames.

    Depth is the forward distance; box size scales as focal * size / depth.
    Boxes may leave the image bounds: going out of sight is part of the task.
    """
    depth = track.positions[:, 0]
    if (depth <= 0).any():
        raise GenerationError("non-positive depth during projection")
    lateral = track.positions[:, 1]
    f = config.camera_focal
    aw, ah = config.agent_size
    cx = config.image_size[0] / 2.0
    cy = config.image_size[1] / 2.0

    w = f * aw / depth
    h = f * ah / depth
    x = cx + f * lateral / depth - w / 2.0
    y = cy - f * config.camera_height / depth
    return LayoutSequence(np.column_stack([x, y, w, h, depth]))


def _body_frame(vectors: np.ndarray, headings: np.ndarray) -> np.ndarray:
    """Rotate world-frame 2-vectors into the body frame of each heading."""
    c, s = np.cos(headings), np.sin(headings)
    bx = c * vectors[:, 0] + s * vectors[:, 1]
    by = -s * vectors[:, 0] + c * vectors[:, 1]
    return np.column_stack([bx, by])


def synthesize_mobile(
    track: WorldTrack, config: SceneConfig, rng: np.random.Generator
) -> MobileSignalSequence:
    """Derive the sensor channels from the track and add per-group noise."""
    T, dt = len(track), config.dt
    C = config.channel_count
    out = np.zeros((T, C))
    noise = config.noise

    # Acceleration: world second differences, endpoints replicated, rotated
    # into the body frame; z carries gravity.
    acc_world = np.zeros((T, 2))
    if T > 2:
        acc_world[1:-1] = (
            track.positions[2:] - 2.0 * track.positions[1:-1] + track.positions[:-2]
        ) / dt**2
        acc_world[0] = acc_world[1]
        acc_world[-1] = acc_world[-2]
    acc_body = _body_frame(acc_world, track.headings)
    out[:, 0:2] = acc_body
    out[:, 2] = GRAVITY
    out[:, 0:3] += rng.normal(0.0, noise.accel_std, (T, 3)) if noise.accel_std else 0.0

    # Gyro: yaw rate by forward difference, last step replicated.
    yaw_rate = np.empty(T)
    yaw_rate[:-1] = np.diff(track.headings) / dt
    yaw_rate[-1] = yaw_rate[-2]
    out[:, 5] = yaw_rate
    out[:, 3:6] += rng.normal(0.0, noise.gyro_std, (T, 3)) if noise.gyro_std else 0.0

    # Magnetometer: world north (+x) in the body frame.
    north = np.tile([1.0, 0.0], (T, 1))
    out[:, 6:8] = _body_frame(north, track.headings)
    out[:, 6:9] += rng.normal(0.0, noise.mag_std, (T, 3)) if noise.mag_std else 0.0

    # Yaw-only orientation quaternion (w, x, y, z).
    out[:, 9] = np.cos(track.headings / 2.0)
    out[:, 12] = np.sin(track.headings / 2.0)
    out[:, 9:13] += (
        rng.normal(0.0, noise.orientation_std, (T, 4)) if noise.orientation_std else 0.0
    )

    if C > 13:
        distance = np.linalg.norm(
            track.positions - np.asarray(config.receiver_position), axis=1
        )
        out[:, 13] = distance + (
            rng.normal(0.0, noise.ftm_std, T) if noise.ftm_std else 0.0
        )
    if C > 14:
        out[:, 14] = noise.ftm_std
    if C > 15:
        out[:, 15] = track.speeds + (
            rng.normal(0.0, noise.accel_std, T) if noise.accel_std else 0.0
        )
    return MobileSignalSequence(out)


def dead_reckon_layout(mobile: MobileSignalSequence, config: SceneConfig) -> LayoutSequence:
    """Closed-form layout reconstruction from the mobile channels alone.

    Integrates the speed/heading channels into relative displacements, then
    anchors the absolute start position by linear least squares on the
    squared-distance differences of the receiver-distance channel.  With zero
    sensor noise this reproduces the generated layout to float precision,
    which is the guarantee that the conditioning signal determines the task.
    """
    if mobile.channel_count < ORACLE_MIN_CHANNELS:
        raise ValidationError(
            f"dead reckoning needs >= {ORACLE_MIN_CHANNELS} channels, got {mobile.channel_count}"
        )
    values = mobile.values
    T, dt = len(mobile), config.dt
    headings = 2.0 * np.arctan2(values[:, 12], values[:, 9])
    speeds = values[:, 15]
    distances = values[:, 13]

    steps = np.zeros((T, 2))
    steps[1:, 0] = dt * speeds[1:] * np.cos(headings[1:])
    steps[1:, 1] = dt * speeds[1:] * np.sin(headings[1:])
    displacement = np.cumsum(steps, axis=0)

    # |p0 + D_t - R|^2 = f_t^2, minus the t=0 equation, is linear in p0 - R.
    a = 2.0 * displacement[1:]
    b = distances[1:] ** 2 - distances[0] ** 2 - np.sum(displacement[1:] ** 2, axis=1)
    rel0, *_ = np.linalg.lstsq(a, b, rcond=None)
    positions = np.asarray(config.receiver_position) + rel0 + displacement
    track = WorldTrack(positions=positions, headings=headings, speeds=speeds)
    return project_to_layout(track, config)


def _quantize_sig9(arr: np.ndarray) -> np.ndarray:
    """Round-trip values through the 9-significant-digit decimal encoding so
    in-memory data equals its serialized form exactly."""
    flat = np.array([float(format(v, ".9g")) for v in arr.ravel()])
    return flat.reshape(arr.shape)


def generate_sample(config: SceneConfig, agent_id: str, rng: np.random.Generator) -> AgentSample:
    track = simulate_track(config, rng)
    layout = project_to_layout(track, config)
    mobile = synthesize_mobile(track, config, rng)
    return AgentSample(
        agent_id=agent_id,
        layout=LayoutSequence(_quantize_sig9(layout.values)),
        mobile=MobileSignalSequence(_quantize_sig9(mobile.values)),
    )


def _config_metadata(config: SceneConfig, seed: int) -> dict:
    meta = asdict(config)
    meta["noise"] = asdict(config.noise)
    return {
        "schema_version": SCHEMA_VERSION,
        "T": config.T,
        "C": config.channel_count,
        "units": {
            "layout": "pixels (x, y, w, h), meters (d)",
            "mobile": "sensor units per channel layout",
        },
        "channel_layout": {name: list(span) for name, span in CHANNELS.items()},
        "generator_config": meta,
        "seed": seed,
    }


def generate_dataset(
    config: SceneConfig,
    n_samples: int,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Generate n independent samples and cut them into disjoint splits.

    Each sample owns an rng derived from (seed, index), so generation is
    order-independent and reproducible.
    """
    if n_samples < 3:
        raise ValidationError(f"need at least 3 samples to split, got {n_samples}")
    if len(split_fractions) != 3 or any(f < 0 for f in split_fractions):
        raise ValidationError(f"bad split fractions {split_fractions}")
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must sum to 1, got {split_fractions}")

    samples = [
        generate_sample(config, f"agent-{i:05d}", np.random.default_rng([seed, i]))
        for i in range(n_samples)
    ]
    n_train = round(n_samples * split_fractions[0])
    n_val = round(n_samples * split_fractions[1])
    n_train = min(n_train, n_samples - 2)
    n_val = min(max(n_val, 1), n_samples - n_train - 1)
    cuts = (samples[:n_train], samples[n_train : n_train + n_val], samples[n_train + n_val :])

    meta = _config_metadata(config, seed)
    return tuple(
        Dataset(samples=part, split=split, metadata={**meta, "split": split, "n_samples": len(part)})
        for part, split in zip(cuts, ("train", "val", "test"))
    )


def _format_matrix(arr: np.ndarray) -> str:
    rows = (",".join(format(v, ".9g") for v in row) for row in arr)
    return "[" + ",".join(f"[{row}]" for row in rows) + "]"


def manifest_path(path: Path | str) -> Path:
    return Path(path).with_suffix(".manifest.json")


def write_dataset(dataset: Dataset, path: Path | str) -> None:
    """Write one sample per line (agent_id, layout, mobile, optional mask)
    with 9-significant-digit decimals, plus a sidecar manifest."""
    path = Path(path)
    lines = []
    for sample in dataset.samples:
        if not (
            np.isfinite(sample.layout.values).all()
            and np.isfinite(sample.mobile.values).all()
        ):
            raise ValidationError(f"sample {sample.agent_id}: non-finite values cannot be serialized")
        parts = [
            f'"agent_id":{json.dumps(sample.agent_id)}',
            f'"layout":{_format_matrix(sample.layout.values)}',
            f'"mobile":{_format_matrix(sample.mobile.values)}',
        ]
        if sample.mask is not None:
            parts.append(f'"mask":[{",".join(str(int(f)) for f in sample.mask.flags)}]')
        lines.append("{" + ",".join(parts) + "}")
    path.write_text("\n".join(lines) + "\n")

    manifest = dict(dataset.metadata)
    manifest.setdefault("schema_version", SCHEMA_VERSION)
    manifest["split"] = dataset.split
    manifest["n_samples"] = len(dataset)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(path: Path | str) -> Dataset:
    """Parse a dataset file; errors name the offending line and field."""
    path = Path(path)
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid record ({exc})") from exc
            if not isinstance(record, dict):
                raise DatasetFormatError(f"line {lineno}: record must be an object")
            for key in ("agent_id", "layout", "mobile"):
                if key not in record:
                    raise DatasetFormatError(f"line {lineno}: missing {key!r}")
            try:
                mask = None
                if "mask" in record:
                    mask = VisibilityMask(record["mask"])
                samples.append(
                    AgentSample(
                        agent_id=str(record["agent_id"]),
                        layout=LayoutSequence(record["layout"]),
                        mobile=MobileSignalSequence(record["mobile"]),
                        mask=mask,
                    )
                )
            except (ValidationError, ValueError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    if not samples:
        raise DatasetFormatError(f"{path}: no samples found")

    metadata: dict = {}
    split = "train"
    mpath = manifest_path(path)
    if mpath.exists():
        metadata = json.loads(mpath.read_text())
        split = metadata.get("split", split)
    return Dataset(samples=samples, split=split, metadata=metadata)

"""Steering functions: the pure-pursuit expert and the imitation network."""

import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .const import MAX_WHEEL_ANGLE, WHEELBASE
from .nn import DEFAULT_ARCHITECTURE, MomentumSGD, Network, NetworkParams, images_to_tensor
from .track import poses_along, project
from .util import TrainingError, digest, log_function
from .vehicle import EpisodeConfig, run_episode

logger = logging.getLogger(__package__)

LOOKAHEAD = 6.0  # m
ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ControlOutput:
    steering: float
    # Longitudinal control is held by the cruise governor.
    acceleration: float = 0.0
    brake: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "steering", min(1.0, max(-1.0, float(self.steering))))


@dataclass(frozen=True)
class ControllerInput:
    image: object
    history: tuple = ()
    capacity: int = 0

    def __post_init__(self):
        if len(self.history) > self.capacity:
            raise ValueError(
                f"history holds {len(self.history)} frames, capacity {self.capacity}"
            )


def expert_steering(state, track, *, lookahead=LOOKAHEAD):
    """Pure pursuit toward the own-lane center ``lookahead`` meters ahead."""
    s, _ = project(track, np.asarray([[state.x, state.y]]))
    position, heading = poses_along(track, s + lookahead)
    offset = -track.lane_width / 2
    target_x = position[0, 0] - offset * math.sin(heading[0])
    target_y = position[0, 1] + offset * math.cos(heading[0])

    dx, dy = target_x - state.x, target_y - state.y
    cos_h, sin_h = math.cos(state.heading), math.sin(state.heading)
    local_x = dx * cos_h + dy * sin_h
    local_y = -dx * sin_h + dy * cos_h
    alpha = math.atan2(local_y, local_x)
    distance = math.hypot(local_x, local_y)
    wheel_angle = math.atan2(2 * WHEELBASE * math.sin(alpha), distance)
    # Left wheel angle is positive in the world frame; steering is right-positive.
    return ControlOutput(steering=-wheel_angle / MAX_WHEEL_ANGLE)


def predict_steering(params, controller_input, network=None):
    network = network or Network(params)
    pixels = controller_input.image.pixels
    x = images_to_tensor(pixels, dtype=params.dtype)
    return ControlOutput(steering=float(network.predict(x)[0]))


class ExpertController:
    def __init__(self, *, lookahead=LOOKAHEAD):
        self.lookahead = lookahead

    def __call__(self, *, image, state, track):
        return expert_steering(state, track, lookahead=self.lookahead)

    def describe(self):
        return {"kind": "expert", "lookahead": self.lookahead}


class NetworkController:
    def __init__(self, params):
        self.network = Network(params)
        self.params = params
        self._digest = digest(
            b"".join(np.ascontiguousarray(v).tobytes() for v in params.tensors.values())
        )

    def __call__(self, *, image, state, track):
        return predict_steering(self.params, ControllerInput(image=image), self.network)

    def describe(self):
        return {"kind": "network", "weights": self._digest}


@dataclass
class ImitationDataset:
    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N,) float32
    episodes: np.ndarray  # (N,) episode index into provenance
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and np.any(np.abs(self.labels) > 1):
            raise ValueError("steering labels must lie in [-1, 1]")

    def __len__(self):
        return len(self.labels)

    def save(self, path):
        """Write an ``.npz`` archive whose bytes depend only on the data."""
        arrays = {
            "images": self.images,
            "labels": self.labels,
            "episodes": self.episodes,
            "provenance": np.asarray(json.dumps(self.provenance, sort_keys=True)),
        }
        with zipfile.ZipFile(path, "w") as archive:
            for name, value in arrays.items():
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, np.asanyarray(value), allow_pickle=False)
                archive.writestr(
                    zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_TIMESTAMP),
                    buffer.getvalue(),
                    compress_type=zipfile.ZIP_DEFLATED,
                )

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls(
                images=data["images"],
                labels=data["labels"],
                episodes=data["episodes"],
                provenance=json.loads(str(data["provenance"])),
            )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    momentum: float = 0.9
    seed: int = 0
    validation_split: float = 0.1
    min_samples: int = 1000

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "momentum"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.validation_split < 1:
            raise ValueError("validation_split must be in (0, 1)")


@log_function("n_episodes", klass="controller", log_method=logger.info)
def collect_demonstrations(
    tracks,
    weathers,
    *,
    n_episodes,
    offset_noise=0.6,
    heading_noise=0.08,
    steering_noise=0.0,
    camera=None,
    max_frames=80,
    seed=0,
):
    """Run perturbed expert episodes and label every frame with the expert."""
    images, labels, episodes, provenance = [], [], [], []
    for track_index, track in enumerate(tracks):
        for weather_index, weather in enumerate(weathers):
            for episode in range(n_episodes):
                rng = np.random.default_rng([seed, track_index, weather_index, episode])
                start_offset = -track.lane_width / 2 + rng.uniform(
                    -offset_noise, offset_noise
                )
                heading_error = rng.uniform(-heading_noise, heading_noise)
                episode_seed = int(rng.integers(2**31))
                episode_index = len(provenance)

                def record(frame, image, state, track=track, index=episode_index):
                    images.append(image.pixels)
                    labels.append(expert_steering(state, track).steering)
                    episodes.append(index)

                config = dict(
                    track=track,
                    controller=ExpertController(),
                    weather=weather,
                    max_frames=max_frames,
                    start_s=5.0 + rng.uniform(0, 5),
                    start_offset=start_offset,
                    start_heading_error=heading_error,
                    seed=episode_seed,
                    steering_noise=steering_noise,
                )
                if camera is not None:
                    config["camera"] = camera
                log = run_episode(EpisodeConfig(**config), frame_callback=record)
                provenance.append(
                    {
                        "frames": len(log),
                        "heading_error": heading_error,
                        "scenario": track.scenario.value,
                        "seed": episode_seed,
                        "start_offset": start_offset,
                        "town": track.town.value,
                        "weather": weather.name.value,
                    }
                )
                logger.debug(
                    f"demonstration {episode_index}: {track.scenario.value}/"
                    f"{weather.name.value} {len(log)} frames"
                )

    if not images:
        return ImitationDataset(
            images=np.zeros((0, 0, 0, 3), dtype=np.uint8),
            labels=np.zeros(0, dtype=np.float32),
            episodes=np.zeros(0, dtype=np.int32),
            provenance=provenance,
        )
    return ImitationDataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.float32),
        episodes=np.asarray(episodes, dtype=np.int32),
        provenance=provenance,
    )


def _batches(indices, batch_size):
    for start in range(0, len(indices), batch_size):
        yield indices[start : start + batch_size]


def evaluate(params, images, labels, *, batch_size=256):
    """Mean squared and mean absolute steering error in inference mode."""
    if len(labels) == 0:
        return float("nan"), float("nan")
    network = Network(params)
    predictions = np.concatenate(
        [
            network.predict(images_to_tensor(images[batch], dtype=params.dtype))
            for batch in _batches(np.arange(len(labels)), batch_size)
        ]
    )
    error = predictions - labels
    return float(np.mean(error**2)), float(np.mean(np.abs(error)))


@log_function(klass="controller", log_method=logger.info)
def train_imitation(dataset, cfg, *, architecture=DEFAULT_ARCHITECTURE, params=None):
    if len(dataset) < cfg.min_samples:
        raise ValueError(
            f"dataset has {len(dataset)} frames, at least {cfg.min_samples} needed"
        )
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = NetworkParams.initialize(architecture, seed=cfg.seed)
    else:
        params = params.copy()
    network = Network(params)
    optimizer = MomentumSGD(learning_rate=cfg.learning_rate, momentum=cfg.momentum)

    order = rng.permutation(len(dataset))
    n_validation = int(round(len(dataset) * cfg.validation_split))
    if n_validation >= len(dataset):
        n_validation = 0
    validation, train = order[:n_validation], order[n_validation:]

    history = {"train_loss": [], "val_loss": [], "val_mae": []}
    last_loss = None
    for epoch in range(cfg.epochs):
        losses = []
        for batch_index, batch in enumerate(_batches(rng.permutation(train), cfg.batch_size)):
            x = images_to_tensor(dataset.images[batch], dtype=params.dtype)
            targets = dataset.labels[batch].astype(params.dtype)
            loss, grads, batch_stats = network.loss_and_grads(x, targets)
            if not np.isfinite(loss):
                raise TrainingError(
                    "training diverged", epoch=epoch, batch=batch_index, last_loss=last_loss
                )
            optimizer.step(params, grads)
            network.update_running_stats(batch_stats)
            losses.append(loss * len(batch))
            last_loss = loss
        train_loss = float(np.sum(losses) / len(train))
        val_loss, val_mae = evaluate(
            params, dataset.images[validation], dataset.labels[validation]
        )
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        history["val_mae"].append(val_mae)
        logger.info(
            f"epoch {epoch + 1}/{cfg.epochs}: train loss {train_loss:.6f}, "
            f"validation loss {val_loss:.6f}, validation MAE {val_mae:.4f}"
        )

    params.history = history
    return params

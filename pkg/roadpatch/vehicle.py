"""Kinematic bicycle model and the closed-loop episode executor."""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .const import (
    CRUISE_SPEED,
    FOOTPRINT_GRID,
    MAX_WHEEL_ANGLE,
    VEHICLE_LENGTH,
    VEHICLE_MASS,
    VEHICLE_WIDTH,
    WHEELBASE,
)
from .render import CameraModel, WEATHERS, WeatherName, render_frame
from .track import Region, classify_offset, poses_along, project
from .util import canonical_json, digest, log_function

logger = logging.getLogger(__package__)

CSV_COLUMNS = (
    "frame",
    "steering",
    "speed",
    "lane_pct",
    "offroad_pct",
    "collision_intensity",
    "image_digest",
)
GOVERNOR_GAIN = 2.0  # 1/s


class Termination(Enum):
    MAX_FRAMES = "max_frames"
    TRACK_END = "track_end"
    COLLISION = "collision"


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"speed cannot be negative, got {self.speed}")

    @property
    def pose(self):
        return (self.x, self.y), self.heading

    def footprint_points(self):
        """Sample points of the 4.5 m x 2.0 m body, ``(n, 2)``."""
        along, across = FOOTPRINT_GRID
        u = (np.arange(along) + 0.5) / along * VEHICLE_LENGTH - VEHICLE_LENGTH / 2
        v = (np.arange(across) + 0.5) / across * VEHICLE_WIDTH - VEHICLE_WIDTH / 2
        u, v = np.meshgrid(u, v, indexing="ij")
        cos_h, sin_h = math.cos(self.heading), math.sin(self.heading)
        x = self.x + u * cos_h - v * sin_h
        y = self.y + u * sin_h + v * cos_h
        return np.stack([x.ravel(), y.ravel()], -1)


def step(state, steering, throttle_speed, dt):
    """Advance one fixed time step. Positive steering turns right."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    steering = min(1.0, max(-1.0, steering))
    yaw_rate = state.speed / WHEELBASE * math.tan(steering * MAX_WHEEL_ANGLE)
    heading = state.heading - yaw_rate * dt
    speed = max(0.0, state.speed + GOVERNOR_GAIN * (throttle_speed - state.speed) * dt)
    return VehicleState(
        x=state.x + state.speed * dt * math.cos(heading),
        y=state.y + state.speed * dt * math.sin(heading),
        heading=heading,
        speed=speed,
    )


def footprint_overlap(state, track):
    """Return ``(lane_violation_pct, offroad_pct, collided)``."""
    _, d = project(track, state.footprint_points())
    regions = classify_offset(track, d)
    total = regions.size
    lane_pct = 100.0 * np.count_nonzero(regions == Region.OPPOSITE_LANE) / total
    offroad_pct = 100.0 * np.count_nonzero(regions == Region.OFFROAD) / total
    collided = bool(np.any(regions == Region.OUT_OF_BOUNDS))
    return float(lane_pct), float(offroad_pct), collided


def initial_state(track, *, start_s, lateral_offset=None, heading_error=0.0):
    """State on the track; the default lateral offset is the own-lane center."""
    if lateral_offset is None:
        lateral_offset = -track.lane_width / 2
    position, heading = poses_along(track, np.asarray([start_s], dtype=np.float64))
    heading = float(heading[0])
    return VehicleState(
        x=float(position[0, 0]) - lateral_offset * math.sin(heading),
        y=float(position[0, 1]) + lateral_offset * math.cos(heading),
        heading=heading + heading_error,
        speed=CRUISE_SPEED,
    )


def frame_seed(seed, frame):
    return int(np.random.SeedSequence([seed, frame]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class EpisodeConfig:
    track: object
    controller: object
    canvas: object = None
    weather: object = WEATHERS[WeatherName.CLEAR]
    camera: CameraModel = field(default_factory=CameraModel)
    dt: float = 0.1
    max_frames: int = 80
    start_s: float = 5.0
    start_offset: float = None
    start_heading_error: float = 0.0
    cruise_speed: float = CRUISE_SPEED
    seed: int = 0
    steering_noise: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.max_frames <= 0:
            raise ValueError(f"max_frames must be positive, got {self.max_frames}")

    def digest(self):
        canvas = None
        if self.canvas is not None:
            raster = self.canvas.raster
            canvas = {
                "color": list(self.canvas.color),
                "location_s": self.canvas.location_s,
                "raster": None if raster is None else digest(raster.tobytes()),
            }
        return digest(
            canonical_json(
                {
                    "camera": [
                        self.camera.mount_height,
                        self.camera.pitch,
                        self.camera.horizontal_fov,
                        self.camera.image_width,
                        self.camera.image_height,
                        self.camera.mount_forward,
                    ],
                    "canvas": canvas,
                    "controller": self.controller.describe(),
                    "cruise_speed": self.cruise_speed,
                    "dt": self.dt,
                    "max_frames": self.max_frames,
                    "seed": self.seed,
                    "start": [self.start_s, self.start_offset, self.start_heading_error],
                    "steering_noise": self.steering_noise,
                    "track": self.track.digest_fields(),
                    "weather": self.weather.name.value,
                }
            )
        )


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    image_digest: str
    steering: float
    speed: float
    lane_violation_pct: float
    offroad_pct: float
    collision_intensity: float
    # Render pose and post-step track coordinates; not part of the CSV.
    pose: tuple = field(default=None, compare=False)
    s: float = field(default=0.0, compare=False)
    lateral_offset: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class EpisodeLog:
    config_digest: str
    records: tuple
    terminated_reason: Termination

    def __len__(self):
        return len(self.records)

    @property
    def poses(self):
        return [record.pose for record in self.records]

    @property
    def steering(self):
        return [record.steering for record in self.records]

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in self.records:
            writer.writerow(
                [
                    record.frame,
                    repr(record.steering),
                    repr(record.speed),
                    repr(record.lane_violation_pct),
                    repr(record.offroad_pct),
                    repr(record.collision_intensity),
                    record.image_digest,
                ]
            )
        return buffer.getvalue()

    def digest(self):
        return digest(
            f"{self.config_digest}\n{self.terminated_reason.value}\n{self.to_csv()}"
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fp:
            fp.write(self.to_csv())


def read_csv(path):
    """Rows of an episode CSV as dictionaries of floats (digest kept as str)."""
    with open(path, newline="") as fp:
        rows = []
        for row in csv.DictReader(fp):
            rows.append(
                {
                    key: value if key == "image_digest" else float(value)
                    for key, value in row.items()
                }
            )
    return rows


class EpisodeAborted(Exception):
    def __init__(self, message, *, log):
        super().__init__(message)
        self.log = log


@log_function(klass="vehicle")
def run_episode(cfg, *, frame_callback=None):
    """Run one closed-loop episode.

    ``frame_callback(frame, image, state)`` is invoked with every rendered
    frame before the controller acts; demonstrations and frame dumps use it.
    """
    track = cfg.track
    config_digest = cfg.digest()
    state = initial_state(
        track,
        start_s=cfg.start_s,
        lateral_offset=cfg.start_offset,
        heading_error=cfg.start_heading_error,
    )
    noise = np.random.default_rng(cfg.seed) if cfg.steering_noise > 0 else None
    records = []
    reason = Termination.MAX_FRAMES

    for frame in range(cfg.max_frames):
        s, _ = project(track, np.asarray([[state.x, state.y]]))
        if s[0] >= track.total_length:
            reason = Termination.TRACK_END
            break

        pose = state.pose
        image = render_frame(
            track, cfg.canvas, pose, cfg.camera, cfg.weather, frame_seed(cfg.seed, frame)
        )
        if frame_callback is not None:
            frame_callback(frame, image, state)
        try:
            control = cfg.controller(image=image, state=state, track=track)
        except Exception as exception:
            log = EpisodeLog(
                config_digest=config_digest,
                records=tuple(records),
                terminated_reason=reason,
            )
            raise EpisodeAborted(
                f"controller failed at frame {frame}: {exception}", log=log
            ) from exception

        executed = control.steering
        if noise is not None:
            executed = min(1.0, max(-1.0, executed + noise.normal(0, cfg.steering_noise)))
        state = step(state, executed, cfg.cruise_speed, cfg.dt)
        lane_pct, offroad_pct, collided = footprint_overlap(state, track)
        s, d = project(track, np.asarray([[state.x, state.y]]))
        records.append(
            FrameRecord(
                frame=frame,
                image_digest=image.digest(),
                steering=float(control.steering),
                speed=state.speed,
                lane_violation_pct=lane_pct,
                offroad_pct=offroad_pct,
                collision_intensity=VEHICLE_MASS * abs(state.speed) if collided else 0.0,
                pose=pose,
                s=float(s[0]),
                lateral_offset=float(d[0]),
            )
        )
        if collided:
            reason = Termination.COLLISION
            break

    return EpisodeLog(
        config_digest=config_digest, records=tuple(records), terminated_reason=reason
    )

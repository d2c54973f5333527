"""Front camera rasterizer (inverse perspective mapping onto the ground)."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from PIL import Image as PILImage

from .track import project, surface_colors
from .util import digest

logger = logging.getLogger(__package__)

SKY_COLOR = (138, 172, 214)


class WeatherName(Enum):
    CLEAR = "clear"
    RAIN = "rain"
    SUNSET = "sunset"


@dataclass(frozen=True)
class CameraModel:
    mount_height: float = 1.4
    pitch: float = math.radians(8)
    horizontal_fov: float = math.radians(100)
    image_width: int = 200
    image_height: int = 88
    mount_forward: float = 1.0  # m ahead of the vehicle reference point

    def __post_init__(self):
        if not 0 < self.pitch < math.pi / 2:
            raise ValueError(f"pitch must be in (0, pi/2), got {self.pitch}")
        if not 0 < self.horizontal_fov < math.pi:
            raise ValueError(f"fov must be in (0, pi), got {self.horizontal_fov}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.mount_height <= 0:
            raise ValueError("mount_height must be positive")

    @property
    def focal(self):
        return (self.image_width / 2) / math.tan(self.horizontal_fov / 2)

    @property
    def horizon_row(self):
        """First pixel row whose center ray reaches the ground."""
        cy = self.image_height / 2
        return max(0, math.floor(cy - self.focal * math.tan(self.pitch) - 0.5) + 1)


@dataclass(frozen=True)
class WeatherPreset:
    name: WeatherName
    brightness_scale: float
    additive_noise_sigma: float
    tint: tuple

    def __post_init__(self):
        if not 0 < self.brightness_scale <= 1.5:
            raise ValueError(f"brightness_scale out of range: {self.brightness_scale}")
        if self.additive_noise_sigma < 0:
            raise ValueError("noise sigma cannot be negative")

    def apply(self, pixels, frame_seed):
        scale = np.asarray(self.tint, dtype=np.float64) * self.brightness_scale
        if self.additive_noise_sigma == 0 and np.all(scale == 1.0):
            return pixels
        out = pixels.astype(np.float64) * scale
        if self.additive_noise_sigma > 0:
            rng = np.random.default_rng(frame_seed)
            out += rng.normal(0.0, self.additive_noise_sigma, size=out.shape)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)


WEATHERS = {
    WeatherName.CLEAR: WeatherPreset(
        name=WeatherName.CLEAR,
        brightness_scale=1.0,
        additive_noise_sigma=0.0,
        tint=(1.0, 1.0, 1.0),
    ),
    WeatherName.RAIN: WeatherPreset(
        name=WeatherName.RAIN,
        brightness_scale=0.7,
        additive_noise_sigma=8.0,
        tint=(0.92, 0.96, 1.08),
    ),
    WeatherName.SUNSET: WeatherPreset(
        name=WeatherName.SUNSET,
        brightness_scale=0.85,
        additive_noise_sigma=2.0,
        tint=(1.15, 0.95, 0.78),
    ),
}


def weather(name):
    return WEATHERS[WeatherName(name)]


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def digest(self):
        return digest(np.ascontiguousarray(self.pixels).tobytes())

    def save_png(self, path):
        PILImage.fromarray(self.pixels, mode="RGB").save(path, format="PNG")


@lru_cache(maxsize=8)
def ground_offsets(camera):
    """Per-pixel ground intersection relative to the camera.

    Returns ``(forward, left, ground)`` arrays of shape ``(height, width)``;
    ``ground`` is False for sky pixels whose rays never reach the road.
    """
    rows = np.arange(camera.image_height, dtype=np.float64) + 0.5
    columns = np.arange(camera.image_width, dtype=np.float64) + 0.5
    x_c = (columns - camera.image_width / 2) / camera.focal  # right
    y_c = (rows - camera.image_height / 2) / camera.focal  # down
    x_c, y_c = np.meshgrid(x_c, y_c)

    sin_p, cos_p = math.sin(camera.pitch), math.cos(camera.pitch)
    descent = sin_p + y_c * cos_p
    ground = np.zeros(descent.shape, dtype=bool)
    ground[camera.horizon_row :] = True
    ground &= descent > 0
    t = np.where(ground, camera.mount_height / np.where(ground, descent, 1.0), 0.0)
    forward = t * (cos_p - y_c * sin_p)
    left = -t * x_c
    forward.setflags(write=False)
    left.setflags(write=False)
    ground.setflags(write=False)
    return forward, left, ground


def ground_points(camera, pose):
    (x, y), heading = pose
    forward, left, ground = ground_offsets(camera)
    cos_h, sin_h = math.cos(heading), math.sin(heading)
    cam_x = x + camera.mount_forward * cos_h
    cam_y = y + camera.mount_forward * sin_h
    f, l = forward[ground], left[ground]
    points = np.stack([cam_x + f * cos_h - l * sin_h, cam_y + f * sin_h + l * cos_h], -1)
    return points, ground


def rasterize_view(track, canvas, pose, camera):
    """Weather-free pixels and the mask of pixels showing painted cells."""
    points, ground = ground_points(camera, pose)
    s, d = project(track, points)
    colors, painted = surface_colors(track, canvas, s, d)

    pixels = np.empty((camera.image_height, camera.image_width, 3), dtype=np.uint8)
    pixels[...] = SKY_COLOR
    pixels[ground] = colors
    mask = np.zeros(ground.shape, dtype=bool)
    mask[ground] = painted
    return pixels, mask


def render_frame(track, canvas, vehicle_pose, camera, weather, frame_seed):
    pixels, _ = rasterize_view(track, canvas, vehicle_pose, camera)
    return Image(pixels=weather.apply(pixels, frame_seed))


def painted_pixel_counts(track, canvas, poses, camera):
    if canvas is None or canvas.is_empty:
        return [0] * len(poses)
    counts = []
    for pose in poses:
        points, _ = ground_points(camera, pose)
        s, d = project(track, points)
        counts.append(int(canvas.painted(s, d).sum()))
    return counts


def frames_in_view(track, canvas, poses, camera):
    """Return ``(f_l, delta)`` for an episode's per-frame poses.

    A frame counts as showing the pattern when at least one pixel maps onto a
    painted canvas cell, which is exactly when the render differs from the
    pattern-free render of the same pose.
    """
    counts = painted_pixel_counts(track, canvas, poses, camera)
    visible = [index for index, count in enumerate(counts) if count > 0]
    if not visible:
        return None, 0
    return visible[0], len(visible)

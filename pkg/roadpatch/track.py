"""Parametric road geometry and the painted canvas that sits on it.

Coordinates are metric with a counter-clockwise heading. Track-relative
positions are expressed as ``(s, d)``: arc length along the centerline and a
signed lateral offset that is positive to the left of the centerline. Traffic
keeps right, so the vehicle's own lane is ``d <= 0``.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .const import CANVAS_CELLS, SHOULDER_WIDTH
from .util import OutOfBoundsError

logger = logging.getLogger(__package__)

APPROACH_LENGTH = 30.0  # m, entry and exit straights
CURB_WIDTH = 0.3  # m, first part of the shoulder


class Scenario(Enum):
    STRAIGHT = "straight"
    RIGHT_CORNER = "right_corner"
    LEFT_CORNER = "left_corner"


class Town(Enum):
    TRAIN = "train"
    TEST = "test"


class SegmentKind(Enum):
    LINE = "line"
    ARC = "arc"


class Region(IntEnum):
    OWN_LANE = 0
    OPPOSITE_LANE = 1
    OFFROAD = 2
    OUT_OF_BOUNDS = 3


@dataclass(frozen=True)
class Marking:
    color: tuple
    width: float


@dataclass(frozen=True)
class RoadTexture:
    base_color: tuple
    center_marking: Marking
    edge_marking: Marking
    curb_color: tuple
    offroad_color: tuple
    barrier_color: tuple

    def validate(self, lane_width):
        for marking in (self.center_marking, self.edge_marking):
            if not 0 < marking.width < lane_width:
                raise ValueError(
                    f"marking width {marking.width} must be in (0, {lane_width})"
                )


TEXTURES = {
    # The center "double line" is two abutting stripes; at camera resolution
    # they render as a single band.
    Town.TRAIN: RoadTexture(
        base_color=(82, 82, 86),
        center_marking=Marking(color=(232, 190, 38), width=0.3),
        edge_marking=Marking(color=(236, 236, 236), width=0.15),
        curb_color=(176, 172, 164),
        offroad_color=(112, 138, 86),
        barrier_color=(150, 60, 48),
    ),
    Town.TEST: RoadTexture(
        base_color=(108, 104, 100),
        center_marking=Marking(color=(240, 240, 240), width=0.3),
        edge_marking=Marking(color=(222, 222, 200), width=0.15),
        curb_color=(196, 150, 120),
        offroad_color=(150, 140, 120),
        barrier_color=(90, 90, 110),
    ),
}


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    length: float
    curvature: float = 0.0


@dataclass(frozen=True)
class SegmentStart:
    s: float
    x: float
    y: float
    heading: float


@dataclass(frozen=True)
class TrackSpec:
    scenario: Scenario
    segments: tuple
    lane_width: float
    texture: RoadTexture
    town: Town = Town.TRAIN
    starts: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a track needs at least one segment")
        if self.lane_width <= 0:
            raise ValueError(f"lane_width must be positive, got {self.lane_width}")
        for segment in self.segments:
            if segment.length <= 0:
                raise ValueError(f"segment length must be positive: {segment}")
            if segment.kind == SegmentKind.LINE and segment.curvature != 0:
                raise ValueError(f"line segments have zero curvature: {segment}")
            if self.scenario == Scenario.STRAIGHT and segment.curvature != 0:
                raise ValueError("straight scenario cannot contain curvature")
        self.texture.validate(self.lane_width)

        starts = []
        s = x = y = heading = 0.0
        for segment in self.segments:
            starts.append(SegmentStart(s=s, x=x, y=y, heading=heading))
            x, y, heading = _advance(x, y, heading, segment, segment.length)
            s += segment.length
        object.__setattr__(self, "starts", tuple(starts))

    @property
    def total_length(self):
        return sum(segment.length for segment in self.segments)

    def curvature(self, s):
        for start, segment in zip(self.starts, self.segments):
            if s < start.s + segment.length:
                return segment.curvature
        return self.segments[-1].curvature

    def digest_fields(self):
        return {
            "lane_width": self.lane_width,
            "scenario": self.scenario.value,
            "segments": [
                [segment.kind.value, segment.length, segment.curvature]
                for segment in self.segments
            ],
            "town": self.town.value,
        }


@dataclass(frozen=True, eq=False)
class CanvasRegion:
    """A square patch of road, ``2 * lane_width`` on each side.

    Cells are addressed ``raster[row, column]``. Column 0 lies on the left road
    edge and columns advance to the right; row 0 is the far end of the patch.
    """

    location_s: float
    lane_width: float
    raster: np.ndarray = None
    color: tuple = (0, 0, 0)

    @property
    def cell_size(self):
        return self.side_extent / CANVAS_CELLS

    @property
    def length(self):
        return self.side_extent

    @property
    def side_extent(self):
        return 2 * self.lane_width

    @property
    def is_empty(self):
        return self.raster is None or not self.raster.any()

    def cell_indices(self, s, d):
        """Return ``(row, column, inside)`` arrays for track coordinates."""
        column = np.floor((self.lane_width - d) / self.cell_size).astype(np.int64)
        row = np.floor((self.location_s + self.length - s) / self.cell_size).astype(
            np.int64
        )
        inside = (
            (np.abs(d) <= self.lane_width)
            & (s >= self.location_s)
            & (s <= self.location_s + self.length)
        )
        return (
            np.clip(row, 0, CANVAS_CELLS - 1),
            np.clip(column, 0, CANVAS_CELLS - 1),
            inside,
        )

    def painted(self, s, d):
        if self.is_empty:
            return np.zeros(np.shape(s), dtype=bool)
        row, column, inside = self.cell_indices(s, d)
        return inside & self.raster[row, column]


@dataclass(frozen=True)
class SurfaceSample:
    color: tuple
    region: Region


def _advance(x, y, heading, segment, t):
    if segment.kind == SegmentKind.LINE or segment.curvature == 0:
        return x + t * math.cos(heading), y + t * math.sin(heading), heading
    k = segment.curvature
    new_heading = heading + k * t
    return (
        x + (math.sin(new_heading) - math.sin(heading)) / k,
        y - (math.cos(new_heading) - math.cos(heading)) / k,
        new_heading,
    )


def build_track(
    scenario,
    *,
    lane_width=3.5,
    corner_radius=20.0,
    approach_length=APPROACH_LENGTH,
    town=Town.TRAIN,
    texture=None,
):
    scenario = Scenario(scenario)
    town = Town(town)
    if lane_width <= 0:
        raise ValueError(f"lane_width must be positive, got {lane_width}")
    if approach_length <= 0:
        raise ValueError(f"approach_length must be positive, got {approach_length}")

    segments = [Segment(kind=SegmentKind.LINE, length=approach_length)]
    if scenario != Scenario.STRAIGHT:
        if corner_radius is None or corner_radius <= lane_width:
            raise ValueError(
                f"corner_radius ({corner_radius}) must exceed lane_width ({lane_width})"
            )
        sign = -1.0 if scenario == Scenario.RIGHT_CORNER else 1.0
        segments.append(
            Segment(
                kind=SegmentKind.ARC,
                length=math.pi / 2 * corner_radius,
                curvature=sign / corner_radius,
            )
        )
    segments.append(Segment(kind=SegmentKind.LINE, length=approach_length))

    track = TrackSpec(
        scenario=scenario,
        segments=tuple(segments),
        lane_width=lane_width,
        texture=texture or TEXTURES[town],
        town=town,
    )
    logger.debug(
        f"built {scenario.value} track ({town.value}) of {track.total_length:.2f} m"
    )
    return track


def centerline_pose(track, s):
    if not 0 <= s <= track.total_length:
        raise OutOfBoundsError(f"s={s} outside [0, {track.total_length}]")
    position, heading = poses_along(track, np.asarray([s], dtype=np.float64))
    return (float(position[0, 0]), float(position[0, 1])), float(heading[0])


def poses_along(track, s):
    """Vectorized centerline poses; ``s`` beyond either end extends the end
    straights."""
    s = np.asarray(s, dtype=np.float64)
    position = np.empty(s.shape + (2,))
    heading = np.empty(s.shape)
    index_of = np.clip(
        np.searchsorted([start.s for start in track.starts], s, side="right") - 1,
        0,
        len(track.segments) - 1,
    )
    for index, (start, segment) in enumerate(zip(track.starts, track.segments)):
        mask = index_of == index
        if not mask.any():
            continue
        t = s[mask] - start.s
        if segment.curvature == 0:
            heading[mask] = start.heading
            position[mask, 0] = start.x + t * math.cos(start.heading)
            position[mask, 1] = start.y + t * math.sin(start.heading)
        else:
            k = segment.curvature
            h = start.heading + k * t
            heading[mask] = h
            position[mask, 0] = start.x + (np.sin(h) - math.sin(start.heading)) / k
            position[mask, 1] = start.y - (np.cos(h) - math.cos(start.heading)) / k
    return position, heading


def project(track, points):
    """Map world points ``(..., 2)`` to track coordinates ``(s, d)``."""
    points = np.asarray(points, dtype=np.float64)
    px, py = points[..., 0], points[..., 1]
    best_distance = np.full(px.shape, np.inf)
    best_s = np.zeros(px.shape)
    best_d = np.zeros(px.shape)
    last = len(track.segments) - 1

    for index, (start, segment) in enumerate(zip(track.starts, track.segments)):
        lower = -np.inf if index == 0 else 0.0
        upper = np.inf if index == last else segment.length
        cos_h, sin_h = math.cos(start.heading), math.sin(start.heading)

        if segment.curvature == 0:
            t = np.clip((px - start.x) * cos_h + (py - start.y) * sin_h, lower, upper)
            cx = start.x + t * cos_h
            cy = start.y + t * sin_h
            tx = np.full(px.shape, cos_h)
            ty = np.full(px.shape, sin_h)
        else:
            k = segment.curvature
            center_x = start.x - sin_h / k
            center_y = start.y + cos_h / k
            start_angle = math.atan2(start.y - center_y, start.x - center_x)
            angle = np.arctan2(py - center_y, px - center_x)
            delta = np.mod(angle - start_angle + math.pi, 2 * math.pi) - math.pi
            t = np.clip(delta / k, 0.0, segment.length)
            h = start.heading + k * t
            cx = start.x + (np.sin(h) - sin_h) / k
            cy = start.y - (np.cos(h) - cos_h) / k
            tx, ty = np.cos(h), np.sin(h)

        rx, ry = px - cx, py - cy
        distance = np.hypot(rx, ry)
        better = distance < best_distance
        sign = np.where(tx * ry - ty * rx >= 0, 1.0, -1.0)
        best_distance = np.where(better, distance, best_distance)
        best_s = np.where(better, start.s + t, best_s)
        best_d = np.where(better, sign * distance, best_d)

    return best_s, best_d


def classify_offset(track, d):
    """Region per signed lateral offset; boundaries resolve to the safer side."""
    d = np.asarray(d, dtype=np.float64)
    ad = np.abs(d)
    lane_width = track.lane_width
    return np.where(
        ad <= lane_width,
        np.where(d <= 0, Region.OWN_LANE, Region.OPPOSITE_LANE),
        np.where(
            ad <= lane_width + SHOULDER_WIDTH, Region.OFFROAD, Region.OUT_OF_BOUNDS
        ),
    ).astype(np.int8)


def surface_colors(track, canvas, s, d):
    """Return ``(colors, painted)`` for arrays of track coordinates."""
    texture = track.texture
    lane_width = track.lane_width
    ad = np.abs(d)

    colors = np.empty(np.shape(d) + (3,), dtype=np.uint8)
    colors[...] = texture.barrier_color
    colors[ad <= lane_width + SHOULDER_WIDTH] = texture.offroad_color
    colors[ad <= lane_width + CURB_WIDTH] = texture.curb_color
    colors[ad <= lane_width] = texture.base_color
    edge = (ad <= lane_width) & (ad >= lane_width - texture.edge_marking.width)
    colors[edge] = texture.edge_marking.color
    colors[ad <= texture.center_marking.width / 2] = texture.center_marking.color

    if canvas is None:
        painted = np.zeros(np.shape(d), dtype=bool)
    else:
        painted = canvas.painted(s, d)
        colors[painted] = canvas.color
    return colors, painted


def sample_surface(track, canvas, world_point):
    s, d = project(track, np.asarray([world_point], dtype=np.float64))
    colors, _ = surface_colors(track, canvas, s, d)
    region = Region(int(classify_offset(track, d)[0]))
    return SurfaceSample(color=tuple(int(c) for c in colors[0]), region=region)


def place_canvas(track, location_s, *, raster=None, color=(0, 0, 0)):
    length = 2 * track.lane_width
    if not 0 <= location_s <= track.total_length - length:
        raise ValueError(
            f"canvas at s={location_s} does not fit on a "
            f"{track.total_length:.2f} m track (canvas length {length} m)"
        )
    if raster is not None and raster.shape != (CANVAS_CELLS, CANVAS_CELLS):
        raise ValueError(f"raster must be {CANVAS_CELLS}x{CANVAS_CELLS}")
    return CanvasRegion(
        location_s=location_s,
        lane_width=track.lane_width,
        raster=raster,
        color=tuple(color),
    )

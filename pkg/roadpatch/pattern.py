"""Black line patterns rasterized onto the 200x200 road canvas."""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image as PILImage

from .const import CANVAS_CELLS

logger = logging.getLogger(__package__)

DEFAULT_WIDTH = 4


class PatternKind(Enum):
    SINGLE_LINE = "single_line"
    DOUBLE_LINE = "double_line"


@dataclass(frozen=True)
class PatternParams:
    """Line band through ``(position, 100)`` at ``rotation`` degrees from the
    canvas x-axis (the road's lateral direction). Units are canvas cells."""

    kind: PatternKind
    position: float
    rotation: float
    width: float = DEFAULT_WIDTH
    gap: float = None
    color: tuple = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        if not 0 <= self.position <= CANVAS_CELLS:
            raise ValueError(f"position {self.position} outside [0, {CANVAS_CELLS}]")
        if not 0 <= self.rotation < 180:
            raise ValueError(f"rotation {self.rotation} outside [0, 180)")
        if self.width < 1:
            raise ValueError(f"width must be at least 1 cell, got {self.width}")
        if self.kind == PatternKind.SINGLE_LINE and self.gap is not None:
            raise ValueError("single line patterns have no gap")
        if self.kind == PatternKind.DOUBLE_LINE and (self.gap is None or self.gap < 0):
            raise ValueError("double line patterns need a gap >= 0")

    def to_dict(self):
        return {
            "gap": self.gap,
            "kind": self.kind.value,
            "position": self.position,
            "rotation": self.rotation,
            "width": self.width,
        }


def _band(distance, width):
    return np.abs(distance) <= width / 2


def rasterize(params):
    """Occupancy grid ``[row, column]``; True cells are painted."""
    centers = np.arange(CANVAS_CELLS, dtype=np.float64) + 0.5
    x = centers[None, :]
    y = CANVAS_CELLS - centers[:, None]  # row 0 is the top of the canvas
    theta = math.radians(params.rotation)
    distance = (x - params.position) * math.sin(theta) - (
        y - CANVAS_CELLS / 2
    ) * math.cos(theta)
    if params.kind == PatternKind.SINGLE_LINE:
        return _band(distance, params.width)
    half_gap = params.gap / 2
    return _band(distance - half_gap, params.width) | _band(
        distance + half_gap, params.width
    )


def empty_raster():
    return np.zeros((CANVAS_CELLS, CANVAS_CELLS), dtype=bool)


def save_raster_png(raster, path):
    pixels = np.where(raster, 0, 255).astype(np.uint8)
    PILImage.fromarray(pixels, mode="L").save(path, format="PNG")


class PatternGrid:
    """Ordered sweep entries; an entry's pattern id is its index."""

    def __init__(self, entries):
        self.entries = tuple(entries)
        kinds = {entry.kind for entry in self.entries}
        if len(kinds) > 1:
            raise ValueError(f"a grid holds a single pattern kind, got {kinds}")

    def __eq__(self, other):
        return isinstance(other, PatternGrid) and self.entries == other.entries

    def __getitem__(self, pattern_id):
        return self.entries[pattern_id]

    def __iter__(self):
        return iter(enumerate(self.entries))

    def __len__(self):
        return len(self.entries)

    @property
    def kind(self):
        return self.entries[0].kind if self.entries else None

    def to_jsonl(self):
        return "".join(
            json.dumps({"id": pattern_id, **entry.to_dict()}, sort_keys=True) + "\n"
            for pattern_id, entry in self
        )

    def write(self, path):
        with open(path, "w") as fp:
            fp.write(self.to_jsonl())

    @classmethod
    def read(cls, path):
        entries = []
        with open(path) as fp:
            for expected_id, line in enumerate(fp):
                row = json.loads(line)
                if row.pop("id") != expected_id:
                    raise ValueError(f"{path}: pattern ids must be dense from 0")
                entries.append(PatternParams(**row))
        return cls(entries)


def _axis(step, stop, *, inclusive):
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    count = int(math.floor(stop / step + 1e-9)) + 1
    values = [round(index * step, 9) for index in range(count)]
    if not inclusive:
        values = [value for value in values if value < stop]
    return values


def enumerate_grid(kind, *, position_step, rotation_step, widths, gaps=None):
    """Cartesian sweep ordered position, rotation, width, gap (innermost)."""
    kind = PatternKind(kind)
    positions = _axis(position_step, CANVAS_CELLS, inclusive=True)
    rotations = _axis(rotation_step, 180, inclusive=False)
    widths = list(widths)
    if kind == PatternKind.SINGLE_LINE:
        if gaps:
            raise ValueError("single line sweeps take no gaps")
        gaps = [None]
    else:
        gaps = list(gaps or [])
    if not widths or not gaps:
        raise ValueError("every sweep axis needs at least one value")

    entries = [
        PatternParams(
            kind=kind, position=position, rotation=rotation, width=width, gap=gap
        )
        for position in positions
        for rotation in rotations
        for width in widths
        for gap in gaps
    ]
    logger.debug(f"enumerated {len(entries)} {kind.value} patterns")
    return PatternGrid(entries)

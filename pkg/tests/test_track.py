import math

import numpy as np
import pytest

from roadpatch.track import (
    TEXTURES,
    CanvasRegion,
    Region,
    Scenario,
    Segment,
    SegmentKind,
    TrackSpec,
    Town,
    build_track,
    centerline_pose,
    classify_offset,
    place_canvas,
    poses_along,
    project,
    sample_surface,
)
from roadpatch.util import OutOfBoundsError


def offset_point(track, s, d):
    (x, y), heading = centerline_pose(track, s)
    return x - d * math.sin(heading), y + d * math.cos(heading)


def test_straight_track_length(straight_track):
    assert straight_track.total_length == pytest.approx(60.0)
    assert straight_track.scenario == Scenario.STRAIGHT


def test_right_corner_geometry(right_track):
    assert right_track.total_length == pytest.approx(60 + math.pi / 2 * 20)
    (x, y), heading = centerline_pose(right_track, right_track.total_length)
    assert (x, y) == (pytest.approx(50.0), pytest.approx(-50.0))
    assert heading == pytest.approx(-math.pi / 2)


def test_left_corner_mirrors_right_corner(right_track, left_track):
    s = np.linspace(0, right_track.total_length, 97)
    right_position, right_heading = poses_along(right_track, s)
    left_position, left_heading = poses_along(left_track, s)
    assert np.allclose(right_position[:, 0], left_position[:, 0], atol=1e-9)
    assert np.allclose(right_position[:, 1], -left_position[:, 1], atol=1e-9)
    assert np.allclose(right_heading, -left_heading, atol=1e-12)


def test_curvature_lookup(right_track):
    assert right_track.curvature(10.0) == 0
    assert right_track.curvature(40.0) == pytest.approx(-1 / 20)
    assert right_track.curvature(right_track.total_length) == 0


def test_centerline_pose_out_of_range(straight_track):
    with pytest.raises(OutOfBoundsError):
        centerline_pose(straight_track, 60.5)
    with pytest.raises(IndexError):
        centerline_pose(straight_track, -0.1)


@pytest.mark.parametrize("scenario", ["straight", "right_corner", "left_corner"])
@pytest.mark.parametrize("s, d", [(12.0, -1.75), (41.0, 2.3), (55.0, -4.2)])
def test_project_recovers_track_coordinates(scenario, s, d):
    track = build_track(scenario)
    s_out, d_out = project(track, np.asarray([offset_point(track, s, d)]))
    assert s_out[0] == pytest.approx(s, abs=1e-9)
    assert d_out[0] == pytest.approx(d, abs=1e-9)


@pytest.mark.parametrize(
    "d, region",
    [
        (0.0, Region.OWN_LANE),
        (-3.5, Region.OWN_LANE),
        (0.01, Region.OPPOSITE_LANE),
        (3.5, Region.OPPOSITE_LANE),
        (3.6, Region.OFFROAD),
        (-5.0, Region.OFFROAD),
        (5.01, Region.OUT_OF_BOUNDS),
        (-7.0, Region.OUT_OF_BOUNDS),
    ],
)
def test_classify_offset(straight_track, d, region):
    assert classify_offset(straight_track, np.asarray([d]))[0] == region


def test_sample_surface_colors(straight_track):
    texture = straight_track.texture
    center = sample_surface(straight_track, None, (10.0, 0.0))
    assert center.color == texture.center_marking.color
    assert center.region == Region.OWN_LANE
    assert sample_surface(straight_track, None, (10.0, -1.75)).color == texture.base_color
    assert sample_surface(straight_track, None, (10.0, -3.45)).color == (
        texture.edge_marking.color
    )
    assert sample_surface(straight_track, None, (10.0, -3.7)).color == texture.curb_color
    offroad = sample_surface(straight_track, None, (10.0, 4.5))
    assert offroad.color == texture.offroad_color
    assert offroad.region == Region.OFFROAD
    barrier = sample_surface(straight_track, None, (10.0, -6.0))
    assert barrier.color == texture.barrier_color
    assert barrier.region == Region.OUT_OF_BOUNDS


def test_canvas_paint_overrides_road(straight_track):
    raster = np.zeros((200, 200), dtype=bool)
    raster[:, 0] = True  # left road edge
    canvas = place_canvas(straight_track, 20.0, raster=raster, color=(0, 0, 0))
    assert sample_surface(straight_track, canvas, (23.0, 3.49)).color == (0, 0, 0)
    assert sample_surface(straight_track, canvas, (23.0, -1.75)).color == (
        straight_track.texture.base_color
    )
    # Outside the patch lengthwise.
    assert sample_surface(straight_track, canvas, (28.0, 3.49)).color != (0, 0, 0)


def test_canvas_cell_addressing(straight_track):
    canvas = place_canvas(straight_track, 20.0)
    row, column, inside = canvas.cell_indices(
        np.asarray([26.99, 20.01]), np.asarray([3.49, -3.49])
    )
    assert list(row) == [0, 199]
    assert list(column) == [0, 199]
    assert inside.all()
    _, _, inside = canvas.cell_indices(np.asarray([19.0]), np.asarray([0.0]))
    assert not inside[0]


def test_empty_canvas_paints_nothing(straight_track):
    canvas = place_canvas(straight_track, 20.0)
    assert canvas.is_empty
    assert not canvas.painted(np.asarray([22.0]), np.asarray([0.0])).any()


def test_place_canvas_must_fit(straight_track):
    place_canvas(straight_track, 53.0)
    with pytest.raises(ValueError):
        place_canvas(straight_track, 53.5)
    with pytest.raises(ValueError):
        place_canvas(straight_track, -1.0)
    with pytest.raises(ValueError):
        place_canvas(straight_track, 10.0, raster=np.zeros((100, 200), dtype=bool))


def test_canvas_spans_the_road_width(straight_track):
    canvas = place_canvas(straight_track, 0.0)
    assert isinstance(canvas, CanvasRegion)
    assert canvas.side_extent == pytest.approx(7.0)
    assert canvas.cell_size == pytest.approx(0.035)


def test_build_track_rejects_tight_corner():
    with pytest.raises(ValueError):
        build_track("right_corner", corner_radius=3.0)
    with pytest.raises(ValueError):
        build_track("straight", lane_width=0)


def test_straight_scenario_rejects_curvature():
    with pytest.raises(ValueError):
        TrackSpec(
            scenario=Scenario.STRAIGHT,
            segments=(Segment(kind=SegmentKind.ARC, length=10.0, curvature=0.1),),
            lane_width=3.5,
            texture=TEXTURES[Town.TRAIN],
        )


def test_test_town_uses_its_own_texture():
    train = build_track("straight")
    test = build_track("straight", town="test")
    assert test.town == Town.TEST
    assert test.texture != train.texture
    assert test.digest_fields() != train.digest_fields()

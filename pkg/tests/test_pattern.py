import numpy as np
import pytest
from PIL import Image as PILImage
from scipy import ndimage

from roadpatch.pattern import (
    PatternGrid,
    PatternKind,
    PatternParams,
    empty_raster,
    enumerate_grid,
    rasterize,
    save_raster_png,
)


def painted_columns(raster):
    return sorted(set(np.nonzero(raster)[1].tolist()))


def test_vertical_single_line():
    raster = rasterize(PatternParams(kind="single_line", position=100, rotation=90, width=4))
    assert raster.shape == (200, 200)
    assert painted_columns(raster) == [98, 99, 100, 101]
    assert raster[:, 98:102].all()


def test_horizontal_single_line_ignores_position():
    raster = rasterize(PatternParams(kind="single_line", position=10, rotation=0, width=4))
    rows = sorted(set(np.nonzero(raster)[0].tolist()))
    assert rows == [98, 99, 100, 101]
    assert raster[98:102].all()


def test_double_line_has_two_bands():
    raster = rasterize(
        PatternParams(kind="double_line", position=100, rotation=90, width=4, gap=20)
    )
    _, components = ndimage.label(raster)
    assert components == 2
    assert painted_columns(raster) == [88, 89, 90, 91, 108, 109, 110, 111]


def test_double_line_without_gap_is_a_single_band():
    single = rasterize(PatternParams(kind="single_line", position=60, rotation=45))
    double = rasterize(PatternParams(kind="double_line", position=60, rotation=45, gap=0))
    assert np.array_equal(single, double)


def test_diagonal_line_is_connected():
    raster = rasterize(PatternParams(kind="single_line", position=100, rotation=45))
    _, components = ndimage.label(raster)
    assert components == 1
    assert raster[100, 100]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="single_line", position=201, rotation=0),
        dict(kind="single_line", position=0, rotation=180),
        dict(kind="single_line", position=0, rotation=0, width=0.5),
        dict(kind="single_line", position=0, rotation=0, gap=10),
        dict(kind="double_line", position=0, rotation=0),
    ],
)
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        PatternParams(**kwargs)


def test_grid_size_is_the_axis_product():
    grid = enumerate_grid(
        "double_line",
        position_step=40,
        rotation_step=36,
        widths=[4],
        gaps=[10, 20, 30, 40, 50],
    )
    assert len(grid) == 6 * 5 * 1 * 5
    large = enumerate_grid(
        "double_line",
        position_step=50,
        rotation_step=36,
        widths=[4],
        gaps=list(range(4, 64, 4)),
    )
    assert len(large) == 375


def test_grid_order_is_position_rotation_width_gap():
    grid = enumerate_grid(
        PatternKind.DOUBLE_LINE,
        position_step=100,
        rotation_step=90,
        widths=[2, 4],
        gaps=[10, 20],
    )
    assert [(p.position, p.rotation, p.width, p.gap) for _, p in grid][:5] == [
        (0, 0, 2, 10),
        (0, 0, 2, 20),
        (0, 0, 4, 10),
        (0, 0, 4, 20),
        (0, 90, 2, 10),
    ]
    assert grid[len(grid) - 1].position == 200
    assert grid.kind == PatternKind.DOUBLE_LINE


def test_single_line_grid_takes_no_gaps():
    grid = enumerate_grid("single_line", position_step=50, rotation_step=45, widths=[4])
    assert len(grid) == 5 * 4
    assert all(params.gap is None for _, params in grid)
    with pytest.raises(ValueError):
        enumerate_grid(
            "single_line", position_step=50, rotation_step=45, widths=[4], gaps=[10]
        )
    with pytest.raises(ValueError):
        enumerate_grid("double_line", position_step=50, rotation_step=45, widths=[4])


def test_grid_file_round_trip(tmp_path):
    grid = enumerate_grid(
        "double_line", position_step=100, rotation_step=60, widths=[4], gaps=[8]
    )
    path = tmp_path / "patterns.jsonl"
    grid.write(path)
    assert PatternGrid.read(path) == grid
    assert path.read_text().splitlines()[0].startswith('{"gap": 8')


def test_grid_rejects_mixed_kinds():
    with pytest.raises(ValueError):
        PatternGrid(
            [
                PatternParams(kind="single_line", position=0, rotation=0),
                PatternParams(kind="double_line", position=0, rotation=0, gap=4),
            ]
        )


def test_save_raster_png(tmp_path):
    raster = empty_raster()
    raster[5, 7] = True
    path = tmp_path / "pattern.png"
    save_raster_png(raster, path)
    with PILImage.open(path) as image:
        pixels = np.asarray(image)
    assert pixels.shape == (200, 200)
    assert pixels[5, 7] == 0
    assert pixels[0, 0] == 255

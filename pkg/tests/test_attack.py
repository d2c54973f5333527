from dataclasses import replace

import numpy as np
import pytest

from roadpatch.attack import (
    AttackResult,
    AttackSpec,
    Objective,
    SweepReport,
    objective_infraction_concordance,
    robustness_histogram,
    run_sweep,
    select_extrema,
    steering_objective,
)
from roadpatch.metrics import InfractionLevel, InfractionReport
from roadpatch.pattern import PatternParams, enumerate_grid, rasterize
from roadpatch.render import frames_in_view
from roadpatch.track import place_canvas
from roadpatch.vehicle import EpisodeLog, FrameRecord, Termination, read_csv, run_episode


def make_log(steering):
    records = tuple(
        FrameRecord(
            frame=index,
            image_digest="",
            steering=value,
            speed=5.0,
            lane_violation_pct=0.0,
            offroad_pct=0.0,
            collision_intensity=0.0,
        )
        for index, value in enumerate(steering)
    )
    return EpisodeLog(
        config_digest="", records=records, terminated_reason=Termination.MAX_FRAMES
    )


def make_result(pattern_id, steering_sum, *, collision=0.0, lane=0.0):
    level = 3 if collision else (1 if lane else 0)
    return AttackResult(
        pattern_id=pattern_id,
        location_s=20.0,
        steering_sum=steering_sum,
        baseline_steering_sum=0.0,
        window=(3, 4),
        infraction=InfractionReport(
            max_level=level,
            peak_lane_violation_pct=lane,
            peak_offroad_pct=0.0,
            total_collision_intensity=collision,
        ),
        episode_digest="",
    )


@pytest.fixture
def small_grid():
    return enumerate_grid("single_line", position_step=100, rotation_step=90, widths=[4])


def test_steering_objective_sums_the_visible_window():
    log = make_log([0.1, 0.2, 0.3, 0.4])
    # Frames f_l through f_l + delta inclusive.
    assert steering_objective(log, (1, 2)) == pytest.approx(0.9)
    assert steering_objective(log, (0, 1)) == pytest.approx(0.3)
    assert steering_objective(log, (2, 10)) == pytest.approx(0.7)
    assert steering_objective(log, (None, 0)) == 0.0
    assert steering_objective(log, (1, 0)) == 0.0


def test_steering_objective_matches_the_episode_csv(tmp_path, network_episode):
    canvas = place_canvas(
        network_episode.track, 8.0, raster=rasterize(PatternParams("single_line", 100, 0))
    )
    cfg = replace(network_episode, canvas=canvas)
    log = run_episode(cfg)
    window = frames_in_view(cfg.track, canvas, log.poses, cfg.camera)
    path = tmp_path / "episode.csv"
    log.write_csv(path)
    steering = [row["steering"] for row in read_csv(path)]
    first, delta = window
    expected = sum(steering[first : first + delta + 1]) if first is not None else 0.0
    assert steering_objective(log, window) == pytest.approx(expected)


def test_objective_direction():
    assert Objective.COLLIDE_LEFT.worse(-2.0) == 2.0
    assert Objective.COLLIDE_RIGHT.worse(-2.0) == -2.0


def test_select_extrema(small_grid):
    report = SweepReport(
        spec_digest="",
        pattern_grid=small_grid,
        results=[
            make_result(0, 0.5),
            make_result(1, -1.5, collision=7500.0),
            make_result(2, -1.5),
            make_result(3, 2.0, collision=100.0),
        ],
    )
    left = select_extrema(report, 2, Objective.COLLIDE_LEFT)
    assert [r.pattern_id for r in left.minima] == [1, 2]
    assert [r.pattern_id for r in left.maxima] == [1, 3]
    assert not left.flagged
    right = select_extrema(report, 1, Objective.COLLIDE_RIGHT)
    assert [r.pattern_id for r in right.minima] == [3]
    assert select_extrema(report, 9).flagged
    with pytest.raises(ValueError):
        select_extrema(replace(report, results=[]), 1)


def test_concordance_undefined_for_constant_values(small_grid):
    report = SweepReport(
        spec_digest="",
        pattern_grid=small_grid,
        results=[make_result(index, -1.0) for index in range(4)],
    )
    concordance = objective_infraction_concordance(report, Objective.COLLIDE_LEFT)
    assert not concordance.defined
    assert concordance.rho is None
    assert concordance.count == 4


def test_concordance_ranks_stronger_attacks_higher(small_grid):
    report = SweepReport(
        spec_digest="",
        pattern_grid=small_grid,
        results=[
            make_result(0, 0.0),
            make_result(1, -0.5, lane=5.0),
            make_result(2, -1.0, lane=20.0),
            make_result(3, -2.0, lane=30.0, collision=7500.0),
        ],
    )
    concordance = objective_infraction_concordance(report, Objective.COLLIDE_LEFT)
    assert concordance.defined
    assert concordance.rho == pytest.approx(1.0)
    infractions = objective_infraction_concordance(
        report, Objective.COLLIDE_LEFT, infractions_only=True
    )
    assert infractions.count == 3
    opposite = objective_infraction_concordance(report, Objective.COLLIDE_RIGHT)
    assert opposite.rho == pytest.approx(-1.0)


def test_robustness_histogram(small_grid):
    first = SweepReport(
        spec_digest="a",
        pattern_grid=small_grid,
        results=[make_result(1, -1.0, collision=5000.0), make_result(4, 0.0)],
    )
    second = SweepReport(
        spec_digest="b",
        pattern_grid=small_grid,
        results=[make_result(1, -1.0, collision=2500.0), make_result(4, -2.0, collision=9000.0)],
    )
    histogram = robustness_histogram([first, second], top_fraction=0.5)
    assert len(histogram.totals) == len(small_grid) == 6
    assert histogram.totals[1] == 7500.0
    assert histogram.totals[4] == 9000.0
    assert histogram.robust_ids == [1, 4]
    assert histogram.ranges["position"] == (0, 200)
    assert histogram.ranges["rotation"] == (0, 90)
    assert "gap" not in histogram.ranges

    top = robustness_histogram([first, second], top_fraction=0.1)
    assert top.robust_ids == [4]


def test_robustness_histogram_requires_one_grid(small_grid):
    other = enumerate_grid("single_line", position_step=50, rotation_step=90, widths=[4])
    reports = [
        SweepReport(spec_digest="", pattern_grid=small_grid, results=[]),
        SweepReport(spec_digest="", pattern_grid=other, results=[]),
    ]
    with pytest.raises(ValueError):
        robustness_histogram(reports)
    with pytest.raises(ValueError):
        robustness_histogram([])


def test_attack_spec_validates_locations(network_episode, small_grid):
    with pytest.raises(ValueError):
        AttackSpec(
            locations=(),
            pattern_grid=small_grid,
            objective=Objective.COLLIDE_LEFT,
            template=network_episode,
        )
    with pytest.raises(ValueError):
        AttackSpec(
            locations=(58.0,),
            pattern_grid=small_grid,
            objective=Objective.COLLIDE_LEFT,
            template=network_episode,
        )


def test_empty_canvas_reproduces_the_baseline(network_episode):
    canvas = place_canvas(network_episode.track, 8.0)
    control = run_episode(replace(network_episode, canvas=canvas))
    assert control.to_csv() == run_episode(network_episode).to_csv()


def test_sweep_is_worker_count_invariant(network_episode, small_grid):
    spec = AttackSpec(
        locations=(8.0,),
        pattern_grid=small_grid,
        objective=Objective.COLLIDE_LEFT,
        template=network_episode,
    )
    serial = run_sweep(spec, workers=1, labels={"scenario": "straight"})
    parallel = run_sweep(spec, workers=2, labels={"scenario": "straight"})
    assert serial.completed + len(serial.failures) == len(small_grid)
    assert [r.pattern_id for r in serial.results] == list(range(serial.completed))
    assert serial.digest() == parallel.digest()
    assert serial.spec_digest == parallel.spec_digest == spec.digest()
    assert len(serial.controls) == 1
    control = serial.controls[0]
    assert control.pattern_id is None
    assert control.window == (None, 0)
    assert control.steering_sum == 0.0


def test_sweep_report_files(tmp_path, network_episode, small_grid):
    spec = AttackSpec(
        locations=(8.0,),
        pattern_grid=small_grid,
        objective=Objective.COLLIDE_RIGHT,
        template=network_episode,
    )
    report = run_sweep(spec, labels={"objective": "collide_right"})
    written = report.write(tmp_path / "sweep")
    assert len(written) == 3
    loaded = SweepReport.read(tmp_path / "sweep")
    assert loaded.digest() == report.digest()
    assert loaded.pattern_grid == small_grid
    assert loaded.labels == {"objective": "collide_right"}
    assert loaded.controls == report.controls
    assert loaded.results == report.results


@pytest.mark.slow
def test_double_line_sweep_finds_an_attack(right_corner_sweep):
    _, report = right_corner_sweep
    assert report.completed >= 150
    levels = [r.infraction.max_level for r in report.results]
    assert max(levels) >= InfractionLevel.L1_OPPOSITE_LANE
    assert np.var([r.steering_sum for r in report.results]) > 0


@pytest.mark.slow
def test_steering_sum_tracks_infraction_severity(right_corner_sweep):
    _, report = right_corner_sweep
    concordance = objective_infraction_concordance(
        report, Objective.COLLIDE_LEFT, infractions_only=True
    )
    assert concordance.defined
    assert concordance.rho > 0.3
    strongest = select_extrema(report, 1, Objective.COLLIDE_LEFT).minima[0]
    median = np.median([int(r.infraction.max_level) for r in report.results])
    assert strongest.infraction.max_level >= median

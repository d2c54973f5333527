import pytest

from roadpatch.metrics import (
    SUMMARY_COLUMNS,
    SUMMARY_NOTE,
    InfractionLevel,
    InfractionReport,
    classify_episode,
    level_for,
    level_shares,
    scenario_summary,
    severity_maxima,
    write_summary_csv,
)
from roadpatch.vehicle import EpisodeLog, FrameRecord, Termination


def make_log(*frames):
    records = tuple(
        FrameRecord(
            frame=index,
            image_digest="0" * 64,
            steering=0.0,
            speed=5.0,
            lane_violation_pct=lane,
            offroad_pct=offroad,
            collision_intensity=collision,
        )
        for index, (lane, offroad, collision) in enumerate(frames)
    )
    return EpisodeLog(
        config_digest="cfg", records=records, terminated_reason=Termination.MAX_FRAMES
    )


def report(level, *, lane=0.0, offroad=0.0, collision=0.0):
    return InfractionReport(
        max_level=level,
        peak_lane_violation_pct=lane,
        peak_offroad_pct=offroad,
        total_collision_intensity=collision,
    )


@pytest.mark.parametrize(
    "lane, offroad, collision, level",
    [
        (0, 0, 0, InfractionLevel.L0_SAFE),
        (5, 0, 0, InfractionLevel.L1_OPPOSITE_LANE),
        (5, 1, 0, InfractionLevel.L2_OFFROAD),
        (0, 0, 7500, InfractionLevel.L3_COLLISION),
    ],
)
def test_level_for(lane, offroad, collision, level):
    assert level_for(lane=lane, offroad=offroad, collision=collision) == level


def test_classify_episode_uses_peaks():
    log = make_log((0, 0, 0), (12.5, 0, 0), (40.0, 3.0, 0), (10.0, 0, 0))
    result = classify_episode(log)
    assert result.max_level == InfractionLevel.L2_OFFROAD
    assert result.peak_lane_violation_pct == 40.0
    assert result.peak_offroad_pct == 3.0
    assert result.total_collision_intensity == 0.0


def test_classify_episode_sums_collisions():
    result = classify_episode(make_log((0, 0, 0), (50, 20, 7500.0)))
    assert result.max_level == InfractionLevel.L3_COLLISION
    assert result.total_collision_intensity == 7500.0


def test_classify_empty_episode():
    with pytest.raises(ValueError):
        classify_episode(make_log())


def test_normalized_severity():
    reports = [
        report(2, lane=50.0, offroad=10.0),
        report(3, lane=25.0, offroad=20.0, collision=6000.0),
        report(0),
    ]
    maxima = severity_maxima(reports)
    assert maxima == {"collision": 6000.0, "lane": 50.0, "offroad": 20.0}
    normalized = reports[1].normalized(maxima).normalized_severity
    assert normalized == {"collision": 1.0, "lane": 0.5, "offroad": 1.0}
    assert reports[2].normalized(maxima).normalized_severity == {
        "collision": 0.0,
        "lane": 0.0,
        "offroad": 0.0,
    }
    zero = reports[0].normalized({"collision": 0.0, "lane": 0.0, "offroad": 0.0})
    assert set(zero.normalized_severity.values()) == {0.0}


def test_report_dict_round_trip():
    original = report(1, lane=3.0).normalized({"collision": 1, "lane": 6.0, "offroad": 1})
    assert InfractionReport.from_dict(original.to_dict()) == original


def test_level_shares_sum_to_one():
    shares = level_shares([report(0), report(0), report(1), report(3)])
    assert shares[InfractionLevel.L0_SAFE] == 0.5
    assert shares[InfractionLevel.L2_OFFROAD] == 0.0
    assert sum(shares.values()) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        level_shares([])


def test_summary_csv(tmp_path):
    summary = scenario_summary(
        {
            ("right_corner", "il", "double_line"): [report(3), report(0)],
            ("right_corner", "il", "NA"): [report(0)],
        }
    )
    assert list(summary) == [
        ("right_corner", "il", "NA"),
        ("right_corner", "il", "double_line"),
    ]
    path = tmp_path / "levels.csv"
    write_summary_csv(summary, path)
    lines = path.read_text().splitlines()
    assert lines[0] == SUMMARY_NOTE
    assert lines[1] == ",".join(SUMMARY_COLUMNS)
    assert lines[2] == "right_corner,il,NA,1.0,0.0,0.0,0.0"
    assert lines[3] == "right_corner,il,double_line,0.5,0.0,0.0,0.5"

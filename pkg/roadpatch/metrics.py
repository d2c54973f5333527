"""Infraction levels over the road's safety regions."""

import csv
import logging
from dataclasses import dataclass, replace
from enum import IntEnum

logger = logging.getLogger(__package__)

SUMMARY_COLUMNS = ("scenario", "model", "pattern_kind", "L0", "L1", "L2", "L3")
SUMMARY_NOTE = "# level = episode max level from peak per-frame infractions"


class InfractionLevel(IntEnum):
    L0_SAFE = 0
    L1_OPPOSITE_LANE = 1
    L2_OFFROAD = 2
    L3_COLLISION = 3


@dataclass(frozen=True)
class InfractionReport:
    max_level: InfractionLevel
    peak_lane_violation_pct: float
    peak_offroad_pct: float
    total_collision_intensity: float
    normalized_severity: dict = None

    def __post_init__(self):
        object.__setattr__(self, "max_level", InfractionLevel(self.max_level))

    def normalized(self, maxima):
        """Copy with each metric divided by its sweep-wide maximum."""

        def ratio(value, maximum):
            return value / maximum if maximum > 0 else 0.0

        return replace(
            self,
            normalized_severity={
                "collision": ratio(self.total_collision_intensity, maxima["collision"]),
                "lane": ratio(self.peak_lane_violation_pct, maxima["lane"]),
                "offroad": ratio(self.peak_offroad_pct, maxima["offroad"]),
            },
        )

    def to_dict(self):
        return {
            "max_level": int(self.max_level),
            "normalized_severity": self.normalized_severity,
            "peak_lane_violation_pct": self.peak_lane_violation_pct,
            "peak_offroad_pct": self.peak_offroad_pct,
            "total_collision_intensity": self.total_collision_intensity,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def level_for(*, lane, offroad, collision):
    if collision > 0:
        return InfractionLevel.L3_COLLISION
    if offroad > 0:
        return InfractionLevel.L2_OFFROAD
    if lane > 0:
        return InfractionLevel.L1_OPPOSITE_LANE
    return InfractionLevel.L0_SAFE


def classify_episode(log):
    if not log.records:
        raise ValueError("cannot classify an episode without frames")
    lane = max(record.lane_violation_pct for record in log.records)
    offroad = max(record.offroad_pct for record in log.records)
    collision = sum(record.collision_intensity for record in log.records)
    return InfractionReport(
        max_level=level_for(lane=lane, offroad=offroad, collision=collision),
        peak_lane_violation_pct=lane,
        peak_offroad_pct=offroad,
        total_collision_intensity=collision,
    )


def severity_maxima(reports):
    return {
        "collision": max((r.total_collision_intensity for r in reports), default=0.0),
        "lane": max((r.peak_lane_violation_pct for r in reports), default=0.0),
        "offroad": max((r.peak_offroad_pct for r in reports), default=0.0),
    }


def level_shares(reports):
    if not reports:
        raise ValueError("cannot summarize an empty group")
    counts = {level: 0 for level in InfractionLevel}
    for report in reports:
        counts[report.max_level] += 1
    return {level: counts[level] / len(reports) for level in InfractionLevel}


def scenario_summary(groups):
    """Level shares per ``(scenario, model, pattern_kind)`` group."""
    return {key: level_shares(reports) for key, reports in sorted(groups.items())}


def write_summary_csv(summary, path):
    with open(path, "w", newline="") as fp:
        fp.write(SUMMARY_NOTE + "\n")
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for (scenario, model, pattern_kind), shares in summary.items():
            writer.writerow(
                [scenario, model, pattern_kind]
                + [repr(shares[level]) for level in InfractionLevel]
            )

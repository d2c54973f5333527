"""Exhaustive pattern sweeps and the analyses run over their results."""

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.stats import spearmanr

from .metrics import InfractionReport, classify_episode, severity_maxima
from .pattern import PatternGrid, rasterize
from .render import frames_in_view
from .track import place_canvas
from .util import canonical_json, digest, log_function
from .vehicle import run_episode

logger = logging.getLogger(__package__)

RESULTS_NAME = "results.jsonl"
META_NAME = "meta.json"
PATTERNS_NAME = "patterns.jsonl"


class Objective(Enum):
    COLLIDE_RIGHT = "collide_right"  # maximize the steering sum
    COLLIDE_LEFT = "collide_left"  # minimize the steering sum

    def worse(self, steering_sum):
        """Objective-adjusted value where larger is a stronger attack."""
        return steering_sum if self == Objective.COLLIDE_RIGHT else -steering_sum


@dataclass(frozen=True, eq=False)
class AttackSpec:
    locations: tuple
    pattern_grid: PatternGrid
    objective: Objective
    template: object  # EpisodeConfig without a canvas

    def __post_init__(self):
        if not self.locations:
            raise ValueError("an attack needs at least one location")
        for location_s in self.locations:
            place_canvas(self.template.track, location_s)  # validates the fit

    def digest(self):
        return digest(
            canonical_json(
                {
                    "episode": self.template.digest(),
                    "locations": list(self.locations),
                    "objective": self.objective.value,
                    "patterns": digest(self.pattern_grid.to_jsonl()),
                }
            )
        )


@dataclass(frozen=True)
class AttackResult:
    pattern_id: int
    location_s: float
    steering_sum: float
    baseline_steering_sum: float
    window: tuple  # (f_l, delta); f_l is None when never visible
    infraction: InfractionReport
    episode_digest: str

    def to_dict(self):
        return {
            "baseline_steering_sum": self.baseline_steering_sum,
            "episode_digest": self.episode_digest,
            "infraction": self.infraction.to_dict(),
            "location_s": self.location_s,
            "pattern_id": self.pattern_id,
            "steering_sum": self.steering_sum,
            "window": list(self.window),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["infraction"] = InfractionReport.from_dict(data["infraction"])
        data["window"] = tuple(data["window"])
        return cls(**data)


@dataclass
class SweepReport:
    spec_digest: str
    results: list
    pattern_grid: PatternGrid
    failures: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    labels: dict = field(default_factory=dict)

    @property
    def completed(self):
        return len(self.results)

    def to_jsonl(self):
        return "".join(
            json.dumps(result.to_dict(), sort_keys=True) + "\n"
            for result in self.results
        )

    def digest(self):
        return digest(self.to_jsonl())

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, RESULTS_NAME), "w") as fp:
            fp.write(self.to_jsonl())
        self.pattern_grid.write(os.path.join(directory, PATTERNS_NAME))
        meta = {
            "controls": [control.to_dict() for control in self.controls],
            "failures": self.failures,
            "labels": self.labels,
            "results_digest": self.digest(),
            "spec_digest": self.spec_digest,
        }
        with open(os.path.join(directory, META_NAME), "w") as fp:
            json.dump(meta, fp, indent=2, sort_keys=True)
            fp.write("\n")
        return [
            os.path.join(directory, name)
            for name in (RESULTS_NAME, PATTERNS_NAME, META_NAME)
        ]

    @classmethod
    def read(cls, directory):
        with open(os.path.join(directory, META_NAME)) as fp:
            meta = json.load(fp)
        with open(os.path.join(directory, RESULTS_NAME)) as fp:
            results = [AttackResult.from_dict(json.loads(line)) for line in fp if line.strip()]
        return cls(
            spec_digest=meta["spec_digest"],
            results=results,
            pattern_grid=PatternGrid.read(os.path.join(directory, PATTERNS_NAME)),
            failures=meta["failures"],
            controls=[AttackResult.from_dict(control) for control in meta["controls"]],
            labels=meta["labels"],
        )


def steering_objective(log, window):
    """Sum of steering over frames ``f_l`` through ``f_l + delta``.

    Truncates at the end of the log when the episode stopped early. A pattern
    that never came into view scores 0.
    """
    first, delta = window
    if first is None or delta <= 0:
        return 0.0
    return float(
        sum(record.steering for record in log.records[first : first + delta + 1])
    )


_worker_template = None


def _initialize_worker(template):
    global _worker_template
    _worker_template = template


def _attack_entry(location_s, pattern_id, params, template=None):
    template = template or _worker_template
    raster = None if params is None else rasterize(params)
    canvas = place_canvas(template.track, location_s, raster=raster)
    cfg = replace(template, canvas=canvas)
    log = run_episode(cfg)
    window = frames_in_view(template.track, canvas, log.poses, cfg.camera)
    return {
        "episode_digest": log.digest(),
        "infraction": classify_episode(log),
        "location_s": location_s,
        "pattern_id": pattern_id,
        "steering_sum": steering_objective(log, window),
        "window": window,
    }


def _result(entry, baseline):
    return AttackResult(
        baseline_steering_sum=steering_objective(baseline, entry["window"]),
        **entry,
    )


@log_function("workers", klass="attack", log_method=logger.info)
def run_sweep(spec, *, workers=1, baseline=None, labels=None):
    """Run every (location, pattern) pair once; results keep enumeration order."""
    template = spec.template
    if baseline is None:
        baseline = run_episode(template)
    jobs = [
        (location_s, pattern_id, params)
        for location_s in spec.locations
        for pattern_id, params in spec.pattern_grid
    ]
    total = len(jobs)
    results = [None] * total
    failures = []
    milestone = max(1, total // 10)

    def collect(index, outcome):
        location_s, pattern_id, _ = jobs[index]
        try:
            entry = outcome()
        except Exception as exception:
            logger.exception(f"sweep entry {pattern_id}@{location_s} failed")
            failures.append(
                {
                    "location_s": location_s,
                    "message": f"{type(exception).__name__}: {exception}",
                    "pattern_id": pattern_id,
                }
            )
            return
        results[index] = _result(entry, baseline)
        logger.debug(
            f"pattern {pattern_id}@{location_s}: steering sum "
            f"{results[index].steering_sum:.4f}"
        )
        if (index + 1) % milestone == 0:
            logger.info(f"sweep progress {index + 1}/{total}")

    if workers <= 1:
        for index, job in enumerate(jobs):
            collect(index, lambda job=job: _attack_entry(*job, template=template))
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_initialize_worker,
            initargs=(template,),
        ) as executor:
            futures = [executor.submit(_attack_entry, *job) for job in jobs]
            for index, future in enumerate(futures):
                collect(index, future.result)

    controls = [
        _result(_attack_entry(location_s, None, None, template=template), baseline)
        for location_s in spec.locations
    ]
    failures.sort(key=lambda failure: (failure["location_s"], failure["pattern_id"]))
    return SweepReport(
        spec_digest=spec.digest(),
        results=[result for result in results if result is not None],
        pattern_grid=spec.pattern_grid,
        failures=failures,
        controls=controls,
        labels=dict(labels or {}),
    )


@dataclass(frozen=True)
class Extrema:
    minima: list  # strongest n by objective-adjusted steering sum
    maxima: list  # largest n by collision intensity
    flagged: bool  # fewer results than requested


def select_extrema(report, n, objective=Objective.COLLIDE_LEFT):
    if not report.results:
        raise ValueError("cannot select extrema of an empty report")
    by_steering = sorted(
        report.results,
        key=lambda result: (-objective.worse(result.steering_sum), result.pattern_id),
    )
    by_collision = sorted(
        report.results,
        key=lambda result: (
            -result.infraction.total_collision_intensity,
            result.pattern_id,
        ),
    )
    return Extrema(
        minima=by_steering[:n],
        maxima=by_collision[:n],
        flagged=n > len(report.results),
    )


def normalized_results(results):
    maxima = severity_maxima([result.infraction for result in results])
    return [
        replace(result, infraction=result.infraction.normalized(maxima))
        for result in results
    ]


def severity(result):
    return sum(result.infraction.normalized_severity.values())


@dataclass(frozen=True)
class Concordance:
    rho: float
    defined: bool
    count: int


def objective_infraction_concordance(report, objective, *, infractions_only=False):
    """Spearman correlation of attack strength against normalized severity."""
    results = report.results
    if infractions_only:
        results = [result for result in results if result.infraction.max_level > 0]
    results = normalized_results(results)
    strength = [objective.worse(result.steering_sum) for result in results]
    severities = [severity(result) for result in results]
    if len(results) < 3 or np.ptp(strength) == 0 or np.ptp(severities) == 0:
        logger.warning(
            f"concordance undefined over {len(results)} results (too few or constant)"
        )
        return Concordance(rho=None, defined=False, count=len(results))
    rho, _ = spearmanr(strength, severities)
    return Concordance(rho=float(rho), defined=True, count=len(results))


@dataclass(frozen=True)
class RobustnessHistogram:
    totals: list  # collision intensity per pattern id
    robust_ids: list
    ranges: dict  # parameter -> (min, max) over robust_ids


def robustness_histogram(reports, *, top_fraction=0.1):
    if not reports:
        raise ValueError("no reports to aggregate")
    grid = reports[0].pattern_grid
    for report in reports[1:]:
        if report.pattern_grid != grid:
            raise ValueError("reports were swept over different pattern grids")

    totals = [0.0] * len(grid)
    for report in reports:
        for result in report.results:
            totals[result.pattern_id] += result.infraction.total_collision_intensity

    ranked = sorted(
        (pattern_id for pattern_id in range(len(grid)) if totals[pattern_id] > 0),
        key=lambda pattern_id: (-totals[pattern_id], pattern_id),
    )
    robust_ids = sorted(ranked[: math.ceil(top_fraction * len(grid))])

    ranges = {}
    for name in ("position", "rotation", "width", "gap"):
        values = [
            getattr(grid[pattern_id], name)
            for pattern_id in robust_ids
            if getattr(grid[pattern_id], name) is not None
        ]
        if values:
            ranges[name] = (min(values), max(values))
    return RobustnessHistogram(totals=totals, robust_ids=robust_ids, ranges=ranges)

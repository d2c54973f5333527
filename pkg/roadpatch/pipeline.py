import copy
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import yaml
from jinja2 import Environment, PackageLoader, StrictUndefined
from PIL import Image as PILImage

from .attack import (
    AttackSpec,
    Objective,
    SweepReport,
    objective_infraction_concordance,
    robustness_histogram,
    run_sweep,
    select_extrema,
)
from .const import __version__
from .controller import (
    ExpertController,
    ImitationDataset,
    NetworkController,
    TrainConfig,
    collect_demonstrations,
    evaluate,
    train_imitation,
)
from .interpret import ActivationSelection, case_study
from .metrics import (
    InfractionLevel,
    InfractionReport,
    classify_episode,
    scenario_summary,
    write_summary_csv,
)
from .nn import DEFAULT_ARCHITECTURE, NetworkParams
from .pattern import PatternKind, enumerate_grid, save_raster_png, rasterize
from .plots import plot_histogram, plot_level_shares, plot_objective
from .render import CameraModel, weather
from .track import Scenario, Town, build_track
from .util import (
    ConfigError,
    StageError,
    canonical_json,
    digest,
    file_digest,
    log_function,
)
from .vehicle import EpisodeConfig, run_episode

logger = logging.getLogger(__package__)
logger.setLevel(logging.INFO)
log_decorater = log_function(klass="Pipeline", log_method=logger.info)

MAX_WORKERS = 16

DEFAULT_CONFIG = {
    "analysis": {"extrema": 3, "top_fraction": 0.1},
    "attack": {
        "locations": {"left_corner": [23.0], "right_corner": [23.0], "straight": [20.0]},
        "objective": "collide_left",
        "scenarios": ["right_corner"],
        "weathers": None,
    },
    "camera": {
        "fov_degrees": 100.0,
        "height": 88,
        "mount_forward": 1.0,
        "mount_height": 1.4,
        "pitch_degrees": 8.0,
        "width": 200,
    },
    "controller": {"kind": "network", "weights": None},
    "demonstrations": {
        "episodes": 10,
        "heading_noise": 0.08,
        "offset_noise": 0.6,
        "steering_noise": 0.0,
    },
    "episode": {"dt": 0.1, "max_frames": 80, "start_s": 5.0},
    "execution": {
        "dump_frames": False,
        "output_dir": "roadpatch-out",
        "seed": 0,
        "workers": None,
    },
    "interpret": {"k": 200, "layer": 5, "weather": "clear"},
    "pattern": {
        "gaps": [10, 20, 30, 40, 50],
        "kinds": ["single_line", "double_line"],
        "position_step": 40,
        "rotation_step": 36,
        "widths": [4],
    },
    "track": {
        "approach_length": 30.0,
        "corner_radius": 20.0,
        "lane_width": 3.5,
        "scenarios": ["straight", "right_corner", "left_corner"],
        "towns": ["train"],
    },
    "training": {
        "batch_size": 64,
        "epochs": 20,
        "learning_rate": 1e-3,
        "min_samples": 1000,
        "momentum": 0.9,
        "validation_split": 0.1,
    },
    "weathers": ["clear", "rain", "sunset"],
}

# Sections whose values are free-form mappings rather than fixed keys.
OPEN_SECTIONS = {("attack", "locations")}
UNDIGESTED_EXECUTION_KEYS = ("output_dir", "workers")


def merge_config(defaults, overrides, path=()):
    merged = copy.deepcopy(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {'.'.join(path + (key,))}")
        if isinstance(defaults[key], dict) and path + (key,) not in OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path + (key,))} must be a mapping")
            merged[key] = merge_config(defaults[key], value, path + (key,))
        else:
            merged[key] = value
    return merged


class Manifest:
    NAME = "manifest.json"

    def __init__(self, *, output_dir, config_digest):
        self.path = os.path.join(output_dir, self.NAME)
        self.output_dir = output_dir
        self.data = {"config_digest": config_digest, "stages": {}, "version": __version__}
        if os.path.isfile(self.path):
            with open(self.path) as fp:
                previous = json.load(fp)
            if previous.get("config_digest") == config_digest:
                self.data["stages"] = previous.get("stages", {})

    def record(self, stage, *, files, seconds):
        self.data["stages"][stage] = {
            "files": {
                os.path.relpath(path, self.output_dir): file_digest(path)
                for path in sorted(files)
            },
            "seconds": round(seconds, 3),
        }
        with open(self.path, "w") as fp:
            json.dump(self.data, fp, indent=2, sort_keys=True)
            fp.write("\n")


class Pipeline:
    CONFIG_NAME = "roadpatch.yml"

    def __init__(self, *, config_path=None, output_dir=None, seed=None, workers=None):
        self.config = self.parse_config(config_path or self.config_path())
        execution = self.config["execution"]
        if output_dir is not None:
            execution["output_dir"] = output_dir
        if seed is not None:
            execution["seed"] = seed
        if workers is not None:
            execution["workers"] = workers
        self.config_digest = self.digest_config(self.config)
        self.output_dir = execution["output_dir"]
        self.seed = int(execution["seed"])
        self.workers = execution["workers"] or min(os.cpu_count() or 1, MAX_WORKERS)
        self.templates = Environment(
            loader=PackageLoader(__package__),
            trim_blocks=True,
            undefined=StrictUndefined,
        )
        self.camera = self.camera_from(self.config["camera"])
        os.makedirs(self.output_dir, exist_ok=True)
        self.manifest = Manifest(
            output_dir=self.output_dir, config_digest=self.config_digest
        )

    @staticmethod
    def digest_config(config):
        """Digest of every setting that can change a result file."""
        digested = copy.deepcopy(config)
        for key in UNDIGESTED_EXECUTION_KEYS:
            digested["execution"].pop(key, None)
        return digest(canonical_json(digested))

    @staticmethod
    def config_path():
        if "APPDATA" in os.environ:  # Windows
            os_config_path = os.environ["APPDATA"]
        elif "XDG_CONFIG_HOME" in os.environ:  # Modern Linux
            os_config_path = os.environ["XDG_CONFIG_HOME"]
        elif "HOME" in os.environ:  # Legacy Linux
            os_config_path = os.path.join(os.environ["HOME"], ".config")
        else:
            return None
        path = os.path.join(os_config_path, Pipeline.CONFIG_NAME)
        return path if os.path.isfile(path) else None

    @classmethod
    def parse_config(cls, path):
        if path is None:
            logger.debug("no config file found, using defaults")
            return copy.deepcopy(DEFAULT_CONFIG)
        if not os.path.isfile(path):
            raise ConfigError(f"Config file does not exist at {path}")
        logger.debug(f"reading config from {path}")
        with open(path) as fp:
            try:
                loaded = yaml.safe_load(fp) or {}
            except yaml.YAMLError as exception:
                raise ConfigError(f"{path} is not valid YAML: {exception}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping")
        config = merge_config(DEFAULT_CONFIG, loaded)
        cls.validate(config)
        return config

    @staticmethod
    def validate(config):
        try:
            for name in config["track"]["scenarios"] + config["attack"]["scenarios"]:
                Scenario(name)
            for name in config["track"]["towns"]:
                Town(name)
            for name in config["weathers"] + (config["attack"]["weathers"] or []):
                weather(name)
            for name in config["pattern"]["kinds"]:
                PatternKind(name)
            Objective(config["attack"]["objective"])
            TrainConfig(**config["training"])
            camera = Pipeline.camera_from(config["camera"])
            Pipeline.architecture_for(camera).shapes()
            episode = config["episode"]
            EpisodeConfig(
                track=None,
                controller=None,
                camera=camera,
                dt=episode["dt"],
                max_frames=episode["max_frames"],
                start_s=episode["start_s"],
            )
            track = config["track"]
            for name in config["track"]["scenarios"]:
                build_track(
                    name,
                    lane_width=track["lane_width"],
                    corner_radius=track["corner_radius"],
                    approach_length=track["approach_length"],
                )
            for kind in config["pattern"]["kinds"]:
                Pipeline.grid_from(config["pattern"], kind)
            interpret = config["interpret"]
            ActivationSelection(layer_index=interpret["layer"], k=interpret["k"])
            blocks = len(DEFAULT_ARCHITECTURE.convs)
            if interpret["layer"] > blocks:
                raise ValueError(f"interpret.layer must be at most {blocks}")
            weather(interpret["weather"])
        except (TypeError, ValueError) as exception:
            raise ConfigError(str(exception)) from None
        if config["controller"]["kind"] not in ("expert", "network"):
            raise ConfigError("controller.kind must be expert or network")
        weights = config["controller"]["weights"]
        if weights and not os.path.isfile(weights):
            raise ConfigError(f"controller.weights does not exist: {weights}")

    def path(self, *parts):
        return os.path.join(self.output_dir, *parts)

    def require(self, stage, path):
        if not os.path.exists(path):
            raise StageError(stage, path)
        return path

    @contextmanager
    def stage(self, name):
        files = []
        start = time.time()
        yield files
        self.manifest.record(name, files=files, seconds=time.time() - start)

    @staticmethod
    def architecture_for(camera):
        return replace(
            DEFAULT_ARCHITECTURE,
            input_shape=(3, camera.image_height, camera.image_width),
        )

    @staticmethod
    def camera_from(camera):
        return CameraModel(
            mount_height=camera["mount_height"],
            pitch=math.radians(camera["pitch_degrees"]),
            horizontal_fov=math.radians(camera["fov_degrees"]),
            image_width=camera["width"],
            image_height=camera["height"],
            mount_forward=camera["mount_forward"],
        )

    def build_track(self, scenario, town="train"):
        track = self.config["track"]
        return build_track(
            scenario,
            lane_width=track["lane_width"],
            corner_radius=track["corner_radius"],
            approach_length=track["approach_length"],
            town=town,
        )

    def weights_path(self):
        return self.config["controller"]["weights"] or self.path("weights.e2ew")

    def load_controller(self):
        if self.config["controller"]["kind"] == "expert":
            return "expert", ExpertController()
        path = self.require("train", self.weights_path())
        return "il", NetworkController(NetworkParams.load(path))

    def episode_template(self, track, controller, weather_name):
        episode = self.config["episode"]
        return EpisodeConfig(
            track=track,
            controller=controller,
            weather=weather(weather_name),
            camera=self.camera,
            dt=episode["dt"],
            max_frames=episode["max_frames"],
            start_s=episode["start_s"],
            seed=self.seed,
        )

    def pattern_grid(self, kind):
        return self.grid_from(self.config["pattern"], kind)

    @staticmethod
    def grid_from(pattern, kind):
        return enumerate_grid(
            kind,
            position_step=pattern["position_step"],
            rotation_step=pattern["rotation_step"],
            widths=pattern["widths"],
            gaps=pattern["gaps"] if PatternKind(kind) == PatternKind.DOUBLE_LINE else None,
        )

    @log_decorater
    def demonstrate(self):
        settings = self.config["demonstrations"]
        tracks = [self.build_track(name) for name in self.config["track"]["scenarios"]]
        dataset = collect_demonstrations(
            tracks,
            [weather(name) for name in self.config["weathers"]],
            n_episodes=settings["episodes"],
            offset_noise=settings["offset_noise"],
            heading_noise=settings["heading_noise"],
            steering_noise=settings["steering_noise"],
            camera=self.camera,
            max_frames=self.config["episode"]["max_frames"],
            seed=self.seed,
        )
        logger.info(f"collected {len(dataset)} labelled frames")
        with self.stage("demonstrate") as files:
            path = self.path("demonstrations.npz")
            dataset.save(path)
            files.append(path)
        return path

    @log_decorater
    def train(self):
        dataset = ImitationDataset.load(
            self.require("demonstrate", self.path("demonstrations.npz"))
        )
        cfg = TrainConfig(seed=self.seed, **self.config["training"])
        params = train_imitation(
            dataset, cfg, architecture=self.architecture_for(self.camera)
        )
        _, mae = evaluate(params, dataset.images, dataset.labels)
        with self.stage("train") as files:
            path = self.path("weights.e2ew")
            params.save(path)
            summary = self.path("training.json")
            with open(summary, "w") as fp:
                json.dump(
                    {"dataset_mae": mae, "history": params.history, "train": cfg.__dict__},
                    fp,
                    indent=2,
                    sort_keys=True,
                )
                fp.write("\n")
            files.extend([path, summary])
        return path

    def _dump_frames(self, directory, episode, files):
        if not self.config["execution"]["dump_frames"]:
            return None

        def dump(frame, image, state):
            path = os.path.join(directory, f"ep{episode}_f{frame}.png")
            image.save_png(path)
            files.append(path)

        return dump

    @log_decorater
    def baseline(self):
        model, controller = self.load_controller()
        directory = self.path("baseline")
        os.makedirs(directory, exist_ok=True)
        reports = {}
        with self.stage("baseline") as files:
            for town in self.config["track"]["towns"]:
                for scenario in self.config["track"]["scenarios"]:
                    track = self.build_track(scenario, town)
                    for weather_name in self.config["weathers"]:
                        name = f"{model}_{town}_{scenario}_{weather_name}"
                        episode = len(reports)
                        log = run_episode(
                            self.episode_template(track, controller, weather_name),
                            frame_callback=self._dump_frames(directory, episode, files),
                        )
                        report = classify_episode(log)
                        logger.info(
                            f"baseline {name}: level {int(report.max_level)} "
                            f"after {len(log)} frames ({log.terminated_reason.value})"
                        )
                        path = os.path.join(directory, f"{name}.csv")
                        log.write_csv(path)
                        files.append(path)
                        reports[name] = {
                            "episode": episode,
                            "labels": {
                                "model": model,
                                "scenario": scenario,
                                "town": town,
                                "weather": weather_name,
                            },
                            "report": report.to_dict(),
                        }
            summary = os.path.join(directory, "summary.json")
            with open(summary, "w") as fp:
                json.dump(reports, fp, indent=2, sort_keys=True)
                fp.write("\n")
            files.append(summary)
        return summary

    @log_decorater
    def sweep(self):
        model, controller = self.load_controller()
        attack = self.config["attack"]
        objective = Objective(attack["objective"])
        reports = []
        with self.stage("sweep") as files:
            for town in self.config["track"]["towns"]:
                for scenario in attack["scenarios"]:
                    track = self.build_track(scenario, town)
                    locations = attack["locations"].get(scenario)
                    if not locations:
                        raise ConfigError(f"attack.locations has no entry for {scenario}")
                    for weather_name in attack["weathers"] or self.config["weathers"]:
                        template = self.episode_template(track, controller, weather_name)
                        baseline = run_episode(template)
                        for kind in self.config["pattern"]["kinds"]:
                            name = f"{model}_{town}_{scenario}_{weather_name}_{kind}"
                            logger.info(f"sweeping {name}")
                            spec = AttackSpec(
                                locations=tuple(locations),
                                pattern_grid=self.pattern_grid(kind),
                                objective=objective,
                                template=template,
                            )
                            report = run_sweep(
                                spec,
                                workers=self.workers,
                                baseline=baseline,
                                labels={
                                    "model": model,
                                    "objective": objective.value,
                                    "pattern_kind": kind,
                                    "scenario": scenario,
                                    "town": town,
                                    "weather": weather_name,
                                },
                            )
                            files.extend(report.write(self.path("sweeps", name)))
                            reports.append(report)
        return reports

    def sweep_directories(self):
        root = self.require("sweep", self.path("sweeps"))
        return sorted(
            os.path.join(root, name)
            for name in os.listdir(root)
            if os.path.isdir(os.path.join(root, name))
        )

    @log_decorater
    def analyze(self, directories=None):
        directories = directories or self.sweep_directories()
        reports = [SweepReport.read(directory) for directory in directories]
        if not reports or not any(report.results for report in reports):
            raise ValueError("no sweep results to analyze")
        analysis = self.config["analysis"]

        # Everything is computed before anything is written.
        sweeps, figures, robustness = [], [], []
        groups = {}
        for directory, report in zip(directories, reports):
            name = os.path.basename(directory)
            labels = report.labels
            if not report.results:
                logger.warning(f"{name} has no completed results; skipping")
                continue
            key = (labels["scenario"], labels["model"], labels["pattern_kind"])
            groups.setdefault(key, []).extend(r.infraction for r in report.results)
            objective = Objective(labels["objective"])
            extrema = select_extrema(report, analysis["extrema"], objective)
            concordance = objective_infraction_concordance(report, objective)
            among_infractions = objective_infraction_concordance(
                report, objective, infractions_only=True
            )
            sweeps.append(
                {
                    "completed": report.completed,
                    "concordance": concordance.__dict__,
                    "failed": len(report.failures),
                    "infraction_concordance": among_infractions.__dict__,
                    "maxima": [self._row(result) for result in extrema.maxima],
                    "minima": [self._row(result) for result in extrema.minima],
                    "name": name,
                    "objective": objective.value,
                }
            )
            figures.append((plot_objective, (report, extrema), f"objective_{name}.svg"))

        by_grid = {}
        for directory, report in zip(directories, reports):
            labels = report.labels
            by_grid.setdefault(
                (labels["model"], labels["scenario"], labels["pattern_kind"]), []
            ).append(report)
        for (model, scenario, kind), group in sorted(by_grid.items()):
            name = f"{model}_{scenario}_{kind}"
            histogram = robustness_histogram(group, top_fraction=analysis["top_fraction"])
            robustness.append(
                {
                    "name": name,
                    "ranges": histogram.ranges,
                    "robust_ids": histogram.robust_ids,
                    "totals": histogram.totals,
                }
            )
            figures.append(
                (plot_histogram, (histogram, group[0].pattern_grid), f"histogram_{name}.svg")
            )

        baseline_summary = self.path("baseline", "summary.json")
        if os.path.isfile(baseline_summary):
            with open(baseline_summary) as fp:
                for entry in json.load(fp).values():
                    labels = entry["labels"]
                    groups.setdefault((labels["scenario"], labels["model"], "NA"), []).append(
                        InfractionReport.from_dict(entry["report"])
                    )
        summary = scenario_summary(groups)

        directory = self.path("analysis")
        os.makedirs(directory, exist_ok=True)
        with self.stage("analyze") as files:
            for plot, arguments, filename in figures:
                files.append(plot(*arguments, os.path.join(directory, filename)))
            files.append(plot_level_shares(summary, os.path.join(directory, "levels.svg")))
            levels_csv = os.path.join(directory, "levels.csv")
            write_summary_csv(summary, levels_csv)
            files.append(levels_csv)

            summary_json = os.path.join(directory, "summary.json")
            with open(summary_json, "w") as fp:
                json.dump(
                    {"robustness": robustness, "sweeps": sweeps},
                    fp,
                    indent=2,
                    sort_keys=True,
                )
                fp.write("\n")
            files.append(summary_json)

            report_md = os.path.join(directory, "report.md")
            with open(report_md, "w") as fp:
                fp.write(
                    self.templates.get_template("report.md.tpl").render(
                        config_digest=self.config_digest,
                        levels=[
                            {
                                "model": model,
                                "pattern_kind": kind,
                                "scenario": scenario,
                                "shares": [shares[level] for level in InfractionLevel],
                            }
                            for (scenario, model, kind), shares in summary.items()
                        ],
                        robustness=robustness,
                        sweeps=sweeps,
                        version=__version__,
                    )
                )
            files.append(report_md)
        return summary_json

    @staticmethod
    def _row(result):
        return {
            "baseline_steering_sum": result.baseline_steering_sum,
            "collision": result.infraction.total_collision_intensity,
            "level": int(result.infraction.max_level),
            "location_s": result.location_s,
            "pattern_id": result.pattern_id,
            "steering_sum": result.steering_sum,
        }

    def _strongest_pattern(self):
        """Objective-optimal double-line pattern from the right-corner sweep."""
        weather_name = self.config["interpret"]["weather"]
        root = self.path("sweeps")
        if not os.path.isdir(root):
            return None
        for directory in self.sweep_directories():
            report = SweepReport.read(directory)
            labels = report.labels
            if (
                labels["scenario"] == Scenario.RIGHT_CORNER.value
                and labels["weather"] == weather_name
                and labels["pattern_kind"] == PatternKind.DOUBLE_LINE.value
                and labels["town"] == Town.TRAIN.value
                and report.results
            ):
                best = select_extrema(report, 1, Objective(labels["objective"])).minima[0]
                return report.pattern_grid[best.pattern_id], best.pattern_id, best.location_s
        return None

    @log_decorater
    def interpret(self, pattern_id=None):
        settings = self.config["interpret"]
        params = NetworkParams.load(self.require("train", self.weights_path()))
        selection = ActivationSelection(layer_index=settings["layer"], k=settings["k"])
        right = self.episode_template(
            self.build_track(Scenario.RIGHT_CORNER.value), None, settings["weather"]
        )
        left = replace(right, track=self.build_track(Scenario.LEFT_CORNER.value))

        attack = None
        if pattern_id is not None:
            kind = PatternKind.DOUBLE_LINE.value
            grid = self.pattern_grid(kind)
            if not 0 <= pattern_id < len(grid):
                raise ConfigError(f"pattern id {pattern_id} outside the {kind} grid")
            location_s = self.config["attack"]["locations"][Scenario.RIGHT_CORNER.value][0]
            attack = grid[pattern_id], pattern_id, location_s
        else:
            attack = self._strongest_pattern()

        cases = {
            "right_clean": case_study(params, right, selection=selection),
            "left_clean": case_study(params, left, selection=selection),
        }
        if attack is not None:
            pattern, attack_id, location_s = attack
            attacked = case_study(
                params,
                right,
                pattern=pattern,
                location_s=location_s,
                pattern_id=attack_id,
                selection=selection,
            )
            cases["right_attacked"] = attacked
            cases["right_clean_matched"] = case_study(
                params, right, frame=attacked.frame, selection=selection
            )

        directory = self.path("interpret")
        os.makedirs(directory, exist_ok=True)
        with self.stage("interpret") as files:
            for name, case in cases.items():
                files.extend(case.write(os.path.join(directory, name)))
            if attack is not None:
                raster_png = os.path.join(directory, "pattern.png")
                save_raster_png(rasterize(attack[0]), raster_png)
                files.append(raster_png)
            order = [
                name
                for name in ("right_clean", "right_attacked", "left_clean")
                if name in cases
            ]
            triptych = os.path.join(directory, "triptych.png")
            self._write_triptych([cases[name] for name in order], triptych)
            files.append(triptych)
        return cases

    @staticmethod
    def _write_triptych(cases, path):
        top = np.concatenate([case.image.pixels for case in cases], axis=1)
        bottom = np.concatenate([case.saliency.overlay.pixels for case in cases], axis=1)
        PILImage.fromarray(np.concatenate([top, bottom], axis=0), mode="RGB").save(
            path, format="PNG"
        )

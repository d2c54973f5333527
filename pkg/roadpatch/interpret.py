"""Deconvolution probe mapping strong activations back to input pixels."""

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .controller import NetworkController
from .nn import Network, batchnorm_inverse, conv_transpose, images_to_tensor
from .pattern import rasterize
from .render import Image, painted_pixel_counts
from .track import SegmentKind, place_canvas, project
from .vehicle import run_episode

logger = logging.getLogger(__package__)

OVERLAY_COLOR = np.asarray([40.0, 230.0, 60.0])
OVERLAY_STRENGTH = 0.85


@dataclass(frozen=True)
class ActivationSelection:
    layer_index: int = 5
    k: int = 200

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")
        if self.layer_index < 1:
            raise ValueError(f"layer_index starts at 1, got {self.layer_index}")


@dataclass(frozen=True)
class Capture:
    activations: list  # post-ReLU output of each conv block, (1, C, H, W)
    steering: float


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray  # (height, width), signed
    overlay: Image


def forward_capture(params, image):
    network = Network(params)
    out, activations = network.forward(
        images_to_tensor(image.pixels, dtype=params.dtype), capture=True
    )
    return Capture(activations=activations, steering=float(out[0]))


def receptive_field(architecture, layer_index, row, column):
    """Inclusive input-pixel bounds ``(row0, row1, col0, col1)`` of one unit."""
    jump, size, offset = 1, 1, 0
    for spec in architecture.convs[:layer_index]:
        offset -= spec.padding * jump
        size += (spec.kernel - 1) * jump
        jump *= spec.stride
    _, height, width = architecture.input_shape
    row0 = row * jump + offset
    column0 = column * jump + offset
    return (
        max(0, row0),
        min(height - 1, row0 + size - 1),
        max(0, column0),
        min(width - 1, column0 + size - 1),
    )


def top_k_mask(activation, k):
    flat = activation.ravel()
    keep = np.zeros(flat.shape, dtype=bool)
    if k > 0:
        keep[np.argsort(-flat, kind="stable")[:k]] = True
    return keep.reshape(activation.shape)


def back_project(params, signal, layer_index):
    """Run a layer's feature map back to pixel space, one block at a time."""
    architecture = params.architecture
    input_sizes = [architecture.input_shape[1:]] + [
        shape[1:] for shape in architecture.shapes()
    ]
    for index in range(layer_index, 0, -1):
        spec = architecture.convs[index - 1]
        signal = np.maximum(signal, 0)
        signal = batchnorm_inverse(
            signal,
            params[f"bn{index}.gamma"],
            params[f"bn{index}.beta"],
            params[f"bn{index}.running_mean"],
            params[f"bn{index}.running_var"],
        )
        signal = conv_transpose(
            signal,
            params[f"conv{index}.weight"],
            spec.stride,
            spec.padding,
            input_sizes[index - 1],
        )
    return signal


def overlay_image(image, values):
    magnitude = np.abs(values)
    peak = magnitude.max()
    pixels = image.pixels.astype(np.float64)
    if peak > 0:
        alpha = (OVERLAY_STRENGTH * magnitude / peak)[..., None]
        pixels = pixels * (1 - alpha) + OVERLAY_COLOR * alpha
    return Image(pixels=np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def deconv_reconstruct(params, image, selection):
    n_layers = len(params.architecture.convs)
    if selection.layer_index > n_layers:
        raise ValueError(f"layer_index {selection.layer_index} > {n_layers} blocks")
    capture = forward_capture(params, image)
    activation = capture.activations[selection.layer_index - 1]
    signal = np.where(top_k_mask(activation, selection.k), activation, 0.0)
    if selection.k == 0:
        values = np.zeros((image.height, image.width))
    else:
        values = back_project(params, signal, selection.layer_index)[0].sum(axis=0)
    return SaliencyMap(values=values, overlay=overlay_image(image, values))


@dataclass(frozen=True, eq=False)
class CaseStudy:
    frame: int
    steering: float
    image: Image
    saliency: SaliencyMap
    pattern_id: int = None

    def metadata(self):
        return {"frame": self.frame, "pattern_id": self.pattern_id, "steering": self.steering}

    def write(self, prefix):
        self.image.save_png(f"{prefix}_camera.png")
        self.saliency.overlay.save_png(f"{prefix}_deconv.png")
        with open(f"{prefix}.json", "w") as fp:
            json.dump(self.metadata(), fp, indent=2, sort_keys=True)
            fp.write("\n")
        return [f"{prefix}_camera.png", f"{prefix}_deconv.png", f"{prefix}.json"]


def apex_s(track):
    """Midpoint of the first arc, or of the whole track when there is none."""
    for start, segment in zip(track.starts, track.segments):
        if segment.kind == SegmentKind.ARC:
            return start.s + segment.length / 2
    return track.total_length / 2


def case_study(
    params,
    template,
    *,
    pattern=None,
    location_s=None,
    pattern_id=None,
    frame=None,
    selection=ActivationSelection(),
):
    """Camera frame, steering and saliency at the most telling frame.

    With a pattern that is the frame showing the most painted pixels; without
    one it is the frame closest to the corner apex. ``frame`` overrides both.
    """
    track = template.track
    canvas = None
    if pattern is not None:
        canvas = place_canvas(track, location_s, raster=rasterize(pattern))
    cfg = replace(template, canvas=canvas, controller=NetworkController(params))

    images = []
    log = run_episode(cfg, frame_callback=lambda index, image, state: images.append(image))
    if not log.records:
        raise ValueError("episode produced no frames")

    if frame is None:
        if canvas is not None:
            counts = painted_pixel_counts(track, canvas, log.poses, cfg.camera)
            frame = int(np.argmax(counts))
        else:
            positions = np.asarray([pose[0] for pose in log.poses])
            s, _ = project(track, positions)
            frame = int(np.argmin(np.abs(s - apex_s(track))))
    frame = min(frame, len(log.records) - 1)

    image = images[frame]
    saliency = deconv_reconstruct(params, image, selection)
    logger.info(
        f"case study {track.scenario.value} pattern={pattern_id}: frame {frame}, "
        f"steering {log.records[frame].steering:+.3f}"
    )
    return CaseStudy(
        frame=frame,
        steering=log.records[frame].steering,
        image=image,
        saliency=saliency,
        pattern_id=pattern_id,
    )

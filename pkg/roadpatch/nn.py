"""Convolutional network primitives with hand-written backward passes.

Tensors are numpy arrays in NCHW layout. Every convolution is expressed
through strided windows so that the input gradient (``conv_transpose``) is
the exact adjoint of the forward operator.
"""

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__package__)

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9
MAGIC = b"E2EW1"


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int
    padding: int = 0


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple  # (channels, height, width)
    convs: tuple
    hidden: int

    def shapes(self):
        """Output shape ``(C, H, W)`` of every conv block, in order."""
        channels, height, width = self.input_shape
        shapes = []
        for spec in self.convs:
            height = conv_output_size(height, spec.kernel, spec.stride, spec.padding)
            width = conv_output_size(width, spec.kernel, spec.stride, spec.padding)
            if height <= 0 or width <= 0:
                raise ValueError(f"architecture collapses spatially at {spec}")
            channels = spec.out_channels
            shapes.append((channels, height, width))
        return shapes

    @property
    def flat_size(self):
        channels, height, width = self.shapes()[-1]
        return channels * height * width


DEFAULT_ARCHITECTURE = Architecture(
    input_shape=(3, 88, 200),
    convs=(
        ConvSpec(24, 5, 2),
        ConvSpec(24, 5, 2),
        ConvSpec(36, 3, 1, 1),
        ConvSpec(36, 3, 2, 1),
        ConvSpec(48, 3, 1, 1),
        ConvSpec(48, 3, 2, 1),
        ConvSpec(64, 3, 1, 1),
        ConvSpec(64, 3, 2, 1),
    ),
    hidden=128,
)


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _windows(x, kernel, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    return sliding_window_view(x, (kernel, kernel), axis=(2, 3))[
        :, :, ::stride, ::stride
    ]


def conv_forward(x, weight, bias, stride, padding):
    windows = _windows(x, weight.shape[2], stride, padding)
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out), windows


def conv_transpose(y, weight, stride, padding, input_hw):
    """Adjoint of ``conv_forward`` (without bias) for an input of ``input_hw``."""
    n, _, out_h, out_w = y.shape
    _, channels, kernel, _ = weight.shape
    height, width = input_hw
    columns = np.tensordot(y, weight, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
    padded = np.zeros(
        (n, channels, height + 2 * padding, width + 2 * padding), dtype=y.dtype
    )
    for i in range(kernel):
        for j in range(kernel):
            padded[
                :,
                :,
                i : i + stride * out_h : stride,
                j : j + stride * out_w : stride,
            ] += columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        padded = padded[:, :, padding:-padding, padding:-padding]
    # Rows/columns never touched by a window (floor division) stay zero.
    return padded[:, :, :height, :width]


def conv_backward(dout, windows, weight, stride, padding, input_hw):
    dweight = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dbias = dout.sum(axis=(0, 2, 3))
    dx = conv_transpose(dout, weight, stride, padding, input_hw)
    return dx, dweight, dbias


def batchnorm_train(x, gamma, beta):
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma), mean, var


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dx = (
        inv_std[None, :, None, None]
        / m
        * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        )
    )
    return dx, dgamma, dbeta


def batchnorm_inference(x, gamma, beta, mean, var):
    scale = gamma / np.sqrt(var + BN_EPSILON)
    shift = beta - mean * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def batchnorm_inverse(y, gamma, beta, mean, var):
    """Inverse affine of inference batchnorm, applied where ``y`` is nonzero."""
    safe = np.where(np.abs(gamma) < BN_EPSILON, BN_EPSILON, gamma)
    x = (y - beta[None, :, None, None]) / safe[None, :, None, None]
    x = x * np.sqrt(var + BN_EPSILON)[None, :, None, None] + mean[None, :, None, None]
    return np.where(y != 0, x, 0.0)


def images_to_tensor(images, dtype=np.float32):
    """``(N, H, W, 3)`` uint8 pixels to centered ``(N, 3, H, W)`` floats."""
    pixels = np.asarray(images)
    if pixels.ndim == 3:
        pixels = pixels[None]
    return (pixels.astype(dtype) / 255.0 - 0.5).transpose(0, 3, 1, 2)


class NetworkParams:
    """Named tensors of the steering network, in a fixed order."""

    def __init__(self, tensors, *, history=None):
        self.tensors = OrderedDict(tensors)
        self.history = history or {}
        self.architecture = self._architecture()
        self._check_shapes()

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    @property
    def trainable(self):
        return [
            name
            for name in self.tensors
            if name.endswith((".weight", ".bias", ".gamma", ".beta"))
        ]

    def _architecture(self):
        input_shape = tuple(int(v) for v in self.tensors["input.shape"])
        convs = []
        index = 1
        while f"conv{index}.weight" in self.tensors:
            weight = self.tensors[f"conv{index}.weight"]
            stride, padding = (int(v) for v in self.tensors[f"conv{index}.geometry"])
            convs.append(ConvSpec(weight.shape[0], weight.shape[2], stride, padding))
            index += 1
        return Architecture(
            input_shape=input_shape,
            convs=tuple(convs),
            hidden=self.tensors["fc1.weight"].shape[0],
        )

    def _check_shapes(self):
        channels = self.architecture.input_shape[0]
        for index, spec in enumerate(self.architecture.convs, 1):
            weight = self.tensors[f"conv{index}.weight"]
            expected = (spec.out_channels, channels, spec.kernel, spec.kernel)
            if weight.shape != expected:
                raise ValueError(
                    f"conv{index}.weight has shape {weight.shape}, expected {expected}"
                )
            for name in ("gamma", "beta", "running_mean", "running_var"):
                if self.tensors[f"bn{index}.{name}"].shape != (spec.out_channels,):
                    raise ValueError(f"bn{index}.{name} does not match conv{index}")
            if np.any(self.tensors[f"bn{index}.running_var"] <= 0):
                raise ValueError(f"bn{index}.running_var must be positive")
            channels = spec.out_channels
        flat = self.architecture.flat_size
        if self.tensors["fc1.weight"].shape[1] != flat:
            raise ValueError(
                f"fc1.weight expects {self.tensors['fc1.weight'].shape[1]} inputs, "
                f"conv stack produces {flat}"
            )
        if self.tensors["fc2.weight"].shape != (1, self.architecture.hidden):
            raise ValueError("fc2.weight must map the hidden layer to one output")

    @classmethod
    def initialize(cls, architecture=DEFAULT_ARCHITECTURE, *, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        tensors["input.shape"] = np.asarray(architecture.input_shape, dtype=dtype)
        channels = architecture.input_shape[0]
        for index, spec in enumerate(architecture.convs, 1):
            fan_in = channels * spec.kernel * spec.kernel
            shape = (spec.out_channels, channels, spec.kernel, spec.kernel)
            tensors[f"conv{index}.weight"] = rng.normal(
                0, np.sqrt(2.0 / fan_in), shape
            ).astype(dtype)
            tensors[f"conv{index}.bias"] = np.zeros(spec.out_channels, dtype=dtype)
            tensors[f"conv{index}.geometry"] = np.asarray(
                [spec.stride, spec.padding], dtype=dtype
            )
            tensors[f"bn{index}.gamma"] = np.ones(spec.out_channels, dtype=dtype)
            tensors[f"bn{index}.beta"] = np.zeros(spec.out_channels, dtype=dtype)
            tensors[f"bn{index}.running_mean"] = np.zeros(spec.out_channels, dtype=dtype)
            tensors[f"bn{index}.running_var"] = np.ones(spec.out_channels, dtype=dtype)
            channels = spec.out_channels
        flat = architecture.flat_size
        tensors["fc1.weight"] = rng.normal(
            0, np.sqrt(2.0 / flat), (architecture.hidden, flat)
        ).astype(dtype)
        tensors["fc1.bias"] = np.zeros(architecture.hidden, dtype=dtype)
        tensors["fc2.weight"] = rng.normal(
            0, np.sqrt(1.0 / architecture.hidden), (1, architecture.hidden)
        ).astype(dtype)
        tensors["fc2.bias"] = np.zeros(1, dtype=dtype)
        return cls(tensors)

    @classmethod
    def zeros(cls, architecture=DEFAULT_ARCHITECTURE):
        params = cls.initialize(architecture)
        for name in params.trainable:
            params.tensors[name] = np.zeros_like(params.tensors[name])
        return params

    def astype(self, dtype):
        return NetworkParams(
            ((name, value.astype(dtype)) for name, value in self.tensors.items()),
            history=dict(self.history),
        )

    def copy(self):
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return self.tensors["fc1.weight"].dtype

    def save(self, path):
        with open(path, "wb") as fp:
            fp.write(MAGIC)
            fp.write(struct.pack("<I", len(self.tensors)))
            for name, value in self.tensors.items():
                encoded = name.encode("utf-8")
                fp.write(struct.pack("<I", len(encoded)))
                fp.write(encoded)
                fp.write(struct.pack("<I", value.ndim))
                fp.write(struct.pack(f"<{value.ndim}I", *value.shape))
                fp.write(np.ascontiguousarray(value, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fp:
            data = fp.read()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path} is not a weights file (bad magic)")
        offset = len(MAGIC)

        def unpack(fmt):
            nonlocal offset
            values = struct.unpack_from(fmt, data, offset)
            offset += struct.calcsize(fmt)
            return values

        (count,) = unpack("<I")
        tensors = OrderedDict()
        for _ in range(count):
            (length,) = unpack("<I")
            name = data[offset : offset + length].decode("utf-8")
            offset += length
            (rank,) = unpack("<I")
            shape = unpack(f"<{rank}I") if rank else ()
            size = int(np.prod(shape)) if shape else 1
            tensors[name] = (
                np.frombuffer(data, dtype="<f4", count=size, offset=offset)
                .reshape(shape)
                .astype(np.float32)
            )
            offset += 4 * size
        logger.debug(f"loaded {count} tensors from {path}")
        return cls(tensors)


class Network:
    """Eight conv blocks (conv, batchnorm, ReLU) then FC-ReLU-FC-tanh."""

    def __init__(self, params):
        self.params = params
        self.architecture = params.architecture

    def _check_input(self, x):
        if tuple(x.shape[1:]) != tuple(self.architecture.input_shape):
            raise ValueError(
                f"input shape {tuple(x.shape[1:])} does not match "
                f"{self.architecture.input_shape}"
            )

    def forward(self, x, *, training=False, capture=False):
        """Return ``(steering, caches)``.

        With ``capture`` the caches hold every block's post-ReLU activation;
        with ``training`` they hold what ``backward`` needs and batchnorm uses
        batch statistics. Running statistics are never touched here.
        """
        self._check_input(x)
        p = self.params
        caches = []
        batch_stats = []
        h = x
        for index, spec in enumerate(self.architecture.convs, 1):
            input_hw = h.shape[2:]
            z, windows = conv_forward(
                h, p[f"conv{index}.weight"], p[f"conv{index}.bias"], spec.stride, spec.padding
            )
            if training:
                n, bn_cache, mean, var = batchnorm_train(
                    z, p[f"bn{index}.gamma"], p[f"bn{index}.beta"]
                )
                batch_stats.append((mean, var))
            else:
                n = batchnorm_inference(
                    z,
                    p[f"bn{index}.gamma"],
                    p[f"bn{index}.beta"],
                    p[f"bn{index}.running_mean"],
                    p[f"bn{index}.running_var"],
                )
                bn_cache = None
            h = np.maximum(n, 0)
            if training:
                caches.append((windows, input_hw, bn_cache, n))
            elif capture:
                caches.append(h)

        flat = h.reshape(h.shape[0], -1)
        a = flat @ p["fc1.weight"].T + p["fc1.bias"]
        hidden = np.maximum(a, 0)
        out = np.tanh(hidden @ p["fc2.weight"].T + p["fc2.bias"])[:, 0]
        if training:
            caches.append((h.shape, flat, a, hidden, out, batch_stats))
        return out, caches

    def backward(self, dout, caches):
        """Gradients of every trainable tensor given ``d loss / d steering``."""
        p = self.params
        h_shape, flat, a, hidden, out, _ = caches[-1]
        grads = {}
        dz = (dout * (1 - out**2))[:, None]
        grads["fc2.weight"] = dz.T @ hidden
        grads["fc2.bias"] = dz.sum(axis=0)
        da = (dz @ p["fc2.weight"]) * (a > 0)
        grads["fc1.weight"] = da.T @ flat
        grads["fc1.bias"] = da.sum(axis=0)
        dh = (da @ p["fc1.weight"]).reshape(h_shape)

        for index in range(len(self.architecture.convs), 0, -1):
            spec = self.architecture.convs[index - 1]
            windows, input_hw, bn_cache, n = caches[index - 1]
            dn = dh * (n > 0)
            dz, grads[f"bn{index}.gamma"], grads[f"bn{index}.beta"] = (
                batchnorm_backward(dn, bn_cache)
            )
            dh, grads[f"conv{index}.weight"], grads[f"conv{index}.bias"] = (
                conv_backward(
                    dz, windows, p[f"conv{index}.weight"], spec.stride, spec.padding, input_hw
                )
            )
        return grads

    def loss_and_grads(self, x, targets):
        out, caches = self.forward(x, training=True)
        error = out - targets
        loss = float(np.mean(error**2))
        grads = self.backward(2 * error / len(targets), caches)
        return loss, grads, caches[-1][-1]

    def update_running_stats(self, batch_stats):
        for index, (mean, var) in enumerate(batch_stats, 1):
            for name, value in (("running_mean", mean), ("running_var", var)):
                key = f"bn{index}.{name}"
                self.params.tensors[key] = (
                    BN_MOMENTUM * self.params.tensors[key] + (1 - BN_MOMENTUM) * value
                ).astype(self.params.dtype)
        for index in range(1, len(batch_stats) + 1):
            key = f"bn{index}.running_var"
            self.params.tensors[key] = np.maximum(self.params.tensors[key], BN_EPSILON)

    def predict(self, x):
        out, _ = self.forward(x)
        return out


class MomentumSGD:
    def __init__(self, *, learning_rate, momentum):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        for name, grad in grads.items():
            velocity = self.velocity.get(name)
            if velocity is None:
                velocity = np.zeros_like(grad)
            velocity = self.momentum * velocity - self.learning_rate * grad
            self.velocity[name] = velocity
            params.tensors[name] = (params.tensors[name] + velocity).astype(params.dtype)

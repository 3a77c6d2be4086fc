"""Small configurable CNN classifier with Grad-CAM and checkpointing.

Architecture: a stack of conv(3x3, pad 1) -> relu -> maxpool blocks,
then flatten -> dense -> relu -> dense producing K logits.  Grad-CAM is
taken from the post-relu feature maps of a chosen conv block (the last
one by default) and bilinearly upsampled to input resolution.

Checkpoints are little-endian binary: magic ``EDLC``, u32 version, a
u32-length-prefixed JSON config echo, u32 tensor count, then per tensor
u16 name length + name, u8 ndim, u32 dims and float32 data row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import (
    ArgumentError,
    CheckpointError,
    DimensionError,
    UnsupportedVersionError,
)
from .fileio import write_bytes_atomic

CHECKPOINT_MAGIC = b"EDLC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvBlockConfig:
    filters: int
    kernel: int = 3
    stride: int = 1
    pool: int = 2


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    in_channels: int = 3
    conv_blocks: tuple = (
        ConvBlockConfig(16),
        ConvBlockConfig(32),
        ConvBlockConfig(64),
    )
    dense_width: int = 64
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ArgumentError("at least two classes are required")
        if not self.conv_blocks:
            raise ArgumentError("at least one conv block is required")
        if self.feature_sizes()[-1] < 4:
            raise ArgumentError(
                "final feature map is smaller than 4x4; "
                "use a larger input or fewer pooling stages"
            )

    def feature_sizes(self):
        """Spatial size after each conv block (conv preserves size, pool divides)."""
        sizes = []
        s = self.input_size
        for blk in self.conv_blocks:
            s = (s + 2 * (blk.kernel // 2) - blk.kernel) // blk.stride + 1
            s = (s - blk.pool) // blk.pool + 1
            sizes.append(s)
        return sizes

    def to_dict(self):
        return {
            "input_size": self.input_size,
            "in_channels": self.in_channels,
            "conv_blocks": [
                [b.filters, b.kernel, b.stride, b.pool] for b in self.conv_blocks
            ],
            "dense_width": self.dense_width,
            "n_classes": self.n_classes,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_size=d["input_size"],
            in_channels=d["in_channels"],
            conv_blocks=tuple(ConvBlockConfig(*b) for b in d["conv_blocks"]),
            dense_width=d["dense_width"],
            n_classes=d["n_classes"],
            seed=d["seed"],
        )


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # HxW in [0, 1]
    source_layer: str


class ConvNet:
    """Feed-forward CNN over float64 tensors; weights are autodiff leaves."""

    def __init__(self, config=None):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(self.config.seed)
        self.params = {}
        c_in = self.config.in_channels
        for i, blk in enumerate(self.config.conv_blocks, start=1):
            fan_in = c_in * blk.kernel * blk.kernel
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (blk.filters, c_in, blk.kernel, blk.kernel))
            self.params[f"conv{i}.w"] = Tensor(w, requires_grad=True)
            self.params[f"conv{i}.b"] = Tensor(np.zeros(blk.filters), requires_grad=True)
            c_in = blk.filters
        feat = self.config.feature_sizes()[-1]
        d_in = c_in * feat * feat
        self.params["fc1.w"] = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, self.config.dense_width)),
            requires_grad=True,
        )
        self.params["fc1.b"] = Tensor(np.zeros(self.config.dense_width), requires_grad=True)
        self.params["fc2.w"] = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / self.config.dense_width),
                       (self.config.dense_width, self.config.n_classes)),
            requires_grad=True,
        )
        self.params["fc2.b"] = Tensor(np.zeros(self.config.n_classes), requires_grad=True)

    # -- structure -----------------------------------------------------

    @property
    def conv_layer_names(self):
        return [f"conv{i}" for i in range(1, len(self.config.conv_blocks) + 1)]

    @property
    def default_cam_layer(self):
        return self.conv_layer_names[-1]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _check_input(self, x):
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
            raise DimensionError(
                f"expected input N x {cfg.in_channels} x {cfg.input_size} x "
                f"{cfg.input_size}, got {tuple(x.shape)}"
            )

    # -- forward pieces ------------------------------------------------

    def _block(self, x, i, include_pool=True):
        blk = self.config.conv_blocks[i - 1]
        x = ad.conv2d(
            x,
            self.params[f"conv{i}.w"],
            self.params[f"conv{i}.b"],
            stride=blk.stride,
            padding=blk.kernel // 2,
        )
        x = ad.relu(x)
        if include_pool:
            x = ad.max_pool2d(x, blk.pool)
        return x

    def features_t(self, x, layer=None):
        """Graph up to the post-relu activation of ``layer`` (pre-pool)."""
        layer = layer or self.default_cam_layer
        if layer not in self.conv_layer_names:
            raise ArgumentError(f"unknown conv layer {layer!r}")
        idx = self.conv_layer_names.index(layer) + 1
        t = x if isinstance(x, Tensor) else Tensor(x)
        for i in range(1, idx):
            t = self._block(t, i)
        return self._block(t, idx, include_pool=False)

    def head_t(self, activation, layer=None):
        """Graph from a ``features_t`` activation to the logits."""
        layer = layer or self.default_cam_layer
        idx = self.conv_layer_names.index(layer) + 1
        t = activation if isinstance(activation, Tensor) else Tensor(activation)
        t = ad.max_pool2d(t, self.config.conv_blocks[idx - 1].pool)
        for i in range(idx + 1, len(self.config.conv_blocks) + 1):
            t = self._block(t, i)
        t = ad.flatten(t)
        t = ad.relu(ad.linear(t, self.params["fc1.w"], self.params["fc1.b"]))
        return ad.linear(t, self.params["fc2.w"], self.params["fc2.b"])

    def forward_t(self, x):
        t = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(t.data)
        return self.head_t(self.features_t(t))

    def forward(self, images, batch_size=64):
        """Inference-only logits for a stack of images (numpy in, numpy out)."""
        images = np.asarray(images, dtype=np.float64)
        self._check_input(images)
        out = []
        for i in range(0, images.shape[0], batch_size):
            out.append(self.forward_t(Tensor(images[i : i + batch_size])).data)
        return np.concatenate(out, axis=0)


# ----------------------------------------------------------------------
# Grad-CAM
# ----------------------------------------------------------------------


def _bilinear_upsample(a, out_h, out_w):
    h, w = a.shape
    if h == out_h and w == out_w:
        return a.copy()
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def grad_cam_batch(model, images, target_classes=None, layer=None, batch_size=64):
    """Class activation maps for a stack of images.

    The per-sample graph is separable across the batch axis, so seeding
    the backward pass with one-hot rows yields each sample's own
    class-logit gradient in a single pass.  The feature activation is
    detached into a fresh leaf so the backward pass stays private to
    this call and never touches model gradients.
    """
    layer = layer or model.default_cam_layer
    images = np.asarray(images, dtype=np.float64)
    model._check_input(images)
    n = images.shape[0]
    if target_classes is not None:
        target_classes = np.broadcast_to(np.asarray(target_classes, int), (n,))
    maps = []
    for start in range(0, n, batch_size):
        x = images[start : start + batch_size]
        activation = model.features_t(Tensor(x), layer=layer)
        leaf = Tensor(activation.data, requires_grad=True)
        logits = model.head_t(leaf, layer=layer)
        if target_classes is None:
            picked = np.argmax(logits.data, axis=1)
        else:
            picked = target_classes[start : start + x.shape[0]]
        seed = np.zeros_like(logits.data)
        seed[np.arange(x.shape[0]), picked] = 1.0
        logits.backward(seed)
        weights = leaf.grad.mean(axis=(2, 3))  # global-average-pooled gradients
        cams = np.maximum(
            np.einsum("nc,nchw->nhw", weights, activation.data), 0.0
        )
        for cam in cams:
            peak = cam.max()
            if peak > 0:
                cam = cam / peak
            values = _bilinear_upsample(cam, images.shape[2], images.shape[3])
            maps.append(SaliencyMap(values=np.clip(values, 0.0, 1.0), source_layer=layer))
    return maps


def grad_cam(model, image, target_class=None, layer=None):
    """Class activation map for one CxHxW image (defaults to the predicted class)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise DimensionError("grad_cam expects a single CxHxW image")
    targets = None if target_class is None else [target_class]
    return grad_cam_batch(model, image[None], target_classes=targets, layer=layer)[0]


# ----------------------------------------------------------------------
# checkpoint I/O
# ----------------------------------------------------------------------


def save_checkpoint(model, path):
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(model.params))
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        arr = tensor.data
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    write_bytes_atomic(path, bytes(blob))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(cfg_len, "config").decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"invalid config echo: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    model = ConvNet(config)
    if count != len(model.params):
        raise CheckpointError(
            f"tensor count {count} does not match the {len(model.params)} "
            "parameters implied by the config"
        )
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        if name not in model.params:
            raise CheckpointError(f"unknown tensor name {name!r}")
        (ndim,) = r.unpack("<B", f"ndim of {name!r}")
        shape = r.unpack(f"<{ndim}I", f"dims of {name!r}")
        expected = model.params[name].data.shape
        if shape != expected:
            raise CheckpointError(
                f"tensor {name!r} has shape {shape}, expected {expected}"
            )
        n = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * n, f"data of {name!r}")
        model.params[name].data = (
            np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        )
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after the last tensor")
    return model

"""Deterministic synthetic fundus-like image generator and augmentation.

Each sample is a reddish textured background with vessel-like curves and
a bright circular disc containing a darker inner cup.  The class label
is determined solely by the cup-to-disc radius ratio (>= 0.7 means
referable), so the diagnostic signal is localized at the disc: occluding
the disc destroys the signal while occluding anywhere else preserves it.

Images are 3xHxW float arrays in [0, 1].  On disk they are stored as
8-bit binary P6 pixmaps next to a ``manifest.csv`` with the exact header
``filename,label``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ArgumentError, DataError, EmptyDatasetError

MIN_SIZE = 32
REFERABLE_CUP_RATIO = 0.7

_BACKGROUND = np.array([0.55, 0.22, 0.10])
_VESSEL = np.array([0.35, 0.08, 0.05])
_DISC = np.array([0.95, 0.85, 0.45])
_CUP = np.array([0.75, 0.55, 0.25])


@dataclass(frozen=True)
class SyntheticSample:
    image: np.ndarray  # 3xHxW in [0, 1]
    label: int  # 1 = referable
    filename: str | None = None
    disc_center: tuple | None = None
    disc_radius: float | None = None
    cup_radius: float | None = None


def _smooth_noise(rng, size, sigma, amplitude):
    noise = rng.standard_normal((size, size))
    noise = ndimage.gaussian_filter(noise, sigma)
    peak = np.abs(noise).max()
    return noise / peak * amplitude if peak > 0 else noise


def _draw_vessels(img, rng, size):
    for _ in range(rng.integers(3, 7)):
        r = rng.uniform(0, size)
        c = rng.uniform(0, size)
        angle = rng.uniform(0, 2 * np.pi)
        width = rng.uniform(0.8, 1.6)
        for _ in range(int(size * 1.2)):
            rr, cc = int(round(r)), int(round(c))
            if 0 <= rr < size and 0 <= cc < size:
                r0, r1 = max(0, rr - 2), min(size, rr + 3)
                c0, c1 = max(0, cc - 2), min(size, cc + 3)
                d2 = (np.arange(r0, r1)[:, None] - r) ** 2 + (np.arange(c0, c1)[None, :] - c) ** 2
                w = np.clip(width + 0.5 - np.sqrt(d2), 0.0, 1.0)
                patch = img[:, r0:r1, c0:c1]
                img[:, r0:r1, c0:c1] = patch + w * (_VESSEL[:, None, None] - patch) * 0.8
            angle += rng.normal(0.0, 0.18)
            r += np.sin(angle)
            c += np.cos(angle)


def _paint_disk(img, center, radius, color, strength=1.0):
    size = img.shape[1]
    rows, cols = np.ogrid[:size, :size]
    dist = np.sqrt((rows - center[0]) ** 2 + (cols - center[1]) ** 2)
    w = np.clip(radius + 0.5 - dist, 0.0, 1.0) * strength
    img += w[None] * (color[:, None, None] - img)


def generate_sample(seed, index, size=64, label=None, rng=None):
    """One reproducible sample; the label decides the cup-ratio range."""
    if rng is None:
        rng = np.random.default_rng([seed, index])
    img = np.empty((3, size, size))
    img[:] = _BACKGROUND[:, None, None]
    img += _smooth_noise(rng, size, size / 16, 0.06)[None]
    _draw_vessels(img, rng, size)

    disc_radius = rng.uniform(size / 8, size / 5)
    margin = disc_radius + 2.0
    center = (rng.uniform(margin, size - margin), rng.uniform(margin, size - margin))
    if label is None:
        label = int(rng.uniform() < 0.5)
    ratio = rng.uniform(0.2, 0.5) if label == 0 else rng.uniform(0.7, 0.95)
    cup_radius = ratio * disc_radius
    _paint_disk(img, center, disc_radius, _DISC)
    _paint_disk(img, center, cup_radius, _CUP)

    img += rng.normal(0.0, 0.02, img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return SyntheticSample(
        image=img,
        label=label,
        filename=f"sample_{index:05d}.ppm",
        disc_center=center,
        disc_radius=disc_radius,
        cup_radius=cup_radius,
    )


def generate(n, class_balance=0.5, seed=0, size=64):
    """Generate ``n`` samples with an exact class split of round(n * balance)."""
    if n <= 0:
        raise ArgumentError(f"n must be positive, got {n}")
    if not 0.0 < class_balance < 1.0:
        raise ArgumentError(f"class balance must be in (0,1), got {class_balance}")
    if size < MIN_SIZE:
        raise ArgumentError(f"size must be >= {MIN_SIZE}, got {size}")
    n_pos = int(round(n * class_balance))
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    np.random.default_rng(seed).shuffle(labels)
    return [
        generate_sample(seed, i, size=size, label=int(labels[i])) for i in range(n)
    ]


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    """Each transform fires independently with ``probability``."""

    probability: float = 0.5
    max_translate: float = 0.10  # fraction of image size
    max_rotate: float = 20.0  # degrees
    scale_range: tuple = (0.9, 1.1)
    max_blur_sigma: float = 1.5
    max_brightness: float = 0.10


DEFAULT_AUGMENT = AugmentConfig()


def augment(image, seed, config=DEFAULT_AUGMENT):
    """Random flips, affine jitter, blur and brightness; output clamped to [0,1]."""
    rng = np.random.default_rng(seed)
    img = np.asarray(image, dtype=np.float64)
    size = img.shape[1]
    p = config.probability

    if rng.uniform() < p:
        img = img[:, :, ::-1]
    if rng.uniform() < p:
        img = img[:, ::-1, :]

    angle = rng.uniform(-config.max_rotate, config.max_rotate) if rng.uniform() < p else 0.0
    scale = rng.uniform(*config.scale_range) if rng.uniform() < p else 1.0
    if rng.uniform() < p:
        shift = np.array(
            [
                rng.uniform(-config.max_translate, config.max_translate) * size,
                rng.uniform(-config.max_translate, config.max_translate) * size,
            ]
        )
    else:
        shift = np.zeros(2)

    if angle != 0.0 or scale != 1.0 or shift.any():
        theta = np.deg2rad(angle)
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        # output -> input mapping around the image center
        mat = rot.T / scale
        center = (np.array(img.shape[1:]) - 1) / 2.0
        offset = center - mat @ (center + shift)
        img = np.stack(
            [
                ndimage.affine_transform(
                    img[c], mat, offset=offset, order=1, mode="nearest"
                )
                for c in range(3)
            ]
        )

    if rng.uniform() < p:
        sigma = rng.uniform(0.0, config.max_blur_sigma)
        if sigma > 0:
            img = np.stack([ndimage.gaussian_filter(img[c], sigma) for c in range(3)])

    if rng.uniform() < p:
        img = img + rng.uniform(-config.max_brightness, config.max_brightness)

    return np.clip(np.ascontiguousarray(img), 0.0, 1.0)


# ----------------------------------------------------------------------
# on-disk dataset
# ----------------------------------------------------------------------

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = "filename,label"


def _write_ppm(path, image):
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[1], arr.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.transpose(1, 2, 0).tobytes())


def _read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise DataError(f"{path}: not a binary P6 pixmap")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise DataError(f"{path}: unsupported maxval")
    pixels = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise DataError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_dataset(samples, directory):
    os.makedirs(directory, exist_ok=True)
    names = [s.filename for s in samples]
    if len(set(names)) != len(names):
        raise DataError("sample filenames must be unique")
    lines = [MANIFEST_HEADER]
    for s in samples:
        _write_ppm(os.path.join(directory, s.filename), s.image)
        lines.append(f"{s.filename},{s.label}")
    with open(os.path.join(directory, MANIFEST_NAME), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(directory):
    manifest = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise EmptyDatasetError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DataError(f"{manifest}: expected header '{MANIFEST_HEADER}'")
    rows = lines[1:]
    if not rows:
        raise EmptyDatasetError(f"{manifest} lists no samples")
    samples = []
    seen = set()
    for row in rows:
        try:
            name, label = row.split(",")
            label = int(label)
        except ValueError as exc:
            raise DataError(f"{manifest}: malformed row {row!r}") from exc
        if label not in (0, 1):
            raise DataError(f"{manifest}: label must be 0 or 1 in row {row!r}")
        if name in seen:
            raise DataError(f"{manifest}: duplicate filename {name!r}")
        seen.add(name)
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            raise DataError(f"manifest lists missing file {name!r}")
        samples.append(SyntheticSample(image=_read_ppm(path), label=label, filename=name))
    return samples

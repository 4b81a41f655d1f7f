"""Synthetic bouncing-sprite clips and the binary dataset format.

A clip is a textured sprite (square or disc) sliding over a static
low-amplitude noise background, reflecting off the frame edges.  Labeled
datasets pose motion-direction classification: class c's velocity points
into the c-th angular sector of the circle (K=4 gives right, down, left,
up), which no single frame can reveal, so the task genuinely needs temporal
modeling.

Everything is a pure function of seeds.  Clip i of a dataset draws all of
its parameters from seed base_seed + i, so generation order never matters.

File layout, little-endian: magic "VMAPDS1\\0", u32 version=1, u32 clips,
u16 T/C/H/W, u8 label flag, u16 K, then the payload (all pixels as bytes,
then u16 labels if labeled), then CRC32 of the payload.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, SpecError
from .rng import Rng

MAGIC = b"VMAPDS1\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIHHHHBH")

SPRITES = ("square", "circle")
DATASET_KINDS = ("pretrain", "labeled")


@dataclass
class ClipSpec:
    sprite: str                  # square | circle
    size: int                    # sprite bounding box in pixels
    start: tuple                 # (x, y) top-left corner, x rightward, y down
    velocity: tuple              # (vx, vy) pixels per frame
    texture_seed: int
    label: int | None = None


def gen_clip(spec: ClipSpec, frames: int, height: int, width: int,
             channels: int = 1) -> np.ndarray:
    """Render a spec to [frames, channels, height, width] floats in [0, 1].

    The sprite is drawn at integer pixel positions (nearest to the true
    float position) and reflects off the walls, so integer velocities give
    exact pixel shifts between frames.
    """
    if spec.sprite not in SPRITES:
        raise SpecError(f"sprite must be one of {SPRITES}, got '{spec.sprite}'")
    if spec.size < 1:
        raise SpecError(f"sprite size must be positive, got {spec.size}")
    if spec.size > min(height, width):
        raise SpecError(
            f"sprite size {spec.size} does not fit a {height}x{width} frame")
    if spec.label is not None and spec.velocity == (0, 0):
        raise SpecError("labeled clips must move: velocity is (0, 0)")

    rng = Rng(spec.texture_seed)
    bg = rng.uniform(0.0, 0.15, (channels, height, width))
    tex = rng.uniform(0.6, 1.0, (channels, spec.size, spec.size))
    if spec.sprite == "circle":
        c = (spec.size - 1) / 2.0
        yy, xx = np.mgrid[0:spec.size, 0:spec.size]
        inside = (yy - c) ** 2 + (xx - c) ** 2 <= (spec.size / 2.0) ** 2
    else:
        inside = np.ones((spec.size, spec.size), dtype=bool)

    x, y = float(spec.start[0]), float(spec.start[1])
    vx, vy = float(spec.velocity[0]), float(spec.velocity[1])
    xmax, ymax = float(width - spec.size), float(height - spec.size)
    out = np.empty((frames, channels, height, width))
    for t in range(frames):
        frame = bg.copy()
        px = int(math.floor(min(max(x, 0.0), xmax) + 0.5))
        py = int(math.floor(min(max(y, 0.0), ymax) + 0.5))
        region = frame[:, py:py + spec.size, px:px + spec.size]
        region[:, inside] = tex[:, inside]
        out[t] = frame
        x += vx
        y += vy
        # reflective bounce keeps the sprite inside; loop handles fast sprites
        while not 0.0 <= x <= xmax or not 0.0 <= y <= ymax:
            if x < 0.0:
                x, vx = -x, -vx
            elif x > xmax:
                x, vx = 2.0 * xmax - x, -vx
            if y < 0.0:
                y, vy = -y, -vy
            elif y > ymax:
                y, vy = 2.0 * ymax - y, -vy
    return out


def _draw_spec(index: int, base_seed: int, kind: str, num_classes: int,
               height: int, width: int) -> ClipSpec:
    """All parameters of clip i come from Rng(base_seed + i), in one fixed
    draw order."""
    rng = Rng(base_seed + index)
    sprite = SPRITES[rng.integers(0, len(SPRITES))]
    hi = max(6, min(10, min(height, width) // 3))
    lo = min(6, hi)
    size = rng.integers(lo, hi + 1)
    x = rng.uniform(0.0, float(width - size))
    y = rng.uniform(0.0, float(height - size))
    speed = rng.uniform(1.0, 2.5)
    if kind == "labeled":
        label = index % num_classes
        sector = 2.0 * math.pi * label / num_classes
        angle = sector + rng.uniform(-math.pi / num_classes, math.pi / num_classes)
    else:
        label = None
        angle = rng.uniform(0.0, 2.0 * math.pi)
    velocity = (speed * math.cos(angle), speed * math.sin(angle))
    texture_seed = rng.integers(0, 2 ** 31)
    return ClipSpec(sprite, size, (x, y), velocity, texture_seed, label)


def make_dataset(kind: str, clips: int, num_classes: int, base_seed: int,
                 path: str, frames: int = 8, channels: int = 1,
                 height: int = 32, width: int = 32) -> str:
    """Generate a corpus and write it; returns the path.

    Labeled mode assigns class i mod K round-robin, so any clip count that
    is a multiple of K is exactly balanced.
    """
    if kind not in DATASET_KINDS:
        raise ContractError(f"dataset kind must be one of {DATASET_KINDS}, got '{kind}'")
    if clips < 1:
        raise ContractError(f"need at least one clip, got {clips}")
    if kind == "labeled" and num_classes < 2:
        raise ContractError(f"labeled mode needs at least 2 classes, got {num_classes}")
    pixels = np.empty((clips, frames, channels, height, width), dtype=np.uint8)
    labels = np.empty(clips, dtype=np.uint16) if kind == "labeled" else None
    for i in range(clips):
        spec = _draw_spec(i, base_seed, kind, num_classes, height, width)
        clip = gen_clip(spec, frames, height, width, channels)
        pixels[i] = np.round(clip * 255.0).astype(np.uint8)
        if labels is not None:
            labels[i] = spec.label
    payload = pixels.tobytes()
    if labels is not None:
        payload += labels.astype("<u2").tobytes()
    header = _HEADER.pack(MAGIC, VERSION, clips, frames, channels, height, width,
                          1 if labels is not None else 0,
                          num_classes if labels is not None else 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
    return path


@dataclass
class Dataset:
    frames: int
    channels: int
    height: int
    width: int
    count: int
    labeled: bool
    num_classes: int
    pixels: np.ndarray            # [count, T, C, H, W] uint8
    labels: np.ndarray | None     # [count] uint16, or None

    def clip(self, i: int) -> np.ndarray:
        return self.pixels[i].astype(np.float64) / 255.0

    def clips(self):
        """Yield (clip float array, label or None) in stored order."""
        for i in range(self.count):
            yield self.clip(i), (int(self.labels[i]) if self.labeled else None)

    def load_all(self):
        """(all clips as float [count, T, C, H, W], labels или None)."""
        return self.pixels.astype(np.float64) / 255.0, \
            (self.labels.astype(np.int64) if self.labeled else None)


def read_dataset(path: str) -> Dataset:
    """Parse a dataset file, verifying structure and payload CRC."""
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise FormatError(f"cannot read dataset {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: {len(blob)} bytes is shorter than the "
                          f"{_HEADER.size}-byte header")
    magic, version, count, frames, channels, height, width, flag, k = \
        _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 8")
    pixel_bytes = count * frames * channels * height * width
    label_bytes = 2 * count if flag else 0
    expected = _HEADER.size + pixel_bytes + label_bytes + 4
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes (payload of {pixel_bytes + label_bytes} "
            f"at offset {_HEADER.size} plus CRC), found {len(blob)}")
    payload = blob[_HEADER.size:-4]
    (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    crc_actual = zlib.crc32(payload)
    if crc_stored != crc_actual:
        raise FormatError(f"{path}: payload CRC {crc_actual:08x} does not match "
                          f"stored {crc_stored:08x}")
    pixels = np.frombuffer(payload[:pixel_bytes], dtype=np.uint8).reshape(
        count, frames, channels, height, width).copy()
    labels = None
    if flag:
        labels = np.frombuffer(payload[pixel_bytes:], dtype="<u2").astype(np.uint16)
    return Dataset(frames, channels, height, width, count, bool(flag), k, pixels, labels)

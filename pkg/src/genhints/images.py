"""Grayscale raster images and the hint transformations applied to them.

Vacated or out-of-bounds regions read as 0 (black) throughout.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np


class ImageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RasterImage:
    """H x W single-channel image with pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ImageError(f"expected a non-empty 2-D pixel array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("pixels must be finite")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_flat(cls, height: int, width: int, values: Sequence[float]) -> "RasterImage":
        flat = np.asarray(values, dtype=np.float64)
        if flat.size != height * width:
            raise ImageError(f"{height}x{width} image needs {height * width} pixels, got {flat.size}")
        return cls(flat.reshape(height, width))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))


@dataclass(frozen=True)
class HintTransformSpec:
    """Ranges for the random flip / translate / rotate hint transformation."""

    flip_probability: float = 0.0
    max_translate_fraction: float = 0.0
    max_rotate_degrees: float = 0.0
    seed_stream: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ImageError(f"flip_probability must be in [0,1], got {self.flip_probability}")
        if not 0.0 <= self.max_translate_fraction <= 0.5:
            raise ImageError(
                f"max_translate_fraction must be in [0,0.5], got {self.max_translate_fraction}"
            )
        if not 0.0 <= self.max_rotate_degrees <= 90.0:
            raise ImageError(f"max_rotate_degrees must be in [0,90], got {self.max_rotate_degrees}")

    @property
    def is_identity(self) -> bool:
        return (
            self.flip_probability == 0.0
            and self.max_translate_fraction == 0.0
            and self.max_rotate_degrees == 0.0
        )


IDENTITY_SPEC = HintTransformSpec()


def flip_horizontal(img: RasterImage) -> RasterImage:
    return RasterImage(img.pixels[:, ::-1])


def translate(img: RasterImage, dx: int, dy: int) -> RasterImage:
    """Shift content right by ``dx`` and down by ``dy`` pixels, zero-filling."""
    h, w = img.shape
    dx, dy = int(dx), int(dy)
    if abs(dx) >= w or abs(dy) >= h:
        raise ImageError(f"shift ({dx},{dy}) must be smaller than image size {w}x{h}")
    if dx == 0 and dy == 0:
        return img
    out = np.zeros((h, w))
    src = img.pixels
    out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = src[
        max(-dy, 0) : h - max(dy, 0), max(-dx, 0) : w - max(dx, 0)
    ]
    return RasterImage(out)


def _bilinear_rotate(src: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Rotate each [H, W] slice of ``src`` ([N, H, W]) by its own angle.

    Purely elementwise, so one image gives the same pixels alone or in a batch.
    """
    n, h, w = src.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.radians(np.asarray(degrees, dtype=np.float64)).reshape(n, 1, 1)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    ry, rx = rows - cy, cols - cx
    # inverse map from output pixel to source location
    sx = cos_t * rx - sin_t * ry + cx
    sy = sin_t * rx + cos_t * ry + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    padded = np.pad(src, ((0, 0), (1, 1), (1, 1)))
    batch_idx = np.arange(n).reshape(n, 1, 1)

    def at(yy, xx):
        inside = (yy >= -1) & (yy <= h) & (xx >= -1) & (xx <= w)
        vals = padded[batch_idx, np.clip(yy + 1, 0, h + 1), np.clip(xx + 1, 0, w + 1)]
        return np.where(inside, vals, 0.0)

    out = (
        at(y0, x0) * (1 - fx) * (1 - fy)
        + at(y0, x0 + 1) * fx * (1 - fy)
        + at(y0 + 1, x0) * (1 - fx) * fy
        + at(y0 + 1, x0 + 1) * fx * fy
    )
    return np.clip(out, 0.0, 1.0)


def rotate(img: RasterImage, degrees: float) -> RasterImage:
    """Rotate about the image centre with bilinear interpolation."""
    if abs(degrees) > 90.0:
        raise ImageError(f"rotation limited to 90 degrees, got {degrees}")
    if degrees == 0.0:
        return img
    return RasterImage(_bilinear_rotate(img.pixels[None], np.array([degrees]))[0])


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def sample_hint_parameters(
    spec: HintTransformSpec, height: int, width: int, rng: np.random.Generator
) -> tuple[bool, int, int, float]:
    """Draw (flip, dx, dy, degrees) for one image.

    Exactly six uniforms are consumed per call, whatever the spec, so the
    random stream stays aligned across specs.
    """
    u_flip, u_dx, u_dy, u_sx, u_sy, u_rot = rng.random(6)
    flip = bool(u_flip < spec.flip_probability)
    sign_x = 1 if u_sx < 0.5 else -1
    sign_y = 1 if u_sy < 0.5 else -1
    dx = sign_x * round_half_up(u_dx * spec.max_translate_fraction * width)
    dy = sign_y * round_half_up(u_dy * spec.max_translate_fraction * height)
    degrees = (2.0 * u_rot - 1.0) * spec.max_rotate_degrees
    return flip, dx, dy, degrees


def apply_hint_transform(
    img: RasterImage, spec: HintTransformSpec, rng: np.random.Generator
) -> RasterImage:
    """Apply the sampled transform in the fixed order flip, translate, rotate."""
    flip, dx, dy, degrees = sample_hint_parameters(spec, img.height, img.width, rng)
    out = flip_horizontal(img) if flip else img
    out = translate(out, dx, dy)
    return rotate(out, degrees)


def item_rng(stream: int, key: Sequence[int], index: int) -> np.random.Generator:
    """Per-item random source derived from (stream, key..., index)."""
    return np.random.default_rng([int(stream), *(int(k) for k in key), int(index)])


def _shift_array(src: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = src.shape
    out = np.zeros_like(src)
    out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = src[
        max(-dy, 0) : h - max(dy, 0), max(-dx, 0) : w - max(dx, 0)
    ]
    return out


def transform_array(arr: np.ndarray, spec: HintTransformSpec, key: Sequence[int]) -> np.ndarray:
    """Batched form of :func:`apply_hint_transform` on an [N, H, W] array.

    Image ``i`` uses the random source ``item_rng(spec.seed_stream, key, i)``,
    so the output equals transforming each image on its own.
    """
    if spec.is_identity:
        return arr
    n, h, w = arr.shape
    out = np.array(arr, dtype=np.float64)
    angles = np.zeros(n)
    for i in range(n):
        flip, dx, dy, degrees = sample_hint_parameters(spec, h, w, item_rng(spec.seed_stream, key, i))
        if flip:
            out[i] = out[i, :, ::-1]
        if dx or dy:
            out[i] = _shift_array(out[i], dx, dy)
        angles[i] = degrees
    turn = np.flatnonzero(angles != 0.0)
    if turn.size:
        out[turn] = _bilinear_rotate(out[turn], angles[turn])
    return out


def transform_batch(
    images: Sequence[RasterImage], spec: HintTransformSpec, key: Sequence[int]
) -> list[RasterImage]:
    """Transform each image with its own seed so results ignore batch composition."""
    if spec.is_identity or not images:
        return list(images)
    return [RasterImage(p) for p in transform_array(stack(images), spec, key)]


def stack(images: Iterable[RasterImage]) -> np.ndarray:
    """[N, H, W] float64 array from a list of images."""
    arrs = [im.pixels for im in images]
    if not arrs:
        raise ImageError("cannot stack an empty image list")
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ImageError(f"mixed image shapes {sorted(shapes)}")
    return np.stack(arrs)


# ---------------------------------------------------------------------------
# binary record format: u32 BE height, u32 BE width, height*width f32 BE
# ---------------------------------------------------------------------------

_DIMS = struct.Struct(">II")


def write_image(fh: BinaryIO, img: RasterImage) -> None:
    fh.write(_DIMS.pack(img.height, img.width))
    fh.write(img.pixels.astype(">f4").tobytes())


def read_image(fh: BinaryIO) -> RasterImage | None:
    head = fh.read(_DIMS.size)
    if not head:
        return None
    if len(head) != _DIMS.size:
        raise ImageError("truncated image header")
    h, w = _DIMS.unpack(head)
    if h == 0 or w == 0:
        raise ImageError(f"invalid image dimensions {h}x{w}")
    body = fh.read(4 * h * w)
    if len(body) != 4 * h * w:
        raise ImageError("truncated image body")
    return RasterImage(np.frombuffer(body, dtype=">f4").astype(np.float64).reshape(h, w))


def images_to_bytes(images: Iterable[RasterImage]) -> bytes:
    buf = io.BytesIO()
    for img in images:
        write_image(buf, img)
    return buf.getvalue()


def images_from_bytes(data: bytes) -> list[RasterImage]:
    buf = io.BytesIO(data)
    out = []
    while (img := read_image(buf)) is not None:
        out.append(img)
    return out


def save_images(path: Path | str, images: Iterable[RasterImage]) -> None:
    Path(path).write_bytes(images_to_bytes(images))


def load_images(path: Path | str) -> list[RasterImage]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    try:
        return images_from_bytes(data)
    except ImageError as exc:
        raise ImageError(f"{path}: {exc}") from exc


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Round-trip through float32 so in-memory images equal their serialized form."""
    return np.asarray(pixels, dtype=np.float32).astype(np.float64)

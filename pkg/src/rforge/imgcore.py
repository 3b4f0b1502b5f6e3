"""Pixel primitives: alpha compositing, exact distance transform, feathering,
bilinear resampling and bbox-to-bbox warping, plus PNG/PPM I/O.

Images are ``(H, W, 3)`` float64 arrays in [0, 1]; masks are ``(H, W)``
float64 arrays (binary masks hold only 0 and 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import _accel

__all__ = [
    "BBox",
    "ImageShapeError",
    "alpha_composite",
    "as_image",
    "bbox_of",
    "distance_transform",
    "feather_mask",
    "read_image",
    "read_mask",
    "resample_matrix",
    "resize_adjoint",
    "resize_bilinear",
    "warp_to_bbox",
    "write_image",
    "write_mask",
]

DEFAULT_FEATHER_BAND = 3.0


class ImageShapeError(ValueError):
    """Operands whose dimensions do not agree."""

    def __init__(self, message: str, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{message}: {', '.join(str(s) for s in self.shapes)}")


@dataclass(frozen=True)
class BBox:
    """Pixel box, inclusive-exclusive: rows ``y0:y1``, columns ``x0:x1``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate bbox {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def check_within(self, height: int, width: int) -> None:
        if self.x0 < 0 or self.y0 < 0 or self.x1 > width or self.y1 > height:
            raise ValueError(f"bbox {self.as_list()} outside {height}x{width} image")


def bbox_of(mask: np.ndarray) -> BBox:
    """Tight bounding box of the nonzero support."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("empty mask has no bounding box")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def as_image(arr) -> np.ndarray:
    """Materialize an image: float64, three channels, clamped to [0, 1]."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageShapeError("expected an (H, W, 3) image", img.shape)
    return np.clip(img, 0.0, 1.0)


def _check_binary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ImageShapeError("expected a 2-D mask", m.shape)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask is not binary")
    return m


def alpha_composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``alpha * fg + (1 - alpha) * bg`` per pixel and channel."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if fg.shape != bg.shape or alpha.shape != fg.shape[:2]:
        raise ImageShapeError("alpha_composite operands differ", fg.shape, bg.shape, alpha.shape)
    a = alpha[..., None]
    return a * fg + (1.0 - a) * bg


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel centre to the
    nearest background pixel centre; background pixels get 0.

    Pixels outside the image are not background, so a mask with no background
    pixel at all yields ``inf`` everywhere.
    """
    m = _check_binary(mask)
    f = np.where(m > 0, _accel._INF, 0.0)
    # columns, then rows, each an exact 1-D squared transform
    cols = _accel.edt_rows(f.T).T
    d2 = _accel.edt_rows(cols)
    out = np.sqrt(d2)
    out[d2 >= _accel._INF * 0.5] = np.inf
    return out


def feather_mask(mask: np.ndarray, band: float = DEFAULT_FEATHER_BAND) -> np.ndarray:
    """Soft alpha ``min(1, d / band)`` inside the mask, 0 outside."""
    if not band > 0:
        raise ValueError(f"feather band must be positive, got {band}")
    d = distance_transform(mask)
    return np.minimum(1.0, d / float(band))


def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` bilinear interpolation weights along one axis.

    Pixel-centre alignment: output ``i`` samples input coordinate
    ``(i + 0.5) * n_in / n_out - 0.5``, with taps clamped to ``[0, n_in - 1]``.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("resample sizes must be positive")
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    t = pos - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - t)
    np.add.at(mat, (rows, hi), t)
    return mat


def _separable(img: np.ndarray, ry: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """``ry @ img @ rx.T`` applied to every trailing channel."""
    h, w = img.shape[:2]
    tail = img.shape[2:]
    flat = img.reshape(h, w, -1)
    rows = (ry @ flat.reshape(h, -1)).reshape(ry.shape[0], w, -1)
    out = np.matmul(rx, rows)  # (H', W', C) via broadcasting over rows
    return out.reshape((ry.shape[0], rx.shape[0]) + tail)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Separable bilinear resize of an ``(H, W)`` or ``(H, W, C)`` array."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (height, width):
        return img.copy()
    return _separable(img, resample_matrix(img.shape[0], height), resample_matrix(img.shape[1], width))


def resize_adjoint(grad: np.ndarray, height: int, width: int) -> np.ndarray:
    """Transpose of :func:`resize_bilinear` from ``(height, width)`` inputs."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape[:2] == (height, width):
        return grad.copy()
    return _separable(grad, resample_matrix(height, grad.shape[0]).T, resample_matrix(width, grad.shape[1]).T)


def warp_to_bbox(src: np.ndarray, src_mask: np.ndarray, src_box: BBox, dst_box: BBox,
                 dst_dims: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Rescale and translate the ``src_box`` crop so it lands on ``dst_box``.

    Returns an ``(H, W, 3)`` image and a binary mask of size ``dst_dims``; both
    are zero outside ``dst_box``. The mask is resampled with the same weights
    and re-binarized at 0.5.
    """
    src = np.asarray(src, dtype=np.float64)
    src_mask = np.asarray(src_mask, dtype=np.float64)
    h, w = dst_dims
    src_box.check_within(*src.shape[:2])
    dst_box.check_within(h, w)
    if src_mask.shape != src.shape[:2]:
        raise ImageShapeError("source mask does not match source image", src.shape, src_mask.shape)

    crop = src[src_box.slices()]
    mcrop = src_mask[src_box.slices()]
    out = np.zeros((h, w, 3))
    mask = np.zeros((h, w))
    out[dst_box.slices()] = resize_bilinear(crop, dst_box.height, dst_box.width)
    mask[dst_box.slices()] = resize_bilinear(mcrop, dst_box.height, dst_box.width) >= 0.5
    return out, mask


# ---------------------------------------------------------------- I/O

def _to_u8(arr: np.ndarray) -> np.ndarray:
    # round half up
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write an RGB image as PNG or binary PPM (by suffix)."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    PILImage.fromarray(_to_u8(np.asarray(img))).save(path, format=fmt)


def read_image(path) -> np.ndarray:
    with PILImage.open(Path(path)) as im:
        data = np.asarray(im.convert("RGB"))
    return data.astype(np.float64) / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    """Single-channel PNG, 0/255 (fractional masks are quantized)."""
    PILImage.fromarray(_to_u8(np.asarray(mask))).save(Path(path), format="PNG")


def read_mask(path) -> np.ndarray:
    with PILImage.open(Path(path)) as im:
        data = np.asarray(im.convert("L"))
    return (data >= 128).astype(np.float64)


def read_alpha(path) -> np.ndarray:
    """Soft matte from an 8-bit grayscale image, in [0, 1]."""
    with PILImage.open(Path(path)) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0

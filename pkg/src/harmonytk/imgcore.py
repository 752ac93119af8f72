"""Core raster types, color-space conversions, masked statistics, and compositing.

Images are stored as float arrays in [0,1] per channel (RGB); conversions to
the 0-255 metric scale happen only inside the metrics module. Masks are
strictly binary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

RGB = "RGB"
LAB = "LAB"
YCBCR = "YCBCR"

SPACES = (RGB, LAB, YCBCR)

MASK_THRESHOLD = 128  # 8-bit grayscale masks: >= 128 is foreground


class ColorSpaceError(ValueError):
    """Unsupported color-space pair or non-finite values after conversion."""


class MaskError(ValueError):
    """Empty mask, zero-area raster, or image/mask dimension mismatch."""


# Reinhard-style RGB->LMS cone-response matrix. Rows are normalized to sum to
# exactly 1 so the neutral axis (R=G=B) maps to equal cone responses, which
# keeps alpha=beta=0 for gray pixels.
_RGB_TO_LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
_RGB_TO_LMS /= _RGB_TO_LMS.sum(axis=1, keepdims=True)
_LMS_TO_RGB = np.linalg.inv(_RGB_TO_LMS)

# log-LMS -> decorrelated l/alpha/beta basis.
_LMS_TO_LAB = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
_LAB_TO_LMS = np.linalg.inv(_LMS_TO_LAB)

# Guards log10(0) for black pixels.
_LOG_EPS = (1.0 / 255.0) ** 2

# Full-range BT.601 YCbCr.
_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC_OFFSET = np.array([0.0, 0.5, 0.5])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


@dataclass(frozen=True)
class ImageRGB:
    """H x W x 3 float raster with a color-space tag."""

    data: np.ndarray
    space: str = RGB

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got {self.data.shape}")
        if self.space not in SPACES:
            raise ColorSpaceError(f"unknown color space {self.space!r}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MaskImage:
    """H x W binary foreground mask; background is the complement."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"expected (H, W) array, got {self.data.shape}")
        if self.data.size == 0:
            raise MaskError("zero-area mask raster")
        if self.data.dtype != np.bool_:
            object.__setattr__(self, "data", self.data.astype(bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def complement(self) -> "MaskImage":
        return MaskImage(~self.data)

    def foreground_count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel first/second moments over a pixel set (population convention)."""

    mean: np.ndarray
    std: np.ndarray
    covariance: np.ndarray
    pixel_count: int


def _check_pair(img: ImageRGB, mask: MaskImage) -> None:
    if (img.height, img.width) != (mask.height, mask.width):
        raise MaskError(
            f"image {img.height}x{img.width} vs mask {mask.height}x{mask.width}"
        )


def rgb_to_lab_pixels(px: np.ndarray) -> np.ndarray:
    """Map (..., 3) RGB values to l/alpha/beta via log-LMS."""
    lms = px @ _RGB_TO_LMS.T
    lms = lms + _LOG_EPS
    if np.any(lms <= 0):
        raise ColorSpaceError("non-positive cone response; input outside gamut")
    return np.log10(lms) @ _LMS_TO_LAB.T


def lab_to_rgb_pixels(px: np.ndarray) -> np.ndarray:
    lms = np.power(10.0, px @ _LAB_TO_LMS.T) - _LOG_EPS
    return lms @ _LMS_TO_RGB.T


def rgb_to_ycbcr_pixels(px: np.ndarray) -> np.ndarray:
    return px @ _RGB_TO_YCC.T + _YCC_OFFSET


def ycbcr_to_rgb_pixels(px: np.ndarray) -> np.ndarray:
    return (px - _YCC_OFFSET) @ _YCC_TO_RGB.T


_FORWARD = {LAB: rgb_to_lab_pixels, YCBCR: rgb_to_ycbcr_pixels}
_BACKWARD = {LAB: lab_to_rgb_pixels, YCBCR: ycbcr_to_rgb_pixels}


def convert_color_space(img: ImageRGB, target: str) -> ImageRGB:
    """Convert between RGB and a decorrelated space (LAB or YCBCR).

    Conversion paths are RGB<->LAB and RGB<->YCBCR only; an image already in
    the target space is returned as a bitwise-identical copy.
    """
    if target not in SPACES:
        raise ColorSpaceError(f"unknown color space {target!r}")
    if img.space == target:
        return ImageRGB(img.data.copy(), img.space)
    if img.space == RGB:
        out = _FORWARD[target](img.data)
    elif target == RGB:
        out = _BACKWARD[img.space](img.data)
    else:
        raise ColorSpaceError(f"no conversion path {img.space} -> {target}")
    if not np.all(np.isfinite(out)):
        raise ColorSpaceError(f"non-finite values converting {img.space} -> {target}")
    return ImageRGB(out, target)


def masked_moments(img: ImageRGB, mask: MaskImage) -> ChannelStats:
    """Mean/std/covariance over foreground pixels only (1/N normalization)."""
    _check_pair(img, mask)
    n = mask.foreground_count()
    if n == 0:
        raise MaskError("mask has no foreground pixels")
    px = img.data[mask.data]
    mean = px.mean(axis=0)
    centered = px - mean
    cov = centered.T @ centered / n
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return ChannelStats(mean=mean, std=std, covariance=cov, pixel_count=n)


def overlay_composite(target: ImageRGB, reference: ImageRGB, mask: MaskImage) -> ImageRGB:
    """Reference pixels where mask=1, target pixels elsewhere."""
    if target.space != RGB or reference.space != RGB:
        raise ColorSpaceError("overlay requires RGB inputs")
    if target.data.shape != reference.data.shape:
        raise MaskError(
            f"target {target.data.shape} vs reference {reference.data.shape}"
        )
    _check_pair(target, mask)
    out = np.where(mask.data[..., None], reference.data, target.data)
    return ImageRGB(out, RGB)


def foreground_ratio(mask: MaskImage) -> float:
    """Foreground pixel count over total pixel count."""
    return mask.foreground_count() / mask.data.size


# ---------------------------------------------------------------------------
# File I/O: 8-bit RGB PNG, binary PPM, 8-bit grayscale mask PNG.
# ---------------------------------------------------------------------------


def quantize_u8(data: np.ndarray) -> np.ndarray:
    """[0,1] float -> rounded uint8."""
    return np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8)


def from_u8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def read_image(path) -> ImageRGB:
    """Load an 8-bit RGB image (PNG or PPM) into [0,1] floats."""
    with Image.open(path) as im:
        raw = np.asarray(im.convert("RGB"))
    return ImageRGB(from_u8(raw), RGB)


def write_image(img: ImageRGB, path) -> None:
    if img.space != RGB:
        raise ColorSpaceError("only RGB images are written to disk")
    Image.fromarray(quantize_u8(img.data), mode="RGB").save(path)


def read_mask(path) -> MaskImage:
    """Load an 8-bit grayscale mask; values >= 128 are foreground."""
    with Image.open(path) as im:
        raw = np.asarray(im.convert("L"))
    return MaskImage(raw >= MASK_THRESHOLD)


def write_mask(mask: MaskImage, path) -> None:
    Image.fromarray(np.where(mask.data, 255, 0).astype(np.uint8), mode="L").save(path)


def read_ppm(path) -> ImageRGB:
    """Binary (P6) PPM reader, maxval 255."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a binary PPM: magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    raw = np.frombuffer(blob, dtype=np.uint8, count=width * height * 3, offset=pos)
    return ImageRGB(from_u8(raw.reshape(height, width, 3)), RGB)


def write_ppm(img: ImageRGB, path) -> None:
    if img.space != RGB:
        raise ColorSpaceError("only RGB images are written to disk")
    raw = quantize_u8(img.data)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


# ---------------------------------------------------------------------------
# Resizing (evaluation pipeline only: bilinear for images, nearest for masks).
# ---------------------------------------------------------------------------


def resize_bilinear(img: ImageRGB, width: int, height: int) -> ImageRGB:
    if (img.height, img.width) == (height, width):
        return ImageRGB(img.data.copy(), img.space)
    channels = [
        np.asarray(
            Image.fromarray(img.data[:, :, c].astype(np.float32), mode="F").resize(
                (width, height), Image.BILINEAR
            ),
            dtype=np.float64,
        )
        for c in range(3)
    ]
    return ImageRGB(np.clip(np.stack(channels, axis=-1), 0.0, 1.0), img.space)


def resize_nearest(mask: MaskImage, width: int, height: int) -> MaskImage:
    if (mask.height, mask.width) == (height, width):
        return MaskImage(mask.data.copy())
    im = Image.fromarray(mask.data.astype(np.uint8) * 255, mode="L")
    return MaskImage(np.asarray(im.resize((width, height), Image.NEAREST)) >= MASK_THRESHOLD)

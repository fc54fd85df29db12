"""No-reference sharpness scoring for raw images.

The score is a signal-to-noise ratio between a Gaussian-blurred copy of
the image (signal) and the high-frequency residual the blur removed
(noise). Blurrier images leave less residual and therefore score higher
dB; the bounded score divides by a dB ceiling and clamps to [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ValidationError

# Rec.709 luma weights for RGB -> gray conversion.
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)


@dataclass(frozen=True)
class GrayImage:
    """A single-channel image with pixel intensities in [0, 1]."""

    pixels: np.ndarray  # (height, width) float64

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError("image must be a non-empty 2-D array")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image contains non-finite pixels")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True)
class LsnrConfig:
    """Blur kernel and normalization knobs for the sharpness score."""

    sigma: float = 1.0
    kernel_radius: int = 3
    snr_db_ceiling: float = 30.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.kernel_radius < math.ceil(3 * self.sigma):
            raise ValidationError(
                f"kernel_radius {self.kernel_radius} below 3*sigma={3 * self.sigma}"
            )
        if self.snr_db_ceiling <= 0:
            raise ValidationError("snr_db_ceiling must be positive")


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Sampled Gaussian taps at integer offsets -radius..radius, sum 1."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    if radius < 1:
        raise ValidationError("radius must be >= 1")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _reflect_pad_1d(arr: np.ndarray, radius: int, axis: int) -> np.ndarray:
    # Mirror about the edge pixel without repeating it; requires the
    # axis length to exceed the radius.
    if arr.shape[axis] <= radius:
        raise ValidationError(
            f"image extent {arr.shape[axis]} too small for kernel radius {radius}"
        )
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    return np.pad(arr, pad, mode="reflect")


def convolve_separable(img: GrayImage, kernel: np.ndarray) -> GrayImage:
    """2-D convolution by a symmetric 1-D kernel, horizontal then vertical.

    Borders are mirror-reflected. The passes run on mean-centered values
    so a constant image convolves to itself exactly, not just to within
    rounding of the normalized taps; this keeps the zero-residual case of
    the sharpness ratio exact.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise ValidationError("kernel must be 1-D with odd length")
    radius = kernel.size // 2
    mean = float(np.mean(img.pixels))
    out = img.pixels - mean
    for axis in (1, 0):
        padded = _reflect_pad_1d(out, radius, axis)
        acc = np.zeros_like(out)
        for k, tap in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + out.shape[axis])
            acc += tap * padded[tuple(sl)]
        out = acc
    # Normalized taps keep values inside [0, 1] up to rounding.
    return GrayImage(np.clip(out + mean, 0.0, 1.0))


def l_snr_db(img: GrayImage, cfg: LsnrConfig = LsnrConfig()) -> float:
    """Blur-to-residual energy ratio in dB; +inf when the residual is zero."""
    kernel = gaussian_kernel(cfg.sigma, cfg.kernel_radius)
    blurred = convolve_separable(img, kernel)
    residual = img.pixels - blurred.pixels
    signal_energy = float(np.sum(blurred.pixels * blurred.pixels))
    noise_energy = float(np.sum(residual * residual))
    if noise_energy == 0.0:
        return math.inf
    if signal_energy == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal_energy / noise_energy)


def l_snr_score(img: GrayImage, cfg: LsnrConfig = LsnrConfig()) -> float:
    """dB ratio mapped linearly onto [0, 1] by the configured ceiling."""
    db = l_snr_db(img, cfg)
    if math.isinf(db):
        return 1.0 if db > 0 else 0.0
    return min(max(db / cfg.snr_db_ceiling, 0.0), 1.0)


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """Rec.709 luma from an (H, W, 3) array in [0, 1]."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) array, got {rgb.shape}")
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def load_gray_image(path) -> GrayImage:
    """Decode a PNG (8/16-bit, gray or RGB) into a [0, 1] gray image."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif mode in ("RGB", "RGBA"):
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            arr = rgb_to_luma(rgb)
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return GrayImage(np.clip(arr, 0.0, 1.0))


def score_image_file(path, cfg: LsnrConfig = LsnrConfig()) -> float:
    return l_snr_score(load_gray_image(path), cfg)

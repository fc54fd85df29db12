"""Minimal image helpers shared by the scoring and generation backends."""
from __future__ import annotations

import numpy as np
from PIL import Image


def load_gray(path) -> np.ndarray:
    """Decode to a (H, W) float array in [0, 1] (Rec.709 luma for color)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return 0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]


def encode_gray_png(pixels: np.ndarray) -> bytes:
    """Encode a [0, 1] array as 8-bit grayscale PNG bytes (deterministic)."""
    import io

    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-mirrored borders."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    out = pixels
    for axis in (0, 1):
        if out.shape[axis] <= radius:
            raise ValueError(f"image extent {out.shape[axis]} below blur radius {radius}")
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for k, tap in enumerate(taps):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + out.shape[axis])
            acc += tap * padded[tuple(sl)]
        out = acc
    return out


def box_downsample(pixels: np.ndarray) -> np.ndarray:
    """Halve both dimensions by 2x2 averaging (odd trailing row/col dropped)."""
    h, w = pixels.shape
    h2, w2 = h - h % 2, w - w % 2
    crop = pixels[:h2, :w2]
    return 0.25 * (crop[0::2, 0::2] + crop[1::2, 0::2] + crop[0::2, 1::2] + crop[1::2, 1::2])


def unit_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; exactly 1.0 for bitwise-identical inputs."""
    if a.shape == b.shape and np.array_equal(a, b):
        return 1.0
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))

"""Perceptual scoring of generated images against their reference step.

Both scorers compare each image I(prompt, seed, t) against the final-
step image I(prompt, seed, t_N) of the same prompt and seed.

Mid-level distance (DSIM rows): the ``dreamsim`` backend wraps the
pretrained perceptual metric; the offline ``pyramid`` backend averages
absolute differences over a Gaussian pyramid, which preserves the
properties the pipeline relies on (zero self-distance, values in [0,1],
structural changes scoring higher than mild smoothing).

Semantic similarity (ICLIP rows): cosine similarity of per-image
descriptors mapped to [0, 1] via (1+cos)/2, which is invertible and
recorded in the output sidecar. Descriptors come from a captioning
model encoded by a text encoder (``caption:<captioner>:<clip>``), a
pretrained image encoder (``clipimg:<model-id>``), or the offline
``stats`` backend (patch-grid intensity statistics).
"""
from __future__ import annotations

import numpy as np

from .formats import ExtractError, scan_image_tree
from .images import box_downsample, load_gray, unit_cosine

PYRAMID_LEVELS = 4


class PyramidDistance:
    """Mean absolute difference across a box pyramid; in [0, 1]."""

    name = "pyramid"

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        if a.shape != b.shape:
            raise ExtractError(f"image shape mismatch: {a.shape} vs {b.shape}")
        total = 0.0
        weight = 1.0 / PYRAMID_LEVELS
        for _ in range(PYRAMID_LEVELS):
            total += weight * float(np.mean(np.abs(a - b)))
            if min(a.shape) < 2:
                break
            a = box_downsample(a)
            b = box_downsample(b)
        return min(max(total, 0.0), 1.0)


class DreamsimDistance:
    """Pretrained mid-level perceptual metric (lazy; needs weights)."""

    name = "dreamsim"

    def __init__(self, device: str = "cpu"):
        self.device = device
        self._model = None
        self._preprocess = None

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from dreamsim import dreamsim
        except ImportError as exc:
            raise ExtractError(f"backend 'dreamsim' unavailable: {exc}") from None
        self._model, self._preprocess = dreamsim(pretrained=True, device=self.device)

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        self._load()
        import torch
        from PIL import Image

        def prep(arr):
            img = Image.fromarray((arr * 255).astype(np.uint8), mode="L").convert("RGB")
            return self._preprocess(img).to(self.device)

        with torch.no_grad():
            value = float(self._model(prep(a), prep(b)).item())
        return min(max(value, 0.0), 1.0)


class StatsDescriptor:
    """Patch-grid intensity statistics as a cheap image descriptor."""

    name = "stats"
    grid = 4

    def describe(self, pixels: np.ndarray) -> np.ndarray:
        h, w = pixels.shape
        if h < self.grid or w < self.grid:
            raise ExtractError(f"image {h}x{w} too small for a {self.grid}-cell grid")
        feats = []
        ys = np.linspace(0, h, self.grid + 1, dtype=int)
        xs = np.linspace(0, w, self.grid + 1, dtype=int)
        for i in range(self.grid):
            for j in range(self.grid):
                patch = pixels[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
                feats.append(float(np.mean(patch)))
                feats.append(float(np.std(patch)))
        vec = np.array(feats)
        vec -= vec.mean()
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # perfectly flat image: fall back to a fixed direction so the
            # cosine stays defined
            vec = np.zeros(len(feats))
            vec[0] = 1.0
            return vec
        return vec / norm


class ClipImageDescriptor:
    """Pretrained image encoder via transformers (lazy; needs weights)."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.name = f"clipimg:{model_id}"
        self.model_id = model_id
        self.device = device
        self._model = None
        self._processor = None

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import CLIPProcessor, CLIPVisionModelWithProjection
        except ImportError as exc:
            raise ExtractError(f"backend {self.name!r} needs transformers: {exc}") from None
        try:
            self._processor = CLIPProcessor.from_pretrained(self.model_id)
            self._model = CLIPVisionModelWithProjection.from_pretrained(
                self.model_id
            ).to(self.device).eval()
        except Exception as exc:
            raise ExtractError(f"backend {self.name!r}: model unavailable ({exc})") from None

    def describe(self, pixels: np.ndarray) -> np.ndarray:
        self._load()
        import torch
        from PIL import Image

        img = Image.fromarray((pixels * 255).astype(np.uint8), mode="L").convert("RGB")
        with torch.no_grad():
            inputs = self._processor(images=img, return_tensors="pt").to(self.device)
            feats = self._model(**inputs).image_embeds[0].cpu().double().numpy()
        return feats / np.linalg.norm(feats)


class CaptionDescriptor:
    """Caption the image, then encode the caption text (lazy; needs models)."""

    def __init__(self, captioner_id: str, clip_id: str, device: str = "cpu"):
        self.name = f"caption:{captioner_id}:{clip_id}"
        self.captioner_id = captioner_id
        self.clip_id = clip_id
        self.device = device
        self._pipe = None
        self._text = None

    def _load(self):
        if self._pipe is not None:
            return
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise ExtractError(f"backend {self.name!r} needs transformers: {exc}") from None
        from .embed import ClipTextEmbedder

        try:
            self._pipe = pipeline("image-to-text", model=self.captioner_id,
                                  device=self.device)
        except Exception as exc:
            raise ExtractError(f"backend {self.name!r}: captioner unavailable ({exc})") from None
        self._text = ClipTextEmbedder(self.clip_id, device=self.device)

    def describe(self, pixels: np.ndarray) -> np.ndarray:
        self._load()
        from PIL import Image

        img = Image.fromarray((pixels * 255).astype(np.uint8), mode="L").convert("RGB")
        caption = self._pipe(img)[0]["generated_text"]
        return self._text.embed([caption])[0]


def get_distance(spec: str):
    if spec == "pyramid":
        return PyramidDistance()
    if spec == "dreamsim":
        return DreamsimDistance()
    raise ExtractError(f"unknown dsim backend {spec!r} (use 'pyramid' or 'dreamsim')")


def get_descriptor(spec: str):
    if spec == "stats":
        return StatsDescriptor()
    if spec.startswith("clipimg:"):
        return ClipImageDescriptor(spec.split(":", 1)[1])
    if spec.startswith("caption:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ExtractError("caption backend spec is 'caption:<captioner>:<clip>'")
        return CaptionDescriptor(parts[1], parts[2])
    raise ExtractError(
        f"unknown iclip backend {spec!r} (use 'stats', 'clipimg:<id>' or "
        f"'caption:<captioner>:<clip>')"
    )


def _pairs_against_reference(root, grid: list[int]):
    """Yield (prompt, seed, t, image, reference image) with the reference
    being the same prompt and seed at the final grid step."""
    t_n = grid[-1]
    grid_set = set(grid)
    entries = scan_image_tree(root)
    by_key = {(pid, seed, step): path for pid, seed, step, path in entries}
    for pid, seed, step, path in entries:
        if step not in grid_set:
            raise ExtractError(
                f"image {path} at step {step} is off the supplied grid"
            )
        if (pid, seed, t_n) not in by_key:
            raise ExtractError(
                f"prompt {pid} seed {seed}: missing reference image at step {t_n}"
            )

    ref_key = None
    ref_img = None
    for pid, seed, step, path in entries:  # sorted, so (pid, seed) groups run
        if (pid, seed) != ref_key:
            ref_img = load_gray(by_key[(pid, seed, t_n)])
            ref_key = (pid, seed)
        img = ref_img if step == t_n else load_gray(path)
        yield pid, seed, step, img, ref_img


def dsim_scores(root, grid: list[int], backend) -> list[tuple[int, int, int, str, float]]:
    """Mid-level distance rows; the self pair at the final step is 0."""
    rows = []
    for pid, seed, step, img, ref in _pairs_against_reference(root, grid):
        rows.append((pid, seed, step, "DSIM", backend.distance(img, ref)))
    return rows


def iclip_scores(root, grid: list[int], backend) -> list[tuple[int, int, int, str, float]]:
    """Semantic-similarity rows, cosine mapped through (1+cos)/2."""
    rows = []
    for pid, seed, step, img, ref in _pairs_against_reference(root, grid):
        cos = unit_cosine(backend.describe(img), backend.describe(ref))
        rows.append((pid, seed, step, "ICLIP", (1.0 + cos) / 2.0))
    return rows

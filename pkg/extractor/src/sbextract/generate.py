"""Image generation over the sampled timestep grid and fixed seeds.

Images land in ``<out>/<prompt_id>/<seed>/<t>.png`` and are bitwise
deterministic per (prompt, seed, t).

The ``sd:<checkpoint>`` backend drives a pretrained latent diffusion
model with an Euler scheduler pinned to fixed start/end timesteps; it
needs torch + diffusers and downloadable weights. The offline
``procedural`` backend emulates the one property the pipeline measures:
early steps carry residual noise that later steps remove, so sharpness
rises with t while similarity to the final-step image falls with
distance from it.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .formats import ExtractError, atomic_write_bytes
from .images import encode_gray_png, gaussian_blur

DEFAULT_SEEDS = (0, 1, 2, 3)
DEFAULT_RESOLUTION = 768


class ProceduralGenerator:
    """Deterministic synthetic frames: smooth content plus noise that
    decays as the step count grows."""

    name = "procedural"

    def __init__(self, resolution: int = DEFAULT_RESOLUTION):
        if resolution < 16:
            raise ExtractError("resolution must be >= 16")
        self.resolution = resolution

    def render(self, prompt_id: int, seed: int, step: int, t_n: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([prompt_id, seed]))
        size = self.resolution
        content = gaussian_blur(rng.standard_normal((size, size)), sigma=size / 16.0)
        content /= max(float(np.max(np.abs(content))), 1e-9)
        noise = rng.standard_normal((size, size))

        progress = np.log(step) / np.log(t_n) if t_n > 1 else 1.0
        noise_amp = 0.9 * (1.0 - progress)
        frame = 0.5 + 0.35 * content + noise_amp * 0.25 * noise
        return np.clip(frame, 0.0, 1.0)


class StableDiffusionGenerator:
    """Latent diffusion driver (lazy; needs torch + diffusers + weights)."""

    def __init__(self, checkpoint: str, resolution: int = DEFAULT_RESOLUTION,
                 device: str = "cpu"):
        self.name = f"sd:{checkpoint}"
        self.checkpoint = checkpoint
        self.resolution = resolution
        self.device = device
        self._pipe = None
        self._prompts = {}

    def _load(self):
        if self._pipe is not None:
            return
        try:
            import torch  # noqa: F401
            from diffusers import DiffusionPipeline, EulerDiscreteScheduler
        except ImportError as exc:
            raise ExtractError(f"backend {self.name!r} needs diffusers: {exc}") from None
        try:
            pipe = DiffusionPipeline.from_pretrained(self.checkpoint)
        except Exception as exc:
            raise ExtractError(f"backend {self.name!r}: checkpoint unavailable ({exc})") from None
        # fixed start/end timesteps keep scores comparable across step counts
        pipe.scheduler = EulerDiscreteScheduler.from_config(
            pipe.scheduler.config, timestep_spacing="linspace"
        )
        self._pipe = pipe.to(self.device)

    def bind_prompts(self, prompts: dict[int, str]) -> None:
        self._prompts = dict(prompts)

    def render(self, prompt_id: int, seed: int, step: int, t_n: int) -> np.ndarray:
        self._load()
        import torch

        if prompt_id not in self._prompts:
            raise ExtractError(f"no prompt text bound for id {prompt_id}")
        generator = torch.Generator(device=self.device).manual_seed(seed)
        image = self._pipe(
            self._prompts[prompt_id],
            num_inference_steps=step,
            height=self.resolution,
            width=self.resolution,
            generator=generator,
        ).images[0]
        rgb = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
        return 0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]


def get_generator(spec: str, resolution: int = DEFAULT_RESOLUTION):
    if spec == "procedural":
        return ProceduralGenerator(resolution=resolution)
    if spec.startswith("sd:"):
        return StableDiffusionGenerator(spec.split(":", 1)[1], resolution=resolution)
    raise ExtractError(f"unknown generate backend {spec!r} (use 'procedural' or 'sd:<id>')")


def generate_tree(
    out_dir,
    prompts: list[tuple[int, str]],
    grid: list[int],
    seeds: tuple[int, ...],
    generator,
) -> int:
    """Render every (prompt, seed, grid step) leaf; returns the image count."""
    if not seeds:
        raise ExtractError("seed list is empty")
    if not grid:
        raise ExtractError("grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
        raise ExtractError("grid must be strictly increasing, steps >= 1")
    t_n = grid[-1]
    if hasattr(generator, "bind_prompts"):
        generator.bind_prompts(dict(prompts))
    out_dir = Path(out_dir)
    count = 0
    for pid, _ in prompts:
        for seed in seeds:
            for step in grid:
                frame = generator.render(pid, seed, step, t_n)
                atomic_write_bytes(
                    out_dir / str(pid) / str(seed) / f"{step}.png",
                    encode_gray_png(frame),
                )
                count += 1
    return count

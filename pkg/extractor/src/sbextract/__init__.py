"""Data producer for the step-budget pipeline.

Wraps pretrained models (text embedders, perceptual distances, image
captioning similarity, a diffusion generation driver) behind small
backend interfaces and emits only the pipeline's documented file
formats. Every mode also ships a deterministic, dependency-free backend
so the full data path can run and be tested offline.
"""

__version__ = "0.1.0"

"""Baseline construction, the blending operator, and noise injection.

The baseline is an image with near-zero class evidence (blurred, constant,
or noise); apply_mask blends the original toward it under a mask in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .grid import Grid, gaussian_blur, project_unit_interval, upsample_bilinear


@dataclass(frozen=True)
class BaselineSpec:
    """Which evidence-free reference image to blend toward.

    kind "blur" reads blur_sigma, "constant" reads constant_value, "noise"
    reads noise_sigma (i.i.d. Gaussian around 0.5, clamped to [0, 1]).
    """

    kind: str = "blur"
    blur_sigma: float = 10.0
    constant_value: float = 0.0
    noise_sigma: float = 0.2

    def __post_init__(self):
        if self.kind not in ("blur", "constant", "noise"):
            raise InvalidArgumentError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "blur" and self.blur_sigma <= 0:
            raise InvalidArgumentError("blur baseline requires blur_sigma > 0")
        if self.kind == "noise" and self.noise_sigma < 0:
            raise InvalidArgumentError("noise baseline requires noise_sigma >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "blur_sigma": self.blur_sigma,
                "constant_value": self.constant_value, "noise_sigma": self.noise_sigma}

    @staticmethod
    def from_dict(d: dict) -> "BaselineSpec":
        return BaselineSpec(**d)


def make_baseline(image: Grid, spec: BaselineSpec, seed: int = 0) -> Grid:
    """Build the baseline image for ``image`` according to ``spec``."""
    if spec.kind == "blur":
        return gaussian_blur(image, spec.blur_sigma)
    if spec.kind == "constant":
        return Grid.constant(image.height, image.width, image.channels, spec.constant_value)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.5, spec.noise_sigma, size=image.shape)
    return Grid(np.clip(noise, 0.0, 1.0))


def apply_mask(original: Grid, baseline: Grid, mask: Grid) -> Grid:
    """Blend: original * M + baseline * (1 - M), with M bilinearly upsampled
    to image resolution and broadcast across channels."""
    if original.shape != baseline.shape:
        raise InvalidArgumentError(
            f"image {original.shape} and baseline {baseline.shape} shapes differ")
    if mask.channels != 1:
        raise InvalidArgumentError("mask must be single-channel")
    if np.min(mask.data) < 0.0 or np.max(mask.data) > 1.0:
        raise InvalidArgumentError("mask values must lie in [0, 1]")
    if mask.height == original.height and mask.width == original.width:
        m = mask.data
    else:
        m = upsample_bilinear(mask, original.height, original.width).data
    blended = original.data * m + baseline.data * (1.0 - m)
    return Grid(blended)


def perturb_with_noise(image: Grid, noise_sigma: float, seed: int) -> Grid:
    """image + i.i.d. Gaussian(0, noise_sigma), clamped to [0, 1]."""
    if noise_sigma < 0:
        raise InvalidArgumentError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if noise_sigma == 0:
        return image
    rng = np.random.default_rng(seed)
    noisy = image.data + rng.normal(0.0, noise_sigma, size=image.shape)
    return Grid(np.clip(noisy, 0.0, 1.0))


def invert_mask(mask: Grid) -> Grid:
    """1 - M, projected for exact feasibility at the float boundaries."""
    return project_unit_interval(Grid(1.0 - mask.data))

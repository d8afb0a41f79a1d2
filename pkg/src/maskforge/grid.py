"""Dense 2-D grid primitives shared by every other module.

A Grid is a height x width x channels float64 array carrying images, masks,
and gradients. All operations here are pure: they validate their inputs,
never mutate them, and return freshly allocated grids whose values are
guaranteed finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Grid:
    """Dense float grid with shape metadata.

    ``data`` has shape (height, width, channels). Masks use channels=1,
    images 1 or 3. Values must be finite.
    """

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidArgumentError(f"grid data must be 2-D or 3-D, got ndim={arr.ndim}")
        h, w, c = arr.shape
        if h < 1 or w < 1 or c < 1:
            raise InvalidArgumentError(f"grid dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("grid values must be finite (no NaN/Inf)")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of length height*width*channels."""
        return self.data.reshape(-1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @staticmethod
    def from_flat(height: int, width: int, channels: int, values) -> "Grid":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != height * width * channels:
            raise InvalidArgumentError(
                f"expected {height * width * channels} values, got {arr.size}"
            )
        return Grid(arr.reshape(height, width, channels))

    @staticmethod
    def constant(height: int, width: int, channels: int, value: float) -> "Grid":
        return Grid(np.full((height, width, channels), float(value)))

    @staticmethod
    def zeros(height: int, width: int, channels: int = 1) -> "Grid":
        return Grid.constant(height, width, channels, 0.0)

    @staticmethod
    def ones(height: int, width: int, channels: int = 1) -> "Grid":
        return Grid.constant(height, width, channels, 1.0)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def _linear_interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """(n_out x n_in) matrix of 1-D linear interpolation weights.

    Align-corners convention: output sample i reads input coordinate
    i*(n_in-1)/(n_out-1), so both endpoints coincide with input endpoints
    and n_out == n_in yields the identity.
    """
    m = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        # Degenerate axes interpolate the single available sample.
        m[:, 0] = 1.0
        return m
    coords = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(coords).astype(int)
    lo = np.minimum(lo, n_in - 2)
    t = coords - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - t
    m[rows, lo + 1] = t
    return m


def upsample_bilinear(src: Grid, target_h: int, target_w: int) -> Grid:
    """Bilinear upsampling with the align-corners convention.

    Constant grids stay constant and the output range is contained in the
    input range. Downsampling requests are rejected.
    """
    if target_h < 1 or target_w < 1:
        raise InvalidArgumentError(f"target dimensions must be positive, got {target_h}x{target_w}")
    if target_h < src.height or target_w < src.width:
        raise InvalidArgumentError(
            f"cannot downsample {src.height}x{src.width} to {target_h}x{target_w}"
        )
    wr = _linear_interp_matrix(target_h, src.height)
    wc = _linear_interp_matrix(target_w, src.width)
    out = np.einsum("ih,hwc,jw->ijc", wr, src.data, wc, optimize=True)
    return Grid(out)


def upsample_adjoint(grad_highres: Grid, h: int, w: int) -> Grid:
    """Transpose of upsample_bilinear: routes a high-res gradient back to h x w.

    Satisfies <upsample_bilinear(a), b> == <a, upsample_adjoint(b)> exactly
    up to float rounding.
    """
    if h < 1 or w < 1:
        raise InvalidArgumentError(f"target dimensions must be positive, got {h}x{w}")
    if grad_highres.height < h or grad_highres.width < w:
        raise InvalidArgumentError(
            f"adjoint target {h}x{w} exceeds source {grad_highres.height}x{grad_highres.width}"
        )
    wr = _linear_interp_matrix(grad_highres.height, h)
    wc = _linear_interp_matrix(grad_highres.width, w)
    out = np.einsum("ih,ijc,jw->hwc", wr, grad_highres.data, wc, optimize=True)
    return Grid(out)


def gaussian_blur(img: Grid, sigma: float) -> Grid:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), reflective borders.

    The kernel is sampled from exp(-d^2 / 2 sigma^2) and normalized to sum 1,
    so constants are preserved exactly and (because reflective extension makes
    the effective operator symmetric) the image mean is preserved as well.
    sigma == 0 returns the input unchanged.
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    radius = math.ceil(3.0 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(d * d) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = correlate1d(img.data, kernel, axis=0, mode="reflect")
    out = correlate1d(out, kernel, axis=1, mode="reflect")
    return Grid(out)


def project_unit_interval(g: Grid) -> Grid:
    """Clamp every value into [0, 1]."""
    return Grid(np.clip(g.data, 0.0, 1.0))


def _area_average_matrix(n_out: int, n_in: int) -> np.ndarray:
    """(n_out x n_in) row-stochastic matrix averaging input cells over the
    fractional interval each output cell covers."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        left = i * scale
        right = (i + 1) * scale
        j0 = int(math.floor(left))
        j1 = min(int(math.ceil(right)), n_in)
        for j in range(j0, j1):
            overlap = min(right, j + 1) - max(left, j)
            if overlap > 0:
                m[i, j] = overlap / scale
    return m


def area_downsample(src: Grid, h: int, w: int) -> Grid:
    """Area-average pooling to h x w (per channel). Used to bring a
    full-resolution image down to mask resolution."""
    if h < 1 or w < 1 or h > src.height or w > src.width:
        raise InvalidArgumentError(
            f"area_downsample target {h}x{w} invalid for source {src.height}x{src.width}"
        )
    ar = _area_average_matrix(h, src.height)
    ac = _area_average_matrix(w, src.width)
    out = np.einsum("ih,hwc,jw->ijc", ar, src.data, ac, optimize=True)
    return Grid(out)

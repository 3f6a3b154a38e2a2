"""Guided-filter base/detail decomposition of the network input.

The base layer is an edge-preserving low-pass of the image; the detail
layer is the elementwise quotient of image by base.  Both stacked with
the image form the two 6-channel network inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, concat_channels


@dataclass(frozen=True)
class DecompositionParams:
    radius: int = 5
    eps: float = 0.01
    div_floor: float = 1e-6

    def __post_init__(self):
        if self.radius < 1:
            raise ShapeError(f"guided filter radius must be >= 1, got {self.radius}")
        if self.eps <= 0 or self.div_floor <= 0:
            raise ShapeError("guided filter eps and div_floor must be positive")


def box_sum(plane: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed sums over (2r+1)^2 boxes truncated at the borders.

    Returns (sums, counts) so callers can form means over the valid
    window intersection.  Uses an integral image, O(H*W).
    """
    h, w = plane.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    ii[1:, 1:] = plane.cumsum(axis=0).cumsum(axis=1)
    r = radius
    y = np.arange(h)
    x = np.arange(w)
    y0 = np.clip(y - r, 0, h)
    y1 = np.clip(y + r + 1, 0, h)
    x0 = np.clip(x - r, 0, w)
    x1 = np.clip(x + r + 1, 0, w)
    sums = ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)] - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)]
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return sums, counts.astype(np.float64)


def _guided_filter_plane(p: np.ndarray, g: np.ndarray, radius: int, eps: float) -> np.ndarray:
    sum_g, n = box_sum(g, radius)
    mean_g = sum_g / n
    mean_p = box_sum(p, radius)[0] / n
    mean_gp = box_sum(g * p, radius)[0] / n
    mean_gg = box_sum(g * g, radius)[0] / n
    cov_gp = mean_gp - mean_g * mean_p
    var_g = mean_gg - mean_g * mean_g
    a = cov_gp / (var_g + eps)
    b = mean_p - a * mean_g
    mean_a = box_sum(a, radius)[0] / n
    mean_b = box_sum(b, radius)[0] / n
    return mean_a * g + mean_b


def guided_filter(image: Tensor, guide: Tensor, params: DecompositionParams) -> Tensor:
    """Edge-preserving low-pass filter, applied per channel.

    Not part of the differentiable graph: decomposition happens on the
    input side, before any trainable parameter.
    """
    if image.data.shape != guide.data.shape:
        raise ShapeError(f"guided_filter: image {image.data.shape} vs guide {guide.data.shape}")
    x = image.data
    out = np.empty_like(x, dtype=np.float64)
    for ni in range(x.shape[0]):
        for ci in range(x.shape[1]):
            out[ni, ci] = _guided_filter_plane(
                x[ni, ci].astype(np.float64), guide.data[ni, ci].astype(np.float64),
                params.radius, params.eps,
            )
    return Tensor(out.astype(x.dtype))


def decompose(image: Tensor, params: DecompositionParams) -> tuple[Tensor, Tensor]:
    """Split the image into base (filtered) and detail (quotient) layers.

    base * detail reconstructs the image wherever base stays above the
    divisor floor; the detail layer is left unclamped and may exceed 1.
    """
    base = guided_filter(image, image, params)
    denom = np.maximum(base.data, params.div_floor)
    detail = Tensor(image.data / denom)
    return base, detail


def make_inputs(image: Tensor, base: Tensor, detail: Tensor) -> tuple[Tensor, Tensor]:
    """Stack the image with each layer: ([image base], [image detail])."""
    for t in (base, detail):
        if t.data.shape != image.data.shape:
            raise ShapeError(f"make_inputs: layer shape {t.data.shape} != image shape {image.data.shape}")
    return concat_channels(image, base), concat_channels(image, detail)

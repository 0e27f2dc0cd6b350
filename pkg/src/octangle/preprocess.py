"""Speckle denoising and vertical gradient analysis of AS-OCT images.

Produces per-column candidate edge points for the bright corneal band: the
top boundary shows up as the strongest negative vertical-gradient impulse in
a column, the bottom boundary as the strongest positive one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

DEFAULT_SIGMA = 2.0
DEFAULT_REL_THRESHOLD = 0.05


@dataclass(frozen=True)
class ColumnEdgePair:
    v: int
    u_upper: int
    u_bottom: int
    mag_upper: float
    mag_bottom: float


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img: np.ndarray, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Separable Gaussian filter with reflected borders; preserves [0, 1]."""
    k = gaussian_kernel1d(sigma)
    out = correlate1d(img, k, axis=0, mode="reflect")
    out = correlate1d(out, k, axis=1, mode="reflect")
    # kernel sums to 1, so only roundoff can push values out of range
    return np.clip(out, 0.0, 1.0)


def vertical_gradient(img: np.ndarray) -> np.ndarray:
    """Central-difference vertical gradient G(u,v) = I(u-1,v) - I(u+1,v).

    First and last rows are zero.  A dark-above / bright-below transition
    (top of the corneal band) gives a negative value, the band's lower edge
    a positive one.
    """
    H = img.shape[0]
    if H < 3:
        raise ValueError("image must have at least 3 rows")
    g = np.zeros_like(img, dtype=np.float64)
    g[1:-1, :] = img[:-2, :] - img[2:, :]
    return g


def column_edge_pairs(grad: np.ndarray, rel_threshold: float = DEFAULT_REL_THRESHOLD) -> list[ColumnEdgePair]:
    """Top negative/positive impulse rows per column, filtered for plausibility.

    A column is kept only when the negative impulse sits above the positive
    one and both magnitudes reach ``rel_threshold`` times the global maximum
    absolute gradient.  Ties resolve to the smaller row index.
    """
    if not 0.0 <= rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in [0, 1)")
    gmax = float(np.abs(grad).max()) if grad.size else 0.0
    if gmax == 0.0:
        return []
    floor = rel_threshold * gmax
    u_upper = np.argmin(grad, axis=0)  # first occurrence on ties
    u_bottom = np.argmax(grad, axis=0)
    cols = np.arange(grad.shape[1])
    mag_upper = -grad[u_upper, cols]
    mag_bottom = grad[u_bottom, cols]
    keep = (u_upper < u_bottom) & (mag_upper >= floor) & (mag_bottom >= floor)
    return [
        ColumnEdgePair(int(v), int(u_upper[v]), int(u_bottom[v]), float(mag_upper[v]), float(mag_bottom[v]))
        for v in cols[keep]
    ]


def gradient_to_image(grad: np.ndarray) -> np.ndarray:
    """Affinely map a signed gradient map to [0, 1] for debug dumps."""
    lo, hi = float(grad.min()), float(grad.max())
    if hi <= lo:
        return np.full_like(grad, 0.5)
    return (grad - lo) / (hi - lo)

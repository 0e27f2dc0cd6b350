"""Quartic corneal boundary fitting from per-column edge candidates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import PixelPoint
from .preprocess import ColumnEdgePair

DEFAULT_OUTLIER_PASSES = 1
DEFAULT_STRIDE = 10


@dataclass(frozen=True)
class QuarticCurve:
    """Row as a quartic in the column index: u(v) = sum_k c[k] * v**k."""

    coefficients: tuple[float, float, float, float, float]
    v_min: int
    v_max: int

    def __call__(self, v) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.asarray(v, dtype=np.float64), self.coefficients)


@dataclass(frozen=True)
class CornealBoundary:
    upper: QuarticCurve
    bottom: QuarticCurve


def _lstsq_quartic(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Quartic least squares on the standardized abscissa, raw coefficients out."""
    mean = v.mean()
    std = v.std()
    if std == 0.0:
        raise ValueError("need at least 5 distinct column values for a quartic fit")
    vn = (v - mean) / std
    A = np.vander(vn, 5, increasing=True)
    coeffs_n, _, rank, _ = np.linalg.lstsq(A, u, rcond=None)
    if rank < 5:
        raise ValueError("rank-deficient quartic system (fewer than 5 distinct columns)")
    # expand sum a_k ((v-mean)/std)^k back to monomials in v
    base = np.array([-mean / std, 1.0 / std])
    poly = np.polynomial.polynomial
    raw = np.zeros(1)
    power = np.ones(1)
    for k in range(5):
        raw = poly.polyadd(raw, coeffs_n[k] * power)
        power = poly.polymul(power, base)
    out = np.zeros(5)
    out[: raw.size] = raw
    return out


def fit_quartic(points: list[tuple[int, float]], outlier_passes: int = DEFAULT_OUTLIER_PASSES) -> QuarticCurve:
    """Least-squares quartic through (v, u) points with MAD outlier rejection.

    Each pass drops points whose absolute residual exceeds 3x the median
    absolute deviation and refits.  A pass that would leave fewer than five
    distinct columns is skipped.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a list of (v, u) pairs")
    v, u = pts[:, 0], pts[:, 1]
    if np.unique(v).size < 5:
        raise ValueError("need at least 5 points with 5 distinct column values")
    coeffs = _lstsq_quartic(v, u)
    for _ in range(max(outlier_passes, 0)):
        resid = u - np.polynomial.polynomial.polyval(v, coeffs)
        mad = np.median(np.abs(resid - np.median(resid)))
        # the floor keeps float noise on near-exact fits from reading as outliers
        cut = 3.0 * mad + 1e-9 * (1.0 + float(np.abs(u).max()))
        keep = np.abs(resid) <= cut
        if keep.all() or np.unique(v[keep]).size < 5:
            break
        v, u = v[keep], u[keep]
        coeffs = _lstsq_quartic(v, u)
    return QuarticCurve(tuple(float(c) for c in coeffs), int(v.min()), int(v.max()))


def fit_corneal_boundary(pairs: list[ColumnEdgePair], outlier_passes: int = DEFAULT_OUTLIER_PASSES) -> CornealBoundary:
    """Fit the upper and bottom corneal curves from per-column edge pairs."""
    if len(pairs) < 5:
        raise ValueError(f"need at least 5 edge pairs, got {len(pairs)}")
    upper = fit_quartic([(p.v, p.u_upper) for p in pairs], outlier_passes)
    bottom = fit_quartic([(p.v, p.u_bottom) for p in pairs], outlier_passes)
    return CornealBoundary(upper=upper, bottom=bottom)


def sample_boundary(curve: QuarticCurve, stride: int = DEFAULT_STRIDE) -> list[PixelPoint]:
    """Points along the curve at v = v_min, v_min+stride, ... <= v_max."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    vs = np.arange(curve.v_min, curve.v_max + 1, stride)
    us = np.round(curve(vs)).astype(int)
    return [PixelPoint(int(u), int(v)) for u, v in zip(us, vs)]


def burn_overlay(img: np.ndarray, boundary: CornealBoundary) -> np.ndarray:
    """Copy of the image with both boundary curves drawn at intensity 1.0."""
    out = img.copy()
    H, W = out.shape
    for curve in (boundary.upper, boundary.bottom):
        vs = np.arange(max(curve.v_min, 0), min(curve.v_max, W - 1) + 1)
        us = np.round(curve(vs)).astype(int)
        ok = (us >= 0) & (us < H)
        out[us[ok], vs[ok]] = 1.0
    return out

"""Sliding-window sweep along the corneal bottom boundary.

Training: every window centered on a boundary sample point contributes its
HOG descriptor with the distance target d = min(1, 2|v_r - v_s| / W_r).
Detection: the window with the smallest regression value wins; its center is
the scleral-spur estimate and the anterior chamber angle location.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cornea import DEFAULT_STRIDE, CornealBoundary, sample_boundary
from .hog import HogConfig, hog_descriptor
from .imagecore import PixelPoint, crop
from .svr import SvrModel, SvrTrainSet, svr_predict

ROI_SIZE = 120


@dataclass(frozen=True)
class RoiWindow:
    center: PixelPoint
    width: int = ROI_SIZE
    height: int = ROI_SIZE

    def __post_init__(self):
        if self.width < 2 or self.width % 2:
            raise ValueError("window width must be even and >= 2")
        if self.height < 1:
            raise ValueError("window height must be positive")


@dataclass(frozen=True)
class AcaDetection:
    ss_pred: PixelPoint
    window: RoiWindow
    score: float
    all_scores: tuple[float, ...]
    centers: tuple[PixelPoint, ...]

    def __post_init__(self):
        if self.all_scores and self.score != min(self.all_scores):
            raise ValueError("winning score must be the minimum over all windows")


def distance_label(v_r: int, v_s: int, w_r: int = ROI_SIZE) -> float:
    """Normalized center-to-spur distance, clamped to 1 at the window edge."""
    if w_r <= 0:
        raise ValueError("window width must be positive")
    return min(1.0, 2.0 * abs(v_r - v_s) / w_r)


def _sweep_descriptors(
    img: np.ndarray, boundary: CornealBoundary, stride: int, cfg: HogConfig, size: int
) -> tuple[list[PixelPoint], np.ndarray]:
    centers = sample_boundary(boundary.bottom, stride)
    if not centers:
        raise ValueError("no usable boundary domain to sweep")
    feats = np.stack([hog_descriptor(crop(img, c, size, size), cfg).values for c in centers])
    return centers, feats


def make_training_windows(
    img: np.ndarray,
    boundary: CornealBoundary,
    ss_truth: PixelPoint,
    stride: int = DEFAULT_STRIDE,
    cfg: HogConfig = HogConfig(),
    size: int = ROI_SIZE,
) -> SvrTrainSet:
    """Window sweep in ascending column order with Eq-style distance targets."""
    centers, feats = _sweep_descriptors(img, boundary, stride, cfg, size)
    targets = np.array([distance_label(c.v, ss_truth.v, size) for c in centers])
    return SvrTrainSet(features=feats, targets=targets)


def detect_aca(
    img: np.ndarray,
    boundary: CornealBoundary,
    model: SvrModel,
    stride: int = DEFAULT_STRIDE,
    cfg: HogConfig = HogConfig(),
    size: int = ROI_SIZE,
) -> AcaDetection:
    """Evaluate every window and return the argmin; ties go to the smallest v."""
    centers, feats = _sweep_descriptors(img, boundary, stride, cfg, size)
    scores = svr_predict(model, feats)
    k = int(np.argmin(scores))
    return AcaDetection(
        ss_pred=centers[k],
        window=RoiWindow(center=centers[k], width=size, height=size),
        score=float(scores[k]),
        all_scores=tuple(float(s) for s in scores),
        centers=tuple(centers),
    )


def extract_levels(img: np.ndarray, det: AcaDetection) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global full image, local left half, and the ACA patch at the detection."""
    local = np.ascontiguousarray(img[:, : img.shape[1] // 2])
    patch = crop(img, det.ss_pred, det.window.height, det.window.width)
    return img.copy(), local, patch

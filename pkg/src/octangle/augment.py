"""Training-time augmentation: intensity rescaling and ACA-patch shifting.

Applied to training data only.  Global and local levels receive intensity
scaling; the ACA patch additionally gets center shifts, re-cropped from the
scaled source image so border handling matches the unshifted patch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .aca import ROI_SIZE
from .imagecore import PixelPoint, crop

DEFAULT_FACTORS = (0.5, 1.0, 1.5)
DEFAULT_OFFSETS = tuple((du, dv) for du in (-8, 0, 8) for dv in (-8, 0, 8))
INTENSITY_ONLY_OFFSETS = ((0, 0),)


@dataclass(frozen=True)
class AugmentConfig:
    intensity_factors: tuple[float, ...] = DEFAULT_FACTORS
    shift_offsets: tuple[tuple[int, int], ...] = DEFAULT_OFFSETS
    clip: bool = True

    def __post_init__(self):
        if not self.intensity_factors or min(self.intensity_factors) <= 0:
            raise ValueError("intensity factors must be positive")
        if 1.0 not in self.intensity_factors:
            raise ValueError("the identity factor 1 must be present")
        if not self.shift_offsets:
            raise ValueError("at least one shift offset required")
        if not self.clip:
            raise ValueError("intensity clipping cannot be disabled")

    @property
    def expansion(self) -> int:
        return len(self.intensity_factors) * len(self.shift_offsets)


IDENTITY_AUGMENT = AugmentConfig(intensity_factors=(1.0,), shift_offsets=INTENSITY_ONLY_OFFSETS)


@dataclass(frozen=True)
class TrainingSample:
    """Left-oriented source image with its ACA center and metadata."""

    image: np.ndarray
    ss: PixelPoint
    label: str
    patient_id: str


@dataclass(frozen=True)
class LevelSample:
    """One (global, local, patch) triplet ready for the classifier."""

    level_global: np.ndarray
    level_local: np.ndarray
    level_patch: np.ndarray
    label: str
    patient_id: str


def scale_intensity(img: np.ndarray, k: float) -> np.ndarray:
    """Per-pixel min(1, k*i); k=1 is the identity bit-exactly."""
    if k <= 0:
        raise ValueError("intensity factor must be positive")
    if k == 1.0:
        return img.copy()
    return np.minimum(img * k, 1.0)


def shift_patch(img: np.ndarray, ss: PixelPoint, offset: tuple[int, int], size: int = ROI_SIZE) -> np.ndarray:
    """Patch crop at ss + offset, zero-padded at the borders."""
    center = PixelPoint(ss.u + offset[0], ss.v + offset[1])
    return crop(img, center, size, size)


def expand_training_set(
    samples: list[TrainingSample], cfg: AugmentConfig = AugmentConfig(), patch_size: int = ROI_SIZE
) -> Iterator[LevelSample]:
    """Yield len(samples) * |factors| * |offsets| level triplets.

    Order is deterministic: samples outermost, then factors, then offsets.
    Yields lazily; a full-resolution expansion of a large training set does
    not fit in memory at once.
    """
    for sample in samples:
        for k in cfg.intensity_factors:
            scaled = scale_intensity(sample.image, k)
            level_global = scaled
            level_local = np.ascontiguousarray(scaled[:, : scaled.shape[1] // 2])
            for offset in cfg.shift_offsets:
                yield LevelSample(
                    level_global=level_global,
                    level_local=level_local,
                    level_patch=shift_patch(scaled, sample.ss, offset, size=patch_size),
                    label=sample.label,
                    patient_id=sample.patient_id,
                )

"""Intensity-scaling and patch-shift augmentation semantics."""

import numpy as np
import pytest

from octangle.augment import (
    DEFAULT_FACTORS,
    DEFAULT_OFFSETS,
    IDENTITY_AUGMENT,
    AugmentConfig,
    LevelSample,
    TrainingSample,
    expand_training_set,
    scale_intensity,
    shift_patch,
)
from octangle.imagecore import PixelPoint


def test_scale_intensity_saturates_and_keeps_identity():
    img = np.array([[0.2, 0.6], [0.9, 0.0]])
    np.testing.assert_allclose(scale_intensity(img, 1.5), [[0.3, 0.9], [1.0, 0.0]])
    np.testing.assert_allclose(scale_intensity(img, 0.5), img * 0.5)
    ident = scale_intensity(img, 1.0)
    np.testing.assert_array_equal(ident, img)
    assert ident is not img
    with pytest.raises(ValueError):
        scale_intensity(img, 0.0)


def test_shift_patch_recrops_from_source():
    rng = np.random.default_rng(4)
    img = rng.random((60, 80))
    base = shift_patch(img, PixelPoint(30, 40), (0, 0), size=10)
    np.testing.assert_array_equal(base, img[25:35, 35:45])
    moved = shift_patch(img, PixelPoint(30, 40), (-8, 8), size=10)
    np.testing.assert_array_equal(moved, img[17:27, 43:53])
    # near the border the padding stays zero rather than shifting the window
    edge = shift_patch(img, PixelPoint(2, 2), (-8, -8), size=10)
    assert edge.shape == (10, 10) and edge.sum() == 0.0


def test_config_validation_and_expansion():
    assert AugmentConfig().expansion == len(DEFAULT_FACTORS) * len(DEFAULT_OFFSETS) == 27
    assert IDENTITY_AUGMENT.expansion == 1
    with pytest.raises(ValueError):
        AugmentConfig(intensity_factors=())
    with pytest.raises(ValueError):
        AugmentConfig(intensity_factors=(0.5, 1.5))  # identity missing
    with pytest.raises(ValueError):
        AugmentConfig(intensity_factors=(-1.0, 1.0))
    with pytest.raises(ValueError):
        AugmentConfig(shift_offsets=())
    with pytest.raises(ValueError):
        AugmentConfig(clip=False)


def make_sample(seed, label="open", pid="p0"):
    rng = np.random.default_rng(seed)
    return TrainingSample(image=rng.random((40, 64)), ss=PixelPoint(20, 16), label=label, patient_id=pid)


def test_expand_order_and_count():
    samples = [make_sample(0, "open", "a"), make_sample(1, "closure", "b")]
    cfg = AugmentConfig(intensity_factors=(0.5, 1.0), shift_offsets=((0, 0), (4, -4)))
    out = list(expand_training_set(samples, cfg, patch_size=12))
    assert len(out) == 2 * cfg.expansion == 8
    assert [s.label for s in out] == ["open"] * 4 + ["closure"] * 4
    # innermost loop is offsets, then factors
    base = samples[0].image
    np.testing.assert_array_equal(out[0].level_global, np.minimum(base * 0.5, 1.0))
    np.testing.assert_array_equal(out[1].level_global, out[0].level_global)
    np.testing.assert_array_equal(out[2].level_global, base)
    np.testing.assert_array_equal(out[0].level_patch, shift_patch(np.minimum(base * 0.5, 1.0), samples[0].ss, (0, 0), 12))
    np.testing.assert_array_equal(out[3].level_patch, shift_patch(base, samples[0].ss, (4, -4), 12))


def test_expand_levels_are_consistent():
    sample = make_sample(7, "closure", "p9")
    (only,) = list(expand_training_set([sample], IDENTITY_AUGMENT, patch_size=16))
    assert isinstance(only, LevelSample)
    np.testing.assert_array_equal(only.level_global, sample.image)
    np.testing.assert_array_equal(only.level_local, sample.image[:, :32])
    assert only.level_local.flags["C_CONTIGUOUS"]
    assert only.level_patch.shape == (16, 16)
    assert only.patient_id == "p9" and only.label == "closure"


def test_expand_is_lazy():
    gen = expand_training_set([make_sample(3)], AugmentConfig())
    assert iter(gen) is gen  # generator, not a materialized list
    first = next(gen)
    assert first.level_patch.shape == (120, 120)

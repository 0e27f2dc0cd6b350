"""HOG descriptor against a per-pixel vote oracle written with plain loops."""

import math

import numpy as np
import pytest

from octangle.hog import Descriptor, HogConfig, descriptor_dim, hog_descriptor


def oracle_hog(window, cfg):
    """Straight-line reimplementation: per-pixel votes, loop accumulation."""
    H, W = window.shape
    cu, cv = H // cfg.cell, W // cfg.cell
    hist = np.zeros((cu, cv, cfg.bins))
    for i in range(H):
        for j in range(W):
            if i == 0:
                gu = window[1, j] - window[0, j]
            elif i == H - 1:
                gu = window[-1, j] - window[-2, j]
            else:
                gu = (window[i + 1, j] - window[i - 1, j]) / 2.0
            if j == 0:
                gv = window[i, 1] - window[i, 0]
            elif j == W - 1:
                gv = window[i, -1] - window[i, -2]
            else:
                gv = (window[i, j + 1] - window[i, j - 1]) / 2.0
            mag = math.hypot(gu, gv)
            angle = math.degrees(math.atan2(gu, gv)) % 180.0
            x = angle * cfg.bins / 180.0
            lo = int(math.floor(x))
            frac = x - lo
            lo %= cfg.bins
            hist[i // cfg.cell, j // cfg.cell, lo] += mag * (1.0 - frac)
            hist[i // cfg.cell, j // cfg.cell, (lo + 1) % cfg.bins] += mag * frac
    blocks = []
    nb_u = (cu - cfg.block) // cfg.block_stride + 1
    nb_v = (cv - cfg.block) // cfg.block_stride + 1
    for bi in range(nb_u):
        for bj in range(nb_v):
            u0 = bi * cfg.block_stride
            v0 = bj * cfg.block_stride
            vec = hist[u0 : u0 + cfg.block, v0 : v0 + cfg.block, :].ravel()
            blocks.append(vec / math.sqrt(float(vec @ vec) + cfg.eps**2))
    return np.concatenate(blocks)


def test_default_window_dim_is_7056():
    assert descriptor_dim((120, 120), HogConfig()) == 7056
    d = hog_descriptor(np.random.default_rng(0).random((120, 120)))
    assert d.dim == 7056


def test_constant_window_gives_zero_descriptor():
    d = hog_descriptor(np.full((120, 120), 0.37))
    assert d.dim == 7056
    assert np.all(d.values == 0.0)


def test_matches_vote_oracle_on_random_windows():
    rng = np.random.default_rng(21)
    cfg = HogConfig()
    for shape in ((16, 16), (24, 16), (32, 32)):
        window = rng.random(shape)
        got = hog_descriptor(window, cfg).values
        want = oracle_hog(window, cfg)
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_matches_oracle_nondefault_config():
    rng = np.random.default_rng(5)
    cfg = HogConfig(cell=4, block=3, bins=7, block_stride=2, eps=1e-3)
    window = rng.random((20, 28))
    np.testing.assert_allclose(
        hog_descriptor(window, cfg).values, oracle_hog(window, cfg), atol=1e-12
    )
    assert hog_descriptor(window, cfg).dim == descriptor_dim((20, 28), cfg)


def test_horizontal_ramp_votes_confined_to_bin_zero():
    # I(u,v) = v/W: gradient points along +v, orientation 0 degrees exactly
    W = 32
    window = np.tile(np.arange(W) / W, (32, 1))
    d = hog_descriptor(window, HogConfig())
    support = np.flatnonzero(d.values)
    assert support.size > 0
    assert np.all(support % 9 == 0)


def test_gain_invariance_after_normalization():
    rng = np.random.default_rng(3)
    window = rng.random((32, 32))
    base = hog_descriptor(window).values
    for k in (0.25, 3.0, 117.0):
        scaled = hog_descriptor(window * k).values
        np.testing.assert_allclose(scaled, base, atol=1e-9)


def test_offset_invariance():
    rng = np.random.default_rng(8)
    window = rng.random((16, 16))
    np.testing.assert_allclose(
        hog_descriptor(window + 5.0).values, hog_descriptor(window).values, atol=1e-12
    )


def test_block_norms_bounded_by_one():
    rng = np.random.default_rng(13)
    d = hog_descriptor(rng.random((40, 40)))
    per_block = d.values.reshape(-1, 36)
    norms = np.linalg.norm(per_block, axis=1)
    assert np.all(norms <= 1.0 + 1e-12)


def test_window_shape_validation():
    with pytest.raises(ValueError):
        hog_descriptor(np.zeros((30, 32)))  # 30 not divisible by 8
    with pytest.raises(ValueError):
        hog_descriptor(np.zeros((8, 8)))  # single cell cannot hold a 2x2 block
    with pytest.raises(ValueError):
        hog_descriptor(np.zeros(64))
    with pytest.raises(ValueError):
        HogConfig(cell=0)
    with pytest.raises(ValueError):
        HogConfig(eps=0.0)


def test_descriptor_dataclass_dim():
    assert Descriptor(values=np.zeros(5)).dim == 5

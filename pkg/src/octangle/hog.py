"""Histogram-of-oriented-gradients descriptors for ROI windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HogConfig:
    cell: int = 8
    block: int = 2
    bins: int = 9
    block_stride: int = 1
    eps: float = 1e-6

    def __post_init__(self):
        if self.cell < 1 or self.block < 1 or self.bins < 1 or self.block_stride < 1:
            raise ValueError("cell, block, bins and block_stride must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.size


def descriptor_dim(shape: tuple[int, int], cfg: HogConfig) -> int:
    """Descriptor length for a window of the given shape."""
    cu, cv = _cell_grid(shape, cfg)
    bu = _n_blocks(cu, cfg)
    bv = _n_blocks(cv, cfg)
    return bu * bv * cfg.block * cfg.block * cfg.bins


def _cell_grid(shape: tuple[int, int], cfg: HogConfig) -> tuple[int, int]:
    H, W = shape
    if H % cfg.cell or W % cfg.cell:
        raise ValueError(f"window {H}x{W} not divisible by cell size {cfg.cell}")
    cu, cv = H // cfg.cell, W // cfg.cell
    if cu < cfg.block or cv < cfg.block:
        raise ValueError(f"window {H}x{W} holds fewer than {cfg.block} cells per side")
    return cu, cv


def _n_blocks(n_cells: int, cfg: HogConfig) -> int:
    return (n_cells - cfg.block) // cfg.block_stride + 1


def _gradients(window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients, one-sided at the borders."""
    gu = np.empty_like(window)
    gv = np.empty_like(window)
    gu[1:-1, :] = (window[2:, :] - window[:-2, :]) * 0.5
    gu[0, :] = window[1, :] - window[0, :]
    gu[-1, :] = window[-1, :] - window[-2, :]
    gv[:, 1:-1] = (window[:, 2:] - window[:, :-2]) * 0.5
    gv[:, 0] = window[:, 1] - window[:, 0]
    gv[:, -1] = window[:, -1] - window[:, -2]
    return gu, gv


def hog_descriptor(window: np.ndarray, cfg: HogConfig = HogConfig()) -> Descriptor:
    """HOG feature vector of a grayscale window.

    Unsigned orientations over [0, 180) split linearly between the two
    nearest bins; 8x8-pixel cell histograms grouped into overlapping 2x2
    blocks in raster order, each block L2-normalized as v/sqrt(|v|^2+eps^2).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError("window must be 2-D")
    cu, cv = _cell_grid(window.shape, cfg)
    gu, gv = _gradients(window)
    mag = np.hypot(gu, gv)
    angle = np.degrees(np.arctan2(gu, gv)) % 180.0

    # fractional bin coordinate; votes split between floor and the next bin
    x = angle * (cfg.bins / 180.0)
    lo = np.floor(x).astype(np.intp)
    frac = x - lo
    lo %= cfg.bins
    hi = (lo + 1) % cfg.bins

    H, W = window.shape
    cell_idx = (np.arange(H)[:, None] // cfg.cell) * cv + (np.arange(W)[None, :] // cfg.cell)
    flat_lo = cell_idx * cfg.bins + lo
    flat_hi = cell_idx * cfg.bins + hi
    n = cu * cv * cfg.bins
    hist = np.bincount(flat_lo.ravel(), weights=(mag * (1.0 - frac)).ravel(), minlength=n)
    hist += np.bincount(flat_hi.ravel(), weights=(mag * frac).ravel(), minlength=n)
    hist = hist.reshape(cu, cv, cfg.bins)

    # overlapping blocks in raster order, L2 normalization per block
    bu, bv = _n_blocks(cu, cfg), _n_blocks(cv, cfg)
    s = cfg.block_stride
    b = cfg.block
    out = np.empty((bu, bv, b * b * cfg.bins))
    for i in range(bu):
        for j in range(bv):
            vec = hist[i * s : i * s + b, j * s : j * s + b, :].ravel()
            out[i, j, :] = vec / np.sqrt(vec @ vec + cfg.eps * cfg.eps)
    return Descriptor(out.ravel())

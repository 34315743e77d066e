"""Dense gradient-orientation descriptors on a regular grid, and similarity maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

N_ORIENT = 8
N_CELLS = 4
LUMA = np.array([0.299, 0.587, 0.114])
# histogram mass below this is treated as a zero-gradient site
_ZERO_MASS = 1e-10


@dataclass(frozen=True)
class DescriptorMap:
    grid: np.ndarray        # (Hg, Wg, 128)
    stride: int
    patch: int
    norm_mode: str          # "rootsift" | "l2"

    @property
    def nonzero(self) -> np.ndarray:
        return np.any(self.grid != 0, axis=-1)

    @property
    def offset(self) -> int:
        """Pixel coordinate of the center of site (0, 0)."""
        return self.patch // 2


@dataclass(frozen=True)
class SimilarityMap:
    scores: np.ndarray      # (Hg, Wg)
    validity: np.ndarray    # (Hg, Wg) bool
    stride: int = 1
    offset: int = 0

    @property
    def shape(self):
        return self.scores.shape

    def site_pixels(self):
        """Row and column pixel indices of each grid site."""
        hg, wg = self.scores.shape
        return self.offset + self.stride * np.arange(hg), self.offset + self.stride * np.arange(wg)

    def sample_pixels(self, grid: np.ndarray) -> np.ndarray:
        """Nearest-neighbour sample of a full-resolution (H, W, ...) grid at the sites."""
        rows, cols = self.site_pixels()
        rows = np.clip(rows, 0, grid.shape[0] - 1)
        cols = np.clip(cols, 0, grid.shape[1] - 1)
        return grid[np.ix_(rows, cols)]


def to_gray(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., :3] @ LUMA


def _orientation_histograms(gray: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2 * np.pi) / (2 * np.pi / N_ORIENT)
    b0 = np.floor(theta)
    frac = theta - b0
    b0 = b0.astype(np.int64) % N_ORIENT
    b1 = (b0 + 1) % N_ORIENT
    hist = np.zeros(gray.shape + (N_ORIENT,))
    rr, cc = np.indices(gray.shape)
    np.add.at(hist, (rr, cc, b0), mag * (1.0 - frac))
    np.add.at(hist, (rr, cc, b1), mag * frac)
    return hist


def _box_sums(hist: np.ndarray, size: int) -> np.ndarray:
    """Sum over every size x size window; output[y, x] covers rows y..y+size-1."""
    c = np.cumsum(np.cumsum(hist, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0), (0, 0)))
    return c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]


def extract_dense(image, stride: int = 4, patch: int = 16, mode: str = "rootsift") -> DescriptorMap:
    """128-d descriptors (4x4 cells x 8 orientations) on a ``stride`` grid.

    ``mode="rootsift"`` L1-normalises, takes the square root and
    L2-normalises; ``mode="l2"`` only L2-normalises. Sites without any
    gradient keep an all-zero descriptor.
    """
    if mode not in ("rootsift", "l2"):
        raise ValueError(f"unknown norm mode {mode!r}")
    if patch <= 0 or patch % N_CELLS or patch % 2:
        raise ValueError("patch must be a positive multiple of 4")
    gray = to_gray(image)
    H, W = gray.shape
    if H < patch or W < patch:
        raise ValueError("image smaller than descriptor patch")
    cell = patch // N_CELLS
    # integral-image differences can leave tiny negative residues
    sums = np.maximum(_box_sums(_orientation_histograms(gray), cell), 0.0)
    hg = (H - patch) // stride + 1
    wg = (W - patch) // stride + 1
    ys = stride * np.arange(hg)[:, None] + cell * np.arange(N_CELLS)[None, :]   # (hg, 4)
    xs = stride * np.arange(wg)[:, None] + cell * np.arange(N_CELLS)[None, :]   # (wg, 4)
    desc = sums[ys[:, None, :, None], xs[None, :, None, :]]                     # (hg, wg, 4, 4, 8)
    desc = desc.reshape(hg, wg, N_CELLS * N_CELLS * N_ORIENT)

    mass = desc.sum(axis=-1, keepdims=True)
    zero = mass <= _ZERO_MASS
    if mode == "rootsift":
        desc = np.sqrt(desc / np.where(zero, 1.0, mass))
    norm = np.linalg.norm(desc, axis=-1, keepdims=True)
    desc = np.where(zero, 0.0, desc / np.where(zero, 1.0, norm))
    return DescriptorMap(desc, stride, patch, mode)


def _site_validity(a: DescriptorMap, b: DescriptorMap, pixel_validity) -> np.ndarray:
    if a.grid.shape != b.grid.shape or a.stride != b.stride or a.patch != b.patch:
        raise ValueError("descriptor maps have different shapes")
    valid = a.nonzero & b.nonzero
    if pixel_validity is not None:
        probe = SimilarityMap(np.zeros(valid.shape), valid, a.stride, a.offset)
        valid &= probe.sample_pixels(np.asarray(pixel_validity, dtype=bool))
    return valid


def similarity_inverse_distance(a: DescriptorMap, b: DescriptorMap, epsilon: float = 1e-6,
                                pixel_validity: Optional[np.ndarray] = None) -> SimilarityMap:
    """``1 / max(||a - b||, epsilon)`` per site.

    Sites are invalid where either descriptor is zero or, if given, where the
    rendered pixel under the site center is invalid.
    """
    valid = _site_validity(a, b, pixel_validity)
    dist = np.linalg.norm(a.grid - b.grid, axis=-1)
    scores = np.where(valid, 1.0 / np.maximum(dist, epsilon), 0.0)
    return SimilarityMap(scores, valid, a.stride, a.offset)


def similarity_cosine(a: DescriptorMap, b: DescriptorMap,
                      pixel_validity: Optional[np.ndarray] = None) -> SimilarityMap:
    valid = _site_validity(a, b, pixel_validity)
    scores = np.where(valid, np.clip(np.einsum("ijk,ijk->ij", a.grid, b.grid), -1.0, 1.0), 0.0)
    return SimilarityMap(scores, valid, a.stride, a.offset)

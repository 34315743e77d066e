"""Surface normals from depth by local plane fitting, and normal similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .descriptors import SimilarityMap
from .geometry import Intrinsics, depth_to_camera_points

MIN_FIT_POINTS = 6
# neighbours whose depth differs from the center by more than this fraction are dropped
DEPTH_JUMP_REL = 0.10


@dataclass(frozen=True)
class NormalMap:
    grid: np.ndarray        # (H, W, 3) camera frame, zero where invalid
    validity: np.ndarray    # (H, W) bool

    @classmethod
    def from_array(cls, normals) -> "NormalMap":
        """Wrap a raw (H, W, 3) array; zero or non-finite vectors become invalid."""
        n = np.asarray(normals, dtype=np.float64)
        norm = np.linalg.norm(n, axis=-1)
        valid = np.isfinite(norm) & (norm > 1e-6)
        grid = np.where(valid[..., None], n / np.where(valid, norm, 1.0)[..., None], 0.0)
        return cls(grid, valid)


def normals_from_depth(depth, k: Intrinsics, window: int = 5) -> NormalMap:
    """Fit a plane to the back-projected ``window x window`` neighbourhood of each pixel.

    The normal is the smallest-eigenvalue eigenvector of the neighbourhood
    covariance, flipped to face the camera. Pixels with fewer than six usable
    neighbours are invalid.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    d = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(d) & (d > 0)
    d = np.where(valid, d, 0.0)
    pts = depth_to_camera_points(d, k)
    r = window // 2
    pts_p = np.pad(pts, ((r, r), (r, r), (0, 0)))
    d_p = np.pad(d, r)
    v_p = np.pad(valid, r)
    nb_pts = sliding_window_view(pts_p, (window, window), axis=(0, 1))   # (H, W, 3, w, w)
    nb_d = sliding_window_view(d_p, (window, window))                    # (H, W, w, w)
    nb_v = sliding_window_view(v_p, (window, window))

    use = nb_v & (np.abs(nb_d - d[..., None, None]) <= DEPTH_JUMP_REL * d[..., None, None])
    use &= valid[..., None, None]
    cnt = use.sum(axis=(-2, -1))
    ok = cnt >= MIN_FIT_POINTS

    w = use[..., None, :, :].astype(np.float64)
    n_safe = np.maximum(cnt, 1)[..., None]
    mean = (nb_pts * w).sum(axis=(-2, -1)) / n_safe                     # (H, W, 3)
    c = (nb_pts - mean[..., None, None]) * w                             # (H, W, 3, w, w)
    cov = np.einsum("hwiab,hwjab->hwij", c, c) / n_safe[..., None]
    cov[~ok] = np.eye(3)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[..., :, 0]
    flip = np.einsum("hwi,hwi->hw", n, pts) > 0
    n = np.where(flip[..., None], -n, n)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n[~ok] = 0.0
    return NormalMap(n, ok)


def normal_similarity(nq: NormalMap, nd: NormalMap) -> SimilarityMap:
    """Per-pixel cosine between two normal maps."""
    if nq.grid.shape != nd.grid.shape:
        raise ValueError("normal maps have different shapes")
    valid = nq.validity & nd.validity
    s = np.clip(np.einsum("hwi,hwi->hw", nq.grid, nd.grid), -1.0, 1.0)
    return SimilarityMap(np.where(valid, s, 0.0), valid, 1, 0)

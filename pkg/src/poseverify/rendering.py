"""Point-cloud view synthesis with square splats and a z-buffer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .formats import INVALID_LABEL
from .geometry import Intrinsics, Pose

# z-buffer candidates within this distance of the nearest depth count as ties
DEPTH_TIE_M = 1e-6


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.positions)
        if np.shape(self.positions) != (n, 3) or np.shape(self.colors) != (n, 3):
            raise ValueError("positions and colors must be (N, 3)")
        if self.normals is not None:
            if np.shape(self.normals) != (n, 3):
                raise ValueError("normals must be (N, 3)")
            if n and np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must have length N")
        if n and not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite point coordinates")

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concatenate(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        if len(clouds) == 1:
            return clouds[0]
        has_n = all(c.normals is not None for c in clouds)
        has_l = all(c.labels is not None for c in clouds)
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.normals for c in clouds]) if has_n else None,
            np.concatenate([c.labels for c in clouds]) if has_l else None,
        )


@dataclass(frozen=True)
class RenderedView:
    color: np.ndarray           # (H, W, 3) float32, 0 where invalid
    depth: np.ndarray           # (H, W) float32, 0 where invalid
    validity: np.ndarray        # (H, W) bool
    normal: Optional[np.ndarray] = None   # (H, W, 3) camera frame
    label: Optional[np.ndarray] = None    # (H, W) uint8, 255 where invalid

    @property
    def shape(self):
        return self.depth.shape


def invalid_pixel_ratio(v: RenderedView) -> float:
    return float(np.count_nonzero(~v.validity)) / v.validity.size


def splat_fragments(cloud: PointCloud, pose: Pose, k: Intrinsics, splat_radius: int = 1):
    """Per-fragment ``(flat_pixel, depth, point_index)`` after culling and clipping.

    Points behind the camera are dropped, as are back-facing points when the
    cloud carries normals.
    """
    Xc = pose.apply(cloud.positions)
    z = Xc[:, 2]
    keep = z > 0
    if cloud.normals is not None:
        n_cam = cloud.normals @ pose.rotation.T
        keep &= np.einsum("ij,ij->i", n_cam, Xc) <= 0
    idx = np.flatnonzero(keep)
    Xc = Xc[idx]
    z = z[idx]
    with np.errstate(over="ignore", invalid="ignore"):
        u = k.fx * Xc[:, 0] / z + k.cx
        v = k.fy * Xc[:, 1] / z + k.cy
    r = int(splat_radius)
    near = (u > -r - 1) & (u < k.width + r) & (v > -r - 1) & (v < k.height + r)
    idx, z = idx[near], z[near]
    px = np.floor(u[near] + 0.5).astype(np.int64)
    py = np.floor(v[near] + 0.5).astype(np.int64)

    offs = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(offs, offs, indexing="ij")
    fx_ = (px[:, None] + dx.ravel()[None, :]).ravel()
    fy_ = (py[:, None] + dy.ravel()[None, :]).ravel()
    s = dx.size
    fz = np.repeat(z, s)
    fi = np.repeat(idx, s)
    inb = (fx_ >= 0) & (fx_ < k.width) & (fy_ >= 0) & (fy_ < k.height)
    return fy_[inb] * k.width + fx_[inb], fz[inb], fi[inb]


def zbuffer_winners(pix, depth, pidx, n_pixels: int) -> np.ndarray:
    """Winning point index per pixel (-1 where nothing landed).

    Nearest depth wins; candidates within ``DEPTH_TIE_M`` of it tie and the
    lowest point index is taken.
    """
    dmin = np.full(n_pixels, np.inf)
    np.minimum.at(dmin, pix, depth)
    eligible = depth <= dmin[pix] + DEPTH_TIE_M
    sentinel = np.iinfo(np.int64).max
    win = np.full(n_pixels, sentinel, dtype=np.int64)
    np.minimum.at(win, pix[eligible], pidx[eligible])
    win[win == sentinel] = -1
    return win


def render_view(cloud: PointCloud, pose: Pose, k: Intrinsics, splat_radius: int = 1) -> RenderedView:
    if len(cloud) == 0:
        raise ValueError("cannot render an empty point cloud")
    H, W = k.height, k.width
    pix, depth, pidx = splat_fragments(cloud, pose, k, splat_radius)
    win = zbuffer_winners(pix, depth, pidx, H * W)
    valid = win >= 0
    w = win[valid]

    color = np.zeros((H * W, 3), dtype=np.float32)
    color[valid] = cloud.colors[w]
    dep = np.zeros(H * W, dtype=np.float32)
    dep[valid] = pose.apply(cloud.positions[w])[:, 2]
    normal = None
    if cloud.normals is not None:
        normal = np.zeros((H * W, 3), dtype=np.float32)
        normal[valid] = cloud.normals[w] @ pose.rotation.T
        normal = normal.reshape(H, W, 3)
    label = None
    if cloud.labels is not None:
        label = np.full(H * W, INVALID_LABEL, dtype=np.uint8)
        label[valid] = cloud.labels[w]
        label = label.reshape(H, W)
    return RenderedView(color.reshape(H, W, 3), dep.reshape(H, W), valid.reshape(H, W), normal, label)


def render_merged(images, scans, g, db_image_id: str, pose: Pose, k: Intrinsics,
                  splat_radius: int = 1) -> RenderedView:
    """Render every scan linked to ``db_image_id`` in the scan graph into one z-buffer.

    ``images`` and ``scans`` map ids to records; scans are stacked in
    ``neighbors`` order so the parent scan wins exact ties.
    """
    from .scan_graph import neighbors

    if db_image_id not in images:
        raise KeyError(f"unknown database image {db_image_id!r}")
    scan_ids = neighbors(g, db_image_id)
    cloud = PointCloud.concatenate([scans[s].cloud for s in scan_ids])
    return render_view(cloud, pose, k, splat_radius)

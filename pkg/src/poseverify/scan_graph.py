"""Image-scan graph: which panoramic scans overlap each perspective database image."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Intrinsics, Pose
from .rendering import PointCloud, render_view

# a projected scan point is hidden when it lies this far (relative) behind the
# surface recorded in the database depth map
OCCLUSION_REL_TOL = 0.05


@dataclass(frozen=True)
class ScanRecord:
    scan_id: str
    cloud: PointCloud
    origin: Pose

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValueError(f"scan {self.scan_id} has an empty cloud")


@dataclass(frozen=True)
class DbImageRecord:
    image_id: str
    parent_scan: str
    pose: Pose
    intrinsics: Intrinsics
    depth: np.ndarray
    color: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.depth.shape != self.intrinsics.shape:
            raise ValueError(f"depth of {self.image_id} does not match intrinsics")


@dataclass(frozen=True)
class ScanGraph:
    edges: FrozenSet[Tuple[str, str, float]] = field(default_factory=frozenset)

    def images(self) -> List[str]:
        return sorted({e[0] for e in self.edges})

    def to_json(self) -> str:
        rows = sorted(self.edges, key=lambda e: (e[0], e[1]))
        return json.dumps({"edges": [{"image": i, "scan": s, "overlap": round(o, 6)} for i, s, o in rows]},
                          indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ScanGraph":
        data = json.loads(text)
        return cls(frozenset((e["image"], e["scan"], float(e["overlap"])) for e in data["edges"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ScanGraph":
        return cls.from_json(Path(path).read_text())


def scan_overlap(image: DbImageRecord, scan: ScanRecord, splat_radius: int = 1) -> float:
    """Fraction of the image's pixels covered by visible points of ``scan``.

    A pixel counts when the scan renders there and its depth is not behind
    the database depth map by more than ``OCCLUSION_REL_TOL``.
    """
    view = render_view(scan.cloud, image.pose, image.intrinsics, splat_radius)
    db_depth = np.asarray(image.depth, dtype=np.float64)
    visible = view.validity & (db_depth > 0) & (view.depth <= db_depth * (1.0 + OCCLUSION_REL_TOL))
    return float(np.count_nonzero(visible)) / visible.size


def nearest_scans(image: DbImageRecord, scans: Sequence[ScanRecord], k_nearest: int) -> List[ScanRecord]:
    c = image.pose.center
    keyed = sorted(scans, key=lambda s: (float(np.linalg.norm(s.origin.center - c)), s.scan_id))
    return keyed[:k_nearest]


def build_graph(images: Sequence[DbImageRecord], scans: Sequence[ScanRecord],
                k_nearest: int = 10, overlap_threshold: float = 0.10,
                splat_radius: int = 1) -> ScanGraph:
    if not scans:
        raise ValueError("scan list is empty")
    by_id = {s.scan_id: s for s in scans}
    edges = set()
    for img in images:
        if img.parent_scan not in by_id:
            raise KeyError(f"parent scan {img.parent_scan!r} of {img.image_id} missing")
        for scan in nearest_scans(img, scans, k_nearest):
            ov = scan_overlap(img, scan, splat_radius)
            if ov > overlap_threshold or scan.scan_id == img.parent_scan:
                edges.add((img.image_id, scan.scan_id, ov))
        if not any(e[0] == img.image_id and e[1] == img.parent_scan for e in edges):
            edges.add((img.image_id, img.parent_scan, scan_overlap(img, by_id[img.parent_scan], splat_radius)))
    return ScanGraph(frozenset(edges))


def neighbors(g: ScanGraph, image_id: str) -> List[str]:
    """Scan ids linked to ``image_id``, by descending overlap then ascending id."""
    rows = [(s, o) for i, s, o in g.edges if i == image_id]
    if not rows:
        raise KeyError(f"image {image_id!r} not in graph")
    return [s for s, _ in sorted(rows, key=lambda r: (-r[1], r[0]))]

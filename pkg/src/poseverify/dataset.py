"""Dataset directory layout: write a generated dataset, or read real data laid out the same way.

::

    manifest.json            intrinsics, ids, file paths, class-table path
    class_table.json         class id -> superclass
    poses/scans.txt          scanner poses
    poses/db_images.txt      database image poses
    poses/queries.txt        query ground-truth poses (optional per query)
    scans/<id>.ply           ASCII PLY: x y z nx ny nz red green blue label
    images/<id>.ppm          database and query colour images
    depth/<id>.pfm           depth in meters, 0 = invalid
    labels/<id>.pgm          class ids, 255 = invalid
    normals/<id>.pfm         optional query normal maps (camera frame)
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .formats import (FormatError, read_pfm, read_pgm, read_ply, read_pose_file, read_ppm, write_pfm,
                      write_pgm, write_ply, write_pose_file, write_ppm)
from .geometry import Intrinsics
from .rendering import PointCloud
from .scan_graph import DbImageRecord, ScanRecord
from .semantics import ClassTableError, load_class_table
from .synth import QueryRecord, SceneConfig, SyntheticDataset

LOGGER = logging.getLogger(__name__)

FORMAT_NAME = "poseverify-dataset"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


def save_dataset(ds: SyntheticDataset, root) -> Path:
    root = Path(root)
    for sub in ("poses", "scans", "images", "depth", "labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "class_table.json").write_text(ds.class_table.to_json() + "\n")

    scans = []
    for s in ds.scans:
        c = s.cloud
        n = len(c)
        normals = c.normals if c.normals is not None else np.zeros((n, 3))
        labels = c.labels if c.labels is not None else np.full(n, 255)
        path = f"scans/{s.scan_id}.ply"
        write_ply(root / path, c.positions, c.colors, normals, labels)
        scans.append({"id": s.scan_id, "cloud": path})
    write_pose_file(root / "poses/scans.txt", [(s.scan_id, s.origin) for s in ds.scans])

    images = []
    for d in ds.db_images:
        entry = {"id": d.image_id, "parent_scan": d.parent_scan,
                 "color": f"images/{d.image_id}.ppm", "depth": f"depth/{d.image_id}.pfm"}
        write_ppm(root / entry["color"], d.color)
        write_pfm(root / entry["depth"], d.depth)
        if d.labels is not None:
            entry["labels"] = f"labels/{d.image_id}.pgm"
            write_pgm(root / entry["labels"], d.labels)
        images.append(entry)
    write_pose_file(root / "poses/db_images.txt", [(d.image_id, d.pose) for d in ds.db_images])

    queries = []
    for q in ds.queries:
        entry = {"id": q.query_id, "color": f"images/{q.query_id}.ppm", "gain": q.gain}
        write_ppm(root / entry["color"], q.image)
        if q.depth is not None:
            entry["depth"] = f"depth/{q.query_id}.pfm"
            write_pfm(root / entry["depth"], q.depth)
        if q.labels is not None:
            entry["labels"] = f"labels/{q.query_id}.pgm"
            write_pgm(root / entry["labels"], q.labels)
        if q.normals is not None:
            (root / "normals").mkdir(exist_ok=True)
            entry["normals"] = f"normals/{q.query_id}.pfm"
            write_pfm(root / entry["normals"], q.normals)
        queries.append(entry)
    write_pose_file(root / "poses/queries.txt",
                    [(q.query_id, q.gt_pose) for q in ds.queries if q.gt_pose is not None])

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "intrinsics": ds.intrinsics.to_dict(),
        "class_table": "class_table.json",
        "poses": {"scans": "poses/scans.txt", "db_images": "poses/db_images.txt", "queries": "poses/queries.txt"},
        "scans": scans,
        "db_images": images,
        "queries": queries,
        "config": ds.config.to_dict() if ds.config is not None else None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


def _opt(root: Path, entry: dict, key: str, reader):
    return reader(root / entry[key]) if key in entry else None


def load_dataset(root) -> SyntheticDataset:
    """Read a dataset directory; raises ``DatasetError`` on missing or malformed content."""
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest in {root}: {exc}") from None
    if manifest.get("format") != FORMAT_NAME:
        raise DatasetError(f"{root} is not a {FORMAT_NAME} directory")
    try:
        k = Intrinsics.from_dict(manifest["intrinsics"])
        table = load_class_table(root / manifest["class_table"])
        pose_files = manifest["poses"]
        scan_poses = read_pose_file(root / pose_files["scans"])
        db_poses = read_pose_file(root / pose_files["db_images"])
        q_poses = read_pose_file(root / pose_files["queries"]) if "queries" in pose_files else {}

        scans = []
        for e in manifest["scans"]:
            ply = read_ply(root / e["cloud"])
            labels = ply.get("labels")
            cloud = PointCloud(ply["positions"], ply["colors"], ply.get("normals"),
                               labels.astype(np.uint8) if labels is not None else None)
            scans.append(ScanRecord(e["id"], cloud, scan_poses[e["id"]]))

        images = []
        for e in manifest["db_images"]:
            images.append(DbImageRecord(
                e["id"], e["parent_scan"], db_poses[e["id"]], k,
                read_pfm(root / e["depth"]), read_ppm(root / e["color"]),
                _opt(root, e, "labels", read_pgm)))

        queries = []
        for e in manifest["queries"]:
            queries.append(QueryRecord(
                e["id"], read_ppm(root / e["color"]),
                _opt(root, e, "depth", read_pfm), _opt(root, e, "labels", read_pgm),
                q_poses.get(e["id"]), k, float(e.get("gain", 1.0)), _opt(root, e, "normals", read_pfm)))
    except (OSError, KeyError, FormatError, ClassTableError, ValueError) as exc:
        raise DatasetError(f"bad dataset {root}: {exc}") from None

    scan_ids = {s.scan_id for s in scans}
    for d in images:
        if d.parent_scan not in scan_ids:
            raise DatasetError(f"image {d.image_id} references unknown scan {d.parent_scan}")
    cfg: Optional[SceneConfig] = None
    if manifest.get("config"):
        cfg = SceneConfig.from_dict(manifest["config"])
    return SyntheticDataset(k, scans, images, queries, table, cfg)

"""Superclass tables, informative-pixel masks and projective semantic consistency."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .formats import INVALID_LABEL
from .geometry import Intrinsics, Pose
from .rendering import PointCloud

SUPERCLASSES = ("people", "transient", "stable", "fixed", "outdoor")

# superclasses considered informative by each mask variant
_INFORMATIVE = {
    "A": frozenset({"stable", "fixed"}),
    "B": frozenset({"transient", "stable", "fixed", "outdoor"}),
    "C": frozenset({"stable", "fixed", "outdoor"}),
}


class ClassTableError(ValueError):
    pass


@dataclass(frozen=True)
class ClassTable:
    mapping: Mapping[int, str]

    def __post_init__(self):
        bad = {v for v in self.mapping.values() if v not in SUPERCLASSES}
        if bad:
            raise ClassTableError(f"unknown superclass names: {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, class_id: int) -> str:
        return self.mapping[int(class_id)]

    def to_json(self) -> str:
        return json.dumps({str(k): v for k, v in sorted(self.mapping.items())}, indent=1)


def _no_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ClassTableError(f"duplicate class id {key}")
        out[key] = value
    return out


def parse_class_table(text: str) -> ClassTable:
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ClassTableError(f"cannot parse class table: {exc}") from None
    if not isinstance(raw, dict):
        raise ClassTableError("class table must be a JSON object")
    mapping: Dict[int, str] = {}
    for key, value in raw.items():
        try:
            cid = int(key)
        except ValueError:
            raise ClassTableError(f"class id {key!r} is not an integer") from None
        if cid in mapping:
            raise ClassTableError(f"duplicate class id {cid}")
        if not 0 <= cid < INVALID_LABEL:
            raise ClassTableError(f"class id {cid} outside 0..254")
        mapping[cid] = value
    return ClassTable(mapping)


def load_class_table(path) -> ClassTable:
    return parse_class_table(Path(path).read_text())


def builtin_table(name: str = "ade20k") -> ClassTable:
    """``"ade20k"`` (150 classes) or ``"synthetic"`` (the generator's classes)."""
    fname = {"ade20k": "ade20k_superclasses.json", "synthetic": "synthetic_superclasses.json"}[name]
    return parse_class_table(resources.files("poseverify.data").joinpath(fname).read_text())


def ade20k_class_names() -> Dict[int, str]:
    raw = json.loads(resources.files("poseverify.data").joinpath("ade20k_class_names.json").read_text())
    return {int(k): v for k, v in raw.items()}


@dataclass(frozen=True)
class SemanticMask:
    grid: np.ndarray    # (H, W) bool, True = informative
    variant: str


def build_mask(labels, table: ClassTable, variant: str = "C") -> SemanticMask:
    """Mark pixels whose superclass the variant trusts.

    A keeps stable/fixed, B drops people only, C drops people and transient.
    The invalid label 255 stays informative.
    """
    if variant not in _INFORMATIVE:
        raise ValueError(f"unknown mask variant {variant!r}")
    lab = np.asarray(labels)
    ids = np.unique(lab)
    informative_ids = []
    for cid in ids:
        cid = int(cid)
        if cid == INVALID_LABEL:
            informative_ids.append(cid)
            continue
        if cid not in table.mapping:
            raise KeyError(f"label {cid} not in class table")
        if table.mapping[cid] in _INFORMATIVE[variant]:
            informative_ids.append(cid)
    return SemanticMask(np.isin(lab, informative_ids), variant)


def psc_score(cloud: PointCloud, pose: Pose, k: Intrinsics, query_labels) -> float:
    """Fraction of in-image projected points whose label matches the query pixel.

    No occlusion test. Points on invalid query pixels count but never match.
    """
    if cloud.labels is None:
        raise ValueError("PSC needs a labeled point cloud")
    lab = np.asarray(query_labels)
    Xc = pose.apply(cloud.positions)
    front = Xc[:, 2] > 0
    Xc = Xc[front]
    with np.errstate(over="ignore", invalid="ignore"):
        u = np.floor(k.fx * Xc[:, 0] / Xc[:, 2] + k.cx + 0.5)
        v = np.floor(k.fy * Xc[:, 1] / Xc[:, 2] + k.cy + 0.5)
    inb = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    n = int(np.count_nonzero(inb))
    if n == 0:
        return 0.0
    q = lab[v[inb].astype(np.int64), u[inb].astype(np.int64)]
    pl = np.asarray(cloud.labels)[front][inb]
    return float(np.count_nonzero((q == pl) & (q != INVALID_LABEL))) / n

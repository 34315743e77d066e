"""Candidate pose scoring (DensePV, DenseNV, DensePNV, +S variants, PSC, TrainPV) and ranking."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .descriptors import DescriptorMap, SimilarityMap, extract_dense, similarity_inverse_distance
from .geometry import Intrinsics, Pose, pose_error
from .normals import NormalMap, normal_similarity, normals_from_depth
from .rendering import PointCloud, RenderedView, render_view
from .scan_graph import DbImageRecord, ScanGraph, ScanRecord, neighbors
from .semantics import ClassTable, SemanticMask, build_mask, psc_score

METHODS = ("DensePV", "DensePV+S", "DenseNV", "DenseNV+S", "DensePNV", "DensePNV+S", "PSC", "TrainPV")
_BY_LOWER = {m.lower(): m for m in METHODS}


def canonical_method(name: str) -> str:
    try:
        return _BY_LOWER[name.lower()]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}") from None


@dataclass(frozen=True)
class Candidate:
    candidate_id: str
    pose: Pose
    source_db_image: str
    render: Optional[RenderedView] = None


@dataclass(frozen=True)
class QueryBundle:
    """Everything known about a query image at verification time."""

    query_id: str
    image: np.ndarray
    intrinsics: Intrinsics
    normals: Optional[NormalMap] = None
    labels: Optional[np.ndarray] = None

    @classmethod
    def from_record(cls, q, normal_window: int = 5) -> "QueryBundle":
        """Bundle a dataset query; normals come from a supplied map or from its depth."""
        normals = None
        if getattr(q, "normals", None) is not None:
            normals = NormalMap.from_array(q.normals)
        elif getattr(q, "depth", None) is not None:
            normals = normals_from_depth(q.depth, q.intrinsics, normal_window)
        return cls(q.query_id, q.image, q.intrinsics, normals, q.labels)


@dataclass
class SceneDatabase:
    images: Mapping[str, DbImageRecord]
    scans: Mapping[str, ScanRecord]
    graph: Optional[ScanGraph] = None
    _merged: Dict[tuple, PointCloud] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dataset(cls, ds, graph: Optional[ScanGraph] = None) -> "SceneDatabase":
        return cls(ds.image_index(), ds.scan_index(), graph)

    def cloud_for(self, db_image_id: str, use_scan_graph: bool) -> PointCloud:
        if db_image_id not in self.images:
            raise KeyError(f"unknown database image {db_image_id!r}")
        if use_scan_graph:
            if self.graph is None:
                raise ValueError("scan graph requested but none loaded")
            ids = tuple(neighbors(self.graph, db_image_id))
        else:
            ids = (self.images[db_image_id].parent_scan,)
        if ids not in self._merged:
            self._merged[ids] = PointCloud.concatenate([self.scans[s].cloud for s in ids])
        return self._merged[ids]


@dataclass
class VerifyConfig:
    use_scan_graph: bool = False
    mask_variant: str = "C"
    stride: int = 4
    patch: int = 16
    epsilon: float = 1e-6
    splat_radius: int = 1
    class_table: Optional[ClassTable] = None
    trainpv: Optional[object] = None     # trainable.TrainPV scorer


@dataclass(frozen=True)
class VerificationResult:
    method: str
    scores: Dict[str, Optional[float]]
    ranking: List[str]

    @property
    def best(self) -> str:
        return self.ranking[0]


def masked_median(s: SimilarityMap, semantic: Optional[SemanticMask] = None) -> Optional[float]:
    """Lower median over valid (and informative) sites; ``None`` if none qualify."""
    keep = np.asarray(s.validity, dtype=bool)
    if semantic is not None:
        keep = keep & s.sample_pixels(np.asarray(semantic.grid, dtype=bool))
    vals = np.sort(np.asarray(s.scores)[keep], kind="stable")
    if vals.size == 0:
        return None
    return float(vals[(vals.size - 1) // 2])


def pnv_weight(s_n):
    """Normal-consistency weight in [0.5, 1]."""
    return (1.0 + np.maximum(0.0, s_n)) / 2.0


def _query_descriptors(query, stride: int, patch: int) -> DescriptorMap:
    if isinstance(query, DescriptorMap):
        return query
    return extract_dense(query, stride, patch, "rootsift")


def _require_render(cand: Candidate) -> RenderedView:
    if cand.render is None:
        raise ValueError(f"candidate {cand.candidate_id} has not been rendered")
    return cand.render


def descriptor_similarity(query, cand: Candidate, stride: int = 4, patch: int = 16,
                          epsilon: float = 1e-6) -> SimilarityMap:
    r = _require_render(cand)
    qd = _query_descriptors(query, stride, patch)
    rd = extract_dense(r.color, qd.stride, qd.patch, "rootsift")
    return similarity_inverse_distance(qd, rd, epsilon, pixel_validity=r.validity)


def render_normals(r: RenderedView) -> NormalMap:
    if r.normal is None:
        raise ValueError("render carries no normals")
    m = NormalMap.from_array(r.normal)
    return NormalMap(m.grid, m.validity & r.validity)


def dense_pv(query, cand: Candidate, mask: Optional[SemanticMask] = None, *,
             stride: int = 4, patch: int = 16, epsilon: float = 1e-6) -> Optional[float]:
    """Median inverse descriptor distance between the query and the candidate render."""
    return masked_median(descriptor_similarity(query, cand, stride, patch, epsilon), mask)


def dense_nv(query_normals: NormalMap, cand: Candidate, mask: Optional[SemanticMask] = None) -> Optional[float]:
    return masked_median(normal_similarity(query_normals, render_normals(_require_render(cand))), mask)


def dense_pnv(query, query_normals: NormalMap, cand: Candidate, mask: Optional[SemanticMask] = None, *,
              stride: int = 4, patch: int = 16, epsilon: float = 1e-6) -> Optional[float]:
    """Median of descriptor similarity weighted by normal agreement.

    Sites where the normal similarity is undefined get the floor weight 0.5.
    """
    sd = descriptor_similarity(query, cand, stride, patch, epsilon)
    sn = normal_similarity(query_normals, render_normals(_require_render(cand)))
    sn_val = sd.sample_pixels(sn.scores)
    sn_ok = sd.sample_pixels(sn.validity)
    w = np.where(sn_ok, pnv_weight(sn_val), 0.5)
    weighted = SimilarityMap(np.where(sd.validity, w * sd.scores, 0.0), sd.validity, sd.stride, sd.offset)
    return masked_median(weighted, mask)


def render_candidate(cand: Candidate, db: SceneDatabase, k: Intrinsics, use_scan_graph: bool = False,
                     splat_radius: int = 1) -> Candidate:
    cloud = db.cloud_for(cand.source_db_image, use_scan_graph)
    return replace(cand, render=render_view(cloud, cand.pose, k, splat_radius))


def _sort_key(item):
    cid, score = item
    return (score is None, -(score if score is not None else 0.0), cid)


def rank_scores(scores: Mapping[str, Optional[float]]) -> List[str]:
    """Descending score, unscoreable last, candidate id ascending on ties."""
    return [cid for cid, _ in sorted(scores.items(), key=_sort_key)]


def score_candidate(method: str, query: QueryBundle, cand: Candidate, config: VerifyConfig,
                    db: Optional[SceneDatabase] = None, query_desc: Optional[DescriptorMap] = None,
                    mask: Optional[SemanticMask] = None) -> Optional[float]:
    method = canonical_method(method)
    if method == "PSC":
        if db is None:
            raise ValueError("PSC needs the scene database")
        if query.labels is None:
            raise ValueError("PSC needs query labels")
        cloud = db.cloud_for(cand.source_db_image, config.use_scan_graph)
        return psc_score(cloud, cand.pose, query.intrinsics, query.labels)
    if method == "TrainPV":
        if config.trainpv is None:
            raise ValueError("TrainPV needs a trained scorer in the config")
        return config.trainpv.score(query.image, _require_render(cand))
    use_mask = mask if method.endswith("+S") else None
    base = method.replace("+S", "")
    qd = query_desc if query_desc is not None else query.image
    kw = dict(stride=config.stride, patch=config.patch, epsilon=config.epsilon)
    if base == "DensePV":
        return dense_pv(qd, cand, use_mask, **kw)
    if query.normals is None:
        raise ValueError(f"{method} needs query normals")
    if base == "DenseNV":
        return dense_nv(query.normals, cand, use_mask)
    return dense_pnv(qd, query.normals, cand, use_mask, **kw)


def semantic_mask_for(query: QueryBundle, config: VerifyConfig) -> Optional[SemanticMask]:
    if query.labels is None or config.class_table is None:
        return None
    return build_mask(query.labels, config.class_table, config.mask_variant)


def rank_candidates(query: QueryBundle, candidates: Sequence[Candidate], method: str,
                    config: Optional[VerifyConfig] = None, db: Optional[SceneDatabase] = None,
                    workers: Optional[int] = None) -> VerificationResult:
    """Score every candidate with ``method`` and rank them.

    Candidates without a render are rendered from ``db`` (merged through the
    scan graph when ``config.use_scan_graph``).
    """
    if not candidates:
        raise ValueError("no candidates to rank")
    if len({c.candidate_id for c in candidates}) != len(candidates):
        raise ValueError("duplicate candidate ids")
    config = config or VerifyConfig()
    method = canonical_method(method)
    if method.endswith("+S") and (query.labels is None or config.class_table is None):
        raise ValueError(f"{method} needs query labels and a class table")
    mask = semantic_mask_for(query, config) if method.endswith("+S") else None
    query_desc = None
    if method in ("DensePV", "DensePV+S", "DensePNV", "DensePNV+S"):
        query_desc = extract_dense(query.image, config.stride, config.patch, "rootsift")

    def one(cand: Candidate):
        if cand.render is None and method != "PSC":
            if db is None:
                raise ValueError("unrendered candidate and no database")
            cand = render_candidate(cand, db, query.intrinsics, config.use_scan_graph, config.splat_radius)
        return cand.candidate_id, score_candidate(method, query, cand, config, db, query_desc, mask)

    n_workers = workers if workers is not None else int(os.environ.get("POSEVERIFY_THREADS", "1"))
    if n_workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            pairs = list(pool.map(one, candidates))
    else:
        pairs = [one(c) for c in candidates]
    scores = dict(pairs)
    return VerificationResult(method, scores, rank_scores(scores))


def oracle_select(choices: Sequence[Pose], gt: Pose) -> Pose:
    """Pick the choice closest to ``gt``: position first, then rotation, then input order."""
    if not choices:
        raise ValueError("oracle needs at least one pose")
    errs = [pose_error(p, gt) for p in choices]
    best = min(range(len(choices)), key=lambda i: (errs[i].position_m, errs[i].rotation_deg, i))
    return choices[best]

"""Pose verification by view synthesis: render candidate poses from scans and rank them against the query."""

__version__ = "0.1.0"

from .geometry import Intrinsics, Pose, PoseError, perturb_pose, pose_error, project, unproject  # noqa: E402
from .rendering import PointCloud, RenderedView, invalid_pixel_ratio, render_merged, render_view  # noqa: E402
from .scan_graph import DbImageRecord, ScanGraph, ScanRecord, build_graph, neighbors  # noqa: E402
from .descriptors import DescriptorMap, SimilarityMap, extract_dense  # noqa: E402
from .normals import NormalMap, normal_similarity, normals_from_depth  # noqa: E402
from .semantics import ClassTable, SemanticMask, build_mask, builtin_table, psc_score  # noqa: E402
from .verification import (METHODS, Candidate, QueryBundle, SceneDatabase, VerificationResult,  # noqa: E402
                           VerifyConfig, masked_median, oracle_select, rank_candidates)
from .evaluation import DEFAULT_THRESHOLDS, EvalReport, ThresholdPair, compare_with_oracle, evaluate  # noqa: E402
from .synth import SceneConfig, SyntheticDataset, gen_candidates, gen_scene  # noqa: E402

__all__ = [
    "Intrinsics", "Pose", "PoseError", "perturb_pose", "pose_error", "project", "unproject",
    "PointCloud", "RenderedView", "invalid_pixel_ratio", "render_merged", "render_view",
    "DbImageRecord", "ScanGraph", "ScanRecord", "build_graph", "neighbors",
    "DescriptorMap", "SimilarityMap", "extract_dense",
    "NormalMap", "normal_similarity", "normals_from_depth",
    "ClassTable", "SemanticMask", "build_mask", "builtin_table", "psc_score",
    "METHODS", "Candidate", "QueryBundle", "SceneDatabase", "VerificationResult", "VerifyConfig",
    "masked_median", "oracle_select", "rank_candidates",
    "DEFAULT_THRESHOLDS", "EvalReport", "ThresholdPair", "compare_with_oracle", "evaluate",
    "SceneConfig", "SyntheticDataset", "gen_candidates", "gen_scene",
]

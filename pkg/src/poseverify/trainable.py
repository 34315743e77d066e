"""Learned pose verification: frozen features, a small conv score regressor and a ranking loss."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .descriptors import SimilarityMap, extract_dense
from .geometry import Intrinsics, Pose, perturb_pose, project_points
from .rendering import PointCloud, RenderedView, render_view

LOGGER = logging.getLogger(__name__)

MAGIC = b"TPV1"
# lower bound on the minimum reprojection error before dividing by it
MIN_ERROR_FLOOR_PX = 1e-6


# ---------------------------------------------------------------------------
# convolution helpers (channel-first, single image)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> Tuple[np.ndarray, int, int]:
    """(C, H, W) -> (C*kh*kw, Ho*Wo) patch matrix."""
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]   # (C, Ho, Wo, kh, kw)
    C, Ho, Wo = win.shape[:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(C * kh * kw, Ho * Wo)
    return cols, Ho, Wo


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int], kh: int, kw: int, pad: int) -> np.ndarray:
    """Adjoint of ``_im2col`` for stride 1."""
    C, H, W = shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    c = cols.reshape(C, kh, kw, H, W)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + H, j:j + W] += c[:, i, j]
    return xp[:, pad:pad + H, pad:pad + W]


def _orthogonal_rows(rng, n_out: int, n_in: int, zero_mean: bool) -> np.ndarray:
    a = rng.standard_normal((n_in, n_out))
    if zero_mean:
        a -= a.mean(axis=0, keepdims=True)
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q.T


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int


DEFAULT_STACK = (ConvSpec(3, 16, 3, 2), ConvSpec(16, 32, 3, 2), ConvSpec(32, 32, 3, 1))


@dataclass(frozen=True)
class FeatureGrid:
    grid: np.ndarray        # (Hg, Wg, C), unit norm where valid
    validity: np.ndarray    # (Hg, Wg) bool
    stride: int
    offset: int


class FeatureExtractor:
    """Frozen dense feature extractor.

    ``kind="conv"`` is a seeded stack of random orthogonal 3x3 convolutions
    with ReLU and no biases; first-layer filters are zero-mean, so features
    ignore a global brightness offset and (after normalisation) a global
    gain. ``kind="rootsift"`` reuses the dense gradient descriptors.
    """

    def __init__(self, kind: str = "conv", seed: int = 0, stack: Sequence[ConvSpec] = DEFAULT_STACK,
                 stride: int = 4, patch: int = 16):
        if kind not in ("conv", "rootsift"):
            raise ValueError(f"unknown feature extractor {kind!r}")
        self.kind = kind
        self.seed = seed
        self.stack = tuple(stack)
        self.desc_stride = stride
        self.desc_patch = patch
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        for li, spec in enumerate(self.stack):
            w = _orthogonal_rows(rng, spec.out_ch, spec.in_ch * spec.kernel ** 2, zero_mean=li == 0)
            w = w.reshape(spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)
            w.setflags(write=False)
            self.weights.append(w)

    @property
    def total_stride(self) -> int:
        if self.kind == "rootsift":
            return self.desc_stride
        return int(np.prod([s.stride for s in self.stack]))

    @property
    def offset(self) -> int:
        return self.desc_patch // 2 if self.kind == "rootsift" else 0

    def config(self) -> dict:
        return {"kind": self.kind, "seed": self.seed}

    def __call__(self, image) -> FeatureGrid:
        return extract_features(image, self)


def extract_features(image, extractor: FeatureExtractor) -> FeatureGrid:
    img = np.asarray(image, dtype=np.float64)
    if extractor.kind == "rootsift":
        d = extract_dense(img, extractor.desc_stride, extractor.desc_patch, "rootsift")
        return FeatureGrid(d.grid, d.nonzero, d.stride, d.offset)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    if img.shape[0] < extractor.total_stride or img.shape[1] < extractor.total_stride:
        raise ValueError("image smaller than the feature extractor stride")
    x = img.transpose(2, 0, 1)
    for spec, w in zip(extractor.stack, extractor.weights):
        cols, ho, wo = _im2col(x, spec.kernel, spec.kernel, spec.stride, spec.kernel // 2)
        x = np.maximum(w.reshape(spec.out_ch, -1) @ cols, 0.0).reshape(spec.out_ch, ho, wo)
    f = x.transpose(1, 2, 0)
    norm = np.linalg.norm(f, axis=-1, keepdims=True)
    valid = norm[..., 0] > 1e-12
    f = np.where(valid[..., None], f / np.where(valid, norm[..., 0], 1.0)[..., None], 0.0)
    return FeatureGrid(f, valid, extractor.total_stride, extractor.offset)


def similarity_map(fq: FeatureGrid, fd: FeatureGrid, pixel_validity=None) -> SimilarityMap:
    """Per-site cosine similarity; invalid where either feature is, or the rendered pixel is."""
    if fq.grid.shape != fd.grid.shape:
        raise ValueError("feature grids have different shapes")
    valid = fq.validity & fd.validity
    out = SimilarityMap(np.zeros(valid.shape), valid, fq.stride, fq.offset)
    if pixel_validity is not None:
        valid = valid & out.sample_pixels(np.asarray(pixel_validity, dtype=bool))
    s = np.clip(np.einsum("ijk,ijk->ij", fq.grid, fd.grid), -1.0, 1.0)
    return SimilarityMap(np.where(valid, s, 0.0), valid, fq.stride, fq.offset)


# ---------------------------------------------------------------------------
# score regressor
# ---------------------------------------------------------------------------

REGRESSOR_CHANNELS = (1, 32, 32, 32, 1)
REGRESSOR_KERNEL = 5


class ScoreRegressor:
    """Four 5x5 convolutions (padding 2), each followed by ReLU, then global average pooling."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0 or b.shape != (w.shape[0],):
                raise ValueError("bad layer shape")
        for a, b in zip(self.weights, self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError("layer channel counts do not chain")
        if self.weights[0].shape[1] != 1 or self.weights[-1].shape[0] != 1:
            raise ValueError("regressor maps one channel to one channel")

    @classmethod
    def init(cls, seed: int = 0, channels: Sequence[int] = REGRESSOR_CHANNELS,
             kernel: int = REGRESSOR_KERNEL, last_bias: float = 1.0) -> "ScoreRegressor":
        """He-normal weights; zero biases except the output bias.

        The output bias keeps the final ReLU well inside its active range;
        with a near-zero start, early Adam steps can push every score to 0,
        a flat point of the loss the model never leaves.
        """
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for cin, cout in zip(channels[:-1], channels[1:]):
            std = np.sqrt(2.0 / (cin * kernel * kernel))
            ws.append(rng.standard_normal((cout, cin, kernel, kernel)) * std)
            bs.append(np.zeros(cout))
        bs[-1][:] = last_bias
        return cls(ws, bs)

    @classmethod
    def zeros(cls, channels: Sequence[int] = REGRESSOR_CHANNELS, kernel: int = REGRESSOR_KERNEL):
        return cls([np.zeros((o, i, kernel, kernel)) for i, o in zip(channels[:-1], channels[1:])],
                   [np.zeros(o) for o in channels[1:]])

    @property
    def kernel(self) -> int:
        return self.weights[0].shape[2]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ScoreRegressor":
        return ScoreRegressor([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or min(x.shape) < self.kernel:
            raise ValueError(f"similarity map must be at least {self.kernel}x{self.kernel}")
        return x

    def forward(self, x, keep: bool = False):
        """Scalar score for one (H, W) map; with ``keep`` also the activations needed by ``backward``."""
        x = self._check_input(x)
        H, W = x.shape
        k = self.kernel
        a = x[None]
        cache = []
        for w, b in zip(self.weights, self.biases):
            cols, _, _ = _im2col(a, k, k, 1, k // 2)
            z = w.reshape(w.shape[0], -1) @ cols + b[:, None]
            out = np.maximum(z, 0.0)
            if keep:
                cache.append((a.shape, cols, z))
            a = out.reshape(w.shape[0], H, W)
        s = float(a.mean())
        return (s, cache) if keep else s

    def backward(self, cache, ds: float) -> List[np.ndarray]:
        """Gradients ``[dW0, db0, dW1, db1, ...]`` of ``ds * score``."""
        k = self.kernel
        n_sites = cache[0][1].shape[1]
        grads: List[np.ndarray] = [None] * (2 * len(self.weights))
        dout = np.full((1, n_sites), ds / n_sites)
        for li in range(len(self.weights) - 1, -1, -1):
            in_shape, cols, z = cache[li]
            w = self.weights[li]
            dz = dout * (z > 0)
            grads[2 * li] = (dz @ cols.T).reshape(w.shape)
            grads[2 * li + 1] = dz.sum(axis=1)
            if li > 0:
                dcols = w.reshape(w.shape[0], -1).T @ dz
                dout = _col2im(dcols, in_shape, k, k, k // 2).reshape(in_shape[0], -1)
        return grads

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<I", len(self.weights))]
        for w, b in zip(self.weights, self.biases):
            parts.append(struct.pack("<4I", *w.shape))
            parts.append(w.astype("<f8").tobytes(order="C"))
            parts.append(b.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ScoreRegressor":
        if data[:4] != MAGIC:
            raise ValueError("not a TPV1 checkpoint")
        try:
            (n,) = struct.unpack_from("<I", data, 4)
            off = 8
            ws, bs = [], []
            for _ in range(n):
                shape = struct.unpack_from("<4I", data, off)
                off += 16
                cnt = int(np.prod(shape))
                ws.append(np.frombuffer(data, "<f8", cnt, off).reshape(shape).astype(np.float64))
                off += 8 * cnt
                bs.append(np.frombuffer(data, "<f8", shape[0], off).astype(np.float64))
                off += 8 * shape[0]
        except (struct.error, ValueError) as exc:
            raise ValueError(f"truncated checkpoint: {exc}") from None
        if off != len(data):
            raise ValueError("trailing bytes in checkpoint")
        return cls(ws, bs)

    @classmethod
    def load(cls, path) -> "ScoreRegressor":
        return cls.from_bytes(Path(path).read_bytes())


def regress_score(s: SimilarityMap, model: ScoreRegressor) -> float:
    return model.forward(np.where(s.validity, s.scores, 0.0))


# ---------------------------------------------------------------------------
# ranking loss
# ---------------------------------------------------------------------------

def reprojection_stats(cloud_positions, gt: Pose, est: Pose, k: Intrinsics) -> Tuple[float, int]:
    """Mean pixel displacement and the number of points it was averaged over."""
    X = np.asarray(cloud_positions, dtype=np.float64).reshape(-1, 3)
    if len(X) == 0:
        raise ValueError("empty point set")
    uv_g, _, f_g = project_points(X, gt, k)
    uv_e, _, f_e = project_points(X, est, k)
    both = f_g & f_e
    n = int(np.count_nonzero(both))
    if n == 0:
        return float("inf"), 0
    return float(np.linalg.norm(uv_g[both] - uv_e[both], axis=1).mean()), n


def reprojection_error(cloud, gt: Pose, est: Pose, k: Intrinsics) -> float:
    """Mean 2D displacement (px) of the cloud's points between the two poses.

    Points behind either camera are left out; if none remain the error is infinite.
    """
    pos = cloud.positions if isinstance(cloud, PointCloud) else cloud
    return reprojection_stats(pos, gt, est, k)[0]


def visible_points(cloud: PointCloud, pose: Pose, k: Intrinsics) -> np.ndarray:
    """Positions of points that project inside the image at ``pose``."""
    uv, _, front = project_points(cloud.positions, pose, k)
    with np.errstate(invalid="ignore"):
        inside = front & (uv[:, 0] >= -0.5) & (uv[:, 0] < k.width - 0.5) \
            & (uv[:, 1] >= -0.5) & (uv[:, 1] < k.height - 0.5)
    return cloud.positions[inside]


def target_distribution(errors) -> np.ndarray:
    """Softmax of the negated errors relative to the smallest one; infinite errors get zero mass."""
    r = np.asarray(errors, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("need at least two errors")
    if np.any(np.isnan(r)) or np.any(r < 0):
        raise ValueError("errors must be non-negative")
    finite = np.isfinite(r)
    if not finite.any():
        raise ValueError("all reprojection errors are infinite")
    rmin = max(float(r[finite].min()), MIN_ERROR_FLOOR_PX)
    rel = r[finite] / rmin
    e = np.exp(-(rel - rel.min()))
    p = np.zeros_like(r)
    p[finite] = e / e.sum()
    return p


def predicted_distribution(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) < 2:
        raise ValueError("need at least two scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite score")
    e = np.exp(s - s.max())
    return e / e.sum()


def loss(p, p_hat) -> float:
    """Cross-entropy ``-sum p log p_hat``; zero-probability targets contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(p_hat, dtype=np.float64)
    m = p > 0
    if np.any(q[m] <= 0):
        return float("inf")
    return float(-np.sum(p[m] * np.log(q[m])))


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    m = p > 0
    return float(-np.sum(p[m] * np.log(p[m])))


# ---------------------------------------------------------------------------
# training data
# ---------------------------------------------------------------------------

@dataclass
class TrainingGroup:
    """One query image with its candidate renders and their reprojection errors."""

    query_id: str
    query_image: np.ndarray
    renders: List[RenderedView]
    errors: np.ndarray
    poses: List[Pose] = field(default_factory=list)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if len(self.renders) < 2 or len(self.renders) != len(self.errors):
            raise ValueError("a group needs N >= 2 renders with one error each")
        if np.any(self.errors < 0) or not np.isfinite(self.errors).any():
            raise ValueError("errors must be >= 0 with at least one finite")

    @property
    def target(self) -> np.ndarray:
        return target_distribution(self.errors)


@dataclass
class CandidateTrainingSet:
    groups: List[TrainingGroup]

    def __len__(self) -> int:
        return len(self.groups)

    def split(self, n_first: int) -> Tuple["CandidateTrainingSet", "CandidateTrainingSet"]:
        return CandidateTrainingSet(self.groups[:n_first]), CandidateTrainingSet(self.groups[n_first:])


@dataclass(frozen=True)
class PreparedGroup:
    """Similarity maps (invalid sites zeroed) and target distribution for one group."""

    maps: Tuple[np.ndarray, ...]
    target: np.ndarray


def prepare_group(group: TrainingGroup, extractor: FeatureExtractor) -> PreparedGroup:
    fq = extract_features(group.query_image, extractor)
    maps = []
    for r in group.renders:
        s = similarity_map(fq, extract_features(r.color, extractor), r.validity)
        maps.append(np.where(s.validity, s.scores, 0.0))
    return PreparedGroup(tuple(maps), group.target)


def _candidate_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.SeedSequence([seed, 1]).generate_state(max(n, 1))[:n]


def gen_training_random(gt_pose: Pose, scan: PointCloud, k: Intrinsics, n_candidates: int, seed: int,
                        query_image, query_id: str = "", max_trans: float = 1.0,
                        max_rot: float = 20.0, splat_radius: int = 1) -> TrainingGroup:
    """GT plus ``n_candidates - 1`` random perturbations, rendered from ``scan``.

    Reprojection errors are measured over the scan points visible from the GT pose.
    """
    if n_candidates < 2:
        raise ValueError("need at least two candidates per group")
    cloud = getattr(scan, "cloud", scan)
    poses = [gt_pose] + [perturb_pose(gt_pose, max_trans, max_rot, int(s))
                         for s in _candidate_seeds(seed, n_candidates - 1)]
    pts = visible_points(cloud, gt_pose, k)
    if len(pts) == 0:
        pts = cloud.positions
    renders = [render_view(cloud, p, k, splat_radius) for p in poses]
    errors = [reprojection_error(pts, gt_pose, p, k) for p in poses]
    return TrainingGroup(query_id, np.asarray(query_image), renders, np.array(errors), poses)


def gen_training_from_candidates(candidate_file, dataset, graph=None, splat_radius: int = 1) -> List[TrainingGroup]:
    """Groups from an external candidate list (``query_id candidate_id db_image_id pose``).

    Rows repeating a (pose, db image) pair are dropped; groups left with fewer
    than two candidates are skipped with a warning.
    """
    from .formats import read_candidate_file
    from .verification import SceneDatabase

    rows = read_candidate_file(candidate_file)
    db = SceneDatabase.from_dataset(dataset, graph)
    images = db.images
    by_query: Dict[str, List[Tuple[Pose, str]]] = {}
    seen = set()
    for qid, _cid, dbid, pose in rows:
        dataset.query(qid)
        if dbid not in images:
            raise KeyError(f"unknown database image {dbid!r}")
        key = (qid, tuple(np.round(pose.quaternion_wxyz(), 12)), tuple(np.round(pose.translation, 12)), dbid)
        if key in seen:
            continue
        seen.add(key)
        by_query.setdefault(qid, []).append((pose, dbid))
    groups = []
    for qid in sorted(by_query):
        items = by_query[qid]
        if len(items) < 2:
            LOGGER.warning("query %s has %d candidate(s); group dropped", qid, len(items))
            continue
        q = dataset.query(qid)
        if q.gt_pose is None:
            raise KeyError(f"query {qid!r} has no ground-truth pose")
        renders, errors = [], []
        for pose, dbid in items:
            cloud = db.cloud_for(dbid, graph is not None)
            renders.append(render_view(cloud, pose, q.intrinsics, splat_radius))
            pts = visible_points(cloud, q.gt_pose, q.intrinsics)
            errors.append(reprojection_error(pts if len(pts) else cloud.positions, q.gt_pose, pose, q.intrinsics))
        groups.append(TrainingGroup(qid, q.image, renders, np.array(errors), [p for p, _ in items]))
    return groups


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

def group_loss(model: ScoreRegressor, g: PreparedGroup) -> float:
    scores = [model.forward(m) for m in g.maps]
    return loss(g.target, predicted_distribution(scores))


def backward(g: PreparedGroup, model: ScoreRegressor) -> Tuple[float, List[np.ndarray]]:
    """Loss of one group and its exact gradient w.r.t. every regressor parameter."""
    outs = [model.forward(m, keep=True) for m in g.maps]
    scores = np.array([s for s, _ in outs])
    p_hat = predicted_distribution(scores)
    L = loss(g.target, p_hat)
    dscores = p_hat - g.target
    grads = [np.zeros_like(p) for p in model.params()]
    for (_, cache), ds in zip(outs, dscores):
        if ds == 0.0:
            continue
        for acc, gi in zip(grads, model.backward(cache, float(ds))):
            acc += gi
    return L, grads


def mean_loss(model: ScoreRegressor, groups: Sequence[PreparedGroup]) -> float:
    return float(np.mean([group_loss(model, g) for g in groups]))


@dataclass
class TrainResult:
    model: ScoreRegressor
    epoch_losses: List[float]
    lr: float
    seed: int


class Adam:
    def __init__(self, params: List[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(dataset, epochs: int = 10, lr: float = 1e-5, betas=(0.9, 0.999), eps: float = 1e-8,
          seed: int = 0, model: Optional[ScoreRegressor] = None,
          extractor: Optional[FeatureExtractor] = None) -> TrainResult:
    """Adam on one group at a time, groups visited in a seeded random order each epoch.

    ``dataset`` is a ``CandidateTrainingSet`` or a list of training or
    prepared groups. ``epoch_losses`` holds the mean training loss per epoch.
    """
    groups = dataset.groups if isinstance(dataset, CandidateTrainingSet) else list(dataset)
    if not groups:
        raise ValueError("empty training set")
    extractor = extractor or FeatureExtractor()
    prepared = [g if isinstance(g, PreparedGroup) else prepare_group(g, extractor) for g in groups]
    model = (model or ScoreRegressor.init(seed)).copy()
    opt = Adam(model.params(), lr, betas, eps)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(prepared)):
            L, grads = backward(prepared[i], model)
            total += L
            opt.step(grads)
        history.append(total / len(prepared))
        LOGGER.info("epoch %d mean loss %.6f", epoch + 1, history[-1])
    return TrainResult(model, history, lr, seed)


class TrainPV:
    """Scorer pairing a frozen extractor with a trained regressor."""

    def __init__(self, model: ScoreRegressor, extractor: Optional[FeatureExtractor] = None):
        self.model = model
        self.extractor = extractor or FeatureExtractor()

    def score(self, query_image, render: RenderedView) -> float:
        fq = extract_features(query_image, self.extractor)
        s = similarity_map(fq, extract_features(render.color, self.extractor), render.validity)
        return regress_score(s, self.model)

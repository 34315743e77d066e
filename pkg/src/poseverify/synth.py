"""Deterministic synthetic indoor scenes.

A scene is a set of one-sided axis-aligned quads (room shell, furniture,
partition walls) plus ellipsoid "people". Scans are produced by casting
rays from scanner positions; database cutouts and queries are exact
per-pixel ray casts, so depth maps lie on the generating surfaces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .formats import INVALID_LABEL
from .geometry import Intrinsics, Pose, perturb_pose, pixel_rays, pose_error
from .rendering import PointCloud
from .scan_graph import DbImageRecord, ScanRecord
from .semantics import ClassTable, builtin_table

LOGGER = logging.getLogger(__name__)

# ADE20K class ids used by the generator
WALL, FLOOR, CEILING, CABINET, PERSON, TABLE, CHAIR, SOFA, BOX = 0, 3, 5, 10, 12, 15, 19, 23, 41
STABLE_CLASSES = (TABLE, SOFA, CABINET)
TRANSIENT_CLASSES = (CHAIR, BOX)

BASE_GRAY = 0.4
TEXTURE_AMPLITUDE = 0.25
FINE_SPACING_M = 0.15
COARSE_SPACING_M = 0.5


class SceneError(ValueError):
    pass


# ---------------------------------------------------------------------------
# textures
# ---------------------------------------------------------------------------

def _bilinear(lattice: np.ndarray, a: np.ndarray, b: np.ndarray, spacing: float) -> np.ndarray:
    fa = np.clip(a / spacing, 0, lattice.shape[0] - 1.000001)
    fb = np.clip(b / spacing, 0, lattice.shape[1] - 1.000001)
    i, j = np.floor(fa).astype(int), np.floor(fb).astype(int)
    ta, tb = fa - i, fb - j
    if lattice.ndim == 3:
        ta, tb = ta[:, None], tb[:, None]
    return ((1 - ta) * (1 - tb) * lattice[i, j] + ta * (1 - tb) * lattice[i + 1, j]
            + (1 - ta) * tb * lattice[i, j + 1] + ta * tb * lattice[i + 1, j + 1])


@dataclass(frozen=True)
class Texture:
    """Value-noise albedo; ``density`` is the fraction of surface carrying texture.

    At density 0 every surface has the same flat gray.
    """

    seed: int
    uid: int
    density: float
    extent: Tuple[float, float]

    def colors(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.uid])
        offset = rng.uniform(-0.1, 0.1, size=3)
        nf = (int(np.ceil(self.extent[0] / FINE_SPACING_M)) + 2, int(np.ceil(self.extent[1] / FINE_SPACING_M)) + 2)
        nc = (int(np.ceil(self.extent[0] / COARSE_SPACING_M)) + 2, int(np.ceil(self.extent[1] / COARSE_SPACING_M)) + 2)
        fine = rng.uniform(-1.0, 1.0, size=nf + (3,))
        coarse = rng.uniform(0.0, 1.0, size=nc)
        d = float(self.density)
        mask = np.clip((1.05 * d - _bilinear(coarse, a, b, COARSE_SPACING_M)) / 0.05, 0.0, 1.0)
        col = BASE_GRAY + d * offset + mask[:, None] * TEXTURE_AMPLITUDE * _bilinear(fine, a, b, FINE_SPACING_M)
        return np.clip(col, 0.0, 1.0)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quad:
    """Axis-aligned rectangle visible only from the side its normal points to."""

    axis: int
    value: float
    lo: Tuple[float, float]
    hi: Tuple[float, float]
    sign: int
    label: int
    texture: Texture

    @property
    def in_plane(self) -> Tuple[int, int]:
        return tuple(i for i in range(3) if i != self.axis)

    def normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = self.sign
        return n

    def intersect(self, O: np.ndarray, D: np.ndarray) -> np.ndarray:
        a0, a1 = self.in_plane
        dz = D[:, self.axis]
        front = dz * self.sign < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.value - O[:, self.axis]) / dz
        p0 = O[:, a0] + t * D[:, a0]
        p1 = O[:, a1] + t * D[:, a1]
        hit = front & (t > 1e-9) & (p0 >= self.lo[0]) & (p0 <= self.hi[0]) & (p1 >= self.lo[1]) & (p1 <= self.hi[1])
        return np.where(hit, t, np.inf)

    def surface(self, P: np.ndarray):
        a0, a1 = self.in_plane
        cols = self.texture.colors(P[:, a0] - self.lo[0], P[:, a1] - self.lo[1])
        return np.broadcast_to(self.normal(), P.shape), cols

    def contains(self, p) -> bool:
        return False


@dataclass(frozen=True)
class Ellipsoid:
    center: Tuple[float, float, float]
    radii: Tuple[float, float, float]
    label: int
    texture: Texture

    def intersect(self, O: np.ndarray, D: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        r = np.asarray(self.radii)
        o = (O - c) / r
        d = D / r
        A = np.einsum("ij,ij->i", d, d)
        B = np.einsum("ij,ij->i", o, d)
        C = np.einsum("ij,ij->i", o, o) - 1.0
        disc = B * B - A * C
        ok = (disc >= 0) & (C > 0)
        t = (-B - np.sqrt(np.where(ok, disc, 0.0))) / A
        return np.where(ok & (t > 1e-9), t, np.inf)

    def surface(self, P: np.ndarray):
        c = np.asarray(self.center)
        r = np.asarray(self.radii)
        n = (P - c) / (r * r)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        az = np.arctan2(P[:, 1] - c[1], P[:, 0] - c[0]) + np.pi
        a = az * 0.5 * (r[0] + r[1])
        b = P[:, 2] - (c[2] - r[2])
        return n, self.texture.colors(a, b)

    def contains(self, p) -> bool:
        q = (np.asarray(p) - np.asarray(self.center)) / np.asarray(self.radii)
        return float(q @ q) <= 1.0


@dataclass(frozen=True)
class Box:
    """Solid axis-aligned box rendered by its outward faces (bottom face omitted)."""

    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]
    label: int
    uid: int

    def quads(self, seed: int, density: float, with_bottom: bool = False) -> List[Quad]:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        out = []
        for axis in range(3):
            a0, a1 = [i for i in range(3) if i != axis]
            ext = (hi[a0] - lo[a0], hi[a1] - lo[a1])
            for k, (val, sign) in enumerate(((lo[axis], -1), (hi[axis], 1))):
                if axis == 2 and sign == -1 and not with_bottom:
                    continue
                tex = Texture(seed, self.uid * 16 + axis * 2 + k, density, ext)
                out.append(Quad(axis, float(val), (lo[a0], lo[a1]), (hi[a0], hi[a1]), sign, self.label, tex))
        return out

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= np.asarray(self.lo) - margin) and np.all(p <= np.asarray(self.hi) + margin))


def room_quads(lo, hi, seed: int, density: float, uid: int) -> List[Quad]:
    """Inward-facing shell of a box room."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out = []
    for axis in range(3):
        a0, a1 = [i for i in range(3) if i != axis]
        ext = (hi[a0] - lo[a0], hi[a1] - lo[a1])
        for k, (val, sign) in enumerate(((lo[axis], 1), (hi[axis], -1))):
            label = WALL if axis < 2 else (FLOOR if sign == 1 else CEILING)
            tex = Texture(seed, uid * 16 + axis * 2 + k, density, ext)
            out.append(Quad(axis, float(val), (lo[a0], lo[a1]), (hi[a0], hi[a1]), sign, label, tex))
    return out


@dataclass
class Scene:
    primitives: list = field(default_factory=list)

    def cast(self, O, D):
        """Nearest hit for each ray: ``(t, points, normals, colors, labels)``.

        Rays that miss get ``t = inf``, zero color/normal and the invalid label.
        """
        D = np.asarray(D, dtype=np.float64).reshape(-1, 3)
        O = np.broadcast_to(np.asarray(O, dtype=np.float64), D.shape)
        n = len(D)
        best = np.full(n, np.inf)
        which = np.full(n, -1)
        for i, prim in enumerate(self.primitives):
            t = prim.intersect(O, D)
            closer = t < best
            best[closer] = t[closer]
            which[closer] = i
        hit = which >= 0
        P = O + np.where(hit, best, 0.0)[:, None] * D
        normals = np.zeros((n, 3))
        colors = np.zeros((n, 3))
        labels = np.full(n, INVALID_LABEL, dtype=np.int64)
        for i in np.unique(which[hit]):
            sel = which == i
            prim = self.primitives[i]
            nn, cc = prim.surface(P[sel])
            normals[sel] = nn
            colors[sel] = cc
            labels[sel] = prim.label
        return best, P, normals, colors, labels

    def inside_solid(self, p) -> bool:
        return any(prim.contains(p) for prim in self.primitives if isinstance(prim, Ellipsoid))


def sphere_directions(resolution_deg: float) -> np.ndarray:
    """Unit directions on a latitude/longitude grid with roughly uniform spacing."""
    res = np.radians(resolution_deg)
    n_el = int(round(np.pi / res))
    dirs = []
    for i in range(n_el):
        el = -np.pi / 2 + (i + 0.5) * np.pi / n_el
        n_az = max(1, int(round(2 * np.pi * np.cos(el) / res)))
        az = (np.arange(n_az) + 0.5 * (i % 2)) * 2 * np.pi / n_az
        ce = np.cos(el)
        dirs.append(np.stack([ce * np.cos(az), ce * np.sin(az), np.full(n_az, np.sin(el))], axis=1))
    return np.concatenate(dirs)


def scan_scene(scene: Scene, origin, resolution_deg: float) -> PointCloud:
    """Emulate a panoramic laser scan: every ray's first hit becomes a point."""
    D = sphere_directions(resolution_deg)
    t, P, nrm, col, lab = scene.cast(np.asarray(origin, float), D)
    hit = np.isfinite(t)
    return PointCloud(P[hit], col[hit], nrm[hit], lab[hit])


@dataclass(frozen=True)
class RayImage:
    color: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    normals: np.ndarray   # camera frame


def raycast_image(scene: Scene, pose: Pose, k: Intrinsics) -> RayImage:
    """Exact per-pixel render. Ray directions have unit camera z, so t is depth."""
    rays = pixel_rays(k).reshape(-1, 3)
    D = rays @ pose.rotation          # camera -> world for row vectors
    t, _, nrm, col, lab = scene.cast(pose.center, D)
    hit = np.isfinite(t)
    H, W = k.height, k.width
    depth = np.where(hit, t, 0.0).reshape(H, W).astype(np.float32)
    color = col.reshape(H, W, 3).astype(np.float32)
    normals = (nrm @ pose.rotation.T).reshape(H, W, 3).astype(np.float32)
    return RayImage(color, depth, lab.reshape(H, W).astype(np.uint8), normals)


# ---------------------------------------------------------------------------
# scene configuration and dataset generation
# ---------------------------------------------------------------------------

@dataclass
class SceneConfig:
    room_size: Tuple[float, float, float] = (6.0, 5.0, 2.8)
    texture_density: float = 0.7
    n_stable: int = 2
    n_transient: int = 3
    churn_prob: float = 0.0
    n_people: int = 0
    gain_range: Tuple[float, float] = (1.0, 1.0)
    scan_positions: Optional[List[Tuple[float, float, float]]] = None
    n_scans: int = 1
    partition: bool = False
    scan_resolution_deg: float = 0.5
    db_images_per_scan: int = 6
    n_queries: int = 5
    # explicit query poses as [qw, qx, qy, qz, tx, ty, tz] (camera-from-world); overrides n_queries
    query_poses: Optional[List[List[float]]] = None
    query_margin_m: float = 0.8
    image_size: Tuple[int, int] = (80, 60)
    focal_px: float = 60.0
    seed: int = 0

    def validate(self) -> None:
        if any(s <= 0.5 for s in self.room_size):
            raise SceneError("degenerate room: every dimension must exceed 0.5 m")
        if not 0.0 <= self.texture_density <= 1.0:
            raise SceneError("texture_density must lie in [0, 1]")
        if not 0.0 <= self.churn_prob <= 1.0:
            raise SceneError("churn_prob must lie in [0, 1]")
        if self.gain_range[0] <= 0 or self.gain_range[1] < self.gain_range[0]:
            raise SceneError("invalid gain range")
        if self.seed is None:
            raise SceneError("seed is mandatory")
        for p in self.resolved_scan_positions():
            if not all(0 < p[i] < self.room_size[i] for i in range(3)):
                raise SceneError(f"scan position {p} outside the room")
        for row in self.query_poses or ():
            if len(row) != 7:
                raise SceneError("query poses need 7 values: qw qx qy qz tx ty tz")
            c = Pose.from_quaternion(*row).center
            if not all(0 < c[i] < self.room_size[i] for i in range(3)):
                raise SceneError(f"query camera {tuple(c)} outside the room")

    def resolved_scan_positions(self) -> List[Tuple[float, float, float]]:
        if self.scan_positions is not None:
            return [tuple(map(float, p)) for p in self.scan_positions]
        Lx, Ly, _ = self.room_size
        xs = [(i + 0.5) * Lx / self.n_scans for i in range(self.n_scans)]
        return [(x, 0.5 * Ly, 1.5) for x in xs]

    def intrinsics(self) -> Intrinsics:
        w, h = self.image_size
        return Intrinsics(self.focal_px, self.focal_px, (w - 1) / 2.0, (h - 1) / 2.0, w, h)

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SceneError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("room_size", "gain_range", "image_size"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    image: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    gt_pose: Optional[Pose]
    intrinsics: Intrinsics
    gain: float = 1.0
    normals: Optional[np.ndarray] = None   # externally supplied normal map, camera frame


@dataclass
class SyntheticDataset:
    intrinsics: Intrinsics
    scans: List[ScanRecord]
    db_images: List[DbImageRecord]
    queries: List[QueryRecord]
    class_table: ClassTable
    config: Optional[SceneConfig] = None

    def scan(self, scan_id: str) -> ScanRecord:
        return self.scan_index()[scan_id]

    def scan_index(self) -> Dict[str, ScanRecord]:
        return {s.scan_id: s for s in self.scans}

    def image_index(self) -> Dict[str, DbImageRecord]:
        return {d.image_id: d for d in self.db_images}

    def query(self, query_id: str) -> QueryRecord:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise KeyError(f"unknown query {query_id!r}")

    def nearest_db_image(self, pose: Pose) -> str:
        def key(d: DbImageRecord):
            e = pose_error(pose, d.pose)
            return (round(e.position_m, 9), round(e.rotation_deg, 9), d.image_id)
        return min(self.db_images, key=key).image_id


def _random_box(rng, room, size_lo, size_hi, label, uid, avoid, margin=0.3, tries=200) -> Optional[Box]:
    Lx, Ly, _ = room
    for _ in range(tries):
        sx, sy, sz = rng.uniform(size_lo, size_hi)
        x0 = rng.uniform(0.1, Lx - sx - 0.1)
        y0 = rng.uniform(0.1, Ly - sy - 0.1)
        box = Box((x0, y0, 0.0), (x0 + sx, y0 + sy, sz), label, uid)
        if not any(box.contains(p, margin) for p in avoid):
            return box
    return None


def _query_rotation(rng) -> np.ndarray:
    yaw = rng.uniform(0, 360)
    pitch = rng.uniform(-10, 10)
    roll = rng.uniform(-5, 5)
    # camera axes for yaw 0: looking along +x, image x along -y, image y along -z
    base = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    turn = Rotation.from_euler("ZYX", [yaw, 0, 0], degrees=True).as_matrix()
    tilt = Rotation.from_euler("ZYX", [roll, 0, pitch], degrees=True).as_matrix()
    return tilt @ base @ turn.T


def _person_in_view(rng, room, center, R, uid, seed, density, margin=0.35) -> Optional[Ellipsoid]:
    view = R.T @ np.array([0.0, 0.0, 1.0])
    heading = np.arctan2(view[1], view[0])
    for _ in range(100):
        ang = heading + np.radians(rng.uniform(-25, 25))
        dist = rng.uniform(1.5, 3.0)
        x = center[0] + dist * np.cos(ang)
        y = center[1] + dist * np.sin(ang)
        if margin < x < room[0] - margin and margin < y < room[1] - margin:
            height = rng.uniform(1.55, 1.85)
            radii = (0.25, 0.2, height / 2)
            tex = Texture(seed, 100000 + uid, density, (2 * np.pi * 0.22, height))
            return Ellipsoid((x, y, height / 2), radii, PERSON, tex)
    return None


def _render_query(cfg: SceneConfig, qrng, room, static, moved, pose: Pose, c, R, qi: int,
                  k: Intrinsics) -> RayImage:
    """Ray-cast a query at ``pose`` (center ``c``, rotation ``R``) with its epoch's objects and people."""
    people = []
    for pi in range(cfg.n_people):
        person = _person_in_view(qrng, room, c, R, qi * 16 + pi, cfg.seed, cfg.texture_density)
        if person is not None and not person.contains(c):
            people.append(person)
    q_scene = Scene(static + [q for b in moved for q in b.quads(cfg.seed, cfg.texture_density)] + people)
    return raycast_image(q_scene, pose, k)


def _place_query(cfg: SceneConfig, qrng, room, solids, static, moved, qi: int, k: Intrinsics):
    """Sample a free camera pose that sees mostly surfaces at least 1 m away."""
    for _ in range(200):
        c = np.array([qrng.uniform(cfg.query_margin_m, room[0] - cfg.query_margin_m),
                      qrng.uniform(cfg.query_margin_m, room[1] - cfg.query_margin_m),
                      qrng.uniform(1.2, 1.7)])
        R = _query_rotation(qrng)
        if any(b.contains(c, 0.4) for b in solids + moved):
            continue
        pose = Pose.from_center(R, c)
        ri = _render_query(cfg, qrng, room, static, moved, pose, c, R, qi, k)
        valid = ri.depth > 0
        if valid.mean() < 0.99 or np.median(ri.depth[valid]) < 1.0:
            continue
        return pose, ri
    raise SceneError("could not place a query camera")


def gen_scene(cfg: SceneConfig) -> SyntheticDataset:
    """Build scans, database cutouts and queries for one synthetic room."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    room = tuple(float(s) for s in cfg.room_size)
    dens = cfg.texture_density
    k = cfg.intrinsics()
    scan_pos = [np.asarray(p) for p in cfg.resolved_scan_positions()]

    static: List = room_quads((0, 0, 0), room, cfg.seed, dens, uid=1)
    solids: List[Box] = []
    if cfg.partition:
        x = room[0] / 2
        part = Box((x - 0.05, 0.0, 0.0), (x + 0.05, 0.6 * room[1], room[2]), WALL, uid=2)
        solids.append(part)
        static += part.quads(cfg.seed, dens)
    for i in range(cfg.n_stable):
        label = STABLE_CLASSES[i % len(STABLE_CLASSES)]
        box = _random_box(rng, room, (0.6, 0.5, 0.45), (1.6, 1.0, 1.0), label, 10 + i, scan_pos, margin=0.6)
        if box is not None:
            solids.append(box)
            static += box.quads(cfg.seed, dens)
    transient: List[Box] = []
    for i in range(cfg.n_transient):
        label = TRANSIENT_CLASSES[i % len(TRANSIENT_CLASSES)]
        box = _random_box(rng, room, (0.3, 0.3, 0.4), (0.6, 0.6, 0.9), label, 50 + i, scan_pos, margin=0.5)
        if box is not None:
            transient.append(box)

    db_scene = Scene(static + [q for b in transient for q in b.quads(cfg.seed, dens)])
    table = builtin_table("synthetic")

    scans, db_images = [], []
    for si, p in enumerate(scan_pos):
        if any(b.contains(p) for b in solids + transient):
            raise SceneError(f"scan position {tuple(p)} inside an object")
        sid = f"scan{si:02d}"
        cloud = scan_scene(db_scene, p, cfg.scan_resolution_deg)
        scans.append(ScanRecord(sid, cloud, Pose.from_center(np.eye(3), p)))
        for j in range(cfg.db_images_per_scan):
            yaw = 360.0 * j / cfg.db_images_per_scan
            base = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
            R = base @ Rotation.from_euler("Z", yaw, degrees=True).as_matrix().T
            pose = Pose.from_center(R, p)
            ri = raycast_image(db_scene, pose, k)
            db_images.append(DbImageRecord(f"{sid}_img{j:02d}", sid, pose, k, ri.depth, ri.color, ri.labels))

    queries = []
    qrng = np.random.default_rng([cfg.seed, 7])
    fixed = [Pose.from_quaternion(*row) for row in cfg.query_poses] if cfg.query_poses is not None else None
    for qi in range(len(fixed) if fixed is not None else cfg.n_queries):
        # per-query epoch: transient churn and people
        moved: List[Box] = []
        for b in transient:
            if qrng.uniform() < cfg.churn_prob:
                if qrng.uniform() < 0.5:
                    continue
                size_lo = np.subtract(b.hi, b.lo)
                nb = _random_box(qrng, room, size_lo, size_lo + 1e-9, b.label, b.uid, scan_pos, margin=0.3)
                if nb is not None:
                    moved.append(nb)
                continue
            moved.append(b)
        if fixed is not None:
            pose = fixed[qi]
            ri = _render_query(cfg, qrng, room, static, moved, pose, pose.center, pose.rotation, qi, k)
        else:
            pose, ri = _place_query(cfg, qrng, room, solids, static, moved, qi, k)
        gain = float(qrng.uniform(*cfg.gain_range))
        image = np.clip(ri.color * gain, 0.0, 1.0).astype(np.float32)
        queries.append(QueryRecord(f"q{qi:03d}", image, ri.depth, ri.labels, pose, k, gain))

    return SyntheticDataset(k, scans, db_images, queries, table, cfg)


# ---------------------------------------------------------------------------
# candidates
# ---------------------------------------------------------------------------

def gen_candidates(dataset: SyntheticDataset, query_id: str, n: int = 10, max_trans: float = 1.0,
                   max_rot: float = 20.0, seed: int = 0, include_gt: bool = True):
    """GT pose plus ``n - 1`` random perturbations, in a seeded random order.

    Candidate ids follow list order (``c00``, ``c01``, ...), so the GT is
    not systematically first. Each candidate is attributed to the database
    image nearest its own pose. With ``include_gt=False`` all ``n`` are
    perturbations, like the output of an imperfect pose estimator.
    """
    from .verification import Candidate

    if n < 1:
        raise ValueError("need at least one candidate")
    q = dataset.query(query_id)
    if q.gt_pose is None:
        raise KeyError(f"query {query_id!r} has no ground-truth pose")
    ss = np.random.SeedSequence([seed, n])
    n_pert = n - 1 if include_gt else n
    seeds = ss.generate_state(max(n_pert, 1))
    poses = [perturb_pose(q.gt_pose, max_trans, max_rot, int(s)) for s in seeds[:n_pert]]
    if include_gt:
        poses = [q.gt_pose] + poses
    order = np.random.default_rng(ss.spawn(1)[0]).permutation(n)
    return [Candidate(f"c{i:02d}", poses[j], dataset.nearest_db_image(poses[j])) for i, j in enumerate(order)]

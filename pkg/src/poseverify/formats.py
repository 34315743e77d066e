"""Readers and writers for the on-disk dataset formats.

* color: binary PPM (P6, 8 bit)
* depth: PFM grayscale, little-endian float32, meters, 0 = invalid
* normals: PFM 3-channel, components in [-1, 1]
* labels: binary PGM (P5, 8 bit), 255 = invalid
* poses: text, ``image_id qw qx qy qz tx ty tz`` (camera-from-world)
* scans: ASCII PLY with ``x y z nx ny nz red green blue label``
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np

from .geometry import Pose

PathLike = Union[str, Path]

INVALID_LABEL = 255


class FormatError(ValueError):
    pass


def _read_pnm_header(data: bytes, magic: bytes) -> Tuple[int, int, int, int]:
    if not data.startswith(magic):
        raise FormatError(f"expected {magic!r} file")
    # magic, width, height, maxval separated by whitespace; '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        m = re.match(rb"\d+", data[pos:])
        if m is None:
            raise FormatError("malformed PNM header")
        tokens.append(int(m.group()))
        pos += len(m.group())
    pos += 1  # single whitespace before raster
    w, h, maxval = tokens
    if maxval != 255:
        raise FormatError("only 8-bit PNM supported")
    return w, h, maxval, pos


def to_uint8(color) -> np.ndarray:
    return np.clip(np.floor(np.asarray(color, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_ppm(path: PathLike, color) -> None:
    img = to_uint8(color)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, _, pos = _read_pnm_header(data, b"P6")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return (raster.reshape(h, w, 3).astype(np.float32) / 255.0)


def write_pgm(path: PathLike, labels) -> None:
    lab = np.asarray(labels)
    if lab.min(initial=0) < 0 or lab.max(initial=0) > 255:
        raise FormatError("labels must fit in 8 bits")
    h, w = lab.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(lab.astype(np.uint8)).tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, _, pos = _read_pnm_header(data, b"P5")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def write_pfm(path: PathLike, array) -> None:
    """Write a 1- or 3-channel float map; PFM stores rows bottom to top."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        header = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = b"PF"
    else:
        raise FormatError("PFM supports (H, W) or (H, W, 3) arrays")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise FormatError("not a PFM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        raster = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return raster.reshape(shape)[::-1].astype(np.float32)


def read_pose_file(path: PathLike) -> Dict[str, Pose]:
    poses: Dict[str, Pose] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 fields")
        try:
            poses[parts[0]] = Pose.from_quaternion(*map(float, parts[1:]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return poses


def format_pose(pose: Pose) -> str:
    q = pose.quaternion_wxyz()
    vals = list(q) + list(pose.translation)
    return " ".join(f"{v:.12g}" for v in vals)


def write_pose_file(path: PathLike, poses: Iterable[Tuple[str, Pose]], comment: str = "") -> None:
    lines = ["# image_id qw qx qy qz tx ty tz (camera-from-world)"]
    if comment:
        lines.append(f"# {comment}")
    lines += [f"{name} {format_pose(p)}" for name, p in poses]
    Path(path).write_text("\n".join(lines) + "\n")


def read_candidate_file(path: PathLike) -> List[Tuple[str, str, str, Pose]]:
    """Rows of ``query_id candidate_id db_image_id qw qx qy qz tx ty tz``."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 10:
            raise FormatError(f"{path}:{lineno}: expected 10 fields")
        rows.append((parts[0], parts[1], parts[2], Pose.from_quaternion(*map(float, parts[3:]))))
    return rows


def write_candidate_file(path: PathLike, rows: Iterable[Tuple[str, str, str, Pose]]) -> None:
    lines = ["# query_id candidate_id db_image_id qw qx qy qz tx ty tz (camera-from-world)"]
    lines += [f"{q} {c} {d} {format_pose(p)}" for q, c, d, p in rows]
    Path(path).write_text("\n".join(lines) + "\n")


_PLY_PROPS = ["x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "label"]


def write_ply(path: PathLike, positions, colors, normals, labels) -> None:
    n = len(positions)
    header = ["ply", "format ascii 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in ("x", "y", "z", "nx", "ny", "nz")]
    header += [f"property uchar {p}" for p in ("red", "green", "blue", "label")]
    header.append("end_header")
    table = np.column_stack([
        np.asarray(positions, dtype=np.float64), np.asarray(normals, dtype=np.float64),
        to_uint8(colors).astype(np.float64), np.asarray(labels, dtype=np.float64),
    ])
    with open(path, "w") as f:
        f.write("\n".join(header) + "\n")
        np.savetxt(f, table, fmt=["%.6f"] * 6 + ["%d"] * 4)


def read_ply(path: PathLike) -> Dict[str, np.ndarray]:
    """Read an ASCII PLY written in the dataset layout.

    Returns positions, colors (in [0, 1]), normals and labels; normals and
    labels are omitted when the file lacks those properties.
    """
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise FormatError("not a PLY file")
        props: List[str] = []
        n = None
        for line in f:
            line = line.strip()
            if line.startswith("format") and "ascii" not in line:
                raise FormatError("only ASCII PLY supported")
            if line.startswith("element vertex"):
                n = int(line.split()[2])
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if n is None:
            raise FormatError("PLY without vertex element")
        table = np.loadtxt(f, dtype=np.float64, ndmin=2, max_rows=n) if n else np.zeros((0, len(props)))
    col = {p: i for i, p in enumerate(props)}
    for p in ("x", "y", "z", "red", "green", "blue"):
        if p not in col:
            raise FormatError(f"PLY missing property {p}")
    out = {
        "positions": table[:, [col["x"], col["y"], col["z"]]],
        "colors": table[:, [col["red"], col["green"], col["blue"]]] / 255.0,
    }
    if all(p in col for p in ("nx", "ny", "nz")):
        nrm = table[:, [col["nx"], col["ny"], col["nz"]]]
        out["normals"] = nrm / np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-12)
    if "label" in col:
        out["labels"] = table[:, col["label"]].astype(np.int64)
    return out

"""Point cloud data model, ASCII file I/O, sampling, normalization, jitter, normals.

Every operation here is a pure function of its inputs plus an explicit seed,
so concurrent use is safe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateCloud,
    EmptyCloud,
    ParseError,
    TooFewPoints,
    UnsupportedFormat,
)

FORMATS = ("xyz", "off", "ply")


@dataclass
class PointCloud:
    """Raw 3D points with optional per-point unit normals and ground-truth labels."""

    points: np.ndarray  # (N, 3) float64, meters
    normals: np.ndarray | None = None  # (N, 3) unit vectors
    gt_labels: np.ndarray | None = None  # (N,) int class ids
    id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("normals length mismatch")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
        if self.gt_labels is not None:
            self.gt_labels = np.asarray(self.gt_labels, dtype=np.int64).reshape(-1)
            if len(self.gt_labels) != len(self.points):
                raise ValueError("gt_labels length mismatch")

    def __len__(self):
        return len(self.points)


@dataclass
class ObjectSample:
    """Fixed-size, centered, unit-sphere-normalized object cloud fed to the encoder."""

    points: np.ndarray  # (S, 3)
    source_id: str = ""
    source_box: object = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


def _fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _infer_format(path: Path) -> str:
    ext = path.suffix.lower().lstrip(".")
    if ext in FORMATS:
        return ext
    raise UnsupportedFormat(f"cannot infer format from extension of {path}")


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Load an ASCII point cloud file (XYZ, OFF, or ascii PLY).

    Vertex order is preserved. OFF faces are ignored. XYZ may carry a 4th
    integer column parsed as a ground-truth label.
    """
    path = Path(path)
    fmt = (fmt or _infer_format(path)).lower()
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unknown format {fmt!r}")
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    if fmt == "xyz":
        cloud = _parse_xyz(path, lines)
    elif fmt == "off":
        cloud = _parse_off(path, lines)
    else:
        cloud = _parse_ply(path, lines)
    cloud.id = path.stem
    return cloud


def _parse_xyz(path, lines) -> PointCloud:
    pts, labels = [], []
    for i, line in enumerate(lines, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) not in (3, 4):
            raise ParseError(path, i, f"expected 3 or 4 columns, got {len(parts)}")
        try:
            pts.append([float(v) for v in parts[:3]])
        except ValueError as e:
            raise ParseError(path, i, str(e)) from None
        if len(parts) == 4:
            try:
                labels.append(int(parts[3]))
            except ValueError as e:
                raise ParseError(path, i, str(e)) from None
    if labels and len(labels) != len(pts):
        raise ParseError(path, len(lines), "label column present on only some lines")
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3),
                      gt_labels=np.array(labels) if labels else None)


def _parse_off(path, lines) -> PointCloud:
    rows = [(i, ln.strip()) for i, ln in enumerate(lines, start=1)
            if ln.strip() and not ln.strip().startswith("#")]
    if not rows:
        raise ParseError(path, 1, "empty OFF file")
    idx = 0
    header = rows[idx][1]
    if header.startswith("OFF"):
        rest = header[3:].strip()
        idx += 1
        if rest:  # counts folded onto the OFF line
            count_row = (rows[0][0], rest)
        else:
            if idx >= len(rows):
                raise ParseError(path, rows[-1][0], "missing count line")
            count_row = rows[idx]
            idx += 1
    else:
        raise ParseError(path, rows[0][0], "missing OFF header")
    try:
        counts = count_row[1].split()
        n_verts = int(counts[0])
    except (ValueError, IndexError):
        raise ParseError(path, count_row[0], "bad count line") from None
    if idx + n_verts > len(rows):
        raise ParseError(path, rows[-1][0], f"expected {n_verts} vertices")
    pts = []
    for line_no, s in rows[idx:idx + n_verts]:
        parts = s.split()
        if len(parts) < 3:
            raise ParseError(path, line_no, "vertex line needs 3 coordinates")
        try:
            pts.append([float(v) for v in parts[:3]])
        except ValueError as e:
            raise ParseError(path, line_no, str(e)) from None
    for line_no, s in rows[idx + n_verts:]:
        parts = s.split()
        if parts and parts[0] not in ("3",):
            warnings.warn(f"{path}:{line_no}: non-triangle face ignored")
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3))


def _parse_ply(path, lines) -> PointCloud:
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing ply magic")
    props = []
    n_verts = None
    body_start = None
    in_vertex_element = False
    for i, line in enumerate(lines[1:], start=2):
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise UnsupportedFormat(f"{path}: binary PLY not supported")
        elif parts[0] == "element":
            in_vertex_element = parts[1] == "vertex"
            if in_vertex_element:
                n_verts = int(parts[2])
        elif parts[0] == "property" and in_vertex_element:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i
            break
    if n_verts is None or body_start is None:
        raise ParseError(path, len(lines), "incomplete PLY header")
    for req in ("x", "y", "z"):
        if req not in props:
            raise ParseError(path, body_start, f"missing vertex property {req}")
    have_normals = all(p in props for p in ("nx", "ny", "nz"))
    have_label = "label" in props
    col = {p: j for j, p in enumerate(props)}
    pts, normals, labels = [], [], []
    row_lines = [ln for ln in lines[body_start:] if ln.strip()]
    if len(row_lines) < n_verts:
        raise ParseError(path, len(lines), f"expected {n_verts} vertex rows")
    for off, line in enumerate(row_lines[:n_verts]):
        parts = line.split()
        try:
            pts.append([float(parts[col["x"]]), float(parts[col["y"]]),
                        float(parts[col["z"]])])
            if have_normals:
                normals.append([float(parts[col["nx"]]), float(parts[col["ny"]]),
                                float(parts[col["nz"]])])
            if have_label:
                labels.append(int(float(parts[col["label"]])))
        except (ValueError, IndexError) as e:
            raise ParseError(path, body_start + 1 + off, str(e)) from None
    return PointCloud(
        np.array(pts, dtype=np.float64).reshape(-1, 3),
        normals=np.array(normals) if have_normals else None,
        gt_labels=np.array(labels) if have_label else None,
    )


def save_cloud(cloud: PointCloud, path, fmt: str | None = None) -> None:
    """Write a cloud in XYZ, OFF, or ascii PLY at full float64 precision."""
    path = Path(path)
    fmt = (fmt or _infer_format(path)).lower()
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unknown format {fmt!r}")
    out = []
    if fmt == "xyz":
        for i, p in enumerate(cloud.points):
            row = " ".join(_fmt_float(v) for v in p)
            if cloud.gt_labels is not None:
                row += f" {cloud.gt_labels[i]}"
            out.append(row)
    elif fmt == "off":
        out.append("OFF")
        out.append(f"{len(cloud)} 0 0")
        for p in cloud.points:
            out.append(" ".join(_fmt_float(v) for v in p))
    else:
        out.append("ply")
        out.append("format ascii 1.0")
        out.append(f"element vertex {len(cloud)}")
        for name in ("x", "y", "z"):
            out.append(f"property float64 {name}")
        if cloud.normals is not None:
            for name in ("nx", "ny", "nz"):
                out.append(f"property float64 {name}")
        if cloud.gt_labels is not None:
            out.append("property int label")
        out.append("end_header")
        for i, p in enumerate(cloud.points):
            row = " ".join(_fmt_float(v) for v in p)
            if cloud.normals is not None:
                row += " " + " ".join(_fmt_float(v) for v in cloud.normals[i])
            if cloud.gt_labels is not None:
                row += f" {cloud.gt_labels[i]}"
            out.append(row)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


def sample_points(cloud: PointCloud, count: int, seed: int = 0) -> PointCloud:
    """Sample exactly `count` points.

    With at least `count` points available, uses farthest-point sampling
    started from the point nearest the centroid; with fewer, repeats points
    by seeded uniform resampling. Deterministic for fixed (cloud, count, seed).
    """
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("cannot sample from an empty cloud")
    if count <= 0:
        raise ValueError("count must be positive")
    if n >= count:
        idx = _farthest_point_indices(cloud.points, count)
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=count)
    return PointCloud(
        cloud.points[idx],
        normals=cloud.normals[idx] if cloud.normals is not None else None,
        gt_labels=cloud.gt_labels[idx] if cloud.gt_labels is not None else None,
        id=cloud.id,
    )


def _farthest_point_indices(points: np.ndarray, count: int) -> np.ndarray:
    centroid = points.mean(axis=0)
    start = int(np.argmin(np.linalg.norm(points - centroid, axis=1)))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))  # argmax breaks ties by lowest index
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def normalize_object(cloud: PointCloud) -> ObjectSample:
    """Center at the centroid and scale so the farthest point has norm 1."""
    pts = cloud.points - cloud.points.mean(axis=0)
    scale = np.linalg.norm(pts, axis=1).max()
    if scale == 0.0:
        raise DegenerateCloud(f"all points identical in {cloud.id!r}")
    return ObjectSample(pts / scale, source_id=cloud.id)


def apply_jitter(cloud: PointCloud, sigma: float, seed: int = 0) -> PointCloud:
    """Perturb every coordinate with independent N(0, sigma^2) noise."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        pts = cloud.points.copy()
    else:
        rng = np.random.default_rng(seed)
        pts = cloud.points + rng.normal(0.0, sigma, size=cloud.points.shape)
    return PointCloud(pts, normals=cloud.normals, gt_labels=cloud.gt_labels,
                      id=cloud.id)


def _orient_normal(n: np.ndarray) -> np.ndarray:
    # deterministic sign: z >= 0; if z == 0 then y >= 0; if y == 0 then x >= 0
    if n[2] < 0:
        return -n
    if n[2] == 0:
        if n[1] < 0:
            return -n
        if n[1] == 0 and n[0] < 0:
            return -n
    return n


def estimate_normals(cloud: PointCloud, k: int = 12) -> PointCloud:
    """Attach per-point normals from PCA over each point's k nearest neighbors."""
    n = len(cloud)
    if n < k + 1:
        raise TooFewPoints(f"need at least {k + 1} points, have {n}")
    tree = cKDTree(cloud.points)
    _, nbrs = tree.query(cloud.points, k=k + 1)
    normals = np.empty((n, 3))
    for i in range(n):
        nb = cloud.points[nbrs[i]]
        cov = np.cov(nb.T, bias=True)
        w, v = np.linalg.eigh(cov)
        normals[i] = _orient_normal(v[:, 0])
    return PointCloud(cloud.points, normals=normals, gt_labels=cloud.gt_labels,
                      id=cloud.id)

"""Deterministic synthetic shapes: plane patches, spheres, boxes, cylinders,
at object level and composed into scenes with exact ground-truth boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import OverlapError
from .gss import Box3, iou3d
from .pointset import PointCloud

KINDS = ("plane", "sphere", "box", "cylinder")


@dataclass
class ShapeSpec:
    kind: str
    size: float = 1.0  # plane: side; sphere: radius; box: edge; cylinder: radius
    height: float = 1.0  # cylinder only
    noise_sigma: float = 0.0
    points: int = 256
    rotation: tuple = (0.0, 0.0, 0.0)  # xyz Euler angles, radians
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.points < 50:
            raise ValueError("shapes need at least 50 points to survive "
                             "region growing")
        for v in (self.size, self.height, self.noise_sigma,
                  *self.rotation, *self.translation):
            if not np.isfinite(v):
                raise ValueError("shape parameters must be finite")


def class_id(kind: str) -> int:
    return KINDS.index(kind)


def _surface_points(spec: ShapeSpec, rng) -> np.ndarray:
    n = spec.points
    if spec.kind == "plane":
        xy = rng.uniform(-spec.size / 2, spec.size / 2, size=(n, 2))
        return np.column_stack([xy, np.zeros(n)])
    if spec.kind == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return spec.size * v
    if spec.kind == "box":
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-spec.size / 2, spec.size / 2, size=(n, 2))
        pts = np.empty((n, 3))
        half = spec.size / 2
        axis = face // 2
        sign = np.where(face % 2 == 0, -half, half)
        for i in range(n):
            others = [a for a in range(3) if a != axis[i]]
            pts[i, axis[i]] = sign[i]
            pts[i, others[0]] = uv[i, 0]
            pts[i, others[1]] = uv[i, 1]
        return pts
    # cylinder: lateral surface
    theta = rng.uniform(0, 2 * np.pi, size=n)
    z = rng.uniform(-spec.height / 2, spec.height / 2, size=n)
    return np.column_stack([spec.size * np.cos(theta),
                            spec.size * np.sin(theta), z])


def gen_object(spec: ShapeSpec, seed: int = 0) -> tuple[PointCloud, int]:
    """Sample a noisy shape surface; returns (cloud, class id)."""
    rng = np.random.default_rng((seed, class_id(spec.kind)))
    pts = _surface_points(spec, rng)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0, spec.noise_sigma, size=pts.shape)
    rot = Rotation.from_euler("xyz", spec.rotation)
    pts = pts @ rot.as_matrix().T + np.array(spec.translation)
    cloud = PointCloud(pts, id=f"{spec.kind}-{seed}")
    return cloud, class_id(spec.kind)


def gen_scene(specs: list, seed: int = 0, floor_size: float = 0.0,
              floor_points: int = 500, require_disjoint: bool = False):
    """Compose posed objects (plus an optional floor plane) into one scene.

    Returns (scene cloud with per-point gt labels, list of (Box3, class id)).
    The floor carries the UNLABELED sentinel and no gt box.
    """
    if not specs:
        raise ValueError("gen_scene needs at least one shape spec")
    all_pts = []
    all_labels = []
    gt = []
    for i, spec in enumerate(specs):
        cloud, cls = gen_object(spec, seed=seed * 1000 + i)
        all_pts.append(cloud.points)
        all_labels.append(np.full(len(cloud), cls, dtype=np.int64))
        gt.append((Box3.of_points(cloud.points), cls))
    if require_disjoint:
        for i in range(len(gt)):
            for j in range(i + 1, len(gt)):
                if iou3d(gt[i][0], gt[j][0]) > 0:
                    raise OverlapError(f"objects {i} and {j} overlap")
    if floor_size > 0:
        rng = np.random.default_rng((seed, 999))
        xy = rng.uniform(-floor_size / 2, floor_size / 2,
                         size=(floor_points, 2))
        floor = np.column_stack([xy, np.zeros(floor_points)])
        all_pts.append(floor)
        all_labels.append(np.full(floor_points, -1, dtype=np.int64))
    scene = PointCloud(np.vstack(all_pts),
                       gt_labels=np.concatenate(all_labels),
                       id=f"scene-{seed}")
    return scene, gt


def object_dataset(n_per_class: int, kinds=("plane", "sphere", "box"),
                   noise_sigma: float = 0.01, points: int = 256,
                   seed: int = 0, randomize_pose: bool = True):
    """A labeled object-level dataset: list of (PointCloud, class id)."""
    rng = np.random.default_rng(seed)
    out = []
    for kind in kinds:
        for i in range(n_per_class):
            rot = tuple(rng.uniform(0, 2 * np.pi, 3)) if randomize_pose \
                else (0.0, 0.0, 0.0)
            spec = ShapeSpec(kind, noise_sigma=noise_sigma, points=points,
                             rotation=rot)
            cloud, cls = gen_object(spec, seed=int(rng.integers(2 ** 31)))
            cloud.id = f"{kind}-{i}"
            out.append((cloud, cls))
    return out

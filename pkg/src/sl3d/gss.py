"""Geometric selective search: region growing, hierarchical grouping, 3D NMS.

Turns a scene-level cloud into axis-aligned box proposals. Planar regions are
detected by greedy region growing over a k-NN graph, merged bottom-up by a
size + volume similarity score, and deduplicated with greedy NMS.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import MissingNormals, NoRegions, ZeroSceneVolume
from .pointset import PointCloud, apply_jitter, estimate_normals


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box given by min and max corners."""

    min_corner: tuple
    max_corner: tuple

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box corners must be finite")
        if np.any(lo > hi):
            raise ValueError("min_corner must be <= max_corner componentwise")
        object.__setattr__(self, "min_corner", tuple(lo))
        object.__setattr__(self, "max_corner", tuple(hi))

    @property
    def volume(self) -> float:
        lo = np.array(self.min_corner)
        hi = np.array(self.max_corner)
        return float(np.prod(hi - lo))

    @staticmethod
    def of_points(points: np.ndarray) -> "Box3":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return Box3(tuple(points.min(axis=0)), tuple(points.max(axis=0)))

    def contains(self, points: np.ndarray) -> np.ndarray:
        lo = np.array(self.min_corner)
        hi = np.array(self.max_corner)
        points = np.asarray(points).reshape(-1, 3)
        return np.all((points >= lo) & (points <= hi), axis=1)


@dataclass
class Region:
    """A detected planar patch: member indices plus its fitted plane n.x = offset."""

    point_indices: np.ndarray  # sorted int indices into the source scene
    plane_normal: np.ndarray  # unit 3-vector
    plane_offset: float


@dataclass
class Proposal:
    """A candidate object: tight box over member scene points."""

    box: Box3
    point_indices: np.ndarray
    score: float = 1.0
    scene_id: str = ""


@dataclass
class GssParams:
    k: int = 12
    max_angle_deg: float = 20.0
    min_region_size: int = 50
    max_plane_dist: float | None = None  # default: 1% of scene bbox diagonal
    jitter_sigma: float = 0.005
    max_proposals: int = 1000
    nms_iou: float = 0.75
    max_proposal_points: int = 15000


def detect_regions(cloud: PointCloud, k: int = 12, max_angle_deg: float = 20.0,
                   min_region_size: int = 50,
                   max_plane_dist: float = 0.05) -> list[Region]:
    """Greedy region growing over the k-NN graph.

    Seeds at the lowest-index unassigned point, expands to neighbors whose
    normal deviates at most max_angle_deg from the region's running plane
    normal and that lie within max_plane_dist of the running least-squares
    plane. Regions below min_region_size are discarded (their points stay
    available to later regions). Returned regions are pairwise disjoint.
    """
    if cloud.normals is None:
        raise MissingNormals("detect_regions needs per-point normals")
    if k < 3:
        raise ValueError("k must be >= 3")
    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    tree = cKDTree(pts)
    _, nbrs = tree.query(pts, k=min(k + 1, n))
    nbrs = np.atleast_2d(nbrs)
    cos_thresh = np.cos(np.deg2rad(max_angle_deg))

    assigned = np.full(n, -1, dtype=np.int64)  # kept-region id, -1 free
    seeded = np.zeros(n, dtype=bool)
    regions: list[Region] = []

    for seed in range(n):
        if assigned[seed] >= 0 or seeded[seed]:
            continue
        members = [seed]
        # running plane statistics: sums of x and x x^T
        s1 = pts[seed].copy()
        s2 = np.outer(pts[seed], pts[seed])
        plane_n = nrm[seed].copy()
        centroid = pts[seed].copy()
        in_region = np.zeros(n, dtype=bool)
        in_region[seed] = True
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in nbrs[p]:
                q = int(q)
                if q == p or in_region[q] or assigned[q] >= 0:
                    continue
                if abs(float(nrm[q] @ plane_n)) < cos_thresh:
                    continue
                if abs(float(plane_n @ (pts[q] - centroid))) > max_plane_dist:
                    continue
                in_region[q] = True
                members.append(q)
                s1 += pts[q]
                s2 += np.outer(pts[q], pts[q])
                m = len(members)
                centroid = s1 / m
                if m >= 3:
                    cov = s2 / m - np.outer(centroid, centroid)
                    w, v = np.linalg.eigh(cov)
                    plane_n = v[:, 0]
                queue.append(q)
        seeded[seed] = True
        if len(members) >= min_region_size:
            rid = len(regions)
            idx = np.array(sorted(members), dtype=np.int64)
            assigned[idx] = rid
            regions.append(Region(idx, plane_n.copy(),
                                  float(plane_n @ centroid)))
    return regions


def similarity(a_indices: np.ndarray, b_indices: np.ndarray, points: np.ndarray,
               scene_extent: Box3, scene_point_count: int) -> float:
    """Size + volume similarity in [0, 2]; higher favors merging small, tight pairs."""
    scene_vol = scene_extent.volume
    if scene_vol <= 0:
        raise ZeroSceneVolume("scene bounding box has zero volume")
    a_indices = np.asarray(a_indices)
    b_indices = np.asarray(b_indices)
    s_size = 1.0 - (len(a_indices) + len(b_indices)) / scene_point_count
    box_a = Box3.of_points(points[a_indices])
    box_b = Box3.of_points(points[b_indices])
    box_ab = Box3.of_points(points[np.concatenate([a_indices, b_indices])])
    s_vol = 1.0 - (box_ab.volume - box_a.volume - box_b.volume) / scene_vol
    return float(np.clip(s_size, 0.0, 1.0) + np.clip(s_vol, 0.0, 1.0))


def hac_proposals(regions: list[Region], cloud: PointCloud,
                  max_proposals: int = 1000,
                  max_proposal_points: int = 15000) -> list[Proposal]:
    """Hierarchical agglomerative grouping; one proposal per leaf and per merge.

    Repeatedly merges the active pair with the highest similarity (ties to the
    lowest index pair) until one group remains or max_proposals were emitted.
    Groups with at least max_proposal_points points are merged but not emitted.
    """
    if not regions:
        raise NoRegions("hac_proposals requires at least one region")
    pts = cloud.points
    scene_extent = Box3.of_points(pts)
    n_scene = len(cloud)

    groups: list[np.ndarray] = [np.asarray(r.point_indices) for r in regions]
    active: list[int] = list(range(len(groups)))
    proposals: list[Proposal] = []

    def emit(indices: np.ndarray) -> bool:
        if len(indices) >= max_proposal_points:
            return False
        proposals.append(Proposal(Box3.of_points(pts[indices]), indices,
                                  score=1.0, scene_id=cloud.id))
        return True

    for g in groups:
        if len(proposals) >= max_proposals:
            return proposals
        emit(g)

    while len(active) > 1 and len(proposals) < max_proposals:
        best = None
        best_pair = None
        for ai in range(len(active)):
            for bi in range(ai + 1, len(active)):
                i, j = active[ai], active[bi]
                s = similarity(groups[i], groups[j], pts, scene_extent, n_scene)
                if best is None or s > best:
                    best = s
                    best_pair = (i, j)
        i, j = best_pair
        merged = np.array(sorted(np.concatenate([groups[i], groups[j]])),
                          dtype=np.int64)
        groups.append(merged)
        active = [g for g in active if g not in (i, j)] + [len(groups) - 1]
        emit(merged)
    return proposals


def iou3d(a: Box3, b: Box3) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 for two zero-volume boxes."""
    lo = np.maximum(np.array(a.min_corner), np.array(b.min_corner))
    hi = np.minimum(np.array(a.max_corner), np.array(b.max_corner))
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return inter / union


def nms(proposals: list[Proposal], iou_threshold: float = 0.75) -> list[Proposal]:
    """Greedy non-maximum suppression.

    Order: descending score, then larger point count, then lower input index.
    A proposal is kept iff its IoU with every kept proposal is < iou_threshold.
    """
    order = sorted(range(len(proposals)),
                   key=lambda i: (-proposals[i].score,
                                  -len(proposals[i].point_indices), i))
    kept: list[Proposal] = []
    for i in order:
        p = proposals[i]
        if all(iou3d(p.box, q.box) < iou_threshold for q in kept):
            kept.append(p)
    return kept


def generate_proposals(scene: PointCloud, params: GssParams | None = None,
                       seed: int = 0) -> list[Proposal]:
    """Full proposal pipeline: normals, jitter, region growing, HAC, NMS."""
    params = params or GssParams()
    if len(scene) == 0:
        raise NoRegions("scene is empty")
    cloud = scene if scene.normals is not None else estimate_normals(scene, params.k)
    cloud = apply_jitter(cloud, params.jitter_sigma, seed)
    max_plane_dist = params.max_plane_dist
    if max_plane_dist is None:
        extent = Box3.of_points(cloud.points)
        diag = float(np.linalg.norm(np.array(extent.max_corner)
                                    - np.array(extent.min_corner)))
        max_plane_dist = 0.01 * diag
    regions = detect_regions(cloud, k=params.k,
                             max_angle_deg=params.max_angle_deg,
                             min_region_size=params.min_region_size,
                             max_plane_dist=max_plane_dist)
    if not regions:
        return []
    proposals = hac_proposals(regions, cloud, max_proposals=params.max_proposals,
                              max_proposal_points=params.max_proposal_points)
    return nms(proposals, params.nms_iou)


def proposal_to_json(p: Proposal, class_id: int | None = None) -> str:
    """One JSON object per proposal; the wire format consumed by evaluation."""
    obj = {
        "scene_id": p.scene_id,
        "box": {"min": list(p.box.min_corner), "max": list(p.box.max_corner)},
        "point_indices": [int(i) for i in p.point_indices],
        "score": p.score,
    }
    if class_id is not None:
        obj["class"] = int(class_id)
    return json.dumps(obj)


def proposal_from_json(line: str) -> tuple[Proposal, int | None]:
    obj = json.loads(line)
    p = Proposal(
        Box3(tuple(obj["box"]["min"]), tuple(obj["box"]["max"])),
        np.array(obj.get("point_indices", []), dtype=np.int64),
        score=float(obj.get("score", 1.0)),
        scene_id=obj.get("scene_id", ""),
    )
    return p, obj.get("class")

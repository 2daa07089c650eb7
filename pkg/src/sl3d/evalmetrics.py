"""Quantitative evaluation: cluster purity, pseudo-to-ground-truth alignment,
k-NN embedding evaluation, detection mAP, and point-level mIoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainSet, LengthMismatch, SceneMismatch
from .gss import Box3, iou3d
from .pointset import PointCloud
from .selflabel import LabelSet

UNLABELED = -1


@dataclass
class AlignmentMap:
    """Many-to-one map from pseudo classes to ground-truth classes."""

    mapping: dict  # pseudo id -> gt id, for every non-empty pseudo class
    obtained_classes: int


@dataclass
class DetectionRecord:
    scene_id: str
    box: Box3
    class_id: int
    score: float


def _check_lengths(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"length mismatch: {len(a)} vs {len(b)}")


def mean_purity(labels: LabelSet, gt) -> float:
    """Unweighted mean over non-empty pseudo classes of the majority-class
    fraction inside each class."""
    lab = np.asarray(labels.labels)
    gt = np.asarray(gt)
    _check_lengths(lab, gt)
    purities = []
    for c in np.unique(lab):
        members = gt[lab == c]
        counts = np.bincount(members)
        purities.append(counts.max() / len(members))
    return float(np.mean(purities))


def align_classes(labels: LabelSet, gt) -> AlignmentMap:
    """Map each non-empty pseudo class to its majority ground-truth class
    (ties to the lower gt id)."""
    lab = np.asarray(labels.labels)
    gt = np.asarray(gt)
    _check_lengths(lab, gt)
    mapping = {}
    for c in np.unique(lab):
        counts = np.bincount(gt[lab == c])
        mapping[int(c)] = int(np.argmax(counts))
    return AlignmentMap(mapping, len(set(mapping.values())))


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms == 0, 1.0, norms), x)


def knn_eval(train_emb, train_y, test_emb, test_y, k: int):
    """Vote-count k-NN on L2-normalized embeddings; returns (top1, top5) in %.

    Distance ties resolve to the lower train index; vote ties resolve to the
    lower class id. A top-1 hit requires the true class to hold the strictly
    highest vote count.
    """
    train_emb = np.asarray(train_emb, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    if len(train_emb) == 0:
        raise EmptyTrainSet("empty train set")
    if k > len(train_emb):
        raise ValueError("k exceeds train size")
    tn = _l2_normalize(train_emb)
    sn = _l2_normalize(test_emb)
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    top1_hits = 0
    top5_hits = 0
    for i in range(len(sn)):
        d = np.linalg.norm(tn - sn[i], axis=1)
        nbrs = np.argsort(d, kind="stable")[:k]
        votes = np.bincount(train_y[nbrs], minlength=n_classes)
        ranked = np.lexsort((np.arange(n_classes), -votes))
        true = test_y[i]
        if votes[true] > 0 and ranked[0] == true:
            top1_hits += 1
        if votes[true] > 0 and true in ranked[:5]:
            top5_hits += 1
    n = len(sn)
    return 100.0 * top1_hits / n, 100.0 * top5_hits / n


def pr_curve(scores, is_tp, n_gt):
    """Precision/recall points from score-sorted detections (all-point style)."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.cumsum(np.asarray(is_tp)[order])
    fp = np.cumsum(~np.asarray(is_tp)[order])
    recall = tp / n_gt if n_gt > 0 else np.zeros_like(tp, dtype=float)
    precision = tp / np.maximum(tp + fp, 1)
    return recall, precision


def _ap_from_pr(recall, precision):
    # all-point interpolation: area under the precision envelope
    r = np.concatenate([[0.0], recall, [recall[-1] if len(recall) else 0.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    idx = np.where(r[1:] != r[:-1])[0]
    return float(np.sum((r[idx + 1] - r[idx]) * p[idx + 1]))


def map_at_iou(predictions: list, gt_boxes: dict,
               iou_threshold: float = 0.25):
    """Detection mAP: greedy best-IoU matching per class per scene.

    gt_boxes maps scene_id -> list of (Box3, class_id). Returns
    (per_class dict of AP, mAP over classes with at least one gt instance).
    """
    classes = sorted({c for boxes in gt_boxes.values() for _, c in boxes})
    per_class = {}
    for cls in classes:
        gts = {sid: [b for b, c in boxes if c == cls]
               for sid, boxes in gt_boxes.items()}
        n_gt = sum(len(v) for v in gts.values())
        preds = [p for p in predictions if p.class_id == cls]
        preds = sorted(preds, key=lambda p: -p.score)
        matched = {sid: [False] * len(v) for sid, v in gts.items()}
        is_tp = []
        for p in preds:
            cand = gts.get(p.scene_id, [])
            best_iou, best_j = 0.0, -1
            for j, g in enumerate(cand):
                v = iou3d(p.box, g)
                if v > best_iou:
                    best_iou, best_j = v, j
            if best_j >= 0 and best_iou >= iou_threshold \
                    and not matched[p.scene_id][best_j]:
                matched[p.scene_id][best_j] = True
                is_tp.append(True)
            else:
                is_tp.append(False)
        if not preds:
            per_class[cls] = 0.0
            continue
        recall, precision = pr_curve([p.score for p in preds],
                                     np.array(is_tp), n_gt)
        per_class[cls] = _ap_from_pr(recall, precision)
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, m


def miou(pred_labels_per_scene: list, gt_labels_per_scene: list,
         num_classes: int):
    """Point-level mean IoU aggregated over scenes.

    The UNLABELED sentinel is excluded on both sides. Returns
    (per-class IoU dict over classes with nonzero union, mIoU).
    """
    _check_lengths(pred_labels_per_scene, gt_labels_per_scene)
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    for pred, gt in zip(pred_labels_per_scene, gt_labels_per_scene):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        _check_lengths(pred, gt)
        valid = (pred != UNLABELED) & (gt != UNLABELED)
        pred = pred[valid]
        gt = gt[valid]
        for c in range(num_classes):
            pc = pred == c
            gc = gt == c
            inter[c] += int(np.sum(pc & gc))
            union[c] += int(np.sum(pc | gc))
    per_class = {c: inter[c] / union[c] for c in range(num_classes)
                 if union[c] > 0}
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, m


def boxes_to_point_labels(proposals: list, class_ids: list,
                          scene: PointCloud) -> np.ndarray:
    """Assign each scene point the label of its best covering proposal box.

    Best = highest score, then smaller box volume, then lower proposal index.
    Points covered by no box get the UNLABELED sentinel.
    """
    if len(proposals) != len(class_ids):
        raise LengthMismatch("one class id per proposal required")
    for p in proposals:
        if p.scene_id and scene.id and p.scene_id != scene.id:
            raise SceneMismatch(f"proposal for scene {p.scene_id!r} applied "
                                f"to {scene.id!r}")
    n = len(scene)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    best_key = [None] * n
    for idx, (p, cls) in enumerate(zip(proposals, class_ids)):
        inside = np.where(p.box.contains(scene.points))[0]
        key = (-p.score, p.box.volume, idx)
        for i in inside:
            if best_key[i] is None or key < best_key[i]:
                best_key[i] = key
                labels[i] = cls
    return labels

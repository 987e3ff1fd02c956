"""Detection matching, precision-recall curves, average precision, and
layout free-space scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CountMismatch, NoGroundTruth
from .geometry import OrientedCuboid, cuboid_iou_3d
from .layout import free_space_iou
from .proposals import Detection

IOU_THRESHOLD = 0.25


@dataclass
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    thresholds: np.ndarray  # score at each curve point

    def to_csv(self) -> str:
        lines = ["recall,precision,threshold"]
        for r, p, t in zip(self.recalls, self.precisions, self.thresholds):
            lines.append(f"{r:.6f},{p:.6f},{t:.6f}")
        return "\n".join(lines) + "\n"


def match_detections(
    detections: list[Detection],
    ground_truths: list[OrientedCuboid],
    iou_threshold: float = IOU_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching in descending final-score order (ties broken by
    input index). A detection is a true positive iff its best-IOU
    unmatched ground truth exceeds the threshold; each ground truth
    matches at most once.

    Returns (tp_flags, scores), both in the sorted evaluation order.
    """
    scores = np.array([d.final_score for d in detections], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    flags = np.zeros(len(detections), dtype=bool)
    matched = np.zeros(len(ground_truths), dtype=bool)
    for rank, idx in enumerate(order):
        best_iou, best_gt = 0.0, -1
        for g, gt in enumerate(ground_truths):
            if matched[g]:
                continue
            iou = cuboid_iou_3d(detections[idx].cuboid, gt)
            if iou > best_iou:
                best_iou, best_gt = iou, g
        if best_gt >= 0 and best_iou > iou_threshold:
            flags[rank] = True
            matched[best_gt] = True
    return flags, scores[order]


def pr_curve(tp_flags: np.ndarray, n_ground_truth: int, scores: np.ndarray) -> PRCurve:
    if n_ground_truth < 1:
        raise NoGroundTruth("ground-truth count must be >= 1")
    tp_flags = np.asarray(tp_flags, dtype=bool)
    tp = np.cumsum(tp_flags.astype(np.float64))
    fp = np.cumsum((~tp_flags).astype(np.float64))
    recalls = tp / n_ground_truth
    precisions = tp / np.maximum(tp + fp, 1e-300)
    return PRCurve(recalls=recalls, precisions=precisions, thresholds=np.asarray(scores))


def average_precision(tp_flags: np.ndarray, n_ground_truth: int) -> float:
    """Area under the precision-recall curve with the all-points precision
    envelope (each recall level scored by the best precision at that
    recall or beyond)."""
    if n_ground_truth < 1:
        raise NoGroundTruth("ground-truth count must be >= 1")
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if len(tp_flags) == 0 or not tp_flags.any():
        return 0.0
    curve = pr_curve(tp_flags, n_ground_truth, np.zeros(len(tp_flags)))
    recalls = np.concatenate([[0.0], curve.recalls])
    precisions = np.concatenate([[0.0], curve.precisions])
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    return float(np.sum(np.diff(recalls) * envelope[1:]))


def evaluate_layouts(
    predictions: list[OrientedCuboid],
    annotations: list[OrientedCuboid],
    poses,
    intrinsics,
) -> float:
    """Mean free-space IOU over scenes, scaled to [0, 100]. poses and
    intrinsics are per-scene camera parameters (the free-space metric is
    restricted to each camera's view wedge)."""
    if len(predictions) != len(annotations):
        raise CountMismatch(
            f"{len(predictions)} predictions vs {len(annotations)} annotations"
        )
    ious = [
        free_space_iou(p, a, cam, k)
        for p, a, cam, k in zip(predictions, annotations, poses, intrinsics)
    ]
    return float(100.0 * np.mean(ious))


def ap_table_csv(aps: dict[str, float]) -> str:
    lines = ["category,ap"]
    for cat in sorted(aps):
        lines.append(f"{cat},{aps[cat]:.6f}")
    if aps:
        lines.append(f"mean,{np.mean(list(aps.values())):.6f}")
    return "\n".join(lines) + "\n"

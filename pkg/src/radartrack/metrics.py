"""Oriented-box detection average precision and multi-object tracking metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import OrientedBox, iou

MATCH_IOU = 0.5
MOSTLY_TRACKED_COVERAGE = 0.8
MOSTLY_LOST_COVERAGE = 0.2

CSV_COLUMNS = ("sequence", "mota", "idf1", "id_switches", "fragmentations",
               "mostly_tracked", "partially_tracked", "mostly_lost", "motp",
               "false_positives", "false_negatives")


def _as_frame_map(frames) -> dict:
    if isinstance(frames, dict):
        return frames
    return dict(enumerate(frames))


# -- detection average precision ---------------------------------------------------


def average_precision(detections, ground_truths, iou_thresh: float) -> float:
    """All-point interpolated AP for one class of oriented boxes.

    ``detections`` maps frame -> list of (box, score); ``ground_truths`` maps
    frame -> list of boxes (plain sequences are treated as frame-indexed).
    Detections are ranked by score; each claims the highest-IoU ground truth
    of its frame and counts as a true positive only if that box is unclaimed
    and the IoU reaches the threshold.
    """
    detections = _as_frame_map(detections)
    ground_truths = _as_frame_map(ground_truths)
    total_gt = sum(len(boxes) for boxes in ground_truths.values())
    ranked = sorted(((score, frame, box)
                     for frame, items in detections.items()
                     for box, score in items),
                    key=lambda item: -item[0])
    if total_gt == 0:
        return 0.0
    claimed: dict = {frame: np.zeros(len(boxes), dtype=bool)
                     for frame, boxes in ground_truths.items()}
    tps = np.zeros(len(ranked))
    for rank, (_, frame, box) in enumerate(ranked):
        candidates = ground_truths.get(frame, [])
        if not candidates:
            continue
        overlaps = np.array([iou(box, gt) for gt in candidates])
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_thresh and not claimed[frame][best]:
            claimed[frame][best] = True
            tps[rank] = 1.0
    if len(ranked) == 0:
        return 0.0
    cum_tp = np.cumsum(tps)
    recall = cum_tp / total_gt
    precision = cum_tp / np.arange(1, len(ranked) + 1)
    # Area under the precision envelope over all recall change points.
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def mean_average_precision(detections_by_class: dict, ground_truths_by_class: dict,
                           iou_thresh: float) -> tuple[dict, float]:
    """Per-class AP plus the mean over classes that have any ground truth."""
    per_class = {}
    for label, gts in ground_truths_by_class.items():
        dets = detections_by_class.get(label, {})
        per_class[label] = average_precision(dets, gts, iou_thresh)
    if not per_class:
        return {}, 0.0
    return per_class, float(np.mean(list(per_class.values())))


# -- trajectory bookkeeping ----------------------------------------------------------


def trajectories_from_records(records) -> dict:
    """Group JSONL-style records into {id: {frame: box}}."""
    trajectories: dict = {}
    for record in records:
        box = OrientedBox(float(record["x"]), float(record["y"]),
                          float(record["w"]), float(record["h"]),
                          float(record["theta"]))
        trajectories.setdefault(record["id"], {})[int(record["frame"])] = box
    return trajectories


def _frame_items(trajectories: dict, frame: int) -> list:
    return [(track_id, boxes[frame]) for track_id, boxes in
            sorted(trajectories.items(), key=lambda kv: str(kv[0]))
            if frame in boxes]


def _match_frame(gt_items, pred_items, iou_thresh: float) -> list:
    """Hungarian matching on IoU; pairs below the threshold are discarded."""
    if not gt_items or not pred_items:
        return []
    overlaps = np.array([[iou(gt_box, pred_box) for _, pred_box in pred_items]
                         for _, gt_box in gt_items])
    rows, cols = linear_sum_assignment(-overlaps)
    return [(gt_items[r][0], pred_items[c][0], float(overlaps[r, c]))
            for r, c in zip(rows, cols) if overlaps[r, c] >= iou_thresh]


# -- scalar formulas -----------------------------------------------------------------


def mota_value(gt_total: int, misses: int, false_positives: int,
               id_switches: int) -> float:
    """1 - (FN + FP + IDSW) / GT; can go negative, never exceeds 1."""
    if gt_total <= 0:
        raise ValueError("MOTA needs at least one ground-truth box")
    return 1.0 - (misses + false_positives + id_switches) / gt_total


def idf1_value(idtp: float, idfp: float, idfn: float) -> float:
    denominator = 2.0 * idtp + idfp + idfn
    if denominator == 0.0:
        return 1.0
    return 2.0 * idtp / denominator


def idf1(gt_trajectories: dict, pred_trajectories: dict,
         iou_thresh: float = MATCH_IOU) -> float:
    """Identity F1 under the best one-to-one trajectory mapping.

    The mapping maximizes the total count of frames where a ground-truth
    trajectory and its assigned prediction coexist with IoU at or above the
    threshold; every remaining ground-truth (prediction) frame counts as an
    identity miss (false positive).
    """
    gt_ids = sorted(gt_trajectories, key=str)
    pred_ids = sorted(pred_trajectories, key=str)
    total_gt = sum(len(gt_trajectories[g]) for g in gt_ids)
    total_pred = sum(len(pred_trajectories[p]) for p in pred_ids)
    if not gt_ids or not pred_ids:
        return idf1_value(0.0, float(total_pred), float(total_gt))
    overlap = np.zeros((len(gt_ids), len(pred_ids)))
    for gi, g in enumerate(gt_ids):
        for pi, p in enumerate(pred_ids):
            frames = set(gt_trajectories[g]) & set(pred_trajectories[p])
            overlap[gi, pi] = sum(
                1 for f in frames
                if iou(gt_trajectories[g][f], pred_trajectories[p][f]) >= iou_thresh)
    rows, cols = linear_sum_assignment(-overlap)
    idtp = float(overlap[rows, cols].sum())
    return idf1_value(idtp, total_pred - idtp, total_gt - idtp)


# -- full evaluation -----------------------------------------------------------------


@dataclass(frozen=True)
class TrackingSummary:
    """CLEAR-style counts and ratios for one evaluated sequence."""

    mota: float
    motp: float
    idf1: float
    id_switches: int
    fragmentations: int
    mostly_tracked: int
    partially_tracked: int
    mostly_lost: int
    false_positives: int
    misses: int
    gt_total: int


def evaluate_tracking(gt_trajectories: dict, pred_trajectories: dict,
                      iou_thresh: float = MATCH_IOU) -> TrackingSummary:
    """Frame-by-frame Hungarian matching rolled up into the metric suite.

    MOTP is reported as the mean IoU of matched pairs (overlap form, higher
    is better).  An identity switch is counted when a matched ground truth
    changes its assigned prediction id relative to its last match; a
    fragmentation when a ground truth goes from matched to unmatched within
    its lifespan.
    """
    frames = sorted({f for boxes in gt_trajectories.values() for f in boxes} |
                    {f for boxes in pred_trajectories.values() for f in boxes})
    gt_total, misses, false_positives, id_switches = 0, 0, 0, 0
    matched_ious: list[float] = []
    last_pred_for_gt: dict = {}
    matched_frames: dict = {g: set() for g in gt_trajectories}
    for frame in frames:
        gt_items = _frame_items(gt_trajectories, frame)
        pred_items = _frame_items(pred_trajectories, frame)
        matches = _match_frame(gt_items, pred_items, iou_thresh)
        gt_total += len(gt_items)
        misses += len(gt_items) - len(matches)
        false_positives += len(pred_items) - len(matches)
        for gt_id, pred_id, overlap in matches:
            matched_ious.append(overlap)
            matched_frames[gt_id].add(frame)
            previous = last_pred_for_gt.get(gt_id)
            if previous is not None and previous != pred_id:
                id_switches += 1
            last_pred_for_gt[gt_id] = pred_id
    if gt_total == 0:
        raise ValueError("evaluation needs at least one ground-truth box")

    fragmentations = 0
    mostly_tracked = partially_tracked = mostly_lost = 0
    for gt_id, boxes in gt_trajectories.items():
        lifespan = sorted(boxes)
        statuses = [frame in matched_frames[gt_id] for frame in lifespan]
        fragmentations += sum(1 for a, b in zip(statuses, statuses[1:])
                              if a and not b)
        coverage = sum(statuses) / len(lifespan)
        if coverage >= MOSTLY_TRACKED_COVERAGE:
            mostly_tracked += 1
        elif coverage <= MOSTLY_LOST_COVERAGE:
            mostly_lost += 1
        else:
            partially_tracked += 1

    return TrackingSummary(
        mota=mota_value(gt_total, misses, false_positives, id_switches),
        motp=float(np.mean(matched_ious)) if matched_ious else 0.0,
        idf1=idf1(gt_trajectories, pred_trajectories, iou_thresh),
        id_switches=id_switches,
        fragmentations=fragmentations,
        mostly_tracked=mostly_tracked,
        partially_tracked=partially_tracked,
        mostly_lost=mostly_lost,
        false_positives=false_positives,
        misses=misses,
        gt_total=gt_total,
    )


def evaluate_records(gt_records, pred_records,
                     iou_thresh: float = MATCH_IOU) -> TrackingSummary:
    """Evaluate straight from JSONL-style record lists."""
    return evaluate_tracking(trajectories_from_records(gt_records),
                             trajectories_from_records(pred_records),
                             iou_thresh)


def summaries_csv(rows) -> str:
    """Render (name, TrackingSummary) pairs as a CSV string."""
    lines = [",".join(CSV_COLUMNS)]
    for name, s in rows:
        lines.append(",".join([
            str(name), f"{s.mota:.6f}", f"{s.idf1:.6f}", str(s.id_switches),
            str(s.fragmentations), str(s.mostly_tracked),
            str(s.partially_tracked), str(s.mostly_lost), f"{s.motp:.6f}",
            str(s.false_positives), str(s.misses),
        ]))
    return "\n".join(lines) + "\n"

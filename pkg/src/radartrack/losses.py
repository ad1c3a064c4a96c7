"""Training objectives for the detector.

Targets live on the downsampled feature grid: ground-truth heatmaps are
Gaussian splats around object center cells, box attributes are regressed at
those cells, and direction targets are position differences between frames.
The per-frame box objective combines the attribute terms, averaged over
ground-truth objects, with the mean per-pixel heatmap term subtracted — the
log-form heatmap term is non-positive, so the subtraction yields a positive
penalty.  The direction objective averages smooth-L1 residuals over every
ordered frame pair (t, tau != t) at the ground-truth centers of frame t, and
the clip total sums both objectives over all frames, covering the backward
(tau < t) and forward (tau > t) directions in one pass.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as tt
from .errors import ShapeError
from .geometry import OrientedBox
from .tensor import Tensor

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
GAUSSIAN_MIN_OVERLAP = 0.1
MIN_GAUSSIAN_RADIUS = 1


# -- targets --------------------------------------------------------------------


@dataclass
class FrameTargets:
    """Ground truth for one frame on the feature grid."""

    heatmap: np.ndarray      # (H', W') Gaussian-splatted confidences in [0, 1]
    cells: np.ndarray        # (N_gt, 2) integer (row, col) center cells
    sizes: np.ndarray        # (N_gt, 2) float (w, h) extents in grid units
    angles: np.ndarray       # (N_gt,) float orientations in radians
    offsets: np.ndarray      # (N_gt, 2) float (o_x, o_y) sub-cell offsets


@dataclass
class ClipTracks:
    """Ground-truth trajectories over a clip, centers in grid units."""

    positions: np.ndarray    # (N_obj, T, 2) float (x, y)
    present: np.ndarray      # (N_obj, T) bool


def center_cell(x: float, y: float, grid_shape: tuple[int, int]) -> tuple[int, int]:
    """Nearest in-bounds grid cell (row, col) for a center in grid units."""
    h, w = grid_shape
    col = int(np.clip(np.round(x), 0, w - 1))
    row = int(np.clip(np.round(y), 0, h - 1))
    return row, col


def gaussian_radius(width: float, length: float,
                    min_overlap: float = GAUSSIAN_MIN_OVERLAP) -> int:
    """Splat radius keeping any box shifted by it above the overlap threshold."""
    h, w = length, width
    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap)
    r1 = (b1 - math.sqrt(max(b1 * b1 - 4.0 * a1 * c1, 0.0))) / (2.0 * a1)

    a2 = 4.0
    b2 = 2.0 * (h + w)
    c2 = (1.0 - min_overlap) * w * h
    r2 = (b2 - math.sqrt(max(b2 * b2 - 4.0 * a2 * c2, 0.0))) / (2.0 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2.0 * min_overlap * (h + w)
    c3 = (min_overlap - 1.0) * w * h
    r3 = (b3 + math.sqrt(max(b3 * b3 - 4.0 * a3 * c3, 0.0))) / (2.0 * a3)
    return max(MIN_GAUSSIAN_RADIUS, int(min(r1, r2, r3)))


def _splat_gaussian(heat: np.ndarray, row: int, col: int, radius: int) -> None:
    sigma = (2.0 * radius + 1.0) / 6.0
    span = np.arange(-radius, radius + 1, dtype=np.float64)
    patch = np.exp(-(span[:, None] ** 2 + span[None, :] ** 2) / (2.0 * sigma * sigma))
    h, w = heat.shape
    top, bottom = max(0, row - radius), min(h, row + radius + 1)
    left, right = max(0, col - radius), min(w, col + radius + 1)
    window = patch[top - (row - radius):bottom - (row - radius),
                   left - (col - radius):right - (col - radius)]
    np.maximum(heat[top:bottom, left:right], window,
               out=heat[top:bottom, left:right])


def build_frame_targets(boxes: Sequence[OrientedBox],
                        grid_shape: tuple[int, int]) -> FrameTargets:
    """Render targets for one frame from boxes given in grid units."""
    heat = np.zeros(grid_shape, dtype=np.float64)
    cells, sizes, angles, offsets = [], [], [], []
    for box in boxes:
        row, col = center_cell(box.cx, box.cy, grid_shape)
        _splat_gaussian(heat, row, col, gaussian_radius(box.w, box.h))
        cells.append((row, col))
        sizes.append((box.w, box.h))
        angles.append(box.theta)
        offsets.append((box.cx - col, box.cy - row))
    n = len(cells)
    return FrameTargets(
        heatmap=heat,
        cells=np.asarray(cells, dtype=np.intp).reshape(n, 2),
        sizes=np.asarray(sizes, dtype=np.float64).reshape(n, 2),
        angles=np.asarray(angles, dtype=np.float64).reshape(n),
        offsets=np.asarray(offsets, dtype=np.float64).reshape(n, 2),
    )


# -- heatmap loss ------------------------------------------------------------------


def heatmap_terms(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Per-pixel penalty-reduced focal terms (log form, non-positive).

    Cells with target exactly 1 contribute (1-p)^2 log p; all others
    contribute (1-c)^4 p^2 log(1-p).  Predictions must lie strictly inside
    (0, 1): apply the sigmoid before calling.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"heatmap shape {pred.shape} != target shape {gt.shape}")
    if np.any(pred.data <= 0.0) or np.any(pred.data >= 1.0):
        raise ValueError("heatmap predictions must lie strictly inside (0, 1); "
                         "apply the sigmoid first")
    if np.any(gt < 0.0) or np.any(gt > 1.0):
        raise ValueError("heatmap targets must lie in [0, 1]")
    pos = tt.constant((gt == 1.0).astype(np.float64))
    neg = tt.constant(np.where(gt == 1.0, 0.0, (1.0 - gt) ** FOCAL_BETA))
    one = tt.constant(np.ones_like(gt))
    pos_term = tt.mul(tt.square(tt.sub(one, pred)), tt.log(pred))
    neg_term = tt.mul(tt.square(pred), tt.log(tt.sub(one, pred)))
    return tt.add(tt.mul(pos, pos_term), tt.mul(neg, neg_term))


def heatmap_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Mean per-pixel heatmap term: the quantity the box objective subtracts."""
    return tt.tmean(heatmap_terms(pred, gt))


# -- box attribute losses -------------------------------------------------------------


def _zero() -> Tensor:
    return tt.constant(np.zeros(()))


def _mean_norm_loss(pred_rows: Tensor, target_rows: np.ndarray) -> Tensor:
    residual = tt.sub(pred_rows, tt.constant(target_rows))
    return tt.tmean(tt.smooth_l1_of_norm(residual))


def box_regression_losses(size_map: Tensor, orientation_map: Tensor,
                          offset_map: Tensor,
                          targets: FrameTargets) -> tuple[Tensor, Tensor, Tensor]:
    """Per-object means of the size, orientation, and offset residual losses.

    Each residual is a 2-vector at a ground-truth center cell; its loss is
    smooth-L1 of the residual's L2 norm.  With no ground-truth boxes all
    three losses are zero.
    """
    if len(targets.cells) == 0:
        return _zero(), _zero(), _zero()
    orient_targets = np.stack([np.cos(targets.angles), np.sin(targets.angles)], axis=1)
    lb = _mean_norm_loss(tt.gather_pixels(size_map, targets.cells), targets.sizes)
    lr = _mean_norm_loss(tt.gather_pixels(orientation_map, targets.cells), orient_targets)
    lo = _mean_norm_loss(tt.gather_pixels(offset_map, targets.cells), targets.offsets)
    return lb, lr, lo


def bbox_loss(heatmap_prob: Tensor, size_map: Tensor, orientation_map: Tensor,
              offset_map: Tensor, targets: FrameTargets) -> Tensor:
    """One frame's box objective: attribute means minus the mean heatmap term."""
    lb, lr, lo = box_regression_losses(size_map, orientation_map, offset_map, targets)
    return tt.sub(tt.add(tt.add(lb, lr), lo), heatmap_loss(heatmap_prob, targets.heatmap))


# -- direction loss -------------------------------------------------------------------

DirectionFn = Callable[[int, int, np.ndarray], Tensor]


def direction_loss(direction_fn: DirectionFn, frame: int, tracks: ClipTracks,
              grid_shape: tuple[int, int]) -> Tensor:
    """Direction objective for one frame.

    ``direction_fn(t, tau, coords)`` returns predicted (d_x, d_y) rows for the
    queried (row, col) cells.  For every object present at ``frame`` and every
    other frame tau where it is also present, the residual against the true
    displacement is penalized with smooth-L1 of its norm; the per-object mean
    runs over that object's valid frame pairs, and the result averages over
    objects with at least one valid pair.
    """
    n_obj, total = tracks.present.shape
    per_object: dict[int, list[Tensor]] = defaultdict(list)
    for tau in range(total):
        if tau == frame:
            continue
        valid = [k for k in range(n_obj)
                 if tracks.present[k, frame] and tracks.present[k, tau]]
        if not valid:
            continue
        coords = np.array([center_cell(*tracks.positions[k, frame], grid_shape)
                           for k in valid], dtype=np.intp)
        predicted = direction_fn(frame, tau, coords)
        true = tracks.positions[valid, frame] - tracks.positions[valid, tau]
        values = tt.smooth_l1_of_norm(tt.sub(predicted, tt.constant(true)))
        for i, k in enumerate(valid):
            per_object[k].append(tt.slice_rows(values, i, i + 1))
    if not per_object:
        return _zero()
    object_means = []
    for k in sorted(per_object):
        terms = per_object[k]
        acc = terms[0]
        for term in terms[1:]:
            acc = tt.add(acc, term)
        object_means.append(tt.mul(acc, tt.constant(1.0 / len(terms))))
    acc = object_means[0]
    for term in object_means[1:]:
        acc = tt.add(acc, term)
    return tt.reshape(tt.mul(acc, tt.constant(1.0 / len(object_means))), ())


# -- clip total -----------------------------------------------------------------------


def total_loss(predictions: Sequence, frame_targets: Sequence[FrameTargets],
               tracks: ClipTracks,
               direction_fn: DirectionFn) -> tuple[Tensor, dict[str, float]]:
    """Sum of the box and direction objectives over all frames of a clip.

    ``predictions`` rows expose heatmap_logits/size/orientation/offset maps.
    Returns the scalar loss tensor plus a float breakdown for logging.
    """
    if len(predictions) != len(frame_targets):
        raise ShapeError(f"{len(predictions)} predictions vs "
                         f"{len(frame_targets)} target frames")
    parts = {"heatmap": 0.0, "size": 0.0, "orientation": 0.0, "offset": 0.0,
             "direction": 0.0}
    total: Tensor | None = None
    for t, (pred, targets) in enumerate(zip(predictions, frame_targets)):
        grid_shape = targets.heatmap.shape
        prob = tt.reshape(tt.sigmoid(pred.heatmap_logits), grid_shape)
        lb, lr, lo = box_regression_losses(pred.size, pred.orientation,
                                           pred.offset, targets)
        lh = heatmap_loss(prob, targets.heatmap)
        ld = direction_loss(direction_fn, t, tracks, grid_shape)
        frame_loss = tt.add(tt.sub(tt.add(tt.add(lb, lr), lo), lh), ld)
        total = frame_loss if total is None else tt.add(total, frame_loss)
        parts["heatmap"] -= lh.data.item()
        parts["size"] += lb.data.item()
        parts["orientation"] += lr.data.item()
        parts["offset"] += lo.data.item()
        parts["direction"] += ld.data.item()
    parts["total"] = total.data.item()
    return total, parts

"""Encoder and decoder heads for BEV radar object detection.

The encoder downsamples a stacked multi-channel radar frame by 4 with two
stride-2 convolution blocks.  Decoder heads share one shape: a 3x3
convolution plus ReLU feeding a 1x1 projection,
applied to the (temporally enhanced) feature map.  Heads provided: a
selection-score map that ranks cells for top-K feature selection, a
detection heatmap, width/length, orientation as (cos, sin), and sub-cell
center offsets.

A separate direction head regresses, from a pair of feature maps, the
2-vector displacement of an object between the two frames.  It concatenates
the maps channelwise, predicts per-location sampling offsets for every tap
of a 3x3 kernel, samples bilinearly at the displaced positions (deformable
convolution), normalizes, and projects to 2 channels with a zero-initialized
layer so untrained displacement estimates are exactly zero.

Conventions: x runs along columns and y along rows; grid units refer to
cells of the downsampled feature map; input-pixel units are grid units
times DOWNSAMPLE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ShapeError
from .geometry import wrap_angle
from .relation import topk_cells
from .tensor import Tensor

DOWNSAMPLE = 4

MIN_BOX_EXTENT = 1e-6

_TAPS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]


# -- convolution blocks -------------------------------------------------------


@dataclass
class Conv:
    """One convolution layer's weights plus its stride/padding."""

    weight: Tensor              # (out, in, k, k)
    bias: Tensor                # (out,)
    stride: int = 1
    padding: int = 0

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def make_conv(rng: np.random.Generator, c_in: int, c_out: int, kernel: int,
              stride: int = 1, padding: int = 0) -> Conv:
    fan_in = c_in * kernel * kernel
    return Conv(
        weight=tt.init_uniform(rng, (c_out, c_in, kernel, kernel), fan_in),
        bias=tt.zeros((c_out,)),
        stride=stride,
        padding=padding,
    )


def apply_conv(x: Tensor, conv: Conv) -> Tensor:
    return tt.conv2d(x, conv.weight, conv.bias, stride=conv.stride,
                     padding=conv.padding)


# -- encoder ------------------------------------------------------------------


@dataclass
class Encoder:
    """Two stride-2 conv+ReLU blocks: (N, C_in, H, W) -> (N, width, H/4, W/4)."""

    conv1: Conv
    conv2: Conv

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.conv1.named(f"{prefix}.conv1")
        out.update(self.conv2.named(f"{prefix}.conv2"))
        return out


def make_encoder(rng: np.random.Generator, in_channels: int, width: int = 32) -> Encoder:
    return Encoder(
        conv1=make_conv(rng, in_channels, width, 3, stride=2, padding=1),
        conv2=make_conv(rng, width, width, 3, stride=2, padding=1),
    )


def encode(encoder: Encoder, frames: Tensor) -> Tensor:
    """Encode a (N, C_in, H, W) frame stack; H and W must be multiples of 4."""
    if frames.data.ndim != 4:
        raise ShapeError(f"encode expects (N, C, H, W) input, got shape {frames.shape}")
    h, w = frames.shape[2], frames.shape[3]
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ShapeError(f"spatial dims ({h}, {w}) must be divisible by {DOWNSAMPLE}")
    hidden = tt.relu(apply_conv(frames, encoder.conv1))
    return tt.relu(apply_conv(hidden, encoder.conv2))


def split_frames(batch: Tensor) -> list[Tensor]:
    """Split a (N, C, H, W) tensor into N (C, H, W) tensors."""
    n = batch.shape[0]
    rest = batch.shape[1:]
    return [tt.reshape(tt.slice_rows(batch, i, i + 1), rest) for i in range(n)]


# -- regression heads ----------------------------------------------------------


@dataclass
class RegressionHead:
    """3x3 conv + ReLU into a 1x1 projection; keeps the spatial grid."""

    conv1: Conv
    conv2: Conv

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.conv1.named(f"{prefix}.conv1")
        out.update(self.conv2.named(f"{prefix}.conv2"))
        return out


def make_regression_head(rng: np.random.Generator, channels: int,
                         out_channels: int) -> RegressionHead:
    return RegressionHead(
        conv1=make_conv(rng, channels, channels, 3, padding=1),
        conv2=make_conv(rng, channels, out_channels, 1),
    )


def apply_head(head: RegressionHead, feature_map: Tensor) -> Tensor:
    """Run one head over a (C, H, W) map, returning (out_channels, H, W)."""
    if feature_map.data.ndim != 3:
        raise ShapeError(f"head expects a (C, H, W) map, got shape {feature_map.shape}")
    batch = tt.reshape(feature_map, (1,) + feature_map.shape)
    hidden = tt.relu(apply_conv(batch, head.conv1))
    out = apply_conv(hidden, head.conv2)
    return tt.reshape(out, out.shape[1:])


@dataclass
class DetectionHeads:
    """The four box-attribute heads applied to one feature map."""

    heatmap: RegressionHead       # 1 channel of peak logits
    size: RegressionHead          # (w, h) in grid units
    orientation: RegressionHead   # (cos theta, sin theta)
    offset: RegressionHead        # (o_x, o_y) sub-cell offsets

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name in ("heatmap", "size", "orientation", "offset"):
            out.update(getattr(self, name).named(f"{prefix}.{name}"))
        return out


def make_detection_heads(rng: np.random.Generator, channels: int) -> DetectionHeads:
    return DetectionHeads(
        heatmap=make_regression_head(rng, channels, 1),
        size=make_regression_head(rng, channels, 2),
        orientation=make_regression_head(rng, channels, 2),
        offset=make_regression_head(rng, channels, 2),
    )


# -- box decoding ---------------------------------------------------------------


@dataclass(frozen=True)
class DecodedBox:
    """One detection in feature-grid units.

    (row, col) is the heatmap peak cell; (o_x, o_y) the sub-cell offsets
    clamped to [-0.5, 0.5]; width/length the box extents; theta the
    orientation in (-pi, pi]; confidence the sigmoid peak value.
    """

    row: int
    col: int
    o_x: float
    o_y: float
    width: float
    length: float
    theta: float
    confidence: float

    @property
    def x(self) -> float:
        """Center x in grid units (columns)."""
        return self.col + self.o_x

    @property
    def y(self) -> float:
        """Center y in grid units (rows)."""
        return self.row + self.o_y

    def center_pixels(self) -> tuple[float, float]:
        """Center (x, y) in input-pixel units."""
        return self.x * DOWNSAMPLE, self.y * DOWNSAMPLE


def local_maxima(heat: np.ndarray) -> np.ndarray:
    """Boolean mask of cells equal to their 3x3 neighbourhood maximum."""
    padded = np.pad(heat, 1, constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return windows.max(axis=(2, 3)) == heat


def decode_from_maps(heat: np.ndarray, size_map: np.ndarray,
                     orientation_map: np.ndarray, offset_map: np.ndarray,
                     k_det: int) -> list[DecodedBox]:
    """Decode up to k_det boxes from head output maps.

    ``heat`` holds confidences in [0, 1]; the other maps are 2-channel grids.
    Peaks are cells that survive a 3x3 max-pool equality test; the k_det
    highest-confidence peaks (row-major on ties) become boxes.
    """
    if heat.ndim != 2:
        raise ShapeError(f"heatmap must be 2-D, got shape {heat.shape}")
    for name, arr in (("size", size_map), ("orientation", orientation_map),
                      ("offset", offset_map)):
        if arr.shape != (2,) + heat.shape:
            raise ShapeError(f"{name} map shape {arr.shape} != {(2,) + heat.shape}")
    suppressed = np.where(local_maxima(heat), heat, 0.0)
    coords, confidences = topk_cells(suppressed, min(k_det, heat.size))
    boxes = []
    for (r, c), conf in zip(coords, confidences):
        cos_t, sin_t = orientation_map[0, r, c], orientation_map[1, r, c]
        boxes.append(DecodedBox(
            row=int(r),
            col=int(c),
            o_x=float(np.clip(offset_map[0, r, c], -0.5, 0.5)),
            o_y=float(np.clip(offset_map[1, r, c], -0.5, 0.5)),
            width=max(float(size_map[0, r, c]), MIN_BOX_EXTENT),
            length=max(float(size_map[1, r, c]), MIN_BOX_EXTENT),
            theta=wrap_angle(math.atan2(sin_t, cos_t)),
            confidence=float(conf),
        ))
    return boxes


def decode_boxes(feature_map: Tensor, heads: DetectionHeads,
                 k_det: int) -> list[DecodedBox]:
    """Apply the detection heads to one map and decode the top peaks."""
    with tt.no_grad():
        heat = tt.sigmoid(apply_head(heads.heatmap, feature_map)).data[0]
        size_map = apply_head(heads.size, feature_map).data
        orientation_map = apply_head(heads.orientation, feature_map).data
        offset_map = apply_head(heads.offset, feature_map).data
    return decode_from_maps(heat, size_map, orientation_map, offset_map, k_det)


# -- direction head --------------------------------------------------------------


@dataclass
class DirectionHead:
    """Deformable-convolution head regressing inter-frame displacements."""

    offsets: Conv            # (18, 2C, 3, 3): per-tap (row, col) sample shifts
    deform_weight: Tensor    # (18C, mid) applied to the sampled tap stack
    deform_bias: Tensor      # (mid,)
    norm_gain: Tensor        # (mid,)
    norm_bias: Tensor        # (mid,)
    out_weight: Tensor       # (mid, 2), zero-initialized
    out_bias: Tensor         # (2,), zero-initialized

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.offsets.named(f"{prefix}.offsets")
        for name in ("deform_weight", "deform_bias", "norm_gain", "norm_bias",
                     "out_weight", "out_bias"):
            out[f"{prefix}.{name}"] = getattr(self, name)
        return out


def make_direction_head(rng: np.random.Generator, channels: int) -> DirectionHead:
    paired = 2 * channels
    taps = len(_TAPS)
    return DirectionHead(
        offsets=make_conv(rng, paired, 2 * taps, 3, padding=1),
        deform_weight=tt.init_uniform(rng, (taps * paired, channels), taps * paired),
        deform_bias=tt.zeros((channels,)),
        norm_gain=Tensor(np.ones(channels), requires_grad=True),
        norm_bias=tt.zeros((channels,)),
        out_weight=tt.zeros((channels, 2)),
        out_bias=tt.zeros((2,)),
    )


def direction_field(head: DirectionHead, z_new: Tensor, z_old: Tensor) -> Tensor:
    """Dense displacement estimates for a frame pair.

    Concatenates the two (C, H, W) maps channelwise, predicts a (row, col)
    sampling shift for each 3x3 tap at every cell, samples the pair map
    bilinearly at the shifted positions, mixes the taps linearly, layer
    normalizes, and projects to 2 channels.  Returns an (H*W, 2) tensor of
    (d_x, d_y) vectors in grid units, rows in row-major cell order.
    """
    if z_new.shape != z_old.shape:
        raise ShapeError(f"frame maps differ in shape: {z_new.shape} vs {z_old.shape}")
    c, h, w = z_new.shape
    pair = tt.concat([z_new, z_old], axis=0)
    batch = tt.reshape(pair, (1, 2 * c, h, w))
    shift_maps = apply_conv(batch, head.offsets)
    shift_flat = tt.reshape(shift_maps, (2 * len(_TAPS), h * w))
    sampled = []
    for i, (dr, dc) in enumerate(_TAPS):
        shift = tt.reshape(tt.transpose2d(tt.slice_rows(shift_flat, 2 * i, 2 * i + 2)),
                           (h, w, 2))
        shift = tt.add(shift, tt.constant(np.array([dr, dc], dtype=np.float64)))
        sampled.append(tt.reshape(tt.bilinear_sample(pair, shift), (2 * c, h * w)))
    stacked = tt.transpose2d(tt.concat(sampled, axis=0))
    feat = tt.add(tt.matmul(stacked, head.deform_weight), head.deform_bias)
    normed = tt.layer_norm(feat, head.norm_gain, head.norm_bias)
    return tt.add(tt.matmul(normed, head.out_weight), head.out_bias)


def direction_head(head: DirectionHead, z_new: Tensor, z_old: Tensor,
              coords: np.ndarray) -> Tensor:
    """Displacement vectors at the queried (row, col) cells.

    Returns a (Q, 2) tensor of (d_x, d_y) displacements, in grid units, from
    the object position in the older frame to its position in the newer one.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.intp))
    _, h, w = z_new.shape
    rows, cols = coords[:, 0], coords[:, 1]
    if np.any((rows < 0) | (rows >= h) | (cols < 0) | (cols >= w)):
        raise IndexError(f"query coords out of bounds for a {h}x{w} grid")
    field = direction_field(head, z_new, z_old)
    return tt.take_rows(field, rows * w + cols)

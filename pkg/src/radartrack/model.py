"""End-to-end detector: frame stacking, encoding, temporal relation, decoding.

A clip of T radar frames is stacked channelwise (cyclic window order for the
windowed relation, predecessor pairs for the sequential baseline, single
frames when relation is disabled), encoded to T feature maps, and ranked by
the selection-score head.  The top-K cells of each frame exchange information
through the configured temporal relation stack and are written back to their
grid positions, so the detection heads and the direction head operate on
temporally enhanced maps.

The selection-score head receives no gradient: its output only ranks cells,
and the training objective carries no term for it.  Selected coordinates
therefore drift only through the encoder features changing during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ShapeError
from .heads import (DecodedBox, DetectionHeads, DirectionHead, Encoder,
                    apply_head, decode_from_maps, direction_head, encode,
                    make_detection_heads, make_direction_head, make_encoder,
                    make_regression_head, split_frames)
from .relation import (SequentialPairRelation, TemporalRelation, WindowConfig,
                       select_topk, stack_pair_channels, stack_window_channels)
from .tensor import Tensor

RELATION_KINDS = ("windowed", "pair", "none")


@dataclass
class FramePrediction:
    """All per-frame model outputs needed by the losses and the tracker."""

    features: Tensor              # (C, H', W') temporally enhanced map
    selection_scores: np.ndarray  # (H', W') ranking map behind the top-K choice
    coords: np.ndarray            # (K, 2) selected (row, col) cells
    heatmap_logits: Tensor        # (1, H', W')
    size: Tensor                  # (2, H', W')
    orientation: Tensor           # (2, H', W')
    offset: Tensor                # (2, H', W')


class RadarNet:
    """Detector over clips of ``frames`` consecutive radar frames."""

    def __init__(self, rng: np.random.Generator, frames: int, top_k: int = 8,
                 channels: int = 32, pos_dim: int = 64, attention_heads: int = 4,
                 relation: str = "windowed", window: int = 2, patch: int | None = None,
                 slot_stride: int | None = None, stages: int = 1,
                 window_repeats: int = 2, regroup_repeats: int = 2,
                 merge: str = "max"):
        if relation not in RELATION_KINDS:
            raise ConfigError(f"relation must be one of {RELATION_KINDS}, got '{relation}'")
        if frames < 1:
            raise ConfigError(f"frames must be >= 1, got {frames}")
        self.frames = frames
        self.top_k = top_k
        self.channels = channels
        self.relation_kind = relation

        if relation == "windowed":
            patch = top_k if patch is None else patch
            slot_stride = patch if slot_stride is None else slot_stride
            self.window_cfg = WindowConfig(
                frames=frames, window=window, top_k=top_k, patch=patch,
                stride=slot_stride, stages=stages, window_repeats=window_repeats,
                regroup_repeats=regroup_repeats, merge=merge)
            in_channels = window
        elif relation == "pair":
            if frames < 2:
                raise ConfigError("pair relation needs at least 2 frames")
            self.window_cfg = None
            in_channels = 2
        else:
            self.window_cfg = None
            in_channels = 1

        self.encoder = make_encoder(rng, in_channels, channels)
        self.score = make_regression_head(rng, channels, 1)
        if relation == "windowed":
            self.relation = TemporalRelation(self.window_cfg, channels, pos_dim,
                                             attention_heads, rng)
        elif relation == "pair":
            self.relation = SequentialPairRelation(frames, top_k, channels, pos_dim,
                                                   attention_heads, window_repeats, rng)
        else:
            self.relation = None
        self.heads = make_detection_heads(rng, channels)
        self.direction_head = make_direction_head(rng, channels)

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.named("encoder")
        out.update(self.score.named("score"))
        if self.relation is not None:
            out.update(self.relation.params())
        out.update(self.heads.named("heads"))
        out.update(self.direction_head.named("direction_head"))
        return out

    def _stack(self, frames: np.ndarray) -> np.ndarray:
        if self.relation_kind == "windowed":
            return stack_window_channels(frames, self.window_cfg.window)
        if self.relation_kind == "pair":
            return stack_pair_channels(frames)
        return frames[:, None, :, :]

    def forward(self, frames: np.ndarray) -> list[FramePrediction]:
        """Run the full pipeline on a (T, H, W) clip."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 3:
            raise ShapeError(f"expected a (T, H, W) clip, got shape {frames.shape}")
        if frames.shape[0] != self.frames:
            raise ShapeError(f"expected {self.frames} frames, got {frames.shape[0]}")
        encoded = encode(self.encoder, Tensor(self._stack(frames)))
        maps = split_frames(encoded)
        grid_shape = maps[0].shape[1:]

        score_maps = []
        selections = []
        for z in maps:
            with tt.no_grad():
                score_map = apply_head(self.score, z).data[0]
            score_maps.append(score_map)
            selections.append(select_topk(z, score_map, self.top_k))

        if self.relation is not None:
            coords = [sel.coords for sel in selections]
            related = self.relation.apply([sel.features for sel in selections],
                                          coords, grid_shape)
            maps = [tt.place_pixels(z, sel.coords, feats)
                    for z, sel, feats in zip(maps, selections, related)]

        outputs = []
        for z, score_map, sel in zip(maps, score_maps, selections):
            outputs.append(FramePrediction(
                features=z,
                selection_scores=score_map,
                coords=sel.coords,
                heatmap_logits=apply_head(self.heads.heatmap, z),
                size=apply_head(self.heads.size, z),
                orientation=apply_head(self.heads.orientation, z),
                offset=apply_head(self.heads.offset, z),
            ))
        return outputs

    def decode(self, predictions: list[FramePrediction],
               k_det: int) -> list[list[DecodedBox]]:
        """Decode each frame's heads into up to k_det boxes."""
        decoded = []
        for pred in predictions:
            with tt.no_grad():
                heat = tt.sigmoid(pred.heatmap_logits).data[0]
            decoded.append(decode_from_maps(heat, pred.size.data,
                                            pred.orientation.data,
                                            pred.offset.data, k_det))
        return decoded

    def direction(self, predictions: list[FramePrediction], t: int, tau: int,
                  coords: np.ndarray) -> Tensor:
        """Displacements from frame tau to frame t at the given cells."""
        return direction_head(self.direction_head, predictions[t].features,
                         predictions[tau].features, coords)

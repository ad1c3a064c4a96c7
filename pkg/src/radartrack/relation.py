"""Temporal-relation attention over per-frame top-K feature sets.

A window of T frames is split into T/U blocks of U consecutive frames.  Each
block runs masked multi-head cross-attention over its U*K stacked features
(window attention); a same-frame mask forces every feature to attend across
frames and to itself but never to its same-frame neighbours.  Features are
then regrouped: the K per-frame slots are cut into patches of ``patch``
features with stride ``stride``, and patches occupying the same slot range in
same-phase frames of different blocks form new windows, giving cross-block
attention at patch granularity.  Regrouping is skipped when the window spans
all frames (there is no second block to relate), which makes that
configuration plain full attention over the whole window.

Score-computation multiplies are counted globally so complexity claims can be
checked against the closed-form operation counts in ``attention_cost``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ShapeError
from .tensor import Tensor

MASK_SIGMA = -1e10

_score_multiplies = 0


def reset_score_multiplies() -> None:
    global _score_multiplies
    _score_multiplies = 0


def score_multiplies() -> int:
    return _score_multiplies


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class WindowConfig:
    """Shape of the temporal-relation stack.

    frames: total frames related at once (T).
    window: consecutive frames per attention window (U); must divide frames.
    top_k: features selected per frame (K).
    patch: features per regrouped patch (M).
    stride: slot step between consecutive patches (S).
    stages: how many (window attention -> regrouped attention) rounds run (L).
    window_repeats / regroup_repeats: masked MCA applications per round.
    merge: reduction for slots covered by several overlapping patches.
    """

    frames: int
    window: int
    top_k: int
    patch: int
    stride: int
    stages: int = 1
    window_repeats: int = 2
    regroup_repeats: int = 2
    merge: str = "max"

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.window < 1 or self.frames % self.window != 0:
            raise ConfigError(f"window {self.window} must divide frames {self.frames}")
        if self.stages > 0 and self.window < 2:
            raise ConfigError("window must be >= 2 when relation stages are enabled")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not (1 <= self.patch <= self.top_k):
            raise ConfigError(f"patch {self.patch} must lie in [1, top_k={self.top_k}]")
        if not (1 <= self.stride <= self.patch):
            raise ConfigError(f"stride {self.stride} must lie in [1, patch={self.patch}]")
        tail = (self.patch_count - 1) * self.stride + self.patch
        if tail != self.top_k:
            raise ConfigError(
                f"patches must tile the {self.top_k} slots exactly; "
                f"patch={self.patch}, stride={self.stride} covers {tail}")
        if self.merge not in ("max", "mean", "sum"):
            raise ConfigError(f"merge must be max, mean or sum, got '{self.merge}'")

    @property
    def patch_count(self) -> int:
        """Number of patches per frame: floor((K - M) / S) + 1."""
        return (self.top_k - self.patch) // self.stride + 1

    @property
    def blocks(self) -> int:
        """Number of U-frame windows in the T-frame span."""
        return self.frames // self.window


# -- masks ---------------------------------------------------------------------


def attention_mask(num_frames: int, per_frame: int, sigma: float = MASK_SIGMA) -> np.ndarray:
    """Additive mask for features of ``num_frames`` frames, ``per_frame`` each.

    Same-frame off-diagonal entries are sigma (a large negative number that
    saturates the softmax); diagonal and cross-frame entries are 1.  Built as
    kron(I, I_K + sigma*(1_K - I_K)) + kron(1 - I, 1_K).
    """
    if num_frames < 2:
        raise ConfigError(f"attention mask needs >= 2 frames, got {num_frames}")
    if per_frame < 1:
        raise ConfigError(f"per_frame must be >= 1, got {per_frame}")
    if sigma > -1e9:
        raise ConfigError(f"sigma must be <= -1e9 to saturate the softmax, got {sigma}")
    eye_f = np.eye(num_frames)
    eye_k = np.eye(per_frame)
    ones_k = np.ones((per_frame, per_frame))
    same_frame = eye_k + sigma * (ones_k - eye_k)
    return np.kron(eye_f, same_frame) + np.kron(1.0 - eye_f, ones_k)


# -- top-K selection -------------------------------------------------------------


@dataclass
class SelectedFeatures:
    """Top-K feature vectors of one frame with their grid coordinates."""

    features: Tensor        # (K, C)
    coords: np.ndarray      # (K, 2) integer (row, col)
    scores: np.ndarray      # (K,) selection scores, non-increasing


def topk_cells(scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of the k largest score cells; ties break row-major."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeError(f"score map must be 2-D, got shape {scores.shape}")
    if not (1 <= k <= scores.size):
        raise ConfigError(f"k={k} outside [1, {scores.size}] for grid {scores.shape}")
    flat = scores.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:k]
    coords = np.stack(np.unravel_index(order, scores.shape), axis=1)
    return coords.astype(np.intp), flat[order]


def select_topk(feature_map: Tensor, scores: np.ndarray, k: int) -> SelectedFeatures:
    """Gather the k feature vectors with largest selection score."""
    coords, values = topk_cells(scores, k)
    return SelectedFeatures(tt.gather_pixels(feature_map, coords), coords, values)


# -- masked multi-head cross-attention ----------------------------------------------


@dataclass
class McaParams:
    """Projection weights for one masked cross-attention application."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{n}": getattr(self, n)
                for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


@dataclass
class AttentionBlock:
    """One attention application plus its post-residual layer norm."""

    mca: McaParams
    ln_gain: Tensor
    ln_bias: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.mca.named(f"{prefix}.mca")
        out[f"{prefix}.ln_gain"] = self.ln_gain
        out[f"{prefix}.ln_bias"] = self.ln_bias
        return out


def make_mca_params(rng: np.random.Generator, channels: int, qk_in: int, heads: int) -> McaParams:
    if channels % heads != 0:
        raise ConfigError(f"head count {heads} must divide model width {channels}")
    return McaParams(
        wq=tt.init_uniform(rng, (qk_in, channels), qk_in),
        bq=tt.zeros((channels,)),
        wk=tt.init_uniform(rng, (qk_in, channels), qk_in),
        bk=tt.zeros((channels,)),
        wv=tt.init_uniform(rng, (channels, channels), channels),
        bv=tt.zeros((channels,)),
        wo=tt.init_uniform(rng, (channels, channels), channels),
        bo=tt.zeros((channels,)),
        heads=heads,
    )


def make_attention_block(rng: np.random.Generator, channels: int, qk_in: int,
                         heads: int) -> AttentionBlock:
    return AttentionBlock(
        mca=make_mca_params(rng, channels, qk_in, heads),
        ln_gain=Tensor(np.ones(channels), requires_grad=True),
        ln_bias=tt.zeros((channels,)),
    )


def masked_attention(values: Tensor, qk_input: Tensor, mask: np.ndarray,
                     params: McaParams) -> Tensor:
    """softmax((mask + Q K^T) / sqrt(d)) V per head, heads concatenated then projected.

    ``values`` carries the feature content; ``qk_input`` is the feature content
    with positional encodings appended.  Output shape equals ``values``.
    """
    global _score_multiplies
    n, channels = values.shape
    if qk_input.shape[0] != n:
        raise ShapeError(f"values rows {n} != qk_input rows {qk_input.shape[0]}")
    if mask.shape != (n, n):
        raise ShapeError(f"mask shape {mask.shape} != ({n}, {n})")
    if channels % params.heads != 0:
        raise ConfigError(f"head count {params.heads} must divide model width {channels}")
    head_dim = channels // params.heads
    q = tt.add(tt.matmul(qk_input, params.wq), params.bq)
    k = tt.add(tt.matmul(qk_input, params.wk), params.bk)
    v = tt.add(tt.matmul(values, params.wv), params.bv)
    mask_t = tt.constant(mask)
    scale = 1.0 / np.sqrt(head_dim)
    outputs = []
    for h in range(params.heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = tt.slice_cols(q, lo, hi)
        kh = tt.slice_cols(k, lo, hi)
        vh = tt.slice_cols(v, lo, hi)
        scores = tt.mul(tt.add(mask_t, tt.matmul(qh, tt.transpose2d(kh))), tt.constant(scale))
        _score_multiplies += n * n * head_dim
        outputs.append(tt.matmul(tt.softmax_rows(scores), vh))
    merged = outputs[0] if len(outputs) == 1 else tt.concat(outputs, axis=1)
    return tt.add(tt.matmul(merged, params.wo), params.bo)


def attention_round(feats: Tensor, pos: Tensor, mask: np.ndarray,
                    block: AttentionBlock) -> Tensor:
    """Residual masked attention followed by layer normalization."""
    qk_input = tt.concat([feats, pos], axis=1)
    attended = masked_attention(feats, qk_input, mask, block.mca)
    return tt.layer_norm(tt.add(feats, attended), block.ln_gain, block.ln_bias)


# -- cyclic frame stacking ------------------------------------------------------


def cyclic_frame_order(newest: int, oldest: int, index: int) -> list[int]:
    """Channel order for frame ``index`` inside the window [oldest, newest].

    The newest frame uses (newest, newest-1, ..., oldest); each step back in
    time rotates that order one position to the left, so every frame leads
    with its own content and the window shares one cyclic layout.
    """
    if not oldest <= index <= newest:
        raise ConfigError(f"frame {index} outside window [{oldest}, {newest}]")
    base = list(range(newest, oldest - 1, -1))
    j = newest - index
    return base[j:] + base[:j]


def stack_window_channels(frames: np.ndarray, window: int) -> np.ndarray:
    """Stack each frame with its window peers in cyclically shifted channel order.

    frames: (T, H, W) array; returns (T, window, H, W).  window=1 keeps each
    frame as its own single channel.
    """
    total = frames.shape[0]
    if total % window != 0:
        raise ConfigError(f"window {window} must divide frame count {total}")
    out = np.empty((total, window) + frames.shape[1:], dtype=np.float64)
    for block in range(total // window):
        oldest = block * window
        newest = oldest + window - 1
        for index in range(oldest, newest + 1):
            order = cyclic_frame_order(newest, oldest, index)
            out[index] = frames[order]
    return out


def stack_pair_channels(frames: np.ndarray) -> np.ndarray:
    """Pair stacking for the sequential-pair relation: frame t with frame t-1.

    The first frame, lacking a predecessor, pairs with its successor; for two
    frames this coincides with cyclic window stacking.
    """
    total = frames.shape[0]
    if total < 2:
        raise ConfigError("pair stacking needs at least 2 frames")
    out = np.empty((total, 2) + frames.shape[1:], dtype=np.float64)
    out[0, 0], out[0, 1] = frames[0], frames[1]
    for t in range(1, total):
        out[t, 0], out[t, 1] = frames[t], frames[t - 1]
    return out


# -- patch regrouping -------------------------------------------------------------


@dataclass
class RegroupPlan:
    """Row bookkeeping for one regrouped window: (frame, slot) per token row."""

    rows: list[tuple[int, int]] = field(default_factory=list)


def regroup_patches(feats: list[Tensor], cfg: WindowConfig) -> tuple[list[Tensor], list[RegroupPlan]]:
    """Gather same-phase, same-slot-range patches across blocks into new windows.

    Returns one token tensor per (phase, patch index) window, patches ordered
    newest block first, along with the (frame, slot) origin of every row.
    With a single block the "windows" degenerate to the per-frame patches
    themselves; cross-window attention is skipped in that case because there
    is no second block to relate (the window round already covers everything).
    """
    groups: list[Tensor] = []
    plans: list[RegroupPlan] = []
    for phase in range(cfg.window):
        frame_ids = [b * cfg.window + phase for b in range(cfg.blocks)][::-1]
        for p in range(cfg.patch_count):
            lo = p * cfg.stride
            hi = lo + cfg.patch
            plan = RegroupPlan()
            pieces = []
            for f in frame_ids:
                pieces.append(tt.slice_rows(feats[f], lo, hi))
                plan.rows.extend((f, slot) for slot in range(lo, hi))
            groups.append(tt.concat(pieces, axis=0) if len(pieces) > 1 else pieces[0])
            plans.append(plan)
    return groups, plans


def ungroup_patches(groups: list[Tensor], plans: list[RegroupPlan],
                    cfg: WindowConfig) -> list[Tensor]:
    """Scatter attended patch rows back to per-frame (K, C) feature tensors.

    Slots covered by several overlapping patches are reduced with cfg.merge;
    only the attended outputs participate in the reduction.
    """
    per_slot: dict[tuple[int, int], list[Tensor]] = {}
    for group, plan in zip(groups, plans):
        for row, (frame, slot) in enumerate(plan.rows):
            per_slot.setdefault((frame, slot), []).append(tt.slice_rows(group, row, row + 1))
    out: list[Tensor] = []
    for frame in range(cfg.frames):
        rows = []
        for slot in range(cfg.top_k):
            entries = per_slot.get((frame, slot))
            if not entries:
                raise ShapeError(f"slot {slot} of frame {frame} not covered by any patch")
            if len(entries) == 1:
                rows.append(entries[0])
            elif cfg.merge == "max":
                acc = entries[0]
                for e in entries[1:]:
                    acc = tt.maximum(acc, e)
                rows.append(acc)
            elif cfg.merge == "sum":
                acc = entries[0]
                for e in entries[1:]:
                    acc = tt.add(acc, e)
                rows.append(acc)
            else:
                acc = entries[0]
                for e in entries[1:]:
                    acc = tt.add(acc, e)
                rows.append(tt.mul(acc, tt.constant(1.0 / len(entries))))
        out.append(tt.concat(rows, axis=0))
    return out


# -- positional encoding -----------------------------------------------------------


@dataclass
class PosEncoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{n}": getattr(self, n) for n in ("w1", "b1", "w2", "b2")}


def make_pos_encoder(rng: np.random.Generator, pos_dim: int, hidden: int = 64) -> PosEncoderParams:
    return PosEncoderParams(
        w1=tt.init_uniform(rng, (2, hidden), 2),
        b1=tt.zeros((hidden,)),
        w2=tt.init_uniform(rng, (hidden, pos_dim), hidden),
        b2=tt.zeros((pos_dim,)),
    )


def encode_positions(coords: np.ndarray, grid_shape: tuple[int, int],
                     params: PosEncoderParams) -> Tensor:
    """Two-layer perceptron from normalized (row, col) in [0, 1]^2."""
    h, w = grid_shape
    denom = np.array([max(h - 1, 1), max(w - 1, 1)], dtype=np.float64)
    normed = Tensor(np.asarray(coords, dtype=np.float64) / denom)
    hidden = tt.relu(tt.add(tt.matmul(normed, params.w1), params.b1))
    return tt.add(tt.matmul(hidden, params.w2), params.b2)


# -- relation stacks ---------------------------------------------------------------


class TemporalRelation:
    """L stages of window attention plus cross-block regrouped attention."""

    def __init__(self, cfg: WindowConfig, channels: int, pos_dim: int, heads: int,
                 rng: np.random.Generator, sigma: float = MASK_SIGMA):
        self.cfg = cfg
        self.channels = channels
        self.pos_dim = pos_dim
        self.pos_encoder = make_pos_encoder(rng, pos_dim)
        qk_in = channels + pos_dim
        self.window_mask = (attention_mask(cfg.window, cfg.top_k, sigma)
                            if cfg.window >= 2 else None)
        self.regroup_mask = (attention_mask(cfg.blocks, cfg.patch, sigma)
                             if cfg.blocks >= 2 else None)
        self.stages: list[tuple[list[AttentionBlock], list[AttentionBlock]]] = []
        for _ in range(cfg.stages):
            window_blocks = [make_attention_block(rng, channels, qk_in, heads)
                             for _ in range(cfg.window_repeats)]
            regroup_blocks = ([make_attention_block(rng, channels, qk_in, heads)
                               for _ in range(cfg.regroup_repeats)]
                              if cfg.blocks >= 2 else [])
            self.stages.append((window_blocks, regroup_blocks))

    def params(self) -> dict[str, Tensor]:
        out = self.pos_encoder.named("relation.pos")
        for si, (wb, rb) in enumerate(self.stages):
            for bi, block in enumerate(wb):
                out.update(block.named(f"relation.s{si}.window{bi}"))
            for bi, block in enumerate(rb):
                out.update(block.named(f"relation.s{si}.regroup{bi}"))
        return out

    def apply(self, feats: list[Tensor], coords: list[np.ndarray],
              grid_shape: tuple[int, int]) -> list[Tensor]:
        """Relate per-frame (K, C) feature tensors; coords stay fixed."""
        cfg = self.cfg
        if len(feats) != cfg.frames:
            raise ShapeError(f"expected {cfg.frames} frames, got {len(feats)}")
        pos = [encode_positions(c, grid_shape, self.pos_encoder) for c in coords]
        for window_blocks, regroup_blocks in self.stages:
            feats = self._window_round(feats, pos, window_blocks)
            if cfg.blocks >= 2:
                feats = self._regroup_round(feats, pos, regroup_blocks)
        return feats

    def _window_round(self, feats: list[Tensor], pos: list[Tensor],
                      blocks: list[AttentionBlock]) -> list[Tensor]:
        cfg = self.cfg
        out = list(feats)
        for b in range(cfg.blocks):
            ids = list(range(b * cfg.window, (b + 1) * cfg.window))
            tokens = tt.concat([out[i] for i in ids], axis=0)
            token_pos = tt.concat([pos[i] for i in ids], axis=0)
            for block in blocks:
                tokens = attention_round(tokens, token_pos, self.window_mask, block)
            for j, i in enumerate(ids):
                out[i] = tt.slice_rows(tokens, j * cfg.top_k, (j + 1) * cfg.top_k)
        return out

    def _regroup_round(self, feats: list[Tensor], pos: list[Tensor],
                       blocks: list[AttentionBlock]) -> list[Tensor]:
        cfg = self.cfg
        groups, plans = regroup_patches(feats, cfg)
        pos_groups, _ = regroup_patches(pos, cfg)
        attended = []
        for group, group_pos in zip(groups, pos_groups):
            tokens = group
            for block in blocks:
                tokens = attention_round(tokens, group_pos, self.regroup_mask, block)
            attended.append(tokens)
        return ungroup_patches(attended, plans, cfg)


class SequentialPairRelation:
    """Chained two-frame attention: (0,1), (1,2), ... with the shared frame carried."""

    def __init__(self, frames: int, top_k: int, channels: int, pos_dim: int, heads: int,
                 repeats: int, rng: np.random.Generator, sigma: float = MASK_SIGMA):
        if frames < 2:
            raise ConfigError("sequential pair relation needs at least 2 frames")
        self.frames = frames
        self.top_k = top_k
        self.channels = channels
        self.pos_encoder = make_pos_encoder(rng, pos_dim)
        self.mask = attention_mask(2, top_k, sigma)
        qk_in = channels + pos_dim
        self.steps = [[make_attention_block(rng, channels, qk_in, heads)
                       for _ in range(repeats)]
                      for _ in range(frames - 1)]

    def params(self) -> dict[str, Tensor]:
        out = self.pos_encoder.named("relation.pos")
        for si, blocks in enumerate(self.steps):
            for bi, block in enumerate(blocks):
                out.update(block.named(f"relation.pair{si}.block{bi}"))
        return out

    def apply(self, feats: list[Tensor], coords: list[np.ndarray],
              grid_shape: tuple[int, int]) -> list[Tensor]:
        if len(feats) != self.frames:
            raise ShapeError(f"expected {self.frames} frames, got {len(feats)}")
        pos = [encode_positions(c, grid_shape, self.pos_encoder) for c in coords]
        out = list(feats)
        for t in range(1, self.frames):
            tokens = tt.concat([out[t], out[t - 1]], axis=0)
            token_pos = tt.concat([pos[t], pos[t - 1]], axis=0)
            for block in self.steps[t - 1]:
                tokens = attention_round(tokens, token_pos, self.mask, block)
            out[t] = tt.slice_rows(tokens, 0, self.top_k)
            out[t - 1] = tt.slice_rows(tokens, self.top_k, 2 * self.top_k)
        return out


# -- closed-form operation counts ----------------------------------------------------


def attention_cost(kind: str, frames: int, top_k: int, stages: int,
                   window: int = 2, patch: int | None = None) -> int:
    """Attention-score operation counts.

    "full": every frame attends to every frame, (T K)^2 L.
    "windowed": window attention K^2 T U L plus regrouped attention M T^2 K L / U.
    The windowed formula is evaluated verbatim even for window == frames, where
    the implementation skips the (then degenerate) regroup round; see docs.
    """
    if kind == "full":
        return (frames * top_k) ** 2 * stages
    if kind == "windowed":
        if patch is None:
            raise ConfigError("windowed cost needs the patch size")
        if frames % window != 0:
            raise ConfigError(f"window {window} must divide frames {frames}")
        regroup = patch * frames * frames * top_k * stages
        if regroup % window != 0:
            raise ConfigError("regrouped term is not an integer for this configuration")
        return top_k * top_k * frames * window * stages + regroup // window
    raise ConfigError(f"unknown attention kind '{kind}'")

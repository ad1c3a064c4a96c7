"""Registry of gradient checks against the central finite-difference oracle.

Each case builds a scalar loss around one differentiable primitive (or a full
loss composition, registered by the model module), perturbs one input tensor,
and returns the worst-coordinate error from ``check_gradient``.  The same
registry backs the unit tests and the ``gradcheck`` CLI subcommand.

Random draws keep inputs away from non-differentiable points (kinks of relu /
smooth-L1, integer bilinear coordinates); the analytic gradients are exact
there in the subgradient sense but central differences are not.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from . import tensor as tt
from .seeding import generator
from .tensor import Tensor, check_gradient

CheckFn = Callable[[int], float]

REGISTRY: dict[str, CheckFn] = {}


def register(name: str) -> Callable[[CheckFn], CheckFn]:
    def wrap(fn: CheckFn) -> CheckFn:
        REGISTRY[name] = fn
        return fn
    return wrap


def run(names: list[str] | None = None, seeds: range = range(10)) -> dict[str, float]:
    """Run the named checks (default: all) over the seeds; returns worst errors."""
    chosen = names if names is not None else sorted(REGISTRY)
    results: dict[str, float] = {}
    for name in chosen:
        fn = REGISTRY[name]
        results[name] = max(fn(seed) for seed in seeds)
    return results


def _rng(seed: int, label: str) -> np.random.Generator:
    return generator(seed, "gradcheck", label)


@register("matmul_left")
def _matmul_left(seed: int) -> float:
    rng = _rng(seed, "matmul")
    a = Tensor(rng.normal(size=(4, 5)))
    b = Tensor(rng.normal(size=(5, 3)))
    w = Tensor(rng.normal(size=(4, 3)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.matmul(t, b), w)), a)


@register("matmul_right")
def _matmul_right(seed: int) -> float:
    rng = _rng(seed, "matmul")
    a = Tensor(rng.normal(size=(4, 5)))
    b = Tensor(rng.normal(size=(5, 3)))
    w = Tensor(rng.normal(size=(4, 3)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.matmul(a, t), w)), b)


@register("elementwise_chain")
def _elementwise(seed: int) -> float:
    rng = _rng(seed, "elementwise")
    x = Tensor(rng.normal(size=(3, 4)))
    y = Tensor(rng.normal(size=(3, 4)))

    def loss(t: Tensor) -> Tensor:
        return tt.tsum(tt.mul(tt.add(t, y), tt.sub(t, y)))

    return check_gradient(loss, x)


@register("broadcast_bias")
def _broadcast(seed: int) -> float:
    rng = _rng(seed, "broadcast")
    x = Tensor(rng.normal(size=(5, 3)))
    b = Tensor(rng.normal(size=(3,)))
    w = Tensor(rng.normal(size=(5, 3)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.add(x, t), w)), b)


@register("softmax_rows")
def _softmax(seed: int) -> float:
    rng = _rng(seed, "softmax")
    x = Tensor(rng.normal(size=(4, 6)))
    w = Tensor(rng.normal(size=(4, 6)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.softmax_rows(t), w)), x)


@register("layer_norm_input")
def _ln_input(seed: int) -> float:
    rng = _rng(seed, "layer_norm")
    x = Tensor(rng.normal(size=(5, 8)))
    g = Tensor(rng.normal(size=(8,)))
    b = Tensor(rng.normal(size=(8,)))
    w = Tensor(rng.normal(size=(5, 8)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.layer_norm(t, g, b), w)), x)


@register("layer_norm_gain")
def _ln_gain(seed: int) -> float:
    rng = _rng(seed, "layer_norm")
    x = Tensor(rng.normal(size=(5, 8)))
    g = Tensor(rng.normal(size=(8,)))
    b = Tensor(rng.normal(size=(8,)))
    w = Tensor(rng.normal(size=(5, 8)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.layer_norm(x, t, b), w)), g)


@register("conv2d_input")
def _conv_input(seed: int) -> float:
    rng = _rng(seed, "conv")
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    b = Tensor(rng.normal(size=(4,)))
    return check_gradient(lambda t: tt.tsum(tt.square(tt.conv2d(t, w, b, stride=2, padding=1))), x)


@register("conv2d_weight")
def _conv_weight(seed: int) -> float:
    rng = _rng(seed, "conv")
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    b = Tensor(rng.normal(size=(4,)))
    return check_gradient(lambda t: tt.tsum(tt.square(tt.conv2d(x, t, b, stride=2, padding=1))), w)


@register("conv2d_bias")
def _conv_bias(seed: int) -> float:
    rng = _rng(seed, "conv")
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    b = Tensor(rng.normal(size=(4,)))
    return check_gradient(lambda t: tt.tsum(tt.square(tt.conv2d(x, w, t, stride=1, padding=1))), b)


@register("bilinear_sample_input")
def _bilinear_input(seed: int) -> float:
    rng = _rng(seed, "bilinear")
    x = Tensor(rng.normal(size=(3, 5, 5)))
    off = Tensor(rng.uniform(0.1, 0.4, size=(5, 5, 2)))
    w = Tensor(rng.normal(size=(3, 5, 5)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.bilinear_sample(t, off), w)), x)


@register("bilinear_sample_offsets")
def _bilinear_offsets(seed: int) -> float:
    rng = _rng(seed, "bilinear")
    x = Tensor(rng.normal(size=(3, 5, 5)))
    off = Tensor(rng.uniform(0.1, 0.4, size=(5, 5, 2)))
    w = Tensor(rng.normal(size=(3, 5, 5)))
    return check_gradient(lambda t: tt.tsum(tt.mul(tt.bilinear_sample(x, t), w)), off)


@register("smooth_l1")
def _smooth_l1(seed: int) -> float:
    rng = _rng(seed, "smooth_l1")
    x = Tensor(rng.normal(size=(4, 4)) * 2.0)
    return check_gradient(lambda t: tt.tsum(tt.smooth_l1(t)), x)


@register("smooth_l1_of_norm")
def _smooth_l1_norm(seed: int) -> float:
    rng = _rng(seed, "smooth_l1")
    r = Tensor(rng.normal(size=(6, 2)))
    return check_gradient(lambda t: tt.tsum(tt.smooth_l1_of_norm(t)), r)


@register("sigmoid_log")
def _sigmoid_log(seed: int) -> float:
    rng = _rng(seed, "sigmoid")
    x = Tensor(rng.normal(size=(3, 4)))
    return check_gradient(lambda t: tt.tsum(tt.log(tt.sigmoid(t))), x)


@register("sqrt_square")
def _sqrt_square(seed: int) -> float:
    rng = _rng(seed, "sqrt")
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))
    return check_gradient(lambda t: tt.tsum(tt.sqrt(tt.square(t))), x)


@register("concat_slice")
def _concat_slice(seed: int) -> float:
    rng = _rng(seed, "concat")
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(2, 4)))

    def loss(t: Tensor) -> Tensor:
        joined = tt.concat([t, b], axis=0)
        return tt.tsum(tt.square(tt.slice_rows(joined, 1, 4)))

    return check_gradient(loss, a)


@register("slice_cols")
def _slice_cols(seed: int) -> float:
    rng = _rng(seed, "slice")
    x = Tensor(rng.normal(size=(4, 6)))
    return check_gradient(lambda t: tt.tsum(tt.square(tt.slice_cols(t, 1, 4))), x)


@register("gather_place_pixels")
def _gather_place(seed: int) -> float:
    rng = _rng(seed, "gather")
    x = Tensor(rng.normal(size=(3, 4, 4)))
    coords = np.array([[0, 0], [1, 3], [2, 2]])
    w = Tensor(rng.normal(size=(3, 4, 4)))

    def loss(t: Tensor) -> Tensor:
        feats = tt.gather_pixels(t, coords)
        refreshed = tt.place_pixels(t, coords, tt.square(feats))
        return tt.tsum(tt.mul(refreshed, w))

    return check_gradient(loss, x)


@register("take_rows")
def _take_rows(seed: int) -> float:
    rng = _rng(seed, "take")
    x = Tensor(rng.normal(size=(5, 3)))
    index = np.array([0, 2, 2, 4])
    return check_gradient(lambda t: tt.tsum(tt.square(tt.take_rows(t, index))), x)


@register("maximum")
def _maximum(seed: int) -> float:
    rng = _rng(seed, "maximum")
    a = Tensor(rng.normal(size=(4, 4)))
    b = Tensor(rng.normal(size=(4, 4)) + 3.0)
    return check_gradient(lambda t: tt.tsum(tt.maximum(t, b)), a)


@register("relu_mean")
def _relu(seed: int) -> float:
    rng = _rng(seed, "relu")
    x = Tensor(rng.normal(size=(4, 4)) + 0.05)
    return check_gradient(lambda t: tt.tmean(tt.relu(t)), x)


def _two_frame_attention(seed: int, which: str) -> float:
    from .relation import attention_mask, make_mca_params, masked_attention

    rng = _rng(seed, "attention")
    params = make_mca_params(rng, channels=8, qk_in=12, heads=2)
    values = Tensor(rng.normal(size=(8, 8)))
    qk = Tensor(rng.normal(size=(8, 12)))
    mask = attention_mask(2, 4)

    if which == "values":
        return check_gradient(
            lambda t: tt.tsum(tt.square(masked_attention(t, qk, mask, params))), values)
    return check_gradient(
        lambda t: tt.tsum(tt.square(masked_attention(values, qk, mask, params))),
        getattr(params, which))


@register("masked_attention_values")
def _attention_values(seed: int) -> float:
    return _two_frame_attention(seed, "values")


@register("masked_attention_wq")
def _attention_wq(seed: int) -> float:
    return _two_frame_attention(seed, "wq")


@register("masked_attention_wo")
def _attention_wo(seed: int) -> float:
    return _two_frame_attention(seed, "wo")


@register("relation_stack")
def _relation_stack(seed: int) -> float:
    from .relation import TemporalRelation, WindowConfig

    rng = _rng(seed, "relation")
    cfg = WindowConfig(frames=4, window=2, top_k=4, patch=2, stride=2,
                       stages=1, window_repeats=1, regroup_repeats=1)
    model = TemporalRelation(cfg, channels=8, pos_dim=4, heads=2, rng=rng)
    coords = [np.stack([np.arange(4), np.arange(4)], axis=1) for _ in range(4)]
    feats_data = [rng.normal(size=(4, 8)) for _ in range(4)]
    target = model.params()["relation.s0.window0.mca.wv"]

    def loss(t: Tensor) -> Tensor:
        feats = [Tensor(f) for f in feats_data]
        out = model.apply(feats, coords, (8, 8))
        return tt.tsum(tt.square(tt.concat(out, axis=0)))

    return check_gradient(loss, target)


@register("encoder")
def _encoder(seed: int) -> float:
    from .heads import encode, make_encoder

    rng = _rng(seed, "encoder")
    enc = make_encoder(rng, in_channels=2, width=4)
    frames = Tensor(rng.normal(size=(1, 2, 8, 8)))
    return check_gradient(
        lambda t: tt.tsum(tt.square(encode(enc, frames))), enc.conv1.weight)


def _direction_case(seed: int, which: str) -> float:
    from .heads import direction_head, make_direction_head

    rng = _rng(seed, "direction")
    head = make_direction_head(rng, channels=2)
    head.out_weight.data = rng.normal(size=head.out_weight.shape) * 0.5
    head.out_bias.data = rng.normal(size=head.out_bias.shape) * 0.1
    z_new = Tensor(rng.normal(size=(2, 4, 4)))
    z_old = Tensor(rng.normal(size=(2, 4, 4)))
    coords = np.array([[0, 1], [2, 2], [3, 0]])

    def loss(t: Tensor) -> Tensor:
        return tt.tsum(tt.square(direction_head(head, z_new, z_old, coords)))

    targets = {"offsets": head.offsets.bias, "deform": head.deform_weight,
               "input": z_new}
    return check_gradient(loss, targets[which])


@register("direction_head_offsets")
def _dest_offsets(seed: int) -> float:
    return _direction_case(seed, "offsets")


@register("direction_head_deform")
def _dest_deform(seed: int) -> float:
    return _direction_case(seed, "deform")


@register("direction_head_input")
def _dest_input(seed: int) -> float:
    return _direction_case(seed, "input")


def _micro_model(rng):
    from .model import RadarNet

    return RadarNet(rng, frames=2, top_k=2, channels=4, pos_dim=2,
                    attention_heads=2, relation="windowed", window=2, patch=2,
                    slot_stride=2, stages=1, window_repeats=1, regroup_repeats=1)


@register("loss_bbox_end_to_end")
def _loss_bbox(seed: int) -> float:
    from .geometry import OrientedBox
    from .losses import bbox_loss, build_frame_targets

    rng = _rng(seed, "loss_bbox")
    model = _micro_model(rng)
    frames = rng.normal(size=(2, 16, 16))
    targets = [
        build_frame_targets([OrientedBox(0.8, 1.2, 1.0, 0.6, 0.3)], (4, 4)),
        build_frame_targets([OrientedBox(1.1, 1.0, 1.0, 0.6, 0.35)], (4, 4)),
    ]

    def loss(t: Tensor) -> Tensor:
        preds = model.forward(frames)
        total = None
        for pred, target in zip(preds, targets):
            prob = tt.reshape(tt.sigmoid(pred.heatmap_logits), target.heatmap.shape)
            term = bbox_loss(prob, pred.size, pred.orientation, pred.offset, target)
            total = term if total is None else tt.add(total, term)
        return total

    return check_gradient(loss, model.params()["encoder.conv1.bias"])


@register("loss_direction_end_to_end")
def _loss_direction(seed: int) -> float:
    from .losses import ClipTracks, direction_loss

    rng = _rng(seed, "loss_direction")
    model = _micro_model(rng)
    model.direction_head.out_weight.data = rng.normal(size=model.direction_head.out_weight.shape) * 0.5
    frames = rng.normal(size=(2, 16, 16))
    tracks = ClipTracks(
        positions=np.array([[[0.9, 1.1], [1.6, 0.8]], [[2.2, 2.4], [2.0, 3.1]]]),
        present=np.ones((2, 2), dtype=bool))

    def loss(t: Tensor) -> Tensor:
        preds = model.forward(frames)

        def direction_fn(frame: int, tau: int, coords: np.ndarray) -> Tensor:
            return model.direction(preds, frame, tau, coords)

        return tt.add(direction_loss(direction_fn, 0, tracks, (4, 4)),
                      direction_loss(direction_fn, 1, tracks, (4, 4)))

    return check_gradient(loss, model.params()["encoder.conv1.bias"])

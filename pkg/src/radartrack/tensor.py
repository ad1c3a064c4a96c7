"""Dense float64 tensors with a small reverse-mode differentiation engine.

The op set is deliberately fixed and small: matrix multiply, 2-D convolution,
bilinear sampling, row softmax, layer normalization, elementwise arithmetic,
smooth-L1, concatenation and slicing.  Higher layers (attention, detection
heads, losses) compose everything from these primitives, and every primitive
backward pass is validated against the central-difference oracle in
``check_gradient``.

Tensors record their parents and a backward closure when gradients are
enabled; ``backward`` replays the recorded graph in exact reverse topological
order and accumulates gradients into ``Tensor.grad`` buffers.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Sequence

import numpy as np

from .errors import OracleError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would also promote 0-d scalars to 1-d; 0-d
            # arrays are always contiguous so they never reach this branch.
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph construction -------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this tensor through the recorded graph.

        Visits recorded ops in exact reverse topological order.  ``grad``
        defaults to ones and must match this tensor's shape.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is outside the op set; multiply by a reciprocal")
        return mul(self, _wrap(1.0 / float(other)))

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def constant(value) -> Tensor:
    return _wrap(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise maximum; at ties the gradient routes to the first input."""
    data = np.maximum(a.data, b.data)
    a_wins = a.data >= b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * a_wins, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~a_wins, b.shape))

    return _make(data, (a, b), backward, "maximum")


# -- elementwise nonlinearities -----------------------------------------------


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def backward(g):
        x._accumulate(g * mask)

    return _make(data, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * data * (1.0 - data))

    return _make(data, (x,), backward, "sigmoid")


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return _make(data, (x,), backward, "log")


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)

    def backward(g):
        x._accumulate(g * 0.5 / data)

    return _make(data, (x,), backward, "sqrt")


def square(x: Tensor) -> Tensor:
    data = x.data * x.data

    def backward(g):
        x._accumulate(g * 2.0 * x.data)

    return _make(data, (x,), backward, "square")


def smooth_l1(x: Tensor) -> Tensor:
    """Elementwise smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    absx = np.abs(x.data)
    small = absx < 1.0
    data = np.where(small, 0.5 * x.data * x.data, absx - 0.5)

    def backward(g):
        x._accumulate(g * np.where(small, x.data, np.sign(x.data)))

    return _make(data, (x,), backward, "smooth_l1")


def smooth_l1_of_norm(r: Tensor) -> Tensor:
    """Smooth-L1 applied to the L2 norm of the last-axis vectors of ``r``.

    Written on the squared norm so the gradient at the origin is zero instead
    of undefined: 0.5*q for q < 1 and sqrt(q) - 0.5 otherwise, with q = sum r^2.
    """
    q = np.sum(r.data * r.data, axis=-1)
    small = q < 1.0
    root = np.sqrt(np.maximum(q, 1e-300))
    data = np.where(small, 0.5 * q, root - 0.5)

    def backward(g):
        scale = np.where(small, 1.0, 1.0 / root)
        r._accumulate(np.expand_dims(g * scale, -1) * r.data)

    return _make(data, (r,), backward, "smooth_l1_of_norm")


# -- reductions ---------------------------------------------------------------


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    data = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            x._accumulate(np.full_like(x.data, g.item()) if g.size == 1 else g * np.ones_like(x.data))
        else:
            x._accumulate(np.expand_dims(g, axis) * np.ones_like(x.data))

    return _make(data, (x,), backward, "sum")


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = x.data.mean()

    def backward(g):
        x._accumulate(np.full_like(x.data, g.item() / n))

    return _make(data, (x,), backward, "mean")


# -- shape manipulation ---------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(data, (x,), backward, "reshape")


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a 2-D tensor, got shape {x.shape}")
    data = np.ascontiguousarray(x.data.T)

    def backward(g):
        x._accumulate(g.T)

    return _make(data, (x,), backward, "transpose2d")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat requires at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tensors, backward, "concat")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        x._accumulate(full)

    return _make(data, (x,), backward, "slice_rows")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got shape {x.shape}")
    data = x.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return _make(data, (x,), backward, "slice_cols")


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor by integer index (duplicates allowed)."""
    index = np.asarray(index, dtype=np.intp)
    data = x.data[index].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    return _make(data, (x,), backward, "take_rows")


def gather_pixels(x: Tensor, coords: np.ndarray) -> Tensor:
    """Gather feature vectors from a (C, H, W) map at integer (row, col) coords.

    Returns a (K, C) tensor, one row per coordinate.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"gather_pixels expects a (C, H, W) tensor, got shape {x.shape}")
    coords = np.asarray(coords, dtype=np.intp)
    rows, cols = coords[:, 0], coords[:, 1]
    data = np.ascontiguousarray(x.data[:, rows, cols].T)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (slice(None), rows, cols), g.T)
        x._accumulate(full)

    return _make(data, (x,), backward, "gather_pixels")


def place_pixels(x: Tensor, coords: np.ndarray, values: Tensor) -> Tensor:
    """Copy of a (C, H, W) map with feature vectors replaced at the given coords.

    Coordinates must be distinct; non-listed cells are bit-identical to ``x``.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"place_pixels expects a (C, H, W) tensor, got shape {x.shape}")
    coords = np.asarray(coords, dtype=np.intp)
    rows, cols = coords[:, 0], coords[:, 1]
    data = x.data.copy()
    data[:, rows, cols] = values.data.T

    def backward(g):
        if x.requires_grad:
            gx = g.copy()
            gx[:, rows, cols] = 0.0
            x._accumulate(gx)
        if values.requires_grad:
            values._accumulate(np.ascontiguousarray(g[:, rows, cols].T))

    return _make(data, (x, values), backward, "place_pixels")


# -- matrix multiply ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D tensors, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


# -- softmax / layer norm --------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        x._accumulate((g - dot) * data)

    return _make(data, (x,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    feat = x.shape[-1]
    if gain.shape != (feat,) or bias.shape != (feat,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({feat},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    data = normed * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * normed).reshape(-1, feat).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, feat).sum(axis=0))
        if x.requires_grad:
            dy = g * gain.data
            m1 = dy.mean(axis=-1, keepdims=True)
            m2 = (dy * normed).mean(axis=-1, keepdims=True)
            x._accumulate((dy - m1 - normed * m2) * inv)

    return _make(data, (x, gain, bias), backward, "layer_norm")


# -- convolution -----------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of (N, Cin, H, W) input with (Cout, Cin, kh, kw) kernels."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects (N, Cin, H, W) input, got shape {x.shape}")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects (Cout, Cin, kh, kw) weight, got shape {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin} vs weight {cin_w}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d output dims ({oh}, {ow}) are non-positive for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]            # (N, Cin, OH, OW, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, cin * kh * kw)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = cols @ wmat.T                                     # (N, OH*OW, Cout)
    if bias is not None:
        out = out + bias.data
    data = np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, cout, oh, ow))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.reshape(n, cout, oh * ow).transpose(0, 2, 1)   # (N, OH*OW, Cout)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=(0, 1)))
        if weight.requires_grad:
            gw = np.einsum("npo,npk->ok", gmat, cols)
            weight._accumulate(gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = gmat @ wmat                                  # (N, OH*OW, Cin*kh*kw)
            gcols = gcols.reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(gxp)

    return _make(data, parents, backward, "conv2d")


# -- bilinear sampling -----------------------------------------------------------


def bilinear_sample(x: Tensor, offsets: Tensor) -> Tensor:
    """Sample a (C, H, W) map at each integer grid point plus a per-point offset.

    ``offsets`` has shape (H, W, 2) holding (row, col) displacements; the output
    keeps the (C, H, W) shape.  Out-of-bounds corners read as zero.  Zero
    offsets reproduce the input exactly.  Differentiable in both arguments;
    the offset gradient is one-sided at integer sample coordinates.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"bilinear_sample expects a (C, H, W) tensor, got shape {x.shape}")
    c, h, w = x.shape
    if offsets.shape != (h, w, 2):
        raise ShapeError(f"offsets shape {offsets.shape} != expected {(h, w, 2)}")
    gi, gj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    yy = gi + offsets.data[:, :, 0]
    xx = gj + offsets.data[:, :, 1]
    y0 = np.floor(yy).astype(np.intp)
    x0 = np.floor(xx).astype(np.intp)
    wy = yy - y0
    wx = xx - x0

    def read(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = x.data[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return vals * valid, valid

    v00, m00 = read(y0, x0)
    v01, m01 = read(y0, x0 + 1)
    v10, m10 = read(y0 + 1, x0)
    v11, m11 = read(y0 + 1, x0 + 1)
    w00 = (1 - wy) * (1 - wx)
    w01 = (1 - wy) * wx
    w10 = wy * (1 - wx)
    w11 = wy * wx
    data = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for (yi, xi, wgt, m) in ((y0, x0, w00, m00), (y0, x0 + 1, w01, m01),
                                     (y0 + 1, x0, w10, m10), (y0 + 1, x0 + 1, w11, m11)):
                contrib = g * wgt * m
                np.add.at(gx, (slice(None), np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)), contrib)
            x._accumulate(gx)
        if offsets.requires_grad:
            # d(out)/d(dy): lerp the vertical difference along x, and vice versa.
            gy = ((v10 - v00) * (1 - wx) + (v11 - v01) * wx)
            gx_ = ((v01 - v00) * (1 - wy) + (v11 - v10) * wy)
            go = np.zeros_like(offsets.data)
            go[:, :, 0] = (g * gy).sum(axis=0)
            go[:, :, 1] = (g * gx_).sum(axis=0)
            offsets._accumulate(go)

    return _make(data, (x, offsets), backward, "bilinear_sample")


# -- parameter creation ------------------------------------------------------------


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 requires_grad: bool = True) -> Tensor:
    """Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad)


def zeros(shape: tuple[int, ...], requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


# -- gradient oracle --------------------------------------------------------------


def check_gradient(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """Compare the analytic gradient of ``f`` at ``x`` against central differences.

    ``f`` must map ``x`` to a scalar tensor.  Returns the worst coordinate error
    max |analytic - numeric| / max(1, |analytic|).  Raises OracleError if the
    loss is non-finite at any evaluation point.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ShapeError(f"check_gradient needs a scalar loss, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise OracleError("loss is non-finite at the evaluation point")
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(x).data.item()
            flat[i] = orig - eps
            lo = f(x).data.item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise OracleError(f"loss is non-finite at perturbed coordinate {i}")
            numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(x.data.shape)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0

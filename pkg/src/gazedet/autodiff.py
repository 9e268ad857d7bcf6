"""Minimal dense-tensor engine with reverse-mode gradients.

Everything is float64 on CPU and fully deterministic: the same seed gives a
bitwise-identical training trajectory. The graph is a plain tape of applied
ops (each output tensor remembers its parents and a backward closure); there
is no general graph compiler because the detector is a fixed pipeline.

Conventions:
  - conv2d is cross-correlation (no kernel flip), NCHW layout.
  - ReLU subgradient at 0 is 0.
  - Any op that would produce NaN/Inf raises NumericsError instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "LayerParams",
    "NumericsError",
    "ShapeError",
    "conv2d",
    "relu",
    "maxpool2d",
    "linear",
    "sigmoid",
    "elementwise_combine",
    "reshape",
    "transpose",
    "flatten",
    "gather_rows",
    "take_channel_per_row",
    "tensor_sum",
    "softmax_cross_entropy",
    "bce_with_logits",
    "smooth_l1",
    "grad_check",
    "sgd_step",
    "kaiming_conv",
    "kaiming_linear",
]


class NumericsError(FloatingPointError):
    """An op produced or received a non-finite value."""


class ShapeError(ValueError):
    """Operand shapes are incompatible; message names both shapes."""


def _check_finite(arr: np.ndarray, ctx: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {ctx}")
    return arr


class Tensor:
    """Dense f64 array with an optional gradient buffer.

    ``requires_grad`` marks trainable leaves; interior nodes propagate
    gradients whenever any ancestor is trainable.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_vel")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        _check_finite(arr, "tensor constructor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._vel = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse pass from a scalar output."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.tracked:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return elementwise_combine(self, other, "sum")

    def __mul__(self, other: "Tensor") -> "Tensor":
        return elementwise_combine(self, other, "mul")


def _node(data: np.ndarray, parents: tuple, backward, ctx: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _check_finite(np.ascontiguousarray(data, dtype=np.float64), ctx)
    out.grad = None
    out.requires_grad = False
    out._vel = None
    if any(p.tracked for p in parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


@dataclass
class LayerParams:
    """Trainable weights/bias for one layer.

    conv2d weights: (C_out, C_in, kH, kW); linear weights: (M, D).
    Bias length is C_out / M.
    """

    weights: Tensor
    bias: Tensor
    kind: str  # "conv2d" | "linear"

    def tensors(self) -> tuple[Tensor, Tensor]:
        return (self.weights, self.bias)

    def zero_grad(self) -> None:
        self.weights.zero_grad()
        self.bias.zero_grad()


def kaiming_conv(c_out: int, c_in: int, kh: int, kw: int, rng: np.random.Generator) -> LayerParams:
    fan_in = c_in * kh * kw
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, kh, kw))
    b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=(c_out,))
    return LayerParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), "conv2d")


def kaiming_linear(m: int, d: int, rng: np.random.Generator) -> LayerParams:
    bound = np.sqrt(6.0 / d)
    w = rng.uniform(-bound, bound, size=(m, d))
    b = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(m,))
    return LayerParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), "linear")


# ---------------------------------------------------------------------------
# primitive ops


def conv2d(x: Tensor, params: LayerParams, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over NCHW input; output H' = (H + 2p - kH)//s + 1."""
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride/pad ({stride}, {pad})")
    w, b = params.weights, params.bias
    n, c, h, wid = x.data.shape
    f, c_w, kh, kw = w.data.shape
    if c != c_w:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape} vs weights {w.data.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {w.data.shape} larger than padded input {x.data.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, ho, wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw)
    y = cols @ wmat.T + b.data  # (n, ho*wo, f)
    out_data = y.transpose(0, 2, 1).reshape(n, f, ho, wo)

    def backward(g):
        g2 = g.reshape(n, f, ho * wo).transpose(0, 2, 1)  # (n, L, f)
        if w.tracked:
            w.accumulate_grad(np.einsum("nlf,nlk->fk", g2, cols).reshape(w.data.shape))
        if b.tracked:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.tracked:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            hp, wp = h + 2 * pad, wid + 2 * pad
            dxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            x.accumulate_grad(dxp[:, :, pad : pad + h, pad : pad + wid] if pad else dxp)

    return _node(out_data, (x, w, b), backward, "conv2d output")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.tracked:
            x.accumulate_grad(g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), backward, "relu output")


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Window maxima; gradient routed to the first max index in each window."""
    n, c, h, w = x.data.shape
    if k > h or k > w:
        raise ShapeError(f"pool window {k} larger than input {x.data.shape}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(n, c, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)  # first-index tie-break
    out_data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.tracked:
            return
        dx = np.zeros_like(x.data)
        ni, ci, oi, oj = np.indices((n, c, ho, wo))
        ii = oi * stride + arg // k
        jj = oj * stride + arg % k
        np.add.at(dx, (ni, ci, ii, jj), g)
        x.accumulate_grad(dx)

    return _node(out_data, (x,), backward, "maxpool2d output")


def linear(x: Tensor, params: LayerParams) -> Tensor:
    """Affine map x @ W.T + b for 2-D inputs (N, D) -> (N, M)."""
    w, b = params.weights, params.bias
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.data.shape} vs weights {w.data.shape}")
    out_data = x.data @ w.data.T + b.data

    def backward(g):
        if w.tracked:
            w.accumulate_grad(g.T @ x.data)
        if b.tracked:
            b.accumulate_grad(g.sum(axis=0))
        if x.tracked:
            x.accumulate_grad(g @ w.data)

    return _node(out_data, (x, w, b), backward, "linear output")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)

    def backward(g):
        if x.tracked:
            x.accumulate_grad(g * s * (1.0 - s))

    return _node(s, (x,), backward, "sigmoid output")


def elementwise_combine(a: Tensor, b: Tensor, mode: str) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"combine shape mismatch: {a.data.shape} vs {b.data.shape}")
    if mode == "sum":
        out_data = a.data + b.data

        def backward(g):
            if a.tracked:
                a.accumulate_grad(g)
            if b.tracked:
                b.accumulate_grad(g)

    elif mode == "mul":
        out_data = a.data * b.data

        def backward(g):
            if a.tracked:
                a.accumulate_grad(g * b.data)
            if b.tracked:
                b.accumulate_grad(g * a.data)

    else:
        raise ValueError(f"unknown combine mode {mode!r}")
    return _node(out_data, (a, b), backward, "combine output")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.data.shape
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.tracked:
            x.accumulate_grad(g.reshape(old))

    return _node(out_data, (x,), backward, "reshape output")


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    out_data = x.data.transpose(axes)

    def backward(g):
        if x.tracked:
            x.accumulate_grad(g.transpose(inv))

    return _node(out_data, (x,), backward, "transpose output")


def flatten(x: Tensor, start_dim: int = 1) -> Tensor:
    shape = x.data.shape
    new_shape = shape[:start_dim] + (-1,)
    out_data = x.data.reshape(new_shape)

    def backward(g):
        if x.tracked:
            x.accumulate_grad(g.reshape(shape))

    return _node(out_data, (x,), backward, "flatten output")


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out_data = x.data[idx]

    def backward(g):
        if x.tracked:
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            x.accumulate_grad(dx)

    return _node(out_data, (x,), backward, "gather output")


def take_channel_per_row(x: Tensor, channels: np.ndarray) -> Tensor:
    """From (R, K, ...) take one K-channel per row -> (R, ...)."""
    channels = np.asarray(channels, dtype=np.intp)
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, channels]

    def backward(g):
        if x.tracked:
            dx = np.zeros_like(x.data)
            dx[rows, channels] = g
            x.accumulate_grad(dx)

    return _node(out_data, (x,), backward, "channel-select output")


def tensor_sum(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward(g):
        if x.tracked:
            x.accumulate_grad(np.broadcast_to(g, x.data.shape).copy())

    return _node(out_data, (x,), backward, "sum output")


# ---------------------------------------------------------------------------
# fused losses (stable log-sum-exp / log1p forms with analytic gradients)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean multiclass CE over rows of (R, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.data
    r = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    logsum = np.log(ez.sum(axis=1)) + zmax[:, 0]
    losses = logsum - z[np.arange(r), labels]
    out_data = np.asarray(losses.mean())

    def backward(g):
        if logits.tracked:
            p = ez / ez.sum(axis=1, keepdims=True)
            p[np.arange(r), labels] -= 1.0
            logits.accumulate_grad(g * p / r)

    return _node(out_data, (logits,), backward, "softmax-CE output")


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary CE of sigmoid(logits) against {0,1} targets, any shape."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"bce target shape {t.shape} vs logits {logits.data.shape}")
    z = logits.data
    losses = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray(losses.mean())
    n = z.size

    def backward(g):
        if logits.tracked:
            logits.accumulate_grad(g * (_stable_sigmoid(z) - t) / n)

    return _node(out_data, (logits,), backward, "bce output")


def smooth_l1(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Smooth-L1 summed over the last axis, averaged over rows.

    Per element: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError(f"smooth_l1 target shape {t.shape} vs pred {pred.data.shape}")
    d = pred.data - t
    absd = np.abs(d)
    per = np.where(absd < 1.0, 0.5 * d * d, absd - 0.5)
    r = pred.data.shape[0] if pred.data.ndim > 1 else 1
    out_data = np.asarray(per.sum() / r)

    def backward(g):
        if pred.tracked:
            pred.accumulate_grad(g * np.where(absd < 1.0, d, np.sign(d)) / r)

    return _node(out_data, (pred,), backward, "smooth-l1 output")


# ---------------------------------------------------------------------------
# verification and optimization


def grad_check(fn, inputs: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(*inputs)`` must return a scalar Tensor. Error is
    |analytic - numeric| / max(1, |analytic|), maximized over all elements
    of every input.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if out.data.size != 1:
        raise ShapeError(f"grad_check closure must return a scalar, got {out.data.shape}")
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            f_pos = fn(*inputs).item()
            flat[i] = old - eps
            f_neg = fn(*inputs).item()
            flat[i] = old
            numeric = (f_pos - f_neg) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    for t in inputs:
        t.zero_grad()
    return worst


def sgd_step(params: list[LayerParams], lr: float, momentum: float = 0.0) -> None:
    """v <- momentum*v - lr*g; w <- w + v; grads zeroed afterward.

    A tensor with no gradient (its parameter did not contribute to the
    loss this step) is treated as having a zero gradient, so its momentum
    still decays.
    """
    for p in params:
        for t in p.tensors():
            if t._vel is None:
                t._vel = np.zeros_like(t.data)
            grad = np.zeros_like(t.data) if t.grad is None else t.grad
            t._vel = momentum * t._vel - lr * grad
            t.data = _check_finite(t.data + t._vel, "sgd_step update")
            t.grad = None

"""Dense tensors with reverse-mode automatic differentiation.

Design: define-by-run. Ops execute eagerly on numpy arrays and, when a
Tape is active and an input is tracked, append a node (output, inputs,
backward closure) to the tape. The tape is rebuilt on every forward pass,
so weight sharing (two branches through one network) and alternating
optimization need no special machinery. `Tape.gradients(loss)` walks the
recorded nodes in reverse, visiting each node exactly once and summing
gradients over all paths.

Only float32 and float64 are supported. float32 is the training default;
float64 exists so that finite-difference gradient checks are numerically
meaningful. Every forward op verifies its output is finite and raises
otherwise, which is how training divergence surfaces.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "Gradients", "backward",
    "add", "sub", "mul", "div", "neg", "pow_", "exp", "log", "abs_",
    "matmul", "sum_", "mean", "reshape", "transpose", "concat", "gather_rows",
    "relu", "leaky_relu", "tanh", "sigmoid", "softplus",
    "conv2d", "conv2d_transpose", "max_pool", "batch_norm", "dropout",
    "upsample_nearest", "softmax_cross_entropy",
]

_ACTIVE_TAPE: "Tape | None" = None

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from finite inputs."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    # min/max propagate NaN and expose Inf without allocating a bool mask
    if arr.size == 0:
        return
    lo, hi = arr.min(), arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """N-dimensional float array, optionally tracked for differentiation.

    Tensors are treated as immutable once they have participated in a
    forward op; parameter updates happen between forward passes by
    rebinding or mutating `.data` on leaf tensors only.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


class Gradients:
    """Gradient map keyed by tensor identity."""

    def __init__(self, grads: dict[int, np.ndarray], holders: dict[int, Tensor]):
        self._grads = grads
        self._holders = holders  # keeps tensors alive so ids stay unique

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self._grads[id(t)]

    def get(self, t: Tensor, default=None):
        g = self._grads.get(id(t))
        if g is None:
            if default is not None:
                return default
            return np.zeros_like(t.data)
        return g

    def __len__(self):
        return len(self._grads)


class Tape:
    """Ordered record of one forward pass. Single-threaded.

    Usage:
        with Tape() as tape:
            loss = model(...)
        grads = tape.gradients(loss)
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], tuple[bool, ...], object]] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def __len__(self):
        return len(self._nodes)

    def gradients(self, loss: Tensor) -> Gradients:
        """Backward pass from a scalar loss. Each node is visited once."""
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
        if not self._nodes:
            raise ValueError("tape is empty: nothing was recorded")
        buf: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        leaf_grads: dict[int, np.ndarray] = {}
        leaf_holders: dict[int, Tensor] = {}
        for out, inputs, needs, fn in reversed(self._nodes):
            g = buf.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, fn(g, needs)):
                if gi is None:
                    continue
                k = id(t)
                prev = buf.get(k)
                buf[k] = gi if prev is None else prev + gi
                holders[k] = t
        # whatever is left in buf belongs to leaves (never produced by a node)
        for k, g in buf.items():
            t = holders[k]
            if t.requires_grad:
                leaf_grads[k] = g
                leaf_holders[k] = t
        return Gradients(leaf_grads, leaf_holders)


def backward(loss: Tensor, tape: Tape) -> Gradients:
    """Module-level alias for Tape.gradients."""
    return tape.gradients(loss)


def _record(out: Tensor, inputs: tuple[Tensor, ...], fn) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is None:
        return out
    needs = tuple(t.requires_grad for t in inputs)
    if not any(needs):
        return out
    out.requires_grad = True
    tape._nodes.append((out, inputs, needs, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")
    return _record(out, (a, b), lambda g, needs: (
        _unbroadcast(g, a.data.shape) if needs[0] else None,
        _unbroadcast(g, b.data.shape) if needs[1] else None,
    ))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data - b.data)
    _check_finite(out.data, "sub")
    return _record(out, (a, b), lambda g, needs: (
        _unbroadcast(g, a.data.shape) if needs[0] else None,
        _unbroadcast(-g, b.data.shape) if needs[1] else None,
    ))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data * b.data)
    _check_finite(out.data, "mul")
    return _record(out, (a, b), lambda g, needs: (
        _unbroadcast(g * b.data, a.data.shape) if needs[0] else None,
        _unbroadcast(g * a.data, b.data.shape) if needs[1] else None,
    ))


def div(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data / b.data)
    _check_finite(out.data, "div")
    return _record(out, (a, b), lambda g, needs: (
        _unbroadcast(g / b.data, a.data.shape) if needs[0] else None,
        _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape) if needs[1] else None,
    ))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g, needs: (-g,))


def pow_(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out = Tensor(a.data ** p)
    _check_finite(out.data, "pow")
    return _record(out, (a,), lambda g, needs: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = Tensor(np.exp(a.data))
    _check_finite(out.data, "exp")
    return _record(out, (a,), lambda g, needs: (g * out.data,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(np.log(a.data))
    _check_finite(out.data, "log")
    return _record(out, (a,), lambda g, needs: (g / a.data,))


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g, needs: (g * np.sign(a.data),))


# ---------------------------------------------------------------------------
# activations

def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0))
    return _record(out, (a,), lambda g, needs: (g * (a.data > 0),))


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.where(a.data > 0, a.data, alpha * a.data))
    return _record(out, (a,), lambda g, needs: (g * np.where(a.data > 0, 1.0, alpha).astype(a.data.dtype),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g, needs: (g * (1.0 - out.data * out.data),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids exp overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(_sigmoid_np(a.data))
    return _record(out, (a,), lambda g, needs: (g * out.data * (1.0 - out.data),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    a = _as_tensor(a)
    out = Tensor(np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data))
    _check_finite(out.data, "softplus")
    return _record(out, (a,), lambda g, needs: (g * _sigmoid_np(a.data),))


# ---------------------------------------------------------------------------
# linear algebra / shape

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    _check_finite(out.data, "matmul")
    return _record(out, (a, b), lambda g, needs: (
        g @ b.data.T if needs[0] else None,
        a.data.T @ g if needs[1] else None,
    ))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    _check_finite(out.data, "sum")

    def bwd(g, needs):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False),)

    return _record(out, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    _check_finite(out.data, "mean")
    denom = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])

    def bwd(g, needs):
        gg = g / denom
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False),)

    return _record(out, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g, needs: (g.reshape(a.data.shape),))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    out = Tensor(np.ascontiguousarray(a.data.T))
    return _record(out, (a,), lambda g, needs: (np.ascontiguousarray(g.T),))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, needs):
        pieces = []
        for i, t in enumerate(ts):
            if not needs[i]:
                pieces.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(out, tuple(ts), bwd)


def gather_rows(a, idx) -> Tensor:
    """Select rows a[idx]; the embedding-lookup primitive."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx])

    def bwd(g, needs):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution machinery

def _conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N*oh*ow, C*kh*kw) patch matrix."""
    n, c = xp.shape[:2]
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]  # (N,C,oh,ow,kh,kw)
    col = np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5))
    return col.reshape(n * oh * ow, c * kh * kw)


def _col2im(gcol: np.ndarray, xshape, kh: int, kw: int, stride: int, pad: int,
            oh: int, ow: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back to the input."""
    n, c, h, w = xshape
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gcol.dtype)
    gcol = gcol.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        hi = i + stride * oh
        for j in range(kw):
            wj = j + stride * ow
            gxp[:, :, i:hi:stride, j:wj:stride] += gcol[:, :, :, :, i, j]
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad]
    return gxp


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(wd, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d output dims non-positive for input {h}x{wd}, kernel {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    col = _im2col(xp, kh, kw, stride, oh, ow)
    out = (col @ w.reshape(f, -1).T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), col, (oh, ow)


def _conv_input_grad(gy: np.ndarray, w: np.ndarray, stride: int, pad: int,
                     in_hw: tuple[int, int]) -> np.ndarray:
    n, f, oh, ow = gy.shape
    fw, c, kh, kw = w.shape
    if fw != f:
        raise ValueError(f"channel mismatch: map has {f}, kernel expects {fw}")
    gmat = gy.transpose(0, 2, 3, 1).reshape(-1, f)
    gcol = gmat @ w.reshape(f, -1)
    return _col2im(gcol, (n, c) + in_hw, kh, kw, stride, pad, oh, ow)


def _conv_weight_grad(col: np.ndarray, gy: np.ndarray, kshape) -> np.ndarray:
    f = gy.shape[1]
    gmat = gy.transpose(0, 2, 3, 1).reshape(-1, f)
    return (gmat.T @ col).reshape(kshape)


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x:(N,C,H,W) with kernels w:(F,C,kh,kw)."""
    x, w = _as_tensor(x), _as_tensor(w)
    out_data, col, _ = _conv_forward(x.data, w.data, stride, pad)
    _check_finite(out_data, "conv2d")
    out = Tensor(out_data)
    in_hw = x.data.shape[2:]

    def bwd(g, needs):
        gx = _conv_input_grad(g, w.data, stride, pad, in_hw) if needs[0] else None
        gw = _conv_weight_grad(col, g, w.data.shape) if needs[1] else None
        return (gx, gw)

    return _record(out, (x, w), bwd)


def conv2d_transpose(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d as a forward map.

    x:(N,F,H',W') with kernels w:(F,C,kh,kw) -> (N,C,H,W) where
    H = (H'-1)*stride + kh - 2*pad.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    n, f, oh, ow = x.data.shape
    fw, c, kh, kw = w.data.shape
    if fw != f:
        raise ValueError(f"conv2d_transpose channel mismatch: input has {f}, kernel expects {fw}")
    h = (oh - 1) * stride + kh - 2 * pad
    wd = (ow - 1) * stride + kw - 2 * pad
    if h < 1 or wd < 1:
        raise ValueError("conv2d_transpose output dims non-positive")
    out_data = _conv_input_grad(x.data, w.data, stride, pad, (h, wd))
    _check_finite(out_data, "conv2d_transpose")
    out = Tensor(out_data)

    def bwd(g, needs):
        gx = gw = None
        if needs[0]:
            gx = _conv_forward(g, w.data, stride, pad)[0]
        if needs[1]:
            gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
            col_g = _im2col(gp, kh, kw, stride, oh, ow)
            gw = _conv_weight_grad(col_g, x.data, w.data.shape)
        return (gx, gw)

    return _record(out, (x, w), bwd)


def max_pool(x, k: int, stride: int | None = None) -> Tensor:
    """Max pooling over k x k windows of x:(N,C,H,W)."""
    x = _as_tensor(x)
    stride = k if stride is None else stride
    n, c, h, w = x.data.shape
    oh = _conv_out_dim(h, k, stride, 0)
    ow = _conv_out_dim(w, k, stride, 0)
    if oh < 1 or ow < 1:
        raise ValueError("max_pool window does not fit")
    v = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = v.reshape(n, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0])
    tiled = stride == k and h == oh * k and w == ow * k

    def bwd(g, needs):
        if tiled:
            # non-overlapping windows: scatter via a one-hot over window cells
            onehot = arg[..., None] == np.arange(k * k)
            blocks = (g[..., None] * onehot).reshape(n, c, oh, ow, k, k)
            return (np.ascontiguousarray(blocks.transpose(0, 1, 2, 4, 3, 5))
                    .reshape(n, c, h, w),)
        gx = np.zeros_like(x.data)
        ni, ci, hi, wi = np.indices((n, c, oh, ow))
        np.add.at(gx, (ni, ci, hi * stride + arg // k, wi * stride + arg % k), g)
        return (gx,)

    return _record(out, (x,), bwd)


def batch_norm(x, gamma, beta, mode: str, running_mean: np.ndarray,
               running_var: np.ndarray, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Batch normalization over (N,) or (N,H,W) per channel.

    Train mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the running buffers and is
    deterministic.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if x.data.ndim == 4:
        axes = (0, 2, 3)
        bshape = (1, -1, 1, 1)
    elif x.data.ndim == 2:
        axes = (0,)
        bshape = (1, -1)
    else:
        raise ValueError("batch_norm expects a 2-D or 4-D input")
    gview = gamma.data.reshape(bshape)
    bview = beta.data.reshape(bshape)

    if mode == "train":
        m = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        cnt = x.data.size // x.data.shape[1]
        unbiased = var * (cnt / max(cnt - 1, 1))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * m
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - m.reshape(bshape)) * inv_std.reshape(bshape)
        out = Tensor(gview * xhat + bview)
        _check_finite(out.data, "batch_norm")

        def bwd(g, needs):
            gg = g * gview
            rm = lambda a: a.mean(axis=axes, keepdims=True)
            gx = inv_std.reshape(bshape) * (gg - rm(gg) - xhat * rm(gg * xhat)) if needs[0] else None
            ggamma = (g * xhat).sum(axis=axes) if needs[1] else None
            gbeta = g.sum(axis=axes) if needs[2] else None
            return (gx, ggamma, gbeta)

        return _record(out, (x, gamma, beta), bwd)

    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = Tensor(gview * xhat + bview)
    _check_finite(out.data, "batch_norm")

    def bwd(g, needs):
        gx = (g * gview * inv_std.reshape(bshape)).astype(x.data.dtype, copy=False) if needs[0] else None
        ggamma = (g * xhat).sum(axis=axes) if needs[1] else None
        gbeta = g.sum(axis=axes) if needs[2] else None
        return (gx, ggamma, gbeta)

    return _record(out, (x, gamma, beta), bwd)


def dropout(x, p: float, mode: str, rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout: train-mode scales by 1/(1-p) so eval is identity.

    A pre-drawn mask may be supplied for deterministic gradient checks.
    """
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng or an explicit mask")
        mask = (rng.random(x.data.shape) >= p)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    m = mask.astype(x.data.dtype) * scale
    out = Tensor(x.data * m)
    return _record(out, (x,), lambda g, needs: (g * m,))


def upsample_nearest(x, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbor resize of x:(N,C,H,W); differentiable as a linear map."""
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    ridx = (np.arange(out_h) * h // out_h).astype(np.int64)
    cidx = (np.arange(out_w) * w // out_w).astype(np.int64)
    out = Tensor(np.ascontiguousarray(x.data[:, :, ridx][:, :, :, cidx]))

    def bwd(g, needs):
        # accumulate over replicated pixels: scatter columns, then rows
        tmp = np.zeros((n, c, out_h, w), dtype=g.dtype)
        np.add.at(tmp.transpose(3, 0, 1, 2), cidx, g.transpose(3, 0, 1, 2))
        gx = np.zeros_like(x.data)
        np.add.at(gx.transpose(2, 0, 1, 3), ridx, tmp.transpose(2, 0, 1, 3))
        return (gx,)

    return _record(out, (x,), bwd)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of logits:(N,C) against integer labels:(N,)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    out = Tensor(np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.data.dtype))
    _check_finite(out.data, "softmax_cross_entropy")

    def bwd(g, needs):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _record(out, (logits,), bwd)

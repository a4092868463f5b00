"""Neural layers and optimizers on top of the tensor core."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = ["Dense", "Conv2d", "ConvTranspose2d", "BatchNorm2d", "Dropout",
           "MaxPool2d", "Network", "SGD", "Adam", "gaussian_init"]


def gaussian_init(rng: np.random.Generator, shape, std: float = 0.01, dtype=np.float32) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


class Layer:
    def params(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 std: float = 0.01, bias: bool = True, dtype=np.float32):
        self.weight = gaussian_init(rng, (n_in, n_out), std, dtype)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator, std: float = 0.01, bias: bool = True,
                 dtype=np.float32):
        self.stride, self.pad = stride, pad
        self.weight = gaussian_init(rng, (c_out, c_in, k, k), std, dtype)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, self.stride, self.pad)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (1, -1, 1, 1)))
        return out

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p


class ConvTranspose2d(Layer):
    """Kernel layout (c_in, c_out, k, k): input channels lead, as the op's adjoint role requires."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator, std: float = 0.01, bias: bool = True,
                 dtype=np.float32):
        self.stride, self.pad = stride, pad
        self.weight = gaussian_init(rng, (c_in, c_out, k, k), std, dtype)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d_transpose(x, self.weight, self.stride, self.pad)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (1, -1, 1, 1)))
        return out

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, mode,
                            self.running_mean, self.running_var,
                            self.momentum, self.eps)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Dropout(Layer):
    def __init__(self, p: float):
        self.p = p

    def __call__(self, x: Tensor, mode: str, rng: np.random.Generator | None) -> Tensor:
        return T.dropout(x, self.p, mode, rng)


class MaxPool2d(Layer):
    def __init__(self, k: int, stride: int | None = None):
        self.k = k
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.max_pool(x, self.k, self.stride)


class Network:
    """Base for concrete nets: collects named params/buffers from layer attributes."""

    def named_layers(self) -> dict[str, Layer]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Layer)}

    def params(self) -> dict[str, Tensor]:
        out = {}
        for lname, layer in self.named_layers().items():
            for pname, p in layer.params().items():
                out[f"{lname}.{pname}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.named_layers().items():
            for bname, b in layer.buffers().items():
                out[f"{lname}.{bname}"] = b
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        st = {k: p.data for k, p in self.params().items()}
        st.update(self.buffers())
        return st

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params().items():
            p.data = np.array(arrays[k], dtype=p.data.dtype)
        for k, b in self.buffers().items():
            np.copyto(b, arrays[k])


def _validate_grad(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient for parameter {name!r}")


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0

    def step(self, params: dict[str, Tensor], grads) -> None:
        self.t += 1
        for name, p in params.items():
            g = grads.get(p)
            _validate_grad(name, g)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data -= (self.lr * g).astype(p.data.dtype, copy=False)


class Adam:
    """Adam with bias correction; weight decay enters as an L2 gradient term."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads.get(p)
            _validate_grad(name, g)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype, copy=False)

    def state_arrays(self, prefix: str = "adam") -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([float(self.t)], dtype=np.float64)}
        for k, m in self._m.items():
            out[f"{prefix}.m.{k}"] = m
        for k, v in self._v.items():
            out[f"{prefix}.v.{k}"] = v
        return out

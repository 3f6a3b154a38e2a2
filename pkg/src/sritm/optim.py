"""Adam optimizer with weight/bias learning-rate groups, and Xavier init."""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


def _param_seed(seed: int, name: str) -> list[int]:
    # stable across processes, unlike hash()
    return [seed & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]


def xavier_init(shape, rng_seed, name: str = "", dtype=np.float32) -> Tensor:
    """Glorot-uniform conv weights, zero biases; deterministic per (seed, name).

    Fan counts include the kernel area: fan = C * k_h * k_w.
    """
    shape = tuple(shape)
    if len(shape) == 1:
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    if len(shape) != 4:
        raise ShapeError(f"xavier_init expects a rank-4 conv weight or rank-1 bias shape, got {shape}")
    co, ci, kh, kw = shape
    fan_in = ci * kh * kw
    fan_out = co * kh * kw
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(_param_seed(int(rng_seed), name))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Adam:
    """Standard Adam (bias-corrected) over a named parameter dict.

    Parameters whose name ends in ``.bias`` use ``lr_biases``; everything
    else uses ``lr_weights``.  Moment buffers are created lazily so that
    parameters which never receive gradients (e.g. frozen modulation
    subnets during pre-training) carry no state.
    """

    def __init__(self, params: dict[str, Tensor], lr_weights: float, lr_biases: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr_weights = lr_weights
        self.lr_biases = lr_biases
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def lr_for(self, name: str) -> float:
        return self.lr_biases if name.endswith(".bias") else self.lr_weights

    def step(self) -> None:
        """Apply one update from the gradients currently stored on the params."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self.lr_for(name) * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moment buffers under ``m.<name>`` / ``v.<name>`` keys, for checkpoints."""
        out: dict[str, np.ndarray] = {}
        for name, buf in self.m.items():
            out[f"m.{name}"] = buf
        for name, buf in self.v.items():
            out[f"v.{name}"] = buf
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        self.m.clear()
        self.v.clear()
        for key, buf in tensors.items():
            kind, _, name = key.partition(".")
            if kind not in ("m", "v") or name not in self.params:
                raise ShapeError(f"adam state key {key!r} does not match any parameter")
            if buf.shape != self.params[name].data.shape:
                raise ShapeError(f"adam state shape {buf.shape} != parameter shape for {name}")
            (self.m if kind == "m" else self.v)[name] = buf.astype(self.params[name].data.dtype)
        self.step_count = int(step_count)

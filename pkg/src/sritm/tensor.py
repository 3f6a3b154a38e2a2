"""Dense NCHW tensor engine with reverse-mode differentiation.

Carries exactly the operator set the pipeline needs: 2-D convolution
(stride 1, zero-padded "same"), ReLU, elementwise add/mul/div, channel
concatenation, pixel shuffle, bicubic resize, sum and MSE loss.  Data
lives in numpy arrays; float32 is the working precision, float64 is used
by the gradient-check suites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection on every op output (slow, for debugging)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check(data: np.ndarray) -> np.ndarray:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor op")
    return data


class Tensor:
    """A numpy-backed array node in a dynamically recorded computation graph.

    ``requires_grad`` marks leaves that should receive gradients;
    intermediate results track their parents and a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        was_array = isinstance(data, np.ndarray)
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not was_array or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains NaN or Inf")

    # -- gradient accumulation -----------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad tensor.

        The loss must be a scalar (single-element) tensor.  Gradients from
        multiple uses of the same tensor accumulate by addition.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        state: dict[int, int] = {}  # id -> 0 visiting, 1 done
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                state[id(node)] = 1
                topo.append(node)
                continue
            st = state.get(id(node))
            if st == 1:
                continue
            if st == 0:
                raise RuntimeError("cycle detected in computation record")
            state[id(node)] = 0
            stack.append((node, True))
            for p in node._parents:
                if state.get(id(p)) != 1:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def sum(self) -> "Tensor":
        return tsum(self)


@dataclass
class ConvParams:
    """Weights and bias of one convolution layer.

    Kernels are square 1x1 or 3x3, stride is 1 and padding is zero-padded
    "same" everywhere in this artifact.
    """

    weight: Tensor  # (C_out, C_in, k, k)
    bias: Tensor  # (C_out,)

    def __post_init__(self):
        w, b = self.weight.data, self.bias.data
        if w.ndim != 4 or b.ndim != 1:
            raise ShapeError(f"conv weight must be rank 4 and bias rank 1, got {w.shape} / {b.shape}")
        if w.shape[2] != w.shape[3] or w.shape[2] not in (1, 3):
            raise ShapeError(f"kernel must be square 1x1 or 3x3, got {w.shape[2]}x{w.shape[3]}")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != output channels {w.shape[0]}")

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.data.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.data.shape[2]

    def param_count(self) -> int:
        return self.weight.data.size + self.bias.data.size


def _make(data, parents, backward, requires_grad=None):
    if requires_grad is None:
        requires_grad = any(p.requires_grad or p._parents for p in parents)
    out = Tensor(_check(data), requires_grad=False)
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = False  # grads flow through, only leaves keep .grad semantics
    # intermediate nodes still need .grad storage during backprop
    return out


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Stride-1 zero-padded "same" 2-D convolution over NCHW input."""
    w, b = params.weight, params.bias
    n, c, h, wd = x.data.shape
    co, ci, k, _ = w.data.shape
    if c != ci:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}")
    p = (k - 1) // 2
    if p:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, k, k)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # (N, H, W, Co)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b.data[None, :, None, None]

    if not _needs_grad(x, w, b):
        return Tensor(_check(out))

    def backward(dy):
        if w.requires_grad or w._parents:
            dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # (Co, C, k, k)
            w._accumulate(dw)
        if b.requires_grad or b._parents:
            b._accumulate(dy.sum(axis=(0, 2, 3)))
        if x.requires_grad or x._parents:
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    # (N, H, W, C) contribution of kernel tap (i, j)
                    contrib = np.tensordot(dy, w.data[:, :, i, j], axes=([1], [0]))
                    dxp[:, :, i : i + h, j : j + wd] += contrib.transpose(0, 3, 1, 2)
            x._accumulate(dxp[:, :, p : p + h, p : p + wd] if p else dxp)

    return _make(out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at exactly 0."""
    out = np.maximum(x.data, 0)
    if not _needs_grad(x):
        return Tensor(_check(out))
    mask = x.data > 0

    def backward(dy):
        x._accumulate(dy * mask)

    return _make(out, (x,), backward)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out = a.data + b.data
    if not _needs_grad(a, b):
        return Tensor(_check(out))

    def backward(dy):
        if a.requires_grad or a._parents:
            a._accumulate(dy)
        if b.requires_grad or b._parents:
            b._accumulate(dy)

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out = a.data * b.data
    if not _needs_grad(a, b):
        return Tensor(_check(out))

    def backward(dy):
        if a.requires_grad or a._parents:
            a._accumulate(dy * b.data)
        if b.requires_grad or b._parents:
            b._accumulate(dy * a.data)

    return _make(out, (a, b), backward)


def div(a: Tensor, b: Tensor, floor: float = 1e-6, strict: bool = False) -> Tensor:
    """Elementwise a / b with the divisor magnitude clamped to ``floor``.

    Where the clamp engages the divisor is treated as a constant, so its
    gradient there is zero.  ``strict`` raises instead of clamping.
    """
    _binary_shapes(a, b, "div")
    small = np.abs(b.data) < floor
    if strict and small.any():
        raise ShapeError(f"div: {int(small.sum())} divisor value(s) below floor {floor} in strict mode")
    sign = np.where(b.data < 0, -1.0, 1.0).astype(b.data.dtype)
    denom = sign * np.maximum(np.abs(b.data), floor)
    out = a.data / denom
    if not _needs_grad(a, b):
        return Tensor(_check(out))

    def backward(dy):
        if a.requires_grad or a._parents:
            a._accumulate(dy / denom)
        if b.requires_grad or b._parents:
            db = -dy * a.data / (denom * denom)
            db[small] = 0
            b._accumulate(db)

    return _make(out, (a, b), backward)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype).reshape(())
    if not _needs_grad(x):
        return Tensor(out)

    def backward(dy):
        x._accumulate(np.broadcast_to(dy, x.data.shape))

    return _make(out, (x,), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    _binary_shapes(pred, target, "mse_loss")
    diff = pred.data - target.data
    out = np.asarray(np.mean(diff * diff), dtype=pred.data.dtype).reshape(())
    if not _needs_grad(pred, target):
        return Tensor(out)
    scale = 2.0 / diff.size

    def backward(dy):
        g = (scale * dy) * diff
        if pred.requires_grad or pred._parents:
            pred._accumulate(g)
        if target.requires_grad or target._parents:
            target._accumulate(-g)

    return _make(out, (pred, target), backward)


# ---------------------------------------------------------------------------
# layout ops
# ---------------------------------------------------------------------------


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; ``a`` occupies the leading channels."""
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"concat_channels: spatial/batch mismatch {a.data.shape} vs {b.data.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    if not _needs_grad(a, b):
        return Tensor(_check(out))
    ca = a.data.shape[1]

    def backward(dy):
        if a.requires_grad or a._parents:
            a._accumulate(dy[:, :ca])
        if b.requires_grad or b._parents:
            b._accumulate(dy[:, ca:])

    return _make(out, (a, b), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, C*r^2, H, W) into (N, C, H*r, W*r).

    out[n, c, h*r + a, w*r + b] = in[n, c*r^2 + a*r + b, h, w]
    """
    n, c, h, w = x.data.shape
    if c % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    co = c // (r * r)
    out = (
        x.data.reshape(n, co, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, co, h * r, w * r)
    )
    out = np.ascontiguousarray(out)
    if not _needs_grad(x):
        return Tensor(out)

    def backward(dy):
        dx = (
            dy.reshape(n, co, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c, h, w)
        )
        x._accumulate(np.ascontiguousarray(dx))

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# bicubic resize
# ---------------------------------------------------------------------------


def _cubic(x: np.ndarray) -> np.ndarray:
    # Keys kernel, a = -0.5
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    return np.where(
        ax <= 1,
        1.5 * ax3 - 2.5 * ax2 + 1,
        np.where(ax < 2, -0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2, 0.0),
    )


def bicubic_weights(n_in: int, n_out: int, scale: float, antialias: bool, dtype=np.float64) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix for one axis.

    Output index d samples source coordinate d/scale.  When downscaling
    with antialias the kernel support widens by 1/scale.  Source indices
    are clamped to the border and each row is normalized to sum one.
    """
    kscale = min(scale, 1.0) if antialias else 1.0
    support = 2.0 / kscale
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for d in range(n_out):
        center = d / scale
        left = int(np.ceil(center - support))
        right = int(np.floor(center + support))
        idx = np.arange(left, right + 1)
        wts = _cubic((idx - center) * kscale)
        keep = wts != 0
        idx, wts = idx[keep], wts[keep]
        np.add.at(mat[d], np.clip(idx, 0, n_in - 1), wts)
        mat[d] /= mat[d].sum()
    return mat.astype(dtype)


def resize_bicubic(x: Tensor, scale: float, antialias: bool = True) -> Tensor:
    """Separable bicubic resize of an NCHW tensor by ``scale`` per axis."""
    if scale <= 0:
        raise ShapeError(f"resize_bicubic: scale must be positive, got {scale}")
    n, c, h, w = x.data.shape
    ho, wo = h * scale, w * scale
    if abs(ho - round(ho)) > 1e-9 or abs(wo - round(wo)) > 1e-9:
        raise ShapeError(f"resize_bicubic: non-integral output size {ho}x{wo} from {h}x{w} at scale {scale}")
    ho, wo = int(round(ho)), int(round(wo))
    wh = bicubic_weights(h, ho, scale, antialias, dtype=x.data.dtype)
    ww = bicubic_weights(w, wo, scale, antialias, dtype=x.data.dtype)
    # out[n,c,i,j] = sum_{y,x} wh[i,y] * in[n,c,y,x] * ww[j,x]
    tmp = np.tensordot(x.data, wh, axes=([2], [1]))  # (N, C, W, Ho)
    out = np.tensordot(tmp, ww, axes=([2], [1]))  # (N, C, Ho, Wo)
    out = np.ascontiguousarray(out)
    if not _needs_grad(x):
        return Tensor(_check(out))

    def backward(dy):
        t = np.tensordot(dy, wh, axes=([2], [0]))  # (N, C, Wo, H)
        dx = np.tensordot(t, ww, axes=([2], [0]))  # (N, C, H, W)
        x._accumulate(np.ascontiguousarray(dx))

    return _make(out, (x,), backward)

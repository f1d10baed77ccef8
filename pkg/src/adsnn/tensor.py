"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

The layer modules compose everything here: a numpy-backed ``Tensor``, the
differentiable operations needed by separable/attention networks, gradient
propagation via :func:`backward`, and the binary tensor block format used
by model files.

Two precisions are supported. Training code builds float32 tensors (the
default for weight initialisation); gradient-verification tests build
float64 tensors, which every operation preserves.
"""

from __future__ import annotations

import itertools
import struct
from contextlib import contextmanager
from typing import BinaryIO, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "TensorFormatError",
    "no_grad",
    "backward",
    "matmul",
    "transpose",
    "reshape",
    "add",
    "mul",
    "concat",
    "relu",
    "softmax",
    "conv2d",
    "depthwise_conv2d",
    "batch_norm",
    "global_avg_pool",
    "dense",
    "cross_entropy_loss",
    "tensor_sum",
    "tensor_mean",
    "assert_finite",
    "write_tensor",
    "read_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "DEFAULT_DTYPE",
]

DEFAULT_DTYPE = np.float32

TENSOR_MAGIC = b"ADSN"
TENSOR_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ArithmeticError):
    """A tensor that must be finite contains NaN or Inf."""


class TensorFormatError(ValueError):
    """A serialized tensor block is malformed."""


_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense float array with shape, data, and an optional autodiff node.

    Leaves created with ``requires_grad=True`` start with a zero gradient;
    results of operations carry closures that propagate gradients to their
    parents during :func:`backward`. Completed tensors are treated as
    immutable and may be shared read-only across threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward_fn) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = True
        t.grad = None
        t.node_id = next(_node_ids)
        t._parents = parents
        t._backward = backward_fn
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        """A graph-free view of the same data."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __getitem__(self, idx) -> "Tensor":
        out = self.data[idx]
        if not _tracking(self):
            return Tensor(out)

        def bwd(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, idx, g)
            _accumulate(self, buf)

        return Tensor._result(out, (self,), bwd)

    # operator sugar; the named functions below are the primary surface
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _tracking(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate gradients of a scalar tensor through its graph.

    Returns a map from node id to gradient array for every visited node;
    each visited tensor's ``grad`` is also populated. Leaves that do not
    influence the loss keep their zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.node_id not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return {node.node_id: node.grad for node in order if node.grad is not None}


def assert_finite(t: Tensor, context: str = "tensor") -> Tensor:
    """Raise :class:`NonFiniteError` if the tensor holds NaN or Inf."""
    if not np.isfinite(t.data).all():
        raise NonFiniteError(f"non-finite values detected in {context}")
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / structural operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum with numpy broadcasting rules."""
    if not isinstance(b, Tensor) and np.isscalar(b):
        out = a.data + b
        if not _tracking(a):
            return Tensor(out)

        def bwd_scalar(g):
            _accumulate(a, g)

        return Tensor._result(out, (a,), bwd_scalar)

    b = _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return Tensor._result(out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a Python scalar."""
    if not isinstance(b, Tensor) and np.isscalar(b):
        out = a.data * b
        if not _tracking(a):
            return Tensor(out)

        def bwd_scalar(g):
            _accumulate(a, g * b)

        return Tensor._result(out, (a,), bwd_scalar)

    b = _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return Tensor._result(out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; operands of rank > 2 are
    treated as stacks of matrices and leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._result(out, (a, b), bwd)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = np.transpose(x.data, axes)
    if not _tracking(x):
        return Tensor(out)
    inverse = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accumulate(x, np.transpose(g, inverse))

    return Tensor._result(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = np.reshape(x.data, shape)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accumulate(x, g.reshape(x.shape))

    return Tensor._result(out, (x,), bwd)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate tensors along an existing axis."""
    if not xs:
        raise ValueError("concat needs at least one tensor")
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(
            "cannot concatenate shapes " + ", ".join(str(x.shape) for x in xs)
        ) from None
    if not _tracking(*xs):
        return Tensor(out)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bwd(g):
        for x, piece in zip(xs, np.split(g, sizes, axis=axis)):
            _accumulate(x, piece)

    return Tensor._result(out, tuple(xs), bwd)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return Tensor._result(out, (x,), bwd)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    if not _tracking(x):
        return Tensor(out)
    if axis is None:
        count = x.size
    else:
        reduced = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in reduced]))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g / count, x.shape).copy())

    return Tensor._result(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0)."""
    out = np.maximum(x.data, 0)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accumulate(x, g * (x.data > 0))

    return Tensor._result(out, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; slices along ``axis`` sum to one."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accumulate(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _pad_amount(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _lift_to_batch(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected rank-3 (H,W,C) or rank-4 (B,H,W,C) input, got {x.shape}")


def _conv_windows(xp: np.ndarray, dk: int, stride: int) -> np.ndarray:
    # (B, Ho, Wo, C, dk, dk) view over the padded input
    w = sliding_window_view(xp, (dk, dk), axis=(1, 2))
    return w[:, ::stride, ::stride]


def _dilate_and_pad(g: np.ndarray, dk: int, stride: int) -> np.ndarray:
    b, ho, wo, c = g.shape
    if stride > 1:
        gd = np.zeros((b, (ho - 1) * stride + 1, (wo - 1) * stride + 1, c), dtype=g.dtype)
        gd[:, ::stride, ::stride] = g
    else:
        gd = g
    return np.pad(gd, ((0, 0), (dk - 1, dk - 1), (dk - 1, dk - 1), (0, 0)))


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-D cross-correlation of an (H,W,M) or (B,H,W,M) input with a
    (D_K,D_K,M,N) kernel, differentiable in both operands."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"kernel must be (D_K,D_K,M,N), got {kernel.shape}")
    xb, squeeze = _lift_to_batch(x)
    dk, _, m, n = kernel.shape
    if xb.shape[3] != m:
        raise ShapeError(
            f"input channels {xb.shape[3]} (input {x.shape}) do not match kernel channels {m} (kernel {kernel.shape})"
        )
    pt, pb = _pad_amount(xb.shape[1], dk, stride, padding)
    pl, pr = _pad_amount(xb.shape[2], dk, stride, padding)
    xp = np.pad(xb, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if dk > xp.shape[1] or dk > xp.shape[2]:
        raise ShapeError(
            f"kernel {kernel.shape} larger than padded input {xp.shape[1:3]}"
        )
    windows = _conv_windows(xp, dk, stride)
    out = np.tensordot(windows, kernel.data, axes=((4, 5, 3), (0, 1, 2)))
    out_t = out[0] if squeeze else out
    if not _tracking(x, kernel):
        return Tensor(out_t)

    def bwd(g):
        g4 = g[None] if squeeze else g
        if kernel.requires_grad or kernel._parents:
            dk_grad = np.tensordot(windows, g4, axes=((0, 1, 2), (0, 1, 2)))
            _accumulate(kernel, dk_grad.transpose(1, 2, 0, 3))
        if x.requires_grad or x._parents:
            gp = _dilate_and_pad(g4, dk, stride)
            kf = kernel.data[::-1, ::-1]
            gw = sliding_window_view(gp, (dk, dk), axis=(1, 2))
            part = np.tensordot(gw, kf, axes=((4, 5, 3), (0, 1, 3)))
            buf = np.zeros_like(xp)
            buf[:, : part.shape[1], : part.shape[2]] = part
            dx = buf[:, pt : pt + xb.shape[1], pl : pl + xb.shape[2]]
            _accumulate(x, dx[0] if squeeze else dx)

    return Tensor._result(out_t, (x, kernel), bwd)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Per-channel 2-D cross-correlation with a (D_K,D_K,M) kernel; output
    channel c depends only on input channel c."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"kernel must be (D_K,D_K,M), got {kernel.shape}")
    xb, squeeze = _lift_to_batch(x)
    dk, _, m = kernel.shape
    if xb.shape[3] != m:
        raise ShapeError(
            f"input channels {xb.shape[3]} (input {x.shape}) do not match kernel channels {m} (kernel {kernel.shape})"
        )
    pt, pb = _pad_amount(xb.shape[1], dk, stride, padding)
    pl, pr = _pad_amount(xb.shape[2], dk, stride, padding)
    xp = np.pad(xb, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if dk > xp.shape[1] or dk > xp.shape[2]:
        raise ShapeError(
            f"kernel {kernel.shape} larger than padded input {xp.shape[1:3]}"
        )
    windows = _conv_windows(xp, dk, stride)
    out = np.einsum("bijmuv,uvm->bijm", windows, kernel.data, optimize=True)
    out_t = out[0] if squeeze else out
    if not _tracking(x, kernel):
        return Tensor(out_t)

    def bwd(g):
        g4 = g[None] if squeeze else g
        if kernel.requires_grad or kernel._parents:
            _accumulate(kernel, np.einsum("bijmuv,bijm->uvm", windows, g4, optimize=True))
        if x.requires_grad or x._parents:
            gp = _dilate_and_pad(g4, dk, stride)
            kf = kernel.data[::-1, ::-1]
            gw = sliding_window_view(gp, (dk, dk), axis=(1, 2))
            part = np.einsum("bijmuv,uvm->bijm", gw, kf, optimize=True)
            buf = np.zeros_like(xp)
            buf[:, : part.shape[1], : part.shape[2]] = part
            dx = buf[:, pt : pt + xb.shape[1], pl : pl + xb.shape[2]]
            _accumulate(x, dx[0] if squeeze else dx)

    return Tensor._result(out_t, (x, kernel), bwd)


# ---------------------------------------------------------------------------
# normalisation, pooling, heads
# ---------------------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.9,
) -> Tensor:
    """Per-channel batch normalisation over all axes but the last.

    Training mode normalises by batch statistics and folds them into the
    running estimates (``running = momentum * running + (1-momentum) * batch``,
    updated in place); eval mode normalises by the running estimates.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batch_norm parameters {gamma.shape}/{beta.shape} do not match channels {c}"
        )
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu
        running_var.data[...] = momentum * running_var.data + (1 - momentum) * var
    else:
        mu = running_mean.data
        var = running_var.data
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data
    if not _tracking(x, gamma, beta):
        return Tensor(out)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def bwd(g):
        _accumulate(gamma, (g * xhat).sum(axis=axes))
        _accumulate(beta, g.sum(axis=axes))
        if x.requires_grad or x._parents:
            if training:
                dxhat = g * gamma.data
                term = dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes)
                _accumulate(x, term * inv_std)
            else:
                _accumulate(x, g * gamma.data * inv_std)

    return Tensor._result(out, (x, gamma, beta), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: (H,W,C) -> (C,) or (B,H,W,C) -> (B,C)."""
    if x.ndim == 3:
        axes = (0, 1)
    elif x.ndim == 4:
        axes = (1, 2)
    else:
        raise ShapeError(f"global_avg_pool expects rank 3 or 4, got {x.shape}")
    out = x.data.mean(axis=axes)
    if not _tracking(x):
        return Tensor(out)
    count = x.shape[axes[0]] * x.shape[axes[1]]

    def bwd(g):
        expanded = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(expanded / count, x.shape).copy())

    return Tensor._result(out, (x,), bwd)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for (F,) or (B,F) inputs."""
    if x.ndim == 1:
        return reshape(add(matmul(reshape(x, (1, -1)), weight), bias), (-1,))
    return add(matmul(x, weight), bias)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under
    softmax(logits); ``logits`` is (B, M), ``labels`` length B."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, M), got {logits.shape}")
    b, m = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"labels must lie in [0, {m}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    per_sample = log_z - shifted[np.arange(b), labels]
    out = np.asarray(per_sample.mean(), dtype=logits.data.dtype)
    if not _tracking(logits):
        return Tensor(out)

    def bwd(g):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(b), labels] -= 1.0
        _accumulate(logits, probs * (g / b))

    return Tensor._result(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# serialization: b"ADSN" + version byte + rank and dims (little-endian u32)
# + row-major float32 data (little-endian)
# ---------------------------------------------------------------------------


def write_tensor(fp: BinaryIO, t: Tensor) -> None:
    """Write one tensor block; data is stored as little-endian float32."""
    fp.write(TENSOR_MAGIC)
    fp.write(bytes([TENSOR_FORMAT_VERSION]))
    fp.write(struct.pack("<I", t.ndim))
    fp.write(struct.pack(f"<{t.ndim}I", *t.shape))
    fp.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def tensor_to_bytes(t: Tensor) -> bytes:
    import io

    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def read_tensor(fp: BinaryIO) -> Tensor:
    """Read one tensor block written by :func:`write_tensor`."""
    magic = fp.read(4)
    if len(magic) < 4:
        raise TensorFormatError("truncated tensor block: missing magic")
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad tensor magic {magic!r}")
    version = fp.read(1)
    if len(version) < 1:
        raise TensorFormatError("truncated tensor block: missing version")
    if version[0] != TENSOR_FORMAT_VERSION:
        raise TensorFormatError(f"unsupported tensor format version {version[0]}")
    rank_raw = fp.read(4)
    if len(rank_raw) < 4:
        raise TensorFormatError("truncated tensor block: missing rank")
    (rank,) = struct.unpack("<I", rank_raw)
    shape_raw = fp.read(4 * rank)
    if len(shape_raw) < 4 * rank:
        raise TensorFormatError("truncated tensor block: missing shape")
    shape = struct.unpack(f"<{rank}I", shape_raw) if rank else ()
    count = int(np.prod(shape)) if shape else 1
    data_raw = fp.read(4 * count)
    if len(data_raw) < 4 * count:
        raise TensorFormatError(
            f"truncated tensor block: expected {4 * count} data bytes, got {len(data_raw)}"
        )
    data = np.frombuffer(data_raw, dtype="<f4").reshape(shape).astype(np.float32)
    return Tensor(data)


def tensor_from_bytes(raw: bytes) -> Tensor:
    import io

    return read_tensor(io.BytesIO(raw))

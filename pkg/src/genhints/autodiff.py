"""Small dense-tensor library with reverse-mode automatic differentiation.

Values are float64 numpy arrays. The graph is built while the forward pass
runs (define-by-run); :func:`backward` linearises it into a
:class:`ComputationTape` and replays the recorded rules in reverse.

Each backward rule receives the upstream gradient and returns one gradient
per parent (``None`` for parents that do not need one).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Number = Union[int, float]
BackwardRule = Callable[[np.ndarray], tuple]


class TensorError(ValueError):
    """Raised for malformed tensors or incompatible operands."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Optional[BackwardRule] = None,
        _op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if _op == "leaf":
            if not np.all(np.isfinite(arr)):
                raise TensorError("tensor data must be finite")
            arr = arr.copy()
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def tensor_new(shape: Sequence[int], data: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a dimension list and a flat row-major buffer."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise TensorError(f"dimensions must be positive, got {shape}")
    flat = np.asarray(data, dtype=np.float64).ravel()
    if flat.size != math.prod(shape):
        raise TensorError(f"shape {shape} needs {math.prod(shape)} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def _result(data: np.ndarray, parents: tuple, rule: BackwardRule, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=rule, _op=op)
    return Tensor(data, _op=op)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise TensorError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: Number) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def elementwise(kind: str, a: Tensor, b) -> Tensor:
    """Dispatch on ``kind`` in {add, sub, mul, scale_by_constant}."""
    ops = {"add": add, "sub": sub, "mul": mul, "scale_by_constant": scale}
    if kind not in ops:
        raise TensorError(f"unknown elementwise kind {kind!r}")
    return ops[kind](a, b)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at exactly 0 is 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


activation_relu = relu


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient flows only where a > floor."""
    mask = a.data > floor
    return _result(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clamp_min")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(tuple(shape)), (a,), lambda g: (g.reshape(src),), "reshape")


def add_bias(x: Tensor, bias: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D ``bias`` along ``axis`` of ``x``; the only non-scalar broadcast supported."""
    axis = axis % x.data.ndim
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise TensorError(f"bias shape {bias.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.data.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.data.ndim) if i != axis)
    return _result(
        x.data + bias.data.reshape(view), (x, bias), lambda g: (g, g.sum(axis=others)), "add_bias"
    )


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum"
    )


def mean_all(a: Tensor) -> Tensor:
    n, shape = a.data.size, a.shape
    return _result(
        np.asarray(a.data.sum() / n), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean"
    )


def reduce(kind: str, a: Tensor) -> Tensor:
    if kind == "sum":
        return sum_all(a)
    if kind == "mean":
        return mean_all(a)
    raise TensorError(f"unknown reduction {kind!r}")


def sum_axis(a: Tensor, axis: int) -> Tensor:
    shape = a.shape
    return _result(
        a.data.sum(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape),),
        "sum_axis",
    )


def mean_axes(a: Tensor, axes: tuple) -> Tensor:
    """Mean over several axes (global average pooling)."""
    n = math.prod(a.shape[i] for i in axes)
    shape = a.shape
    return _result(
        a.data.sum(axis=axes) / n,
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axes) / n, shape),),
        "mean_axes",
    )


# ---------------------------------------------------------------------------
# linear algebra / convolution
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise TensorError("matmul needs rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")

    def rule(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _result(a.data @ b.data, (a, b), rule, "matmul")


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """[N, C, H, W] -> read-only view [N, C, H-k+1, W-k+1, k, k]."""
    return sliding_window_view(x, (k, k), axis=(2, 3))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Stride-1 2-D cross-correlation with a square odd kernel.

    ``x`` is [N, C, H, W], ``kernel`` is [F, C, k, k], ``bias`` is [F].
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise TensorError("conv2d expects input [N,C,H,W] and kernel [F,C,k,k]")
    nf, kc, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise TensorError(f"kernel must be square and odd, got {kh}x{kw}")
    if kc != x.shape[1]:
        raise TensorError(f"channel mismatch: input has {x.shape[1]}, kernel expects {kc}")
    if bias.shape != (nf,):
        raise TensorError(f"bias must have shape ({nf},), got {bias.shape}")
    k = kh
    if padding == "same":
        p = (k - 1) // 2
    elif padding == "valid":
        p = 0
        if k > x.shape[2] or k > x.shape[3]:
            raise TensorError("kernel larger than input for valid padding")
    else:
        raise TensorError(f"padding must be 'same' or 'valid', got {padding!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    n, c = xp.shape[:2]
    oh, ow = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if c == 1:
        # single input channel: an explicit patch matrix is cheap and BLAS-friendly
        cols = _windows(xp, k).reshape(n * oh * ow, k * k)
        kmat = kernel.data.reshape(nf, k * k)
        out = (cols @ kmat.T).reshape(n, oh, ow, nf).transpose(0, 3, 1, 2)
    else:
        cols = None
        out = np.einsum("nchwij,fcij->nfhw", _windows(xp, k), kernel.data, optimize=True)
    out = out + bias.data.reshape(1, nf, 1, 1)

    def rule(g):
        dx = dk = db = None
        if bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        if kernel.requires_grad:
            if cols is not None:
                gm = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, nf)
                dk = (gm.T @ cols).reshape(kernel.shape)
            else:
                dk = np.einsum("nfhw,nchwij->fcij", g, _windows(xp, k), optimize=True)
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            flipped = kernel.data[:, :, ::-1, ::-1]
            dx = np.einsum("nfhwij,fcij->nchw", _windows(gp, k), flipped, optimize=True)
            if p:
                dx = dx[:, :, p:-p, p:-p]
        return dx, dk, db

    return _result(out, (x, kernel, bias), rule, "conv2d")


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _result(
        out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax"
    )


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


class ComputationTape:
    """Topologically ordered record of the graph nodes feeding ``root``.

    Every node appears once and after all of its inputs.
    """

    def __init__(self, root: Tensor):
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, seed_grad: np.ndarray) -> None:
        # interior gradients live only for this replay; leaves accumulate into .grad
        pending: dict[int, np.ndarray] = {id(self.nodes[-1]): seed_grad}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.array(g, dtype=np.float64).reshape(node.shape)
                else:
                    node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise TensorError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    ComputationTape(loss).replay(np.ones_like(loss.data))


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None

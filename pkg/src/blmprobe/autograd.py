"""Dense float tensors with reverse-mode automatic differentiation.

The operator set is exactly what the selection models need: linear layers,
valid (stride-1, unpadded) 2D/3D cross-correlation and its transpose, a
leaky rectifier, elementwise arithmetic and reductions. Convolutions are
lowered to a single GEMM per direction through an im2col/col2im pair so
training stays fast on plain numpy.

Tensors carry float32 data in production; tests run a float64 "shadow"
graph simply by constructing float64 leaves (every op preserves dtype).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_float_array(data) -> Array:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense float array plus reverse-mode bookkeeping.

    ``grad`` lives only on requires-grad leaves and accumulates across
    ``backward`` calls until the caller zeroes it; interior nodes hand their
    gradient straight through to their parents.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[Array], tuple]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # ---------------------------------------------------------------- graph

    def backward(self) -> None:
        """Populate ``grad`` on every requires-grad leaf reachable from here.

        Must be called on a scalar. Repeated calls without zeroing add up
        (gradient accumulation is the caller's contract).
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss; got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    held = grads.get(key)
                    grads[key] = pg if held is None else held + pg
            elif node.requires_grad:
                node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g

    # ------------------------------------------------------------ operators

    def __add__(self, other):
        return _elementwise_add(self, _lift(other))

    def __radd__(self, other):
        return _elementwise_add(_lift(other), self)

    def __sub__(self, other):
        return _elementwise_sub(self, _lift(other))

    def __rsub__(self, other):
        return _elementwise_sub(_lift(other), self)

    def __mul__(self, other):
        return _elementwise_mul(self, _lift(other))

    def __rmul__(self, other):
        return _elementwise_mul(_lift(other), self)

    def __truediv__(self, other):
        return _elementwise_div(self, _lift(other))

    def __rtruediv__(self, other):
        return _elementwise_div(_lift(other), self)

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g: (-g,))

    def __getitem__(self, idx):
        data = self.data[idx]

        def vjp(g):
            full = np.zeros_like(self.data)
            if _is_basic_index(idx):
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return _from_op(data, (self,), vjp)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        src = self.data.shape
        return _from_op(data, (self,), lambda g: (g.reshape(src),))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        src_shape = self.data.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, src_shape),)
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(a % len(src_shape) for a in axes)
            if not keepdims:
                hold = [1 if i in axes else s for i, s in enumerate(src_shape)]
                g = g.reshape(hold)
            return (np.broadcast_to(g, src_shape),)

        return _from_op(data, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = math.prod(self.data.shape[a] for a in axes)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return _from_op(out, (self,), lambda g: (g * out,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return _from_op(out, (self,), lambda g: (g * (0.5 / out),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return _from_op(np.where(mask, self.data, 0.0), (self,),
                        lambda g: (np.where(mask, g, 0.0),))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value))


def _from_op(data: Array, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def _elementwise_sub(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def _elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.data.shape),
                               _unbroadcast(g * a.data, b.data.shape)))


def _elementwise_div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * out / b.data, b.data.shape))

    return _from_op(out, (a, b), vjp)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """Leaky rectifier; the hidden-layer nonlinearity used by every model."""
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return _from_op(out, (x,), lambda g: (np.where(mask, g, slope * g),))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: y[n,o] = sum_i x[n,i] w[o,i] + b[o]."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear expects 2D x, 2D w, 1D b; got x{x.shape} w{w.shape} b{b.shape}")
    if x.shape[1] != w.shape[1] or b.shape[0] != w.shape[0]:
        raise ShapeError(f"linear shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    y = x.data @ w.data.T + b.data

    def vjp(g):
        return (g @ w.data, g.T @ x.data, g.sum(axis=0))

    return _from_op(y, (x, w, b), vjp)


# ------------------------------------------------------------- convolutions
#
# Internal layout: an input block [B, C, *S] correlated with kernels [O, C, *K]
# becomes one GEMM over a patch matrix of shape [C*prod(K), B*prod(P)] where
# P = S - K + 1. The patch matrix rows are (channel, kernel offset) pairs so
# each row is a contiguous [B, *P] block, which keeps both the GEMM and the
# scatter-add in col2im cache-friendly.

def _out_spatial(in_sp: tuple[int, ...], k_sp: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(s - k + 1 for s, k in zip(in_sp, k_sp))


def _im2col(x: Array, ksp: tuple[int, ...]) -> Array:
    """[B, C, *S] -> [C*prod(K), B*prod(P)] patch matrix (copies once)."""
    x = np.ascontiguousarray(x)
    B, C = x.shape[:2]
    outsp = _out_spatial(x.shape[2:], ksp)
    sB, sC, *sS = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(C, *ksp, B, *outsp), strides=(sC, *sS, sB, *sS))
    return view.reshape(C * math.prod(ksp), B * math.prod(outsp))


def _col2im_add(mat: Array, out_shape: tuple[int, ...], ksp: tuple[int, ...]) -> Array:
    """Adjoint of ``_im2col``: scatter-add patch rows into [B, C, *S]."""
    B, C = out_shape[:2]
    outsp = _out_spatial(out_shape[2:], ksp)
    out = np.zeros(out_shape, dtype=mat.dtype)
    blocks = mat.reshape(C, *ksp, B, *outsp)
    for c in range(C):
        for kidx in np.ndindex(*ksp):
            sl = (slice(None), c) + tuple(slice(o, o + p) for o, p in zip(kidx, outsp))
            out[sl] += blocks[(c, *kidx)]
    return out


def _channels_first_mat(x: Array) -> Array:
    """[B, C, *S] -> contiguous [C, B*prod(S)]."""
    return np.ascontiguousarray(np.moveaxis(x, 1, 0)).reshape(x.shape[1], -1)


def _check_conv_shapes(name: str, x: Tensor, k: Tensor, b: Tensor, nd: int,
                       transpose: bool) -> None:
    if x.ndim != nd + 2 or k.ndim != nd + 2 or b.ndim != 1:
        raise ShapeError(f"{name} expects {nd + 2}D input and kernel, 1D bias; "
                         f"got x{x.shape} k{k.shape} b{b.shape}")
    c_axis = 0 if transpose else 1
    if x.shape[1] != k.shape[c_axis]:
        raise ShapeError(f"{name} channel mismatch: x{x.shape} k{k.shape}")
    out_c = k.shape[1] if transpose else k.shape[0]
    if b.shape[0] != out_c:
        raise ShapeError(f"{name} bias mismatch: k{k.shape} b{b.shape}")
    if not transpose:
        if any(s < kk for s, kk in zip(x.shape[2:], k.shape[2:])):
            raise ShapeError(f"{name} kernel larger than input: x{x.shape} k{k.shape}")


def _conv(name: str, x: Tensor, k: Tensor, b: Tensor, nd: int) -> Tensor:
    _check_conv_shapes(name, x, k, b, nd, transpose=False)
    ksp = k.shape[2:]
    B, O = x.shape[0], k.shape[0]
    outsp = _out_spatial(x.shape[2:], ksp)
    cols = _im2col(x.data, ksp)                     # [C*K, B*P]
    y = k.data.reshape(O, -1) @ cols                # [O, B*P]
    y += b.data[:, None]
    y = np.ascontiguousarray(np.moveaxis(y.reshape(O, B, *outsp), 0, 1))

    x_shape, k_shape = x.data.shape, k.data.shape

    def vjp(g):
        g_mat = _channels_first_mat(g)              # [O, B*P]
        db = g_mat.sum(axis=1)
        dk = (g_mat @ cols.T).reshape(k_shape)
        dcols = k.data.reshape(O, -1).T @ g_mat     # [C*K, B*P]
        dx = _col2im_add(dcols, x_shape, ksp)
        return (dx, dk, db)

    return _from_op(y, (x, k, b), vjp)


def _conv_transpose(name: str, x: Tensor, k: Tensor, b: Tensor, nd: int) -> Tensor:
    _check_conv_shapes(name, x, k, b, nd, transpose=True)
    ksp = k.shape[2:]
    B, Ci, Co = x.shape[0], k.shape[0], k.shape[1]
    insp = x.shape[2:]
    outsp = tuple(s + kk - 1 for s, kk in zip(insp, ksp))
    x_mat = _channels_first_mat(x.data)             # [Ci, B*P]
    contrib = k.data.reshape(Ci, -1).T @ x_mat      # [Co*K, B*P]
    y = _col2im_add(contrib, (B, Co) + outsp, ksp)
    y += b.data.reshape((1, Co) + (1,) * nd)

    k_shape = k.data.shape

    def vjp(g):
        db = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        g_cols = _im2col(g, ksp)                    # [Co*K, B*P]
        dx_mat = k.data.reshape(Ci, -1) @ g_cols    # [Ci, B*P]
        dx = np.ascontiguousarray(np.moveaxis(dx_mat.reshape(Ci, B, *insp), 0, 1))
        dk = (x_mat @ g_cols.T).reshape(k_shape)
        return (dx, dk, db)

    return _from_op(y, (x, k, b), vjp)


def conv2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Valid cross-correlation: [B,C,H,W] * [O,C,Kh,Kw] -> [B,O,H-Kh+1,W-Kw+1]."""
    return _conv("conv2d", x, k, b, nd=2)


def conv3d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Valid cross-correlation: [B,C,D,H,W] * [O,C,Kd,Kh,Kw] -> [B,O,D',H',W']."""
    return _conv("conv3d", x, k, b, nd=3)


def conv_transpose2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Adjoint of conv2d: [B,Ci,H,W] * [Ci,Co,Kh,Kw] -> [B,Co,H+Kh-1,W+Kw-1]."""
    return _conv_transpose("conv_transpose2d", x, k, b, nd=2)


def conv_transpose3d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Adjoint of conv3d: [B,Ci,D,H,W] * [Ci,Co,Kd,Kh,Kw] -> [B,Co,D+Kd-1,...]."""
    return _conv_transpose("conv_transpose3d", x, k, b, nd=3)

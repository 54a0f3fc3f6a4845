"""Array storage with reverse-mode automatic differentiation.

Values live in plain numpy arrays (float32 for network state, float64 when a
caller hands in float64 data, e.g. for gradient checks).  A :class:`Tensor`
wraps one array together with the graph bookkeeping needed by
:meth:`Tensor.backward`.

Broadcasting is deliberately narrow.  Two operands must either have the same
shape, or one of them holds a single element (scalar-with-grid), or one is a
per-channel ``(B|1, C, 1, 1)`` grid paired with a ``(B, C, H, W)`` grid.
Anything else raises :class:`~nightvis.errors.ShapeError`.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

LOG_CLAMP = 1e-12
LEAKY_SLOPE = 0.2

BackwardFn = Callable[[np.ndarray, Sequence[bool]], Sequence["np.ndarray | None"]]


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A node in the computation graph.

    ``grad`` is ``None`` until a backward pass reaches the node; further
    backward passes add into it until :meth:`zero_grad` is called.
    """

    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "_backward")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        backward: BackwardFn | None = None,
    ):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.value.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            needs = [p.requires_grad for p in node.parents]
            for parent, pg in zip(node.parents, node._backward(g, needs)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar; all routes go through the module-level primitives
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _lift(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(obj, like: Tensor) -> Tensor:
    if isinstance(obj, Tensor):
        return obj
    return Tensor(np.asarray(obj, dtype=like.dtype))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _result(value, op, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, op=op, parents=tuple(parents), backward=backward)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# broadcasting
# ---------------------------------------------------------------------------


def _is_channel_grid(small: tuple, big: tuple) -> bool:
    return (
        len(small) == 4
        and len(big) == 4
        and small[2] == 1
        and small[3] == 1
        and small[1] == big[1]
        and small[0] in (1, big[0])
    )


def check_broadcast(a: tuple, b: tuple) -> tuple:
    """Return the result shape of combining ``a`` and ``b``, or raise."""
    if a == b:
        return a
    na, nb = math.prod(a), math.prod(b)
    if na == 1 and nb >= 1 and len(a) <= len(b):
        return b
    if nb == 1 and len(b) <= len(a):
        return a
    if _is_channel_grid(a, b):
        return b
    if _is_channel_grid(b, a):
        return a
    raise ShapeError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if math.prod(shape) == 1:
        return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(shape, g.shape)) if s == 1 and t != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    check_broadcast(a.shape, b.shape)

    def back(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _result(a.value + b.value, "add", (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    check_broadcast(a.shape, b.shape)

    def back(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _result(a.value - b.value, "sub", (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    check_broadcast(a.shape, b.shape)
    av, bv = a.value, b.value

    def back(g, needs):
        return (
            _unbroadcast(g * bv, a.shape) if needs[0] else None,
            _unbroadcast(g * av, b.shape) if needs[1] else None,
        )

    return _result(av * bv, "mul", (a, b), back)


def scale(a: Tensor, factor: float) -> Tensor:
    f = a.value.dtype.type(factor)
    return _result(a.value * f, "scale", (a,), lambda g, needs: (g * f,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, "sigmoid", (a,), lambda g, needs: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _result(out, "tanh", (a,), lambda g, needs: (g * (1 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _result(a.value * mask, "relu", (a,), lambda g, needs: (g * mask,))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = a.value
    factor = np.where(x > 0, 1.0, slope).astype(x.dtype)
    return _result(x * factor, "leaky_relu", (a,), lambda g, needs: (g * factor,))


def log(a: Tensor) -> Tensor:
    x = np.maximum(a.value, a.value.dtype.type(LOG_CLAMP))
    # gradient vanishes where the clamp is active
    active = (a.value >= LOG_CLAMP).astype(x.dtype)
    return _result(np.log(x), "log", (a,), lambda g, needs: (g * active / x,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.value)
    return _result(np.abs(a.value), "abs", (a,), lambda g, needs: (g * sign,))


_UNARY = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "log": log,
    "abs": abs_,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_kind: str, *operands, **kwargs) -> Tensor:
    """Dispatch by name: ``add sub mul scale sigmoid tanh relu leaky_relu log abs``."""
    if op_kind in _BINARY:
        if len(operands) != 2:
            raise TypeError(f"{op_kind} takes two operands")
        return _BINARY[op_kind](*operands)
    if op_kind == "scale":
        x, factor = operands
        return scale(x, factor)
    if op_kind in _UNARY:
        (x,) = operands
        return _UNARY[op_kind](x, **kwargs)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum_(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(
        np.asarray(a.value.sum(), dtype=a.dtype),
        "sum",
        (a,),
        lambda g, needs: (np.broadcast_to(g, shape).astype(g.dtype),),
    )


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.value.size
    return _result(
        np.asarray(a.value.mean(), dtype=a.dtype),
        "mean",
        (a,),
        lambda g, needs: (np.full(shape, g / n, dtype=g.dtype),),
    )


def global_avg_pool(a: Tensor) -> Tensor:
    if a.value.ndim != 4:
        raise ShapeError(f"global_avg_pool expects BxCxHxW, got {a.shape}")
    b, c, h, w = a.shape
    out = a.value.mean(axis=(2, 3), keepdims=True)

    def back(g, needs):
        return (np.broadcast_to(g / (h * w), (b, c, h, w)).astype(g.dtype),)

    return _result(out, "global_avg_pool", (a,), back)


_REDUCE = {"mean": mean, "sum": sum_, "global_avg_pool_per_channel": global_avg_pool}


def reduce(op_kind: str, a: Tensor) -> Tensor:
    try:
        return _REDUCE[op_kind](a)
    except KeyError:
        raise ValueError(f"unknown reduction {op_kind!r}") from None


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _result(out, "reshape", (a,), lambda g, needs: (g.reshape(old),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 4 or b.value.ndim != 4:
        raise ShapeError("concat_channels expects 4-D operands")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    c1 = a.shape[1]

    def back(g, needs):
        return (g[:, :c1] if needs[0] else None, g[:, c1:] if needs[1] else None)

    return _result(np.concatenate([a.value, b.value], axis=1), "concat_channels", (a, b), back)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def back(g, needs):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(a.value[:, start:stop], "slice_channels", (a,), back)


def split_channels(a: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != a.shape[1]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover {a.shape[1]} channels")
    out, start = [], 0
    for s in sizes:
        out.append(slice_channels(a, start, start + s))
        start += s
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the caller decides when it is active."""
    if rate <= 0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)
    return _result(a.value * keep, "dropout", (a,), lambda g, needs: (g * keep,))


# ---------------------------------------------------------------------------
# dense and convolutions
# ---------------------------------------------------------------------------


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.value.ndim != 2 or weight.value.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense: bias {bias.shape} must be ({weight.shape[0]},)")
    xv, wv = x.value, weight.value

    def back(g, needs):
        return (
            g @ wv if needs[0] else None,
            g.T @ xv if needs[1] else None,
            g.sum(axis=0) if needs[2] else None,
        )

    return _result(xv @ wv.T + bias.value, "dense", (x, weight, bias), back)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Patches of a padded BxCxHxW array as a (B*H'*W', C*kh*kw) matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(
    cols: np.ndarray, shape: tuple[int, int, int, int], kh: int, kw: int, stride: int, ho: int, wo: int
) -> np.ndarray:
    """Scatter-add the adjoint of :func:`_im2col` back onto a padded grid."""
    b, c, hp, wp = shape
    patches = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    rs, cs = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + rs : stride, j : j + cs : stride] += patches[:, :, i, j]
    return out


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _check_conv_args(stride: int, padding: int) -> None:
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride}")
    if int(padding) != padding or padding < 0:
        raise ValueError(f"padding must be a non-negative int, got {padding}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (BxCxHxW) with ``kernel`` (OxCxKhxKw)."""
    _check_conv_args(stride, padding)
    if x.value.ndim != 4 or kernel.value.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernel")
    b, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: kernel expects {kc} input channels, input has {c}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d: bias {bias.shape} must be ({o},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}")

    xp = _pad(x.value, padding)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    kmat = kernel.value.reshape(o, -1)
    out = (cols @ kmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2) + bias.value[None, :, None, None]

    def back(g, needs):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dx = dk = db = None
        if needs[0]:
            dxp = _col2im(g2 @ kmat, xp.shape, kh, kw, stride, ho, wo)
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if needs[1]:
            dk = (g2.T @ cols).reshape(kernel.shape)
        if needs[2]:
            db = g.sum(axis=(0, 2, 3))
        return dx, dk, db

    return _result(np.ascontiguousarray(out), "conv2d", (x, kernel, bias), back)


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; ``kernel`` is laid out CinxCoutxKhxKw.

    Output extent is ``(H-1)*stride - 2*padding + Kh`` (likewise for width).
    """
    _check_conv_args(stride, padding)
    if x.value.ndim != 4 or kernel.value.ndim != 4:
        raise ShapeError("conv2d_transpose expects 4-D input and kernel")
    b, cin, h, w = x.shape
    kcin, cout, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d_transpose: kernel expects {kcin} input channels, input has {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d_transpose: bias {bias.shape} must be ({cout},)")
    hp, wp = (h - 1) * stride + kh, (w - 1) * stride + kw
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d_transpose: padding leaves an empty output")

    xv = x.value
    x2 = xv.transpose(0, 2, 3, 1).reshape(-1, cin)
    kmat = kernel.value.reshape(cin, -1)
    full = _col2im(x2 @ kmat, (b, cout, hp, wp), kh, kw, stride, h, w)
    out = full[:, :, padding : padding + ho, padding : padding + wo] + bias.value[None, :, None, None]

    def back(g, needs):
        cols, gh, gw = _im2col(_pad(g, padding), kh, kw, stride)
        assert (gh, gw) == (h, w)
        dx = dk = db = None
        if needs[0]:
            dx = (cols @ kmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
        if needs[1]:
            dk = (x2.T @ cols).reshape(kernel.shape)
        if needs[2]:
            db = g.sum(axis=(0, 2, 3))
        return dx, dk, db

    return _result(np.ascontiguousarray(out), "conv2d_transpose", (x, kernel, bias), back)


# ---------------------------------------------------------------------------
# resampling and normalization
# ---------------------------------------------------------------------------


def _lerp_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_dst == 1 or n_src == 1:
        pos = np.zeros(n_dst)
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    return lo, hi, pos - lo


def _lerp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    lo, hi, frac = _lerp_coords(n_src, n_dst)
    m = np.zeros((n_dst, n_src))
    np.add.at(m, (np.arange(n_dst), lo), 1 - frac)
    np.add.at(m, (np.arange(n_dst), hi), frac)
    return m


def bilinear_upsample(x: Tensor, target_rows: int, target_cols: int) -> Tensor:
    """Corner-aligned bilinear interpolation of the last two axes.

    Evaluated as ``a + f*(b - a)`` so constant fields come through bit-exact.
    """
    if x.value.ndim < 2:
        raise ShapeError("bilinear_upsample needs at least 2 axes")
    h, w = x.shape[-2:]
    if target_rows < h or target_cols < w:
        raise ShapeError(f"bilinear_upsample: target {target_rows}x{target_cols} smaller than source {h}x{w}")
    v = x.value
    dt = v.dtype
    r0, r1, fr = _lerp_coords(h, target_rows)
    c0, c1, fc = _lerp_coords(w, target_cols)
    fr = fr.astype(dt)[:, None]
    fc = fc.astype(dt)
    rows = v[..., r0, :] + fr * (v[..., r1, :] - v[..., r0, :])
    out = rows[..., c0] + fc * (rows[..., c1] - rows[..., c0])
    mr = _lerp_matrix(h, target_rows).astype(dt)
    mc = _lerp_matrix(w, target_cols).astype(dt)

    def back(g, needs):
        return (mr.T @ g @ mc,)

    return _result(out, "bilinear_upsample", (x,), back)


def batch_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-channel normalization with statistics of the current batch.

    Returns the output node together with the batch mean and (biased)
    variance so callers can maintain running estimates.
    """
    if x.value.ndim != 4:
        raise ShapeError(f"batch_norm expects BxCxHxW, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine params must have shape ({c},)")
    xv = x.value
    n = xv.shape[0] * xv.shape[2] * xv.shape[3]
    mu = xv.mean(axis=(0, 2, 3), keepdims=True)
    var = xv.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + xv.dtype.type(eps))
    xhat = (xv - mu) * inv_std
    gv = gamma.value[None, :, None, None]
    out = xhat * gv + beta.value[None, :, None, None]

    def back(g, needs):
        dxhat = g * gv
        dx = None
        if needs[0]:
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = inv_std / n * (n * dxhat - s1 - xhat * s2)
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if needs[1] else None
        dbeta = g.sum(axis=(0, 2, 3)) if needs[2] else None
        return dx, dgamma, dbeta

    node = _result(out, "batch_norm", (x, gamma, beta), back)
    return node, mu.reshape(c), var.reshape(c)

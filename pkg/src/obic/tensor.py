"""Small reverse-mode autodiff over numpy arrays.

Each op builds its output eagerly and, when any input needs gradients,
records its parents plus a closure mapping the output gradient to input
gradients.  :meth:`Tensor.backward` walks that graph once in reverse
topological order.  Tensors are at most 4-D, laid out as (N, C, H, W).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special


class GraphError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ValueError(f"tensors are at most 4-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if not self.requires_grad:
            raise GraphError("backward() on a tensor with no differentiable forward graph")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without an output gradient needs a scalar")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"output gradient shape {grad.shape} != {self.shape}")

        order = _topological_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return index(self, idx)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _node(data, parents, backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_operands(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        gb = g / b.data
        return _unbroadcast(gb, a.shape), _unbroadcast(-gb * out, b.shape)

    return _node(out, (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    out = x.data ** p

    def backward(g):
        return (g * p * x.data ** (p - 1),)

    return _node(out, (x,), backward, "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _node(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def logistic_cdf(x: Tensor) -> Tensor:
    """Logistic sigmoid, i.e. the CDF of the standard logistic distribution."""
    out = special.expit(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "logistic_cdf")


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def normal_cdf(x: Tensor) -> Tensor:
    out = special.ndtr(x.data)

    def backward(g):
        return (g * _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data),)

    return _node(out, (x,), backward, "normal_cdf")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def lower_bound(x: Tensor, floor: float) -> Tensor:
    keep = x.data >= floor
    return _node(np.maximum(x.data, floor), (x,), lambda g: (g * keep,), "lower_bound")


def uniform_noise(x: Tensor, rng: np.random.Generator) -> Tensor:
    """x + U[-0.5, 0.5) with an identity gradient."""
    noise = rng.random(x.shape) - 0.5
    return _node(x.data + noise.astype(x.dtype), (x,), lambda g: (g,), "uniform_noise")


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def index(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing only; advanced indexing is not differentiable here."""

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _node(np.array(x.data[idx]), (x,), backward, "index")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; a trailing odd row/column is dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    out = x.data[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
        return (gx,)

    return _node(out, (x,), backward, "avg_pool2")


# ---------------------------------------------------------------- convolution

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw) patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw), ho, wo


def _conv_forward(x, w, stride, pad):
    n = x.shape[0]
    co, _, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(co, -1).T
    return out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2), cols


def _conv_grad_input(g, w, x_shape, stride, pad):
    n, _, h, wd = x_shape
    co, ci, kh, kw = w.shape
    ho, wo = g.shape[2:]
    dcols = (g.transpose(0, 2, 3, 1).reshape(-1, co) @ w.reshape(co, -1)).reshape(n, ho, wo, ci, kh, kw)
    dxp = np.zeros((n, ci, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return dxp[:, :, pad : pad + h, pad : pad + wd]


def _conv_grad_weight(cols, g, w_shape):
    co = w_shape[0]
    return (g.transpose(0, 2, 3, 1).reshape(-1, co).T @ cols).reshape(w_shape)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation; ``w`` is (C_out, C_in, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
    out, cols = _conv_forward(x.data, w.data, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def backward(g):
        gx = _conv_grad_input(g, w.data, x.shape, stride, padding) if x.requires_grad else None
        gw = _conv_grad_weight(cols, g, w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(np.ascontiguousarray(out), parents, backward, "conv2d")


def conv_transpose2d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2, padding: int = 0, output_padding: int = 0
) -> Tensor:
    """Adjoint of :func:`conv2d`; ``w`` is (C_in, C_out, k, k)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose2d shape mismatch: input {x.shape}, weight {w.shape}")
    n, _, h, wd = x.shape
    kh, kw = w.shape[2:]
    out_shape = (
        n,
        w.shape[1],
        (h - 1) * stride - 2 * padding + kh + output_padding,
        (wd - 1) * stride - 2 * padding + kw + output_padding,
    )
    out = _conv_grad_input(x.data, w.data, out_shape, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gx, _ = _conv_forward(g, w.data, stride, padding)
        if w.requires_grad:
            cols, _, _ = _im2col(g, kh, kw, stride, padding)
            gw = _conv_grad_weight(cols, x.data, w.shape)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(np.ascontiguousarray(out), parents, backward, "conv_transpose2d")


def causal_kernel_mask(k: int) -> np.ndarray:
    """k x k mask that keeps only positions strictly before the centre in raster order."""
    m = np.zeros((k, k))
    c = k // 2
    m[:c, :] = 1.0
    m[c, :c] = 1.0
    return m


def masked_conv2d(x: Tensor, w: Tensor, b: Tensor | None, mask: np.ndarray) -> Tensor:
    """Same-size conv whose kernel is multiplied by a fixed ``mask``."""
    k = w.shape[-1]
    wm = mul(w, mask.astype(w.dtype)[None, None])
    return conv2d(x, wm, b, stride=1, padding=k // 2)


# ---------------------------------------------------------------- gradient check

GRADCHECK_OPS = (
    "conv2d",
    "conv2d_stride2",
    "conv_transpose2d",
    "masked_conv2d",
    "add",
    "mul",
    "leaky_relu",
    "exp",
    "logistic_cdf",
    "avg_pool2",
    "sum",
    "msssim",
    # used by the rate and loss terms
    "normal_cdf",
    "log",
    "div",
    "sub",
    "pow",
    "mean",
    "clamp",
    "lower_bound",
    "uniform_noise",
    # shape plumbing
    "reshape",
    "index",
    "concat",
)


def _gradcheck_case(op_kind: str, shape, rng):
    """Return (fn, inputs) where fn maps input Tensors to an output Tensor."""
    u = lambda s: rng.uniform(-2.0, 2.0, size=s)  # noqa: E731
    c = shape[1]
    if op_kind in ("conv2d", "conv2d_stride2"):
        stride = 2 if op_kind == "conv2d_stride2" else 1
        args = [u(shape), u((4, c, 3, 3)) * 0.5, u((4,))]
        return (lambda x, w, b: conv2d(x, w, b, stride=stride, padding=1)), args
    if op_kind == "conv_transpose2d":
        args = [u(shape), u((c, 4, 5, 5)) * 0.5, u((4,))]
        return (lambda x, w, b: conv_transpose2d(x, w, b, stride=2, padding=2, output_padding=1)), args
    if op_kind == "masked_conv2d":
        mask = causal_kernel_mask(5)
        args = [u(shape), u((4, c, 5, 5)) * 0.5, u((4,))]
        return (lambda x, w, b: masked_conv2d(x, w, b, mask)), args
    if op_kind in ("add", "sub", "mul", "div"):
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[op_kind]
        b = u(shape)
        if op_kind == "div":
            b = np.sign(b) * (np.abs(b) + 0.5)
        return fn, [u(shape), b]
    if op_kind == "log":
        return log, [rng.uniform(0.2, 2.0, size=shape)]
    if op_kind == "pow":
        return (lambda x: power(x, 1.5)), [rng.uniform(0.2, 2.0, size=shape)]
    if op_kind in ("clamp", "lower_bound"):
        # keep finite differences away from the bounds
        x = u(shape)
        x = np.where((np.abs(x - 0.5) < 1e-2) | (np.abs(x + 0.5) < 1e-2), 1.0, x)
        if op_kind == "clamp":
            return (lambda t: clamp(t, -0.5, 0.5)), [x]
        return (lambda t: lower_bound(t, -0.5)), [x]
    if op_kind == "uniform_noise":
        seed = int(rng.integers(2**31))
        return (lambda t: uniform_noise(t, np.random.default_rng(seed))), [u(shape)]
    if op_kind == "mean":
        return (lambda t: mean(t, axis=(1, 3))), [u(shape)]
    if op_kind == "reshape":
        return (lambda t: reshape(t, (shape[0], -1))), [u(shape)]
    if op_kind == "index":
        return (lambda t: index(t, (slice(None), slice(1, None), slice(None, None, 2)))), [u(shape)]
    if op_kind == "concat":
        return (lambda a, b: concat([a, b], axis=1)), [u(shape), u(shape)]
    unary = {
        "leaky_relu": leaky_relu,
        "exp": exp,
        "logistic_cdf": logistic_cdf,
        "normal_cdf": normal_cdf,
        "avg_pool2": avg_pool2,
        "sum": sum,
    }
    if op_kind in unary:
        x = u(shape)
        if op_kind == "leaky_relu":
            # keep finite differences away from the kink
            x = np.where(np.abs(x) < 1e-2, 0.5, x)
        return unary[op_kind], [x]
    if op_kind == "msssim":
        from .msssim import msssim_tensor

        a = rng.uniform(0.0, 1.0, size=shape)
        b = np.clip(a + rng.normal(0.0, 0.1, size=shape), 0.0, 1.0)
        return msssim_tensor, [a, b]
    raise ValueError(f"unsupported op kind for grad_check: {op_kind!r}")


def grad_check(op_kind: str, input_shape, eps: float = 1e-4, seed: int = 0, max_coords: int = 48) -> float:
    """Worst relative error between analytic and central-difference gradients.

    The scalar probed is ``sum(op(inputs) * R)`` for a fixed random ``R``.
    Every input is differentiated; at most ``max_coords`` randomly chosen
    coordinates per input are probed numerically.  Relative error is
    ``|a - n| / max(|a|, |n|, 1e-4)``.
    """
    shape = tuple(input_shape)
    if len(shape) == 3:
        shape = (1,) + shape
    rng = np.random.default_rng(seed)
    fn, arrays = _gradcheck_case(op_kind, shape, rng)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    probe = None

    def scalar(arrs, with_grad=False):
        nonlocal probe
        ts = [Tensor(a, requires_grad=with_grad) for a in arrs]
        out = fn(*ts)
        if probe is None:
            probe = rng.uniform(0.5, 1.5, size=out.shape)
        loss = sum(mul(out, probe))
        return loss, ts

    loss, ts = scalar(arrays, with_grad=True)
    loss.backward()
    worst = 0.0
    for k, arr in enumerate(arrays):
        analytic = ts[k].grad
        flat = np.arange(arr.size)
        if arr.size > max_coords:
            flat = rng.choice(arr.size, size=max_coords, replace=False)
        for f in flat:
            pos = np.unravel_index(f, arr.shape)
            bumped = [a.copy() for a in arrays]
            bumped[k][pos] += eps
            up = float(scalar(bumped)[0].data)
            bumped[k][pos] -= 2 * eps
            down = float(scalar(bumped)[0].data)
            numeric = (up - down) / (2 * eps)
            a = float(analytic[pos])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, err)
    return worst

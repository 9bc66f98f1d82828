"""Dense reverse-mode differentiation on numpy arrays, plus Adam.

Every differentiable primitive is registered in ``OPS`` together with a
factory of sample inputs, so gradient checks can iterate the full set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, NumericFault


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _lift(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype, copy=True), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# registry

GradCase = tuple[list[np.ndarray], Callable[..., Tensor]]


@dataclass
class OpInfo:
    name: str
    fn: Callable
    cases: Callable[[np.random.Generator], list[GradCase]]


OPS: dict[str, OpInfo] = {}


def register(name: str, cases: Callable[[np.random.Generator], list[GradCase]]):
    """Register a differentiable primitive with its gradient-check sample cases.

    ``cases(rng)`` returns ``(arrays, call)`` pairs; ``call(*tensors)`` applies
    the op to tensors wrapping ``arrays``, closing over any static arguments.
    """

    def deco(fn):
        if name in OPS:
            raise ValueError(f"op {name!r} registered twice")
        OPS[name] = OpInfo(name, fn, cases)
        return fn

    return deco


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFault(f"non-finite value produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _randn(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# elementwise

def _binary_cases(rng):
    return [
        ([_randn(rng, 4), _randn(rng, 4)], None),
        ([_randn(rng, 3, 5), _randn(rng, 5)], None),
        ([_randn(rng, 2, 3, 4), _randn(rng, 2, 1, 4)], None),
    ]


def _bind(fn, cases):
    def make(rng):
        return [(arrays, call or fn) for arrays, call in cases(rng)]

    return make


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with broadcasting."""
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


register("add", _bind(add, _binary_cases))(add)
register("sub", _bind(sub, _binary_cases))(sub)
register("mul", _bind(mul, _binary_cases))(mul)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(x.data * s, (x,), lambda g: (g * s,), "scale")


register(
    "scale",
    lambda rng: [
        ([_randn(rng, 5)], lambda x: scale(x, 2.5)),
        ([_randn(rng, 3, 4)], lambda x: scale(x, -0.3)),
        ([_randn(rng, 2, 2, 3)], lambda x: scale(x, 1e-2)),
    ],
)(scale)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 <= slope <= 1:
        raise ContractError(f"leaky_relu: slope must lie in [0, 1], got {slope}")
    s = x.dtype.type(slope)
    y = np.maximum(x.data, x.data * s)

    def bw(g):
        gx = g * s
        np.copyto(gx, g, where=x.data > 0)
        return (gx,)

    return _make(y, (x,), bw, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sqrt(x: Tensor) -> Tensor:
    """Square root; the derivative at exactly zero is taken as zero."""
    if (x.data < 0).any():
        raise ContractError("sqrt: negative input")
    y = np.sqrt(x.data)

    def bw(g):
        safe = np.where(y > 0, y, 1.0)
        return (np.where(y > 0, 0.5 * g / safe, 0.0),)

    return _make(y, (x,), bw, "sqrt")


def _unary_cases(rng):
    return [([_randn(rng, 6)], None), ([_randn(rng, 3, 4)], None), ([_randn(rng, 2, 3, 2)], None)]


register("leaky_relu", _bind(leaky_relu, _unary_cases))(leaky_relu)
register("tanh", _bind(tanh, _unary_cases))(tanh)
register(
    "sqrt",
    lambda rng: [
        ([rng.uniform(0.5, 2.0, 5)], sqrt),
        ([rng.uniform(0.5, 2.0, (3, 4))], sqrt),
        ([rng.uniform(0.5, 2.0, (2, 2, 3))], sqrt),
    ],
)(sqrt)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., q] @ b[q, r]``; leading axes of ``a`` are treated as a batch."""
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


register(
    "matmul",
    lambda rng: [
        ([_randn(rng, 3, 4), _randn(rng, 4, 2)], matmul),
        ([_randn(rng, 1, 5), _randn(rng, 5, 5)], matmul),
        ([_randn(rng, 2, 3, 4), _randn(rng, 4, 3)], matmul),
    ],
)(matmul)


def _transpose_of(p: sp.spmatrix) -> sp.csr_matrix:
    pt = getattr(p, "_meshgrow_transpose", None)
    if pt is None:
        pt = p.T.tocsr()
        try:
            p._meshgrow_transpose = pt
        except AttributeError:
            pass
    return pt


def sparse_matmul(p: sp.spmatrix, x: Tensor) -> Tensor:
    """``P @ x`` for a constant sparse ``P``; only ``x`` is differentiated."""
    if p.ndim != 2 or x.data.ndim != 2 or p.shape[1] != x.shape[0]:
        raise ContractError(f"sparse_matmul: incompatible shapes {p.shape} and {x.shape}")
    pt = _transpose_of(p)
    return _make(np.asarray(p @ x.data), (x,), lambda g: (np.asarray(pt @ g),), "sparse_matmul")


def _sparse_cases(rng):
    out = []
    for n, d in [(4, 2), (7, 3), (12, 5)]:
        dense = (rng.random((n, n)) < 0.3) * rng.standard_normal((n, n))
        p = sp.csr_matrix(dense)
        out.append(([_randn(rng, n, d)], lambda x, p=p: sparse_matmul(p, x)))
    return out


register("sparse_matmul", _sparse_cases)(sparse_matmul)


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """(N, M) matrix of squared Euclidean distances between rows of a and b."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"pairwise_sqdist: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)

    def bw(g):
        ga = 2.0 * (g.sum(axis=1)[:, None] * a.data - g @ b.data)
        gb = 2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data)
        return ga, gb

    return _make(d2, (a, b), bw, "pairwise_sqdist")


register(
    "pairwise_sqdist",
    lambda rng: [
        ([_randn(rng, 3, 3), _randn(rng, 4, 3)], pairwise_sqdist),
        ([_randn(rng, 1, 2), _randn(rng, 5, 2)], pairwise_sqdist),
        ([_randn(rng, 6, 3), _randn(rng, 6, 3)], pairwise_sqdist),
    ],
)(pairwise_sqdist)


# ---------------------------------------------------------------------------
# shape manipulation

def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[idx]``; the backward pass scatter-adds into the source rows."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise ContractError(f"gather_rows: integer indices required, got {idx.dtype}")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"gather_rows: index outside [0, {n})")
    flat = idx.ravel()

    def bw(g):
        g2 = g.reshape(flat.size, -1)
        scatter = sp.csr_matrix(
            (np.ones(flat.size, dtype=g.dtype), (flat, np.arange(flat.size))),
            shape=(n, flat.size),
        )
        return (np.asarray(scatter @ g2).reshape(x.shape),)

    return _make(x.data[idx], (x,), bw, "gather_rows")


def _gather_cases(rng):
    out = []
    for n, k, d in [(5, 2, 3), (4, 3, 1), (8, 4, 2)]:
        idx = rng.integers(0, n, size=(n, k))
        out.append(([_randn(rng, n, d)], lambda x, idx=idx: gather_rows(x, idx)))
    return out


register("gather_rows", _gather_cases)(gather_rows)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    shapes = [t.shape for t in tensors]
    ax = axis % len(shapes[0])
    for s in shapes:
        if len(s) != len(shapes[0]) or s[:ax] + s[ax + 1:] != shapes[0][:ax] + shapes[0][ax + 1:]:
            raise ContractError(f"concat: incompatible shapes {shapes}")
    splits = np.cumsum([s[ax] for s in shapes])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def concat_last_axis(*tensors: Tensor) -> Tensor:
    return concat(tensors, axis=-1)


register(
    "concat",
    lambda rng: [
        ([_randn(rng, 3, 2), _randn(rng, 3, 4)], concat_last_axis),
        ([_randn(rng, 2, 2, 1), _randn(rng, 2, 2, 3), _randn(rng, 2, 2, 2)], concat_last_axis),
        ([_randn(rng, 2, 3), _randn(rng, 4, 3)], lambda a, b: concat([a, b], axis=0)),
    ],
)(concat)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ContractError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


register(
    "reshape",
    lambda rng: [
        ([_randn(rng, 6)], lambda x: reshape(x, (2, 3))),
        ([_randn(rng, 3, 4)], lambda x: reshape(x, (3, 1, 4))),
        ([_randn(rng, 2, 3, 2)], lambda x: reshape(x, (-1,))),
    ],
)(reshape)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ContractError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _make(np.ascontiguousarray(y), (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


register(
    "broadcast_to",
    lambda rng: [
        ([_randn(rng, 3)], lambda x: broadcast_to(x, (4, 3))),
        ([_randn(rng, 3, 1, 2)], lambda x: broadcast_to(x, (3, 4, 2))),
        ([_randn(rng, 1, 1)], lambda x: broadcast_to(x, (2, 5))),
    ],
)(broadcast_to)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ContractError(f"transpose: expected a matrix, got {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


register(
    "transpose",
    lambda rng: [([_randn(rng, 2, 3)], transpose), ([_randn(rng, 1, 4)], transpose), ([_randn(rng, 5, 5)], transpose)],
)(transpose)


# ---------------------------------------------------------------------------
# reductions and losses

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    y = np.sum(x.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(y), (x,), bw, "sum")


def mean_axis(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise ContractError(f"mean_axis: axis {axis} out of range for {x.shape}")
    count = x.data.size if axis is None else x.shape[axis]
    y = np.mean(x.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(np.asarray(y), (x,), bw, "mean_axis")


register(
    "sum",
    lambda rng: [
        ([_randn(rng, 5)], sum),
        ([_randn(rng, 3, 4)], lambda x: sum(x, axis=0)),
        ([_randn(rng, 2, 3, 4)], lambda x: sum(x, axis=-1)),
    ],
)(sum)
register(
    "mean_axis",
    lambda rng: [
        ([_randn(rng, 5)], mean_axis),
        ([_randn(rng, 3, 4)], lambda x: mean_axis(x, axis=1)),
        ([_randn(rng, 2, 3, 4)], lambda x: mean_axis(x, axis=1)),
    ],
)(mean_axis)


def min_reduce_last(x: Tensor) -> Tensor:
    """Minimum over the last axis; the gradient goes to the first argmin."""
    if x.shape[-1] == 0:
        raise ContractError("min_reduce_last: empty last axis")
    arg = np.argmin(x.data, axis=-1)
    y = np.take_along_axis(x.data, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[..., None], g[..., None], axis=-1)
        return (gx,)

    return _make(y, (x,), bw, "min_reduce_last")


register("min_reduce_last", _bind(min_reduce_last, _unary_cases))(min_reduce_last)


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """mean |a - b|; the subgradient at ties is zero."""
    _same_shape("l1_loss", a, b)
    d = a.data - b.data
    n = d.size

    def bw(g):
        s = np.sign(d) * (g / n)
        return s, -s

    return _make(np.asarray(np.abs(d).mean()), (a, b), bw, "l1_loss")


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mse_loss", a, b)
    d = a.data - b.data
    n = d.size

    def bw(g):
        s = (2.0 / n) * g * d
        return s, -s

    return _make(np.asarray((d * d).mean()), (a, b), bw, "mse_loss")


def _loss_cases(rng):
    return [
        ([_randn(rng, 5), _randn(rng, 5)], None),
        ([_randn(rng, 3, 4), _randn(rng, 3, 4)], None),
        ([_randn(rng, 2, 2, 3), _randn(rng, 2, 2, 3)], None),
    ]


register("l1_loss", _bind(l1_loss, _loss_cases))(l1_loss)
register("mse_loss", _bind(mse_loss, _loss_cases))(mse_loss)


# ---------------------------------------------------------------------------
# backward pass

def _topological(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every differentiable tensor reachable from ``loss``.

    Gradients accumulate into leaves, so two losses can share parameters.
    Running backward twice on the same loss raises.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward: already called on this loss")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any parameter")
    loss._consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        # release the closure so intermediate buffers can be freed
        node._backward = None
        node._parents = ()


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[:3]}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, p in params.items():
        g = p.grad
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        if m.shape != p.shape:
            raise ContractError(f"adam_step: moment shape {m.shape} != parameter {p.shape} for {key}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
        p.grad = None


# ---------------------------------------------------------------------------
# finite differences

def numeric_grad(f: Callable[[list[np.ndarray]], float], arrays: list[np.ndarray], h: float = 1e-5):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            fp = f(arrays)
            arr[i] = old - h
            fm = f(arrays)
            arr[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Infinity-norm relative error of an analytic gradient against a reference."""
    scale_ = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale_)


def gradcheck(call: Callable[..., Tensor], arrays: list[np.ndarray], seed: int = 0, h: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    The output is reduced to a scalar with a fixed random projection so that
    every output entry contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = call(*[Tensor(a) for a in arrays])
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def f(arrs):
        return float(np.sum(call(*[Tensor(a) for a in arrs]).data * weights))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = call(*leaves)
    backward(sum(mul(out, Tensor(weights))))
    numeric = numeric_grad(f, arrays, h)
    return max(relative_error(leaf.grad, n) for leaf, n in zip(leaves, numeric))

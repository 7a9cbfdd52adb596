"""Reverse-mode automatic differentiation over float64 numpy storage.

Graphs are built define-by-run: every primitive records its parent nodes
and a vector-Jacobian closure on its output, and the recording is dropped
after each step (a fresh tape per forward pass). `Tape` topologically
orders the nodes reachable from a scalar loss and accumulates per-node
gradients in reverse; `backward` is the one-call wrapper returning the
gradient map for leaf tensors.

Everything is 64-bit: central-difference gradient checks at the 1e-4
tolerance this package tests against are not reliable in float32.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import backend
from .errors import ContractError, DegenerateInputError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (teacher passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus optional autodiff record.

    `requires_grad` marks trainable leaves; interior nodes inherit it from
    their parents unless recording is suspended. `_vjp` maps the incoming
    gradient to per-parent gradients.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    # keep numpy from absorbing Tensor operands into object arrays
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim >= 1 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # kernels take C-contiguous views
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self) -> "Tensor":
        return tmean(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / float(other))
        raise ContractError("tensor division is only defined by a scalar")


def _node(data, parents, vjp) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape not in ((), like.data.shape):
        raise ShapeError(f"operand shape {arr.shape} does not match {like.data.shape}")
    return Tensor(arr)


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives

def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _require_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _require_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _require_same_shape(a, b, "mul")
    da, db = a.data, b.data
    return _node(da * db, (a, b), lambda g: (g * db, g * da))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through strictly inside the
    interval and is 0 at and beyond the bounds."""
    ad = a.data
    inside = (ad > lo) & (ad < hi)
    return _node(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def texp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def tlog(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DegenerateInputError("log of a non-positive entry")
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def tsum(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        shape = a.data.shape
        return _node(a.data.sum(), (a,), lambda g: (np.full(shape, float(g)),))
    if axis != 1 or a.data.ndim != 2:
        raise ContractError("tsum supports axis=None or axis=1 on a matrix")
    n, k = a.data.shape
    return _node(
        a.data.sum(axis=1),
        (a,),
        lambda g: (np.repeat(np.asarray(g).reshape(n, 1), k, axis=1),),
    )


def tmean(a: Tensor) -> Tensor:
    size = a.data.size
    shape = a.data.shape
    return _node(a.data.mean(), (a,), lambda g: (np.full(shape, float(g) / size),))


def gather_labels(x: Tensor, labels) -> Tensor:
    """Pick x[i, labels[i]] for each row; backward scatters into the picks."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_labels expects a matrix, got shape {x.data.shape}")
    n, c = x.data.shape
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch size {n}")
    if not np.issubdtype(lab.dtype, np.integer):
        lab = lab.astype(np.int64)
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        bad = int(lab[(lab < 0) | (lab >= c)][0])
        raise ContractError(f"label {bad} outside [0, {c})")
    rows = np.arange(n)

    def vjp(g):
        gx = np.zeros((n, c))
        np.add.at(gx, (rows, lab), g)
        return (gx,)

    return _node(x.data[rows, lab], (x,), vjp)


# ---------------------------------------------------------------------------
# dense kernels (routed through the selected backend)

def linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x: (n, d), w: (d, k), b: (k,)."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 2 or wd.ndim != 2:
        raise ShapeError(f"linear_forward: x {xd.shape} and W {wd.shape} must be matrices")
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(f"linear_forward: x {xd.shape} incompatible with W {wd.shape}")
    if bd.shape != (wd.shape[1],):
        raise ShapeError(f"linear_forward: b {bd.shape} incompatible with W {wd.shape}")
    out = backend.K.add_bias(backend.K.gemm(xd, wd), bd)

    def vjp(g):
        g = np.ascontiguousarray(g)
        return (
            backend.K.gemm_nt(g, wd),
            backend.K.gemm_tn(xd, g),
            backend.K.sum_rows(g),
        )

    return _node(out, (x, w, b), vjp)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T with a: (n, k), b: (m, k); the similarity-matrix primitive."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[1]:
        raise ShapeError(f"matmul_nt: shapes {ad.shape} and {bd.shape} are incompatible")
    out = backend.K.gemm_nt(ad, bd)

    def vjp(g):
        g = np.ascontiguousarray(g)
        return (backend.K.gemm(g, bd), backend.K.gemm_tn(g, ad))

    return _node(out, (a, b), vjp)


def _rowwise(x: Tensor):
    """View 1-D input as a single row; returns (2-D data, restore shape)."""
    if x.data.ndim == 1:
        return x.data.reshape(1, -1), x.data.shape
    if x.data.ndim == 2:
        return x.data, None
    raise ShapeError(f"expected vector or matrix, got shape {x.data.shape}")


def relu(x: Tensor) -> Tensor:
    xd, orig = _rowwise(x)
    xd = np.ascontiguousarray(xd)
    out = backend.K.relu_fwd(xd)

    def vjp(g):
        gx = backend.K.relu_bwd(xd, np.ascontiguousarray(g).reshape(xd.shape))
        return (gx.reshape(orig) if orig else gx,)

    return _node(out.reshape(orig) if orig else out, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    xd, orig = _rowwise(x)
    xd = np.ascontiguousarray(xd)
    out = backend.K.log_softmax_fwd(xd)

    def vjp(g):
        gx = backend.K.log_softmax_bwd(out, np.ascontiguousarray(g).reshape(out.shape))
        return (gx.reshape(orig) if orig else gx,)

    return _node(out.reshape(orig) if orig else out, (x,), vjp)


def l2_normalize(x: Tensor) -> Tensor:
    xd, orig = _rowwise(x)
    xd = np.ascontiguousarray(xd)
    out, norms = backend.K.l2norm_fwd(xd)
    if np.any(norms == 0.0):
        raise DegenerateInputError("l2_normalize: zero-norm row")

    def vjp(g):
        gx = backend.K.l2norm_bwd(out, norms, np.ascontiguousarray(g).reshape(out.shape))
        return (gx.reshape(orig) if orig else gx,)

    return _node(out.reshape(orig) if orig else out, (x,), vjp)


# ---------------------------------------------------------------------------
# reverse pass

class Tape:
    """Reverse pass over the graph reachable from one scalar loss.

    `order` lists nodes with every parent preceding its consumers;
    `grads` holds the per-node adjoint accumulators during `run`.
    """

    def __init__(self, loss: Tensor):
        if loss.data.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self.loss = loss
        self.order = self._toposort(loss)
        self.grads: dict[int, np.ndarray] = {}

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def run(self) -> dict[Tensor, np.ndarray]:
        self.grads[id(self.loss)] = np.ones(())
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for node in reversed(self.order):
            g = self.grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    leaf_grads[node] = g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = self.grads.get(id(parent))
                self.grads[id(parent)] = pg if acc is None else acc + pg
        return leaf_grads


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradient map for every requires_grad leaf reachable from `loss`."""
    return Tape(loss).run()


def grad_check(f: Callable[..., Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    Per coordinate the error is |analytic - numeric| scaled by
    max(1, |analytic|, |numeric|). `f` is re-evaluated with each parameter
    coordinate nudged by +-eps, so it must be a pure function of the
    parameters' current data.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = list(params)
    analytic = backward(f(*params))
    worst = 0.0
    for p in params:
        ag = analytic.get(p)
        if ag is None:
            ag = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = np.asarray(ag).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                up = float(f(*params).data)
                flat[i] = orig - eps
                down = float(f(*params).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
            worst = max(worst, err)
    return worst

"""Reverse-mode automatic differentiation over dense 2-D float64 matrices.

Every value is a matrix; scalars are 1x1.  Ops record their inputs and a
vector-Jacobian closure on the output tensor, so the computation graph is
the DAG of parent links.  ``backward`` walks that DAG in reverse
topological order and accumulates gradients into every ``requires_grad``
leaf.  There is no global state: independent graphs can be built and
differentiated concurrently.

All ops validate shapes (only row-vector bias addition may broadcast) and
raise :class:`NumericError` as soon as a forward pass produces NaN/Inf.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import InputError, NumericError

__all__ = [
    "Tensor",
    "matmul",
    "add",
    "sub",
    "scale",
    "elementwise_mul",
    "row_softmax",
    "log_clamped",
    "relu",
    "leaky_relu",
    "concat_cols",
    "sum",
    "dropout",
    "spmm",
    "gather_rows",
    "edge_softmax",
    "edge_aggregate",
    "backward",
    "finite_difference_check",
    "LOG_EPS",
]

LOG_EPS = 1e-12


class Tensor:
    """Dense float64 matrix, optionally a node of a computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if self.values.ndim != 2:
            raise InputError(f"tensors are 2-D matrices, got ndim={self.values.ndim}")
        if not np.isfinite(self.values).all():
            raise NumericError("tensor constructed with non-finite values")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _result(values: np.ndarray, op: str, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    if not np.isfinite(values).all():
        raise NumericError(f"op {op!r} produced non-finite values")
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _check_tensor(t, op: str) -> Tensor:
    if not isinstance(t, Tensor):
        raise InputError(f"{op} expects Tensor arguments, got {type(t).__name__}")
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor(a, "matmul"), _check_tensor(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise InputError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _result(
        a.values @ b.values,
        "matmul",
        (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b; b may be a 1 x d row vector added to every row."""
    _check_tensor(a, "add"), _check_tensor(b, "add")
    if a.shape == b.shape:
        return _result(a.values + b.values, "add", (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _result(
            a.values + b.values,
            "add_bias",
            (a, b),
            lambda g: (g, g.sum(axis=0, keepdims=True)),
        )
    raise InputError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor(a, "sub"), _check_tensor(b, "sub")
    if a.shape != b.shape:
        raise InputError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _result(a.values - b.values, "sub", (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    _check_tensor(a, "scale")
    c = float(c)
    return _result(a.values * c, "scale", (a,), lambda g: (g * c,))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor(a, "elementwise_mul"), _check_tensor(b, "elementwise_mul")
    if a.shape != b.shape:
        raise InputError(f"elementwise_mul shape mismatch: {a.shape} * {b.shape}")
    return _result(
        a.values * b.values,
        "elementwise_mul",
        (a, b),
        lambda g: (g * b.values, g * a.values),
    )


def row_softmax(a: Tensor) -> Tensor:
    _check_tensor(a, "row_softmax")
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, "row_softmax", (a,), vjp)


def log_clamped(a: Tensor, eps: float = LOG_EPS) -> Tensor:
    """log(max(a, eps)); the gradient is zero on the clamped region."""
    _check_tensor(a, "log_clamped")
    clamped = np.maximum(a.values, eps)
    mask = a.values > eps

    def vjp(g):
        return (np.where(mask, g / clamped, 0.0),)

    return _result(np.log(clamped), "log_clamped", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    _check_tensor(a, "relu")
    mask = a.values > 0

    def vjp(g):
        return (np.where(mask, g, 0.0),)

    return _result(np.where(mask, a.values, 0.0), "relu", (a,), vjp)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    _check_tensor(a, "leaky_relu")
    slope = float(slope)
    mask = a.values > 0

    def vjp(g):
        return (np.where(mask, g, slope * g),)

    return _result(np.where(mask, a.values, slope * a.values), "leaky_relu", (a,), vjp)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor(a, "concat_cols"), _check_tensor(b, "concat_cols")
    if a.shape[0] != b.shape[0]:
        raise InputError(f"concat_cols row mismatch: {a.shape} || {b.shape}")
    k = a.shape[1]

    def vjp(g):
        return (g[:, :k], g[:, k:])

    return _result(np.hstack([a.values, b.values]), "concat_cols", (a, b), vjp)


def sum(a: Tensor) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    _check_tensor(a, "sum")

    def vjp(g):
        return (np.full(a.shape, g[0, 0]),)

    return _result(np.array([[a.values.sum()]]), "sum", (a,), vjp)


def dropout(a: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: surviving entries are scaled by 1/(1-rate).

    With ``training=False`` or ``rate=0`` this is the exact identity (the
    input tensor is returned unchanged).  ``rng`` may be an int seed or a
    ``numpy.random.Generator``; a fixed seed gives a fixed mask.
    """
    _check_tensor(a, "dropout")
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise InputError("dropout in training mode needs a seed or Generator")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = gen.random(a.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    mult = keep * factor

    def vjp(g):
        return (g * mult,)

    return _result(a.values * mult, "dropout", (a,), vjp)


def spmm(adj, b: Tensor) -> Tensor:
    """Sparse (symmetric) adjacency times dense tensor."""
    _check_tensor(b, "spmm")
    if adj.n_nodes != b.shape[0]:
        raise InputError(f"spmm shape mismatch: {adj.n_nodes} nodes vs {b.shape} tensor")
    mat = adj.scipy

    def vjp(g):
        return (mat.T @ g,)

    return _result(mat @ b.values, "spmm", (b,), vjp)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows by index; duplicate indices sum in the backward pass."""
    _check_tensor(a, "gather_rows")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise InputError("gather_rows index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise InputError("gather_rows index out of range")

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.values[idx], "gather_rows", (a,), vjp)


def _segment_starts(adj):
    counts = np.diff(adj.indptr)
    if counts.size and counts.min() < 1:
        raise InputError("edge softmax needs every node to have an incident edge (add self-loops)")
    return adj.indptr[:-1], counts


def edge_softmax(scores: Tensor, adj) -> Tensor:
    """Softmax of per-edge scores within each CSR row segment.

    ``scores`` is nnz x 1, aligned with ``adj.indices``; the output rows
    for node v sum to 1 over v's incident entries.
    """
    _check_tensor(scores, "edge_softmax")
    if scores.shape != (adj.nnz, 1):
        raise InputError(f"edge_softmax expects ({adj.nnz}, 1) scores, got {scores.shape}")
    starts, counts = _segment_starts(adj)
    s = scores.values[:, 0]
    seg_max = np.maximum.reduceat(s, starts)
    e = np.exp(s - np.repeat(seg_max, counts))
    denom = np.add.reduceat(e, starts)
    alpha = e / np.repeat(denom, counts)

    def vjp(g):
        dot = np.add.reduceat(g[:, 0] * alpha, starts)
        return ((alpha * (g[:, 0] - np.repeat(dot, counts)))[:, None],)

    return _result(alpha[:, None], "edge_softmax", (scores,), vjp)


def edge_aggregate(alpha: Tensor, h: Tensor, adj) -> Tensor:
    """out[v] = sum over stored entries (v, u) of alpha_vu * h[u].

    Differentiable in both the per-edge weights and the node features.
    """
    _check_tensor(alpha, "edge_aggregate"), _check_tensor(h, "edge_aggregate")
    if alpha.shape != (adj.nnz, 1):
        raise InputError(f"edge_aggregate expects ({adj.nnz}, 1) weights, got {alpha.shape}")
    if h.shape[0] != adj.n_nodes:
        raise InputError(f"edge_aggregate feature rows {h.shape[0]} != n_nodes {adj.n_nodes}")
    n = adj.n_nodes
    mat = sp.csr_matrix((alpha.values[:, 0], adj.indices, adj.indptr), shape=(n, n))
    rows = adj.row_index_per_entry()

    def vjp(g):
        d_alpha = np.einsum("ec,ec->e", g[rows], h.values[adj.indices])[:, None]
        return (d_alpha, mat.T @ g)

    return _result(mat @ h.values, "edge_aggregate", (alpha, h), vjp)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf's ``grad``.

    Gradients from multiple uses of a tensor sum; repeated calls keep
    accumulating (reset ``leaf.grad = None`` between steps).
    """
    _check_tensor(loss, "backward")
    if loss.shape != (1, 1):
        raise InputError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def finite_difference_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``x`` (run
    dropout with ``training=False``).  Error per entry is
    |analytic - numeric| / (|numeric| + 1e-8).
    """
    if not x.requires_grad:
        raise InputError("finite_difference_check needs x.requires_grad=True")
    x.grad = None
    backward(f(x))
    analytic = x.grad if x.grad is not None else np.zeros(x.shape)
    analytic = analytic.copy()
    numeric = np.zeros(x.shape)
    base = x.values.copy()
    for i, j in np.ndindex(*x.shape):
        x.values[i, j] = base[i, j] + step
        up = f(x).values[0, 0]
        x.values[i, j] = base[i, j] - step
        down = f(x).values[0, 0]
        x.values[i, j] = base[i, j]
        numeric[i, j] = (up - down) / (2.0 * step)
    x.grad = None
    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    return float(rel.max())

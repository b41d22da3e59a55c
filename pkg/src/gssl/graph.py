"""Sparse undirected graph storage and the normalized adjacency operator.

Graphs are stored in compressed sparse row (CSR) form and are immutable
after construction.  Edge values are binary: whatever weights appear in
the input are discarded and forced to 1.  The usual preprocessing
pipeline is::

    g = from_edge_list(pairs, n_nodes)   # symmetric, deduplicated, binary
    g_sl = add_self_loops(g)             # A + I
    a_hat = sym_normalize(g_sl)          # D^{-1/2} (A + I) D^{-1/2}

``a_hat`` is symmetric with spectral radius <= 1, which makes every
propagation built on it (diffusion, iterated aggregation) a stable
fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InputError

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "from_edge_list",
    "add_self_loops",
    "sym_normalize",
    "degrees",
    "read_edge_list",
]


@dataclass(frozen=True)
class _Csr:
    """Shared CSR layout: row offsets, sorted column indices, values."""

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("indptr", "indices", "values"):
            getattr(self, name).setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        """scipy view sharing this graph's arrays (used for products)."""
        n = self.n_nodes
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=(n, n))

    def to_dense(self) -> np.ndarray:
        return self.scipy.toarray()

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row_index_per_entry(self) -> np.ndarray:
        """Row id of every stored entry, aligned with ``indices``."""
        return np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.row_counts())


@dataclass(frozen=True)
class Graph(_Csr):
    """Immutable binary undirected graph.

    Invariants: entry (u, v) present iff (v, u) present with equal value,
    no duplicate entries, column indices sorted within each row, values
    finite and non-negative.  ``binary_input`` records that input edge
    values were forced to 1.
    """

    binary_input: bool = True

    @cached_property
    def has_all_self_loops(self) -> bool:
        present = np.zeros(self.n_nodes, dtype=bool)
        rows = self.row_index_per_entry()
        present[rows[self.indices == rows]] = True
        return bool(present.all())

    @property
    def n_undirected_edges(self) -> int:
        """Number of undirected edges; a self-loop counts once."""
        loops = int(np.sum(self.indices == self.row_index_per_entry()))
        return (self.nnz - loops) // 2 + loops


@dataclass(frozen=True)
class NormalizedAdjacency(_Csr):
    """Symmetrically normalized adjacency D^{-1/2} (A + I) D^{-1/2}.

    Symmetric, spectral radius <= 1.  Built once per graph and shared
    read-only by models, losses and diffusion.
    """

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        np.add.at(out, self.row_index_per_entry(), self.values)
        return out


def _csr_from_pairs(rows: np.ndarray, cols: np.ndarray, n_nodes: int):
    """Dedup (row, col) pairs and return sorted CSR arrays with unit values."""
    keys = np.unique(rows.astype(np.int64) * n_nodes + cols.astype(np.int64))
    rows_u = keys // n_nodes
    cols_u = keys % n_nodes
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows_u, minlength=n_nodes), out=indptr[1:])
    return indptr, cols_u.astype(np.int64), np.ones(keys.shape[0])


def from_edge_list(pairs, n_nodes: int) -> Graph:
    """Build a symmetrized, deduplicated, binary graph from (u, v) pairs.

    Input self-loops are permitted (stored once); duplicate pairs and
    both orientations of the same edge collapse to a single undirected
    edge.  An empty pair list yields a valid edgeless graph.

    Raises
    ------
    InputError
        If ``n_nodes`` is not positive or any node id falls outside
        ``[0, n_nodes)``.
    """
    if n_nodes <= 0:
        raise InputError(f"n_nodes must be positive, got {n_nodes}")
    arr = np.asarray(list(pairs), dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError("edge list must be a sequence of (u, v) pairs")
    if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
        bad = arr[(arr < 0) | (arr >= n_nodes)].flat[0]
        raise InputError(f"node id {bad} out of range [0, {n_nodes})")
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    indptr, indices, values = _csr_from_pairs(rows, cols, n_nodes)
    return Graph(n_nodes, indptr, indices, values, binary_input=True)


def add_self_loops(g: Graph) -> Graph:
    """Return A + I: every node gains a unit self-loop.

    Idempotent: nodes that already carry a self-loop keep value 1.
    """
    diag = np.arange(g.n_nodes, dtype=np.int64)
    rows = np.concatenate([g.row_index_per_entry(), diag])
    cols = np.concatenate([g.indices, diag])
    indptr, indices, values = _csr_from_pairs(rows, cols, g.n_nodes)
    return Graph(g.n_nodes, indptr, indices, values, binary_input=g.binary_input)


def degrees(g: _Csr) -> np.ndarray:
    """Row sums of the stored values (weighted degree)."""
    out = np.zeros(g.n_nodes)
    np.add.at(out, g.row_index_per_entry(), g.values)
    return out


def sym_normalize(g_tilde: Graph) -> NormalizedAdjacency:
    """D^{-1/2} A_tilde D^{-1/2} with D the diagonal degree matrix.

    Every row of ``g_tilde`` must have at least one entry, which is
    guaranteed after :func:`add_self_loops`.

    Raises
    ------
    InputError
        If any node has zero degree.
    """
    deg = degrees(g_tilde)
    if np.any(deg == 0):
        bad = int(np.flatnonzero(deg == 0)[0])
        raise InputError(
            f"node {bad} has zero degree; apply add_self_loops before normalizing"
        )
    inv_sqrt = 1.0 / np.sqrt(deg)
    rows = g_tilde.row_index_per_entry()
    values = g_tilde.values * inv_sqrt[rows] * inv_sqrt[g_tilde.indices]
    return NormalizedAdjacency(
        g_tilde.n_nodes,
        g_tilde.indptr.copy(),
        g_tilde.indices.copy(),
        values,
    )


def read_edge_list(path) -> list[tuple[int, int]]:
    """Parse an edge-list file: one whitespace-separated "u v" pair per
    line, 0-based integer ids; lines starting with '#' and blank lines
    are ignored.

    Raises
    ------
    InputError
        On a malformed line, with its 1-based line number.
    """
    pairs = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'u v', got {stripped!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise InputError(
                    f"{path}:{lineno}: non-integer node id in {stripped!r}"
                ) from None
            if u < 0 or v < 0:
                raise InputError(f"{path}:{lineno}: negative node id in {stripped!r}")
            pairs.append((u, v))
    return pairs

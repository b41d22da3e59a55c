"""Shared builders: random graphs, the barbell graph, toy datasets, and
the gate for optional real-dataset directories."""

import os
from pathlib import Path

import numpy as np
import pytest

from gssl.data import LabeledDataset
from gssl.graph import Graph, add_self_loops, from_edge_list, sym_normalize


def random_pairs(n, p, rng):
    """Erdos-Renyi style pair list (upper triangle, probability p)."""
    upper = np.triu_indices(n, k=1)
    mask = rng.random(upper[0].shape[0]) < p
    return list(zip(upper[0][mask].tolist(), upper[1][mask].tolist()))


def random_graph(n, p, seed) -> Graph:
    return from_edge_list(random_pairs(n, p, np.random.default_rng(seed)), n)


def random_connected_graph(n, seed, extra_p=0.1) -> Graph:
    """Random spanning tree plus extra random edges."""
    rng = np.random.default_rng(seed)
    pairs = [(int(rng.integers(0, v)), v) for v in range(1, n)]
    pairs += random_pairs(n, extra_p, rng)
    return from_edge_list(pairs, n)


def normalized(g: Graph):
    return sym_normalize(add_self_loops(g))


def barbell_pairs(k=5):
    """Two k-cliques joined by a single bridge edge (k-1, k)."""
    pairs = []
    for base in (0, k):
        pairs += [(base + i, base + j) for i in range(k) for j in range(i + 1, k)]
    pairs.append((k - 1, k))
    return pairs, 2 * k


def barbell_graph(k=5) -> Graph:
    pairs, n = barbell_pairs(k)
    return from_edge_list(pairs, n)


def two_blob_dataset(n_per=16, d=4, seed=0, edge_p=0.35) -> LabeledDataset:
    """Two linearly separable feature blobs with mostly intra-class edges."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per
    labels = np.repeat([0, 1], n_per)
    centers = np.where(labels[:, None] == 0, 2.0, -2.0) * np.ones((n, d))
    features = centers + rng.normal(scale=0.5, size=(n, d))
    pairs = []
    for c in (0, 1):
        members = np.flatnonzero(labels == c)
        for a in range(len(members)):
            pairs.append((int(members[a]), int(members[(a + 1) % len(members)])))
            for b in range(a + 1, len(members)):
                if rng.random() < edge_p:
                    pairs.append((int(members[a]), int(members[b])))
    pairs.append((0, n - 1))  # one cross edge keeps it connected
    graph = from_edge_list(pairs, n)
    return LabeledDataset(graph, features, labels, name="two_blobs")


def planted_partition(n_per=50, k=3, p_in=0.10, p_out=0.008, d=8, sep=1.2,
                      seed=0) -> LabeledDataset:
    """Community graph with weakly informative features: structure carries
    most of the class signal, the regime where smoothness pays off."""
    rng = np.random.default_rng(seed)
    n = n_per * k
    labels = np.repeat(np.arange(k), n_per)
    centers = rng.normal(size=(k, d))
    centers = centers / np.linalg.norm(centers, axis=1, keepdims=True) * sep
    features = centers[labels] + rng.normal(size=(n, d))
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < (p_in if labels[i] == labels[j] else p_out):
                pairs.append((i, j))
    return LabeledDataset(from_edge_list(pairs, n), features, labels, name="planted")


def dataset_root() -> Path:
    return Path(os.environ.get("GSSL_DATA_DIR", Path(__file__).resolve().parent.parent / "data"))


def dataset_present(name: str) -> bool:
    d = dataset_root() / name
    return all((d / f).is_file() for f in ("graph.edges", "features.csv", "labels.txt"))


def require_dataset(name: str) -> Path:
    """Skip (module-level example tests) when a benchmark dir is absent."""
    if not dataset_present(name):
        pytest.skip(f"{name} dataset not provisioned under {dataset_root()} "
                    f"(see README: Datasets)")
    return dataset_root() / name

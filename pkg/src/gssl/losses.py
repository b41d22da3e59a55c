"""Supervised fitness losses, graph smoothness losses, and their combination.

The combined objective is ``L_fit + mu * L_smooth`` with sum reduction
throughout (no averaging; ``mu`` absorbs scale).  The smoothness terms run
over every stored entry of the normalized, self-looped adjacency; whether
the (i, i) self-pairs are included is controlled by a flag (they are zero
in the L2 variant but contribute a row-entropy term to the cross-entropy
variant).

The cross-entropy smoothness loss pushes each node's predicted
distribution toward its neighbors' current argmax classes: the one-hot
conversion of the neighbor prediction is treated as a constant, so the
gradient flows only through the log term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InputError
from .graph import NormalizedAdjacency

__all__ = [
    "LossConfig",
    "softmax_predictions",
    "ce_fit",
    "l2_fit",
    "l2_smooth",
    "one_hot_argmax",
    "ce_smooth",
    "combined_loss",
]

VARIANTS = ("cross_entropy", "l2")


@dataclass
class LossConfig:
    """Combined-loss settings; reduction is always sum."""

    mu: float = 1.0
    variant: str = "cross_entropy"
    include_self_loops: bool = True

    def __post_init__(self):
        if self.mu < 0:
            raise InputError(f"mu must be >= 0, got {self.mu}")
        if self.variant not in VARIANTS:
            raise InputError(f"unknown loss variant {self.variant!r}")


def softmax_predictions(logits: Tensor) -> Tensor:
    """Row-wise softmax: each row becomes a probability distribution."""
    return ad.row_softmax(logits)


def _as_array(y) -> np.ndarray:
    return y.values if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)


def _check_labeled(labeled, n: int) -> np.ndarray:
    labeled = np.asarray(labeled, dtype=np.int64).ravel()
    if labeled.size and (labeled.min() < 0 or labeled.max() >= n):
        raise InputError(f"labeled index out of range [0, {n})")
    return labeled


def ce_fit(z: Tensor, y, labeled) -> Tensor:
    """-sum over labeled rows of y_i . log z_i (log clamped at 1e-12)."""
    y = _as_array(y)
    if y.shape != z.shape:
        raise InputError(f"ce_fit shape mismatch: z {z.shape} vs y {y.shape}")
    labeled = _check_labeled(labeled, z.shape[0])
    target = np.zeros(z.shape)
    target[labeled] = y[labeled]
    return ad.scale(ad.sum(ad.elementwise_mul(Tensor(target), ad.log_clamped(z))), -1.0)


def l2_fit(z: Tensor, y, labeled) -> Tensor:
    """sum over labeled rows of ||z_i - y_i||^2."""
    y = _as_array(y)
    if y.shape != z.shape:
        raise InputError(f"l2_fit shape mismatch: z {z.shape} vs y {y.shape}")
    labeled = _check_labeled(labeled, z.shape[0])
    mask = np.zeros(z.shape)
    mask[labeled] = 1.0
    diff = ad.elementwise_mul(Tensor(mask), ad.sub(z, Tensor(y)))
    return ad.sum(ad.elementwise_mul(diff, diff))


def _smooth_weights(a_hat: NormalizedAdjacency, include_self_loops: bool):
    """Row-sum vector and diagonal of the smoothness weighting."""
    row_sums = a_hat.row_sums()
    diag = a_hat.scipy.diagonal()
    if include_self_loops:
        return row_sums, None
    return row_sums - diag, diag


def l2_smooth(z: Tensor, a_hat: NormalizedAdjacency, include_self_loops: bool = True) -> Tensor:
    """sum over stored entries (i, j) of A_hat_ij * ||z_i - z_j||^2.

    Computed through the Laplacian identity
    2 * (sum_i d_i ||z_i||^2 - sum(Z * (A_hat Z))), which the tests check
    against a scalar double loop.
    """
    if a_hat.n_nodes != z.shape[0]:
        raise InputError(f"l2_smooth: adjacency has {a_hat.n_nodes} nodes, z has {z.shape[0]} rows")
    dvec, diag = _smooth_weights(a_hat, include_self_loops)
    c = z.shape[1]
    dmat = Tensor(np.repeat(dvec[:, None], c, axis=1))
    prod = ad.spmm(a_hat, z)
    if diag is not None:
        prod = ad.sub(prod, ad.elementwise_mul(Tensor(np.repeat(diag[:, None], c, axis=1)), z))
    quad = ad.sum(ad.elementwise_mul(z, ad.elementwise_mul(dmat, z)))
    cross = ad.sum(ad.elementwise_mul(z, prod))
    return ad.scale(ad.sub(quad, cross), 2.0)


def one_hot_argmax(z) -> np.ndarray:
    """Row-wise one-hot of the max entry; ties go to the lowest class index.

    Returns a plain constant array: no gradient flows through it.
    """
    values = _as_array(z)
    out = np.zeros(values.shape)
    out[np.arange(values.shape[0]), values.argmax(axis=1)] = 1.0
    return out


def ce_smooth(z: Tensor, a_hat: NormalizedAdjacency, include_self_loops: bool = True) -> Tensor:
    """-sum over stored entries (i, j) of A_hat_ij * phi(z_i) . log z_j.

    phi is the one-hot argmax of the current z, recomputed every call and
    held constant, so the gradient flows only through log z_j.  Grouping
    by j turns the double sum into sum((A_hat phi) * log Z).
    """
    if a_hat.n_nodes != z.shape[0]:
        raise InputError(f"ce_smooth: adjacency has {a_hat.n_nodes} nodes, z has {z.shape[0]} rows")
    phi = one_hot_argmax(z)
    weights = a_hat.scipy @ phi
    if not include_self_loops:
        weights = weights - a_hat.scipy.diagonal()[:, None] * phi
    return ad.scale(ad.sum(ad.elementwise_mul(Tensor(weights), ad.log_clamped(z))), -1.0)


def combined_loss(z: Tensor, y, labeled, a_hat: NormalizedAdjacency, cfg: LossConfig) -> Tensor:
    """L_fit + mu * L_smooth; mu = 0 is exactly the supervised loss."""
    if cfg.variant == "l2":
        fit = l2_fit(z, y, labeled)
        if cfg.mu == 0.0:
            return fit
        smooth = l2_smooth(z, a_hat, cfg.include_self_loops)
    else:
        fit = ce_fit(z, y, labeled)
        if cfg.mu == 0.0:
            return fit
        smooth = ce_smooth(z, a_hat, cfg.include_self_loops)
    return ad.add(fit, ad.scale(smooth, cfg.mu))

"""Label diffusion: closed-form kernel solve and the equivalent fixed-point
iteration, plus a no-learning label-propagation baseline.

Both solvers share the update target Z* = gamma (I - (1-gamma) A_hat)^{-1} Y
with Y one-hot on labeled rows and zero elsewhere.  Because A_hat is the
normalized, self-looped adjacency (spectral radius <= 1), the system matrix
is symmetric positive definite for gamma > 0 and the iteration
Z <- (1-gamma) A_hat Z + gamma Y is a contraction from any starting point.

Z* is also the minimizer of the quadratic objective
||Z - Y||_F^2 + mu tr(Z^T (I - A_hat) Z) at gamma = 1/(mu + 1);
``regularization_objective`` builds that objective on the autodiff engine
so the equivalence can be checked by direct minimization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InputError, NumericError
from .graph import NormalizedAdjacency

__all__ = [
    "DiffusionConfig",
    "DiffusionResult",
    "label_matrix",
    "diffuse_direct",
    "diffuse_iterative",
    "propagate_labels",
    "gamma_from_mu",
    "regularization_objective",
    "minimize_objective",
]


@dataclass
class DiffusionConfig:
    gamma: float
    tol: float = 1e-8
    max_iter: int = 10_000
    solver: str = "iterative"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InputError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.tol <= 0:
            raise InputError("tol must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")
        if self.solver not in ("iterative", "direct"):
            raise InputError(f"unknown solver {self.solver!r}")


class DiffusionResult(NamedTuple):
    z: np.ndarray
    iters: int
    residual: float


def gamma_from_mu(mu: float) -> float:
    """Trade-off conversion gamma = 1 / (mu + 1)."""
    if mu < 0:
        raise InputError("mu must be >= 0")
    return 1.0 / (mu + 1.0)


def label_matrix(labels, labeled, n_classes: int | None = None) -> np.ndarray:
    """n x c matrix: one-hot rows for labeled nodes, zero rows elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    labeled = np.asarray(labeled, dtype=np.int64).ravel()
    if labeled.size and (labeled.min() < 0 or labeled.max() >= labels.shape[0]):
        raise InputError("labeled index out of range")
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    y = np.zeros((labels.shape[0], c))
    y[labeled, labels[labeled]] = 1.0
    return y


def _check_inputs(a_hat: NormalizedAdjacency, y: np.ndarray):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != a_hat.n_nodes:
        raise InputError(f"label matrix shape {y.shape} incompatible with {a_hat.n_nodes} nodes")
    return y


def diffuse_direct(a_hat: NormalizedAdjacency, y, gamma: float) -> np.ndarray:
    """Dense SPD solve of (I - (1-gamma) A_hat) Z = gamma Y.

    Intended for n up to a few thousand; use the iterative solver beyond.
    """
    if not 0.0 < gamma <= 1.0:
        raise InputError(f"gamma must be in (0, 1], got {gamma}")
    y = _check_inputs(a_hat, y)
    system = np.eye(a_hat.n_nodes) - (1.0 - gamma) * a_hat.to_dense()
    try:
        factor = scipy.linalg.cho_factor(system)
    except scipy.linalg.LinAlgError as err:
        raise NumericError(f"diffusion system not positive definite: {err}") from None
    return gamma * scipy.linalg.cho_solve(factor, y)


def diffuse_iterative(a_hat: NormalizedAdjacency, y, cfg: DiffusionConfig,
                      z0=None) -> DiffusionResult:
    """Fixed-point iteration Z <- (1-gamma) A_hat Z + gamma Y from Z = Y.

    Stops when the max-abs elementwise change drops below ``cfg.tol``.
    Non-convergence within ``cfg.max_iter`` is reported as a warning
    carrying the final residual, not an exception; the fixed point does
    not depend on the start, so ``z0`` may override the default Y start.
    """
    y = _check_inputs(a_hat, y)
    gamma = cfg.gamma
    z = y.copy() if z0 is None else np.asarray(z0, dtype=np.float64).copy()
    if z.shape != y.shape:
        raise InputError(f"z0 shape {z.shape} != label matrix shape {y.shape}")
    mat = a_hat.scipy
    gy = gamma * y
    residual = np.inf
    for it in range(1, cfg.max_iter + 1):
        z_next = (1.0 - gamma) * (mat @ z) + gy
        residual = float(np.abs(z_next - z).max())
        z = z_next
        if residual < cfg.tol:
            return DiffusionResult(z, it, residual)
    warnings.warn(
        f"diffusion did not converge in {cfg.max_iter} iterations "
        f"(residual {residual:.3e} > tol {cfg.tol:.3e})",
        RuntimeWarning,
        stacklevel=2,
    )
    return DiffusionResult(z, cfg.max_iter, residual)


def propagate_labels(a_hat: NormalizedAdjacency, y, cfg: DiffusionConfig) -> np.ndarray:
    """Predicted class per node: row-wise argmax of the diffusion output.

    Labeled rows (rows of Y summing to 1) keep their given class.  A class
    column with no labeled node triggers a warning (its nodes can only be
    reached by ties).
    """
    y = _check_inputs(a_hat, y)
    per_class = y.sum(axis=0)
    if np.any(per_class == 0):
        empty = np.flatnonzero(per_class == 0).tolist()
        warnings.warn(f"classes {empty} have no labeled nodes", RuntimeWarning, stacklevel=2)
    if cfg.solver == "direct":
        z = diffuse_direct(a_hat, y, cfg.gamma)
    else:
        z = diffuse_iterative(a_hat, y, cfg).z
    pred = z.argmax(axis=1)
    labeled_rows = y.sum(axis=1) > 0
    pred[labeled_rows] = y[labeled_rows].argmax(axis=1)
    return pred


def regularization_objective(z: Tensor, y, a_hat: NormalizedAdjacency, mu: float) -> Tensor:
    """||Z - Y||_F^2 + mu * tr(Z^T (I - A_hat) Z) on the autodiff engine.

    The minimizer over free Z equals diffuse_direct(a_hat, y, 1/(mu+1)).
    """
    y = _check_inputs(a_hat, y)
    diff = ad.sub(z, Tensor(y))
    fit = ad.sum(ad.elementwise_mul(diff, diff))
    quad = ad.sub(ad.sum(ad.elementwise_mul(z, z)),
                  ad.sum(ad.elementwise_mul(z, ad.spmm(a_hat, z))))
    return ad.add(fit, ad.scale(quad, mu))


def minimize_objective(a_hat: NormalizedAdjacency, y, mu: float,
                       lr: float | None = None, max_steps: int = 5000,
                       tol: float = 1e-10) -> np.ndarray:
    """Gradient-descent minimization of :func:`regularization_objective`.

    Exists as an independent route to the diffusion solution; the solvers
    never call it.  The objective's Hessian is 2(I + mu (I - A_hat)) with
    eigenvalues in [2, 2 + 4 mu], so the default step 1/(2 + 2 mu) sits
    inside the stable region.
    """
    y = _check_inputs(a_hat, y)
    step = 1.0 / (2.0 + 2.0 * mu) if lr is None else lr
    z = Tensor(np.zeros_like(y), requires_grad=True)
    for _ in range(max_steps):
        z.grad = None
        ad.backward(regularization_objective(z, y, a_hat, mu))
        z.values = z.values - step * z.grad
        if float(np.abs(z.grad).max()) < tol:
            break
    return z.values

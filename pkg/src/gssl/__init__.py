"""Graph semi-supervised learning toolkit.

Builds sparse normalized adjacencies, trains small graph models (MLP,
GCN, single-head GAT, APPNP) on a from-scratch reverse-mode autodiff
engine, regularizes them with a neighbor-smoothness loss, and provides
the equivalent label-diffusion solvers plus an experiment harness.
"""

from . import autodiff, cli, data, diffusion, graph, losses, models, trainer
from .errors import GsslError, InputError, NumericError

__all__ = [
    "autodiff",
    "cli",
    "data",
    "diffusion",
    "graph",
    "losses",
    "models",
    "trainer",
    "GsslError",
    "InputError",
    "NumericError",
]

__version__ = "0.1.0"

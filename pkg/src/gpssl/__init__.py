"""Gaussian-process self-supervised learning for tabular data."""

from gpssl.kernel import KernelSpec, gram, lengthscale_heuristic, rbf
from gpssl.losses import LossWeights, covariance_loss, gpssl_loss, invariance_loss, variance_loss
from gpssl.sparse_gp import RepresentationPosterior, SparseGPModel, init_model, predict

__all__ = [
    "KernelSpec",
    "LossWeights",
    "RepresentationPosterior",
    "SparseGPModel",
    "covariance_loss",
    "gpssl_loss",
    "gram",
    "init_model",
    "invariance_loss",
    "lengthscale_heuristic",
    "predict",
    "rbf",
    "variance_loss",
]

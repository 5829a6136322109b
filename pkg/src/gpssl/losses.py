"""Invariance / variance / covariance losses and the GPSSL composite loss.

All functions take array-likes or torch tensors and return a 0-d torch tensor
so they can sit inside an autograd graph.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch


@dataclass(frozen=True)
class LossWeights:
    c_invariance: float = 0.0
    c_variance: float = 50.0
    c_covariance: float = 10.0
    gamma: float = 1.0
    epsilon: float = 1e-7

    def __post_init__(self):
        if min(self.c_invariance, self.c_variance, self.c_covariance) < 0:
            raise ValueError("loss weights must be non-negative")
        if not (self.gamma > 0 and self.epsilon > 0):
            raise ValueError("gamma and epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _as_tensor(Z) -> torch.Tensor:
    Z = torch.as_tensor(Z, dtype=torch.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    return Z


def invariance_loss(Z, Zp) -> torch.Tensor:
    Z, Zp = _as_tensor(Z), _as_tensor(Zp)
    if Z.shape != Zp.shape:
        raise ValueError(f"shape mismatch {tuple(Z.shape)} vs {tuple(Zp.shape)}")
    return ((Z - Zp) ** 2).sum(-1).mean()


def variance_loss(Z, gamma: float = 1.0, epsilon: float = 1e-7) -> torch.Tensor:
    """Mean over columns of max(0, gamma - sqrt(Var + eps)); Var uses N-1."""
    Z = _as_tensor(Z)
    if Z.shape[0] < 2:
        raise ValueError("variance loss needs at least 2 rows")
    std = torch.sqrt(Z.var(dim=0, unbiased=True) + epsilon)
    # relu has zero subgradient at the kink
    return torch.relu(gamma - std).mean()


def covariance_loss(Z) -> torch.Tensor:
    """Sum of squared off-diagonal sample covariances, divided by J."""
    Z = _as_tensor(Z)
    n, j = Z.shape
    if n < 2:
        raise ValueError("covariance loss needs at least 2 rows")
    Zc = Z - Z.mean(dim=0)
    C = Zc.T @ Zc / (n - 1)
    off = C - torch.diag(torch.diagonal(C))
    return (off**2).sum() / j


def gpssl_loss(Z, w: LossWeights) -> torch.Tensor:
    return w.c_variance * variance_loss(Z, w.gamma, w.epsilon) + w.c_covariance * covariance_loss(Z)


def vicreg_loss(Z, Zp, w: LossWeights) -> torch.Tensor:
    """c_I * inv + c_V * var + c_C * cov; var and cov are summed over both views."""
    return (
        w.c_invariance * invariance_loss(Z, Zp)
        + w.c_variance * (variance_loss(Z, w.gamma, w.epsilon) + variance_loss(Zp, w.gamma, w.epsilon))
        + w.c_covariance * (covariance_loss(Z) + covariance_loss(Zp))
    )


def negative_variance_loss(Z) -> torch.Tensor:
    """-(1/N) * sum_i (z_i - mean)^2 for a single representation column."""
    Z = _as_tensor(Z)
    if Z.shape[1] != 1:
        raise ValueError("negative_variance_loss is defined for J = 1 only")
    Zc = Z - Z.mean(dim=0)
    return -(Zc**2).sum() / Z.shape[0]


def gpssl_loss_batch(Z: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """gpssl_loss applied independently to each Z[s] of an (S, N, J) stack."""
    n, j = Z.shape[-2:]
    Zc = Z - Z.mean(dim=-2, keepdim=True)
    C = Zc.transpose(-1, -2) @ Zc / (n - 1)
    var = torch.diagonal(C, dim1=-2, dim2=-1)
    var_term = torch.relu(w.gamma - torch.sqrt(var + w.epsilon)).mean(-1)
    cov_term = ((C**2).sum((-2, -1)) - (var**2).sum(-1)) / j
    return w.c_variance * var_term + w.c_covariance * cov_term

"""Squared-exponential kernel, Gram matrices and the K-NN lengthscale heuristic.

``gram`` works on both numpy arrays and torch tensors so the same code path
serves prediction (numpy) and training (torch autograd).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class KernelSpec:
    signal_variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))
    jitter: float = 1e-6

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be > 0, got {self.signal_variance}")
        if ls.ndim != 1 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be a finite positive vector, got {ls}")
        if not self.jitter >= 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")

    @property
    def input_dim(self) -> int:
        return self.lengthscales.shape[0]

    @classmethod
    def isotropic(cls, lengthscale: float, input_dim: int, signal_variance=1.0, jitter=1e-6):
        return cls(signal_variance, np.full(input_dim, float(lengthscale)), jitter)

    def to_dict(self) -> dict:
        return {
            "signal_variance": float(self.signal_variance),
            "lengthscales": self.lengthscales.tolist(),
            "jitter": float(self.jitter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["signal_variance"], np.asarray(d["lengthscales"], dtype=float), d["jitter"])


def _check_dim(A, spec: KernelSpec, name: str):
    if A.shape[-1] != spec.input_dim:
        raise ValueError(
            f"{name} has {A.shape[-1]} columns but the kernel has {spec.input_dim} lengthscales"
        )


def rbf(x, y, spec: KernelSpec) -> float:
    """k(x, y) = s2 * exp(-0.5 * sum_d ((x_d - y_d) / l_d)^2)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _check_dim(x, spec, "x")
    _check_dim(y, spec, "y")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("rbf inputs must be finite")
    r2 = np.sum(((x - y) / spec.lengthscales) ** 2)
    return float(spec.signal_variance * np.exp(-0.5 * r2))


def gram(X, Y, spec: KernelSpec, add_jitter: bool = False):
    """Kernel matrix between the rows of X and Y.

    Accepts numpy arrays or torch tensors (returns the same type). With
    ``add_jitter`` the diagonal gets ``spec.jitter``; X and Y must then have
    the same number of rows.
    """
    _check_dim(X, spec, "X")
    _check_dim(Y, spec, "Y")
    if isinstance(X, torch.Tensor) or isinstance(Y, torch.Tensor):
        X = torch.as_tensor(X, dtype=torch.float64)
        Y = torch.as_tensor(Y, dtype=torch.float64)
        ls = torch.as_tensor(spec.lengthscales, dtype=torch.float64)
        diff = (X[:, None, :] - Y[None, :, :]) / ls
        K = spec.signal_variance * torch.exp(-0.5 * (diff**2).sum(-1))
        if add_jitter:
            K = K + spec.jitter * torch.eye(K.shape[0], dtype=K.dtype)
        return K
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    diff = (X[:, None, :] - Y[None, :, :]) / spec.lengthscales
    K = spec.signal_variance * np.exp(-0.5 * np.sum(diff**2, axis=-1))
    if add_jitter:
        if K.shape[0] != K.shape[1]:
            raise ValueError("jitter only applies to square Gram matrices")
        K = K + spec.jitter * np.eye(K.shape[0])
    return K


def lengthscale_heuristic(X, K: int) -> np.ndarray:
    """Largest distance from any observation to its K-th nearest neighbour.

    The scalar is replicated over all input dimensions.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array")
    n, d = X.shape
    if not 1 <= K < n:
        raise ValueError(f"neighbour count K must satisfy 1 <= K < N={n}, got {K}")
    dist = cdist(X, X)
    # column 0 after sorting is the point itself
    kth = np.sort(dist, axis=1)[:, K]
    ell = float(kth.max())
    if not ell > 0:
        raise ValueError("degenerate lengthscale: K-th neighbour distances are all zero")
    return np.full(d, ell)


def neighbour_count(n: int, k: int) -> int:
    """K = floor(N / k), clipped into the valid range [1, N-1]."""
    return int(min(max(n // k, 1), n - 1))

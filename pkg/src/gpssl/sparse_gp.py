"""Sparse variational GP over J independent representation dimensions.

All J dimensions share one squared-exponential kernel and one set of inducing
inputs U_x. The variational posterior over inducing outputs is
q(U_z[:, j]) = N(m_j, S_j) with S_j = L_j L_j^T.

Public functions take and return numpy; the ``*_t`` helpers do the same maths
in torch and are what the trainer differentiates through.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from gpssl.kernel import KernelSpec, gram
from gpssl.losses import LossWeights

SCHEMA = "gpssl.sparse_gp/v1"
MAX_JITTER_ESCALATIONS = 3


class FactorizationError(RuntimeError):
    pass


@dataclass
class SparseGPModel:
    inducing_inputs: np.ndarray  # (M, D)
    variational_means: np.ndarray  # (M, J)
    variational_chol: np.ndarray  # (J, M, M), lower triangular
    kernel: KernelSpec
    loss_weights: LossWeights = field(default_factory=LossWeights)
    # standardisation applied to raw features before they reach the model
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def __post_init__(self):
        self.inducing_inputs = np.asarray(self.inducing_inputs, dtype=float)
        self.variational_means = np.asarray(self.variational_means, dtype=float)
        self.variational_chol = np.tril(np.asarray(self.variational_chol, dtype=float))
        m, j = self.variational_means.shape
        if self.inducing_inputs.shape[0] != m:
            raise ValueError("inducing inputs and variational means disagree on M")
        if self.variational_chol.shape != (j, m, m):
            raise ValueError(f"variational_chol must have shape {(j, m, m)}")

    @property
    def num_inducing(self) -> int:
        return self.inducing_inputs.shape[0]

    @property
    def representation_dim(self) -> int:
        return self.variational_means.shape[1]

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.feature_mean is None:
            return X
        return (X - self.feature_mean) / self.feature_std

    def to_dict(self) -> dict:
        d = {
            "schema": SCHEMA,
            "kernel": self.kernel.to_dict(),
            "loss_weights": self.loss_weights.to_dict(),
            "inducing_inputs": self.inducing_inputs.tolist(),
            "variational_means": self.variational_means.tolist(),
            "variational_chol": self.variational_chol.tolist(),
        }
        if self.feature_mean is not None:
            d["feature_mean"] = np.asarray(self.feature_mean).tolist()
            d["feature_std"] = np.asarray(self.feature_std).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SparseGPModel":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}, expected {SCHEMA!r}")
        fm = d.get("feature_mean")
        fs = d.get("feature_std")
        return cls(
            inducing_inputs=np.asarray(d["inducing_inputs"], dtype=float),
            variational_means=np.asarray(d["variational_means"], dtype=float),
            variational_chol=np.asarray(d["variational_chol"], dtype=float),
            kernel=KernelSpec.from_dict(d["kernel"]),
            loss_weights=LossWeights(**d["loss_weights"]),
            feature_mean=None if fm is None else np.asarray(fm, dtype=float),
            feature_std=None if fs is None else np.asarray(fs, dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SparseGPModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RepresentationPosterior:
    means: np.ndarray  # (N, J)
    variances: np.ndarray  # (N, J)

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


def select_inducing_inputs(X, num_inducing: int | None = None, seed: int = 0) -> np.ndarray:
    """Random distinct training rows; M defaults to min(N, 50)."""
    X = np.asarray(X, dtype=float)
    uniq = np.unique(X, axis=0)
    m = min(len(uniq), 50) if num_inducing is None else min(num_inducing, len(uniq))
    rng = np.random.default_rng(seed)
    # keep the original row order of the chosen points for reproducibility
    _, first = np.unique(X, axis=0, return_index=True)
    pick = np.sort(rng.choice(np.sort(first), size=m, replace=False))
    return X[pick].copy()


def init_model(
    X,
    kernel: KernelSpec,
    representation_dim: int = 5,
    loss_weights: LossWeights | None = None,
    num_inducing: int | None = None,
    seed: int = 0,
) -> SparseGPModel:
    """Prior-matched start: m = 0, S_j = K_uu, so KL(q || p) = 0."""
    Ux = select_inducing_inputs(X, num_inducing, seed)
    with torch.no_grad():
        L = robust_cholesky(gram(_t(Ux), _t(Ux), kernel), kernel.jitter).numpy()
    m = Ux.shape[0]
    return SparseGPModel(
        inducing_inputs=Ux,
        variational_means=np.zeros((m, representation_dim)),
        variational_chol=np.repeat(L[None], representation_dim, axis=0),
        kernel=kernel,
        loss_weights=loss_weights or LossWeights(),
    )


# --------------------------------------------------------------------------
# torch core


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=float), dtype=torch.float64)


def robust_cholesky(A: torch.Tensor, jitter: float) -> torch.Tensor:
    """Cholesky of A + jitter*I, escalating jitter tenfold up to three times."""
    eye = torch.eye(A.shape[-1], dtype=A.dtype)
    for attempt in range(MAX_JITTER_ESCALATIONS + 1):
        jit = jitter * 10.0**attempt
        L, info = torch.linalg.cholesky_ex(A + jit * eye)
        if int(info.max()) == 0:
            return L
    raise FactorizationError(f"matrix not positive definite even with jitter {jit:.1e}")


def kl_to_prior_t(Ux, q_mu, q_chol, kernel: KernelSpec) -> torch.Tensor:
    """sum_j KL(N(m_j, L_j L_j^T) || N(0, K_uu))."""
    M, J = q_mu.shape
    Lk = robust_cholesky(gram(Ux, Ux, kernel), kernel.jitter)
    logdet_k = 2.0 * torch.log(torch.diagonal(Lk)).sum()
    # Lk^{-1} L_j and Lk^{-1} m_j
    A = torch.linalg.solve_triangular(Lk, q_chol, upper=False)  # (J, M, M)
    b = torch.linalg.solve_triangular(Lk, q_mu, upper=False)  # (M, J)
    trace = (A**2).sum(dim=(-2, -1))
    maha = (b**2).sum(dim=0)
    logdet_s = 2.0 * torch.log(torch.abs(torch.diagonal(q_chol, dim1=-2, dim2=-1))).sum(-1)
    return 0.5 * (trace + maha - M + logdet_k - logdet_s).sum()


def projection_t(X, Ux, kernel: KernelSpec):
    """Cholesky of K_uu, A = K_xu K_uu^{-1}, and K_ux."""
    Lk = robust_cholesky(gram(Ux, Ux, kernel), kernel.jitter)
    Kux = gram(Ux, X, kernel)
    A = torch.cholesky_solve(Kux, Lk).T  # (N, M)
    return Lk, A, Kux


def conditional_t(X, Ux, kernel: KernelSpec):
    """A = K_xu K_uu^{-1} and the shared conditional covariance K_xx - A K_ux (no jitter)."""
    _, A, Kux = projection_t(X, Ux, kernel)
    cov = gram(X, X, kernel) - A @ Kux
    return A, 0.5 * (cov + cov.T)


def sample_t(A, cond_chol, q_mu, q_chol, xi, zeta) -> torch.Tensor:
    """Two-stage reparameterised draw.

    xi: (S, J, M) and zeta: (S, N, J) standard normals. Returns (S, N, J).
    """
    Uz = q_mu.T[None] + torch.einsum("jab,sjb->sja", q_chol, xi)  # (S, J, M)
    mean = torch.einsum("nm,sjm->snj", A, Uz)
    return mean + torch.einsum("nk,skj->snj", cond_chol, zeta)


# --------------------------------------------------------------------------
# numpy surface


def kl_to_prior(model: SparseGPModel) -> float:
    with torch.no_grad():
        kl = kl_to_prior_t(
            _t(model.inducing_inputs), _t(model.variational_means), _t(model.variational_chol), model.kernel
        )
    return float(kl)


def conditional_given_inducing(X, model: SparseGPModel, Uz):
    """Mean (N, J) and shared covariance (N, N) of Z given inducing outputs Uz."""
    Uz = np.asarray(Uz, dtype=float)
    if Uz.shape != model.variational_means.shape:
        raise ValueError(f"Uz must have shape {model.variational_means.shape}")
    with torch.no_grad():
        A, cov = conditional_t(_t(X), _t(model.inducing_inputs), model.kernel)
    cov = cov.numpy() + model.kernel.jitter * np.eye(cov.shape[0])
    return A.numpy() @ Uz, cov


def sample_representations(X, model: SparseGPModel, num_samples: int, seed: int = 0) -> np.ndarray:
    """Joint draws of Z over the rows of X, shape (num_samples, N, J)."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    X = np.asarray(X, dtype=float)
    gen = torch.Generator().manual_seed(int(seed))
    M, J = model.variational_means.shape
    with torch.no_grad():
        A, cov = conditional_t(_t(X), _t(model.inducing_inputs), model.kernel)
        C = robust_cholesky(cov, model.kernel.jitter)
        xi = torch.randn(num_samples, J, M, generator=gen, dtype=torch.float64)
        zeta = torch.randn(num_samples, X.shape[0], J, generator=gen, dtype=torch.float64)
        Z = sample_t(A, C, _t(model.variational_means), _t(model.variational_chol), xi, zeta)
    return Z.numpy()


def predict(Xstar, model: SparseGPModel) -> RepresentationPosterior:
    """Closed-form per-point marginals of the variational predictive."""
    Xstar = np.asarray(Xstar, dtype=float)
    with torch.no_grad():
        _, A, Kux = projection_t(_t(Xstar), _t(model.inducing_inputs), model.kernel)
        q_mu = _t(model.variational_means)
        q_chol = _t(model.variational_chol)
        mean = A @ q_mu
        prior_var = model.kernel.signal_variance - (A * Kux.T).sum(-1)
        AL = torch.einsum("nm,jmk->jnk", A, q_chol)
        var = prior_var[:, None] + (AL**2).sum(-1).T
    return RepresentationPosterior(mean.numpy(), np.clip(var.numpy(), 0.0, None))


def with_params(model: SparseGPModel, **kw) -> SparseGPModel:
    return replace(model, **kw)

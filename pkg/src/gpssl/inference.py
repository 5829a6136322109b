"""Generalised-ELBO estimation and Adam training of the sparse GP."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from gpssl.kernel import gram
from gpssl.losses import gpssl_loss_batch
from gpssl.sparse_gp import (
    SparseGPModel,
    _t,
    conditional_t,
    robust_cholesky,
    sample_t,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 300
    learning_rate: float = 0.01
    mc_samples: int = 8
    seed: int = 0
    optimize_inducing: bool = False
    # multiply the expected loss by N, as the data term of a standard sparse-GP ELBO
    scale_loss_by_n: bool = True
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1 or self.mc_samples < 1:
            raise ValueError("iterations and mc_samples must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class TraceRow(NamedTuple):
    step: int
    elbo: float
    kl: float
    expected_loss: float


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _inv_softplus(x: np.ndarray) -> np.ndarray:
    return x + np.log(-np.expm1(-x))


class _Params:
    """Unconstrained, whitened torch view of a model's variational parameters.

    q_mu = Lk @ w_mu and L_j = Lk @ W_j, with Lk = chol(K_uu) and W_j lower
    triangular with softplus diagonal. This is the same family as the stored
    (m, L) but is far better conditioned for first-order optimisation.
    """

    def __init__(self, model: SparseGPModel, optimize_inducing: bool):
        self.model = model
        self.Ux = _t(model.inducing_inputs).clone().requires_grad_(optimize_inducing)
        with torch.no_grad():
            Lk = self._kuu_chol()
            w_mu = torch.linalg.solve_triangular(Lk, _t(model.variational_means), upper=False)
            W = torch.linalg.solve_triangular(Lk, _t(model.variational_chol), upper=False).numpy()
        diag = np.abs(np.diagonal(W, axis1=-2, axis2=-1))
        self.w_mu = w_mu.contiguous().clone().requires_grad_(True)
        self.chol_off = _t(np.tril(W, -1)).requires_grad_(True)
        self.chol_diag = _t(_inv_softplus(np.maximum(diag, 1e-12))).requires_grad_(True)
        self.mask = torch.tril(torch.ones(W.shape[-1], W.shape[-1], dtype=torch.float64), -1)

    def _kuu_chol(self):
        k = self.model.kernel
        return robust_cholesky(gram(self.Ux, self.Ux, k), k.jitter)

    def tensors(self) -> list[torch.Tensor]:
        out = [self.w_mu, self.chol_off, self.chol_diag]
        if self.Ux.requires_grad:
            out.append(self.Ux)
        return out

    def whitened_chol(self) -> torch.Tensor:
        return self.chol_off * self.mask + torch.diag_embed(F.softplus(self.chol_diag))

    def unwhitened(self):
        """(q_mu, q_chol) in the stored parameterisation."""
        Lk = self._kuu_chol()
        return Lk @ self.w_mu, Lk @ self.whitened_chol()

    def kl(self) -> torch.Tensor:
        """KL(q || p) in whitened form; equal to kl_to_prior_t on the unwhitened model."""
        W = self.whitened_chol()
        M = W.shape[-1]
        logdet = 2.0 * torch.log(F.softplus(self.chol_diag)).sum(-1)
        return 0.5 * ((W**2).sum(dim=(-2, -1)) + (self.w_mu**2).sum(0) - M - logdet).sum()

    def to_model(self) -> SparseGPModel:
        with torch.no_grad():
            q_mu, q_chol = self.unwhitened()
        return SparseGPModel(
            inducing_inputs=self.Ux.detach().numpy().copy(),
            variational_means=q_mu.numpy().copy(),
            variational_chol=q_chol.numpy().copy(),
            kernel=self.model.kernel,
            loss_weights=self.model.loss_weights,
            feature_mean=self.model.feature_mean,
            feature_std=self.model.feature_std,
        )


def _draw_noise(gen, S, N, M, J):
    xi = torch.randn(S, J, M, generator=gen, dtype=torch.float64)
    zeta = torch.randn(S, N, J, generator=gen, dtype=torch.float64)
    return xi, zeta


def _elbo_terms(X, p: _Params, xi, zeta, cond=None, scale=1.0):
    """(elbo, kl, per-sample losses) at fixed noise; the loss term is multiplied by scale."""
    kernel, w = p.model.kernel, p.model.loss_weights
    if cond is None:
        A, cov = conditional_t(X, p.Ux, kernel)
        cond = (A, robust_cholesky(cov, kernel.jitter))
    A, C = cond
    q_mu, q_chol = p.unwhitened()
    Z = sample_t(A, C, q_mu, q_chol, xi, zeta)
    losses = gpssl_loss_batch(Z, w)
    kl = p.kl()
    return -scale * losses.mean() - kl, kl, losses


def loss_scale(n: int, config: "TrainConfig | None" = None) -> float:
    return float(n) if config is None or config.scale_loss_by_n else 1.0


def elbo_estimate(X, model: SparseGPModel, num_samples: int, seed: int = 0, scale: float = 1.0,
                  chunk: int = 2000):
    """Monte-Carlo ELBO (loss term times ``scale``) and its standard error."""
    X = _t(X)
    p = _Params(model, False)
    gen = torch.Generator().manual_seed(int(seed))
    M, J = model.variational_means.shape
    losses = []
    with torch.no_grad():
        A, cov = conditional_t(X, p.Ux, model.kernel)
        cond = (A, robust_cholesky(cov, model.kernel.jitter))
        done = 0
        while done < num_samples:
            s = min(chunk, num_samples - done)
            xi, zeta = _draw_noise(gen, s, X.shape[0], M, J)
            _, kl, batch = _elbo_terms(X, p, xi, zeta, cond)
            losses.append(batch)
            done += s
    losses = scale * torch.cat(losses).numpy()
    se = losses.std(ddof=1) / np.sqrt(len(losses)) if len(losses) > 1 else np.inf
    return float(-losses.mean() - float(kl)), float(se)


def generalized_elbo(X, model: SparseGPModel, config: TrainConfig) -> float:
    """-(1/S) sum_s loss(Z_s) - KL(q || p) with S = config.mc_samples."""
    n = np.asarray(X).shape[0]
    return elbo_estimate(X, model, config.mc_samples, config.seed, loss_scale(n, config))[0]


def train(X, model: SparseGPModel, config: TrainConfig):
    """Adam ascent on the generalised ELBO. Returns (model, trace)."""
    X = _t(X)
    if X.shape[0] < 2:
        raise ValueError("training needs at least 2 observations")
    p = _Params(model, config.optimize_inducing)
    opt = torch.optim.Adam(p.tensors(), lr=config.learning_rate, betas=config.betas, eps=config.eps)
    gen = torch.Generator().manual_seed(int(config.seed))
    M, J = model.variational_means.shape
    cond = None
    if not config.optimize_inducing:
        with torch.no_grad():
            A, cov = conditional_t(X, p.Ux, model.kernel)
            cond = (A, robust_cholesky(cov, model.kernel.jitter))
    scale = loss_scale(X.shape[0], config)
    trace: list[TraceRow] = []
    for step in range(config.iterations):
        xi, zeta = _draw_noise(gen, config.mc_samples, X.shape[0], M, J)
        opt.zero_grad()
        elbo, kl, losses = _elbo_terms(X, p, xi, zeta, cond, scale)
        row = TraceRow(step, elbo.item(), kl.item(), losses.mean().item())
        trace.append(row)
        if not np.isfinite(row.elbo):
            raise TrainingDivergedError(f"non-finite ELBO at step {step}", trace)
        (-elbo).backward()
        opt.step()
    logger.debug("final elbo %.4f kl %.4f", trace[-1].elbo, trace[-1].kl)
    return p.to_model(), trace


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "elbo", "kl", "expected_loss"])
        for r in trace:
            w.writerow([r.step, repr(float(r.elbo)), repr(float(r.kl)), repr(float(r.expected_loss))])


def gradient_check(X, model: SparseGPModel, step: float = 1e-5, seed: int = 0, mc_samples: int = 4,
                   optimize_inducing: bool = False, scale: float = 1.0, floor: float = 1e-6) -> float:
    """Max relative error between autograd and central-difference ELBO gradients.

    Noise is held fixed (common random numbers) so the ELBO is a deterministic
    function of the unconstrained parameters. Gradients smaller than the
    finite-difference round-off level, ``floor``, or ``floor`` times the largest
    gradient entry are compared absolutely: exactly-zero gradients (e.g. the
    inducing inputs under a whitened KL-only objective) have no relative scale.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    X = _t(X)
    p = _Params(model, optimize_inducing)
    gen = torch.Generator().manual_seed(int(seed))
    M, J = model.variational_means.shape
    xi, zeta = _draw_noise(gen, mc_samples, X.shape[0], M, J)

    elbo, _, _ = _elbo_terms(X, p, xi, zeta, None, scale)
    tensors = p.tensors()
    grads = torch.autograd.grad(elbo, tensors)
    gmax = max(float(g.abs().max()) for g in grads)
    floor = max(floor, floor * gmax, 64.0 * np.finfo(float).eps * (abs(elbo.item()) + 1.0) / step)

    worst = 0.0
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            flat, gflat = t.view(-1), g.reshape(-1)
            for i in range(flat.numel()):
                if t is p.chol_off and not p.mask.expand_as(t).reshape(-1)[i]:
                    continue
                orig = flat[i].item()
                flat[i] = orig + step
                up = _elbo_terms(X, p, xi, zeta, None, scale)[0].item()
                flat[i] = orig - step
                down = _elbo_terms(X, p, xi, zeta, None, scale)[0].item()
                flat[i] = orig
                fd = (up - down) / (2 * step)
                a = gflat[i].item()
                err = abs(a - fd) / max(abs(a), abs(fd), floor)
                worst = max(worst, err)
    return worst

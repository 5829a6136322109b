"""Kernel PCA and a numerical check of its link to the GPSSL posterior mode.

For one representation dimension and the negative-variance loss, the log
generalised posterior over Z on the training inputs is the quadratic

    f(Z) = -1/2 Z^T K^{-1} Z + (c_V / N) Z^T H Z,     H = I - 11^T / N,

with Hessian -K^{-1} + (2 c_V / N) H. f is bounded above iff the Hessian is
negative semidefinite, which first fails at c_V* = N / (2 mu_1), mu_1 being
the top eigenvalue of the centred Gram matrix. Along the flat direction at
c_V* the centred Z is exactly the first kernel-PCA score vector.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from gpssl.kernel import KernelSpec, gram

EIG_TOL = 1e-10


@dataclass
class KpcaModel:
    train_inputs: np.ndarray
    kernel: KernelSpec
    alphas: np.ndarray  # (N, J)
    eigenvalues: np.ndarray  # (J,), of the centred Gram matrix
    row_means: np.ndarray  # (N,)
    total_mean: float
    train_scores: np.ndarray  # (N, J)

    @property
    def num_components(self) -> int:
        return self.alphas.shape[1]


def center_gram(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def kpca_fit(X, kernel: KernelSpec, J: int) -> KpcaModel:
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 1 <= J <= n:
        raise ValueError(f"need 1 <= J <= N, got J={J}, N={n}")
    K = gram(X, X, kernel)
    Kc = center_gram(K)
    vals, vecs = eigh(0.5 * (Kc + Kc.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    n_pos = int(np.sum(vals > EIG_TOL))
    if n_pos < J:
        raise ValueError(f"centred Gram matrix has only {n_pos} eigenvalues above {EIG_TOL}, need {J}")
    vecs = _fix_signs(vecs[:, :J])
    vals = vals[:J]
    # alpha^T alpha = 1 / mu gives a unit-norm direction in feature space
    alphas = vecs / np.sqrt(vals)
    return KpcaModel(X.copy(), kernel, alphas, vals, K.mean(axis=0), float(K.mean()), Kc @ alphas)


def kpca_project(Xstar, model: KpcaModel) -> np.ndarray:
    Ks = gram(np.asarray(Xstar, dtype=float), model.train_inputs, model.kernel)
    Ksc = Ks - Ks.mean(axis=1, keepdims=True) - model.row_means[None, :] + model.total_mean
    return Ksc @ model.alphas


@dataclass
class Prop1Row:
    c_v: float
    cosine: float
    bounded: bool
    top_curvature: float


@dataclass
class Prop1Report:
    rows: list[Prop1Row]
    predicted_critical: float  # N / (2 mu_1) = 1 / (2 lambda_1)
    kpca_eigenvalue: float  # mu_1, top eigenvalue of the centred Gram matrix
    observed_bracket: tuple[float | None, float | None]

    def brackets_prediction(self) -> bool:
        """True when the last bounded and first unbounded grid values straddle the prediction."""
        lo, hi = self.observed_bracket
        lo_ok = lo is None or lo <= self.predicted_critical
        hi_ok = hi is None or self.predicted_critical <= hi
        return lo_ok and hi_ok and not (lo is None and hi is None)

    def max_cosine(self) -> float:
        return max(r.cosine for r in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c_v", "cosine", "bounded_flag"])
            for r in self.rows:
                w.writerow([repr(float(r.c_v)), repr(float(r.cosine)), int(r.bounded)])


def prop1_oracle(X, kernel: KernelSpec, c_grid, bound_tol: float = 1e-12) -> Prop1Report:
    """Scan c_V and compare the posterior-mode direction with the first kPCA score.

    For each c_V the mode direction is the top eigenvector of the Hessian of
    the log posterior (the least-curved direction: the maximiser when the
    objective is unbounded, and the direction along which the mode detaches
    from Z = 0 as c_V approaches the critical value). It is centred before the
    cosine is taken, matching the centred-feature-space assumption.
    """
    c_grid = np.asarray(c_grid, dtype=float)
    if c_grid.size == 0:
        raise ValueError("c_grid must not be empty")
    if np.any(c_grid < 0):
        raise ValueError("c_grid values must be non-negative")
    X = np.asarray(X, dtype=float)
    n = len(X)
    K = gram(X, X, kernel, add_jitter=True)
    Kinv = np.linalg.inv(K)
    Kinv = 0.5 * (Kinv + Kinv.T)
    H = np.eye(n) - 1.0 / n

    first = kpca_fit(X, kernel, 1)
    score = first.train_scores[:, 0]
    score = score / np.linalg.norm(score)
    mu1 = float(first.eigenvalues[0])
    predicted = n / (2.0 * mu1)

    rows = []
    for c in sorted(c_grid):
        Q = -Kinv + (2.0 * c / n) * H
        vals, vecs = eigh(Q)
        top, v = vals[-1], vecs[:, -1]
        if c == 0:
            # prior only: the mode is Z = 0, which has no direction
            cosine = 0.0
        else:
            vc = H @ v
            cosine = float(abs(vc @ score) / max(np.linalg.norm(vc), 1e-300))
        rows.append(Prop1Row(float(c), cosine, bool(top <= bound_tol * np.abs(vals).max()), float(top)))

    bounded = [r.c_v for r in rows if r.bounded]
    unbounded = [r.c_v for r in rows if not r.bounded]
    lo = max(bounded) if bounded else None
    hi = min(unbounded) if unbounded else None
    return Prop1Report(rows, predicted, mu1, (lo, hi))


def prop1_mode(X, kernel: KernelSpec, c_v: float, steps: int = 2000, lr: float = 0.1, seed: int = 0):
    """Gradient ascent on the quadratic log posterior from a random start.

    Returns the final iterate; it decays to 0 when the posterior is bounded
    and otherwise diverges along a direction whose centred part is the first
    kPCA score.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    K = gram(X, X, kernel, add_jitter=True)
    H = np.eye(n) - 1.0 / n
    Z = np.random.default_rng(seed).standard_normal(n)
    # preconditioning by K keeps the step size independent of K's conditioning
    for _ in range(steps):
        g = -np.linalg.solve(K, Z) + 2.0 * (c_v / n) * (H @ Z)
        Z = Z + lr * (K @ g)
    return Z

"""Downstream classifiers on (distributions over) representations.

Bayesian logistic regression uses a Laplace approximation around the
multinomial MAP; the posterior predictive is a Monte-Carlo average of softmax
outputs over Gaussian weight draws. ``gpssl_full_pipeline`` propagates
representation uncertainty by refitting one classifier per joint embedding
sample and averaging predictive probabilities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import log_softmax, softmax

from gpssl.sparse_gp import SparseGPModel, predict, sample_representations

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


def _design(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return np.hstack([np.ones((Z.shape[0], 1)), Z])


def _check_labels(Z, y, num_classes):
    y = np.asarray(y, dtype=int)
    if len(y) != len(Z):
        raise ValueError("Z and y disagree on N")
    C = int(y.max()) + 1 if num_classes is None else int(num_classes)
    if len(np.unique(y)) < 2:
        raise ValueError("need at least two classes present")
    if len(y) < C:
        raise ValueError(f"need N >= C, got N={len(y)}, C={C}")
    return y, C


@dataclass
class BayesLogReg:
    weights: np.ndarray  # (J+1, C), bias row first
    covariance: np.ndarray  # (C*(J+1), C*(J+1)), class-major ordering of weights.T
    prior_precision: float
    num_classes: int

    def sample_weights(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        L = np.linalg.cholesky(self.covariance + 1e-12 * np.eye(len(self.covariance)))
        eps = rng.standard_normal((n, len(self.covariance)))
        flat = self.weights.T.reshape(-1) + eps @ L.T
        return flat.reshape(n, self.num_classes, -1).transpose(0, 2, 1)

    def predict_proba(self, Z, weight_samples: int = 200, seed: int = 0) -> np.ndarray:
        return blr_predict(Z, self, weight_samples, seed)


def _neg_log_post(W, Phi, Y, alpha):
    logp = log_softmax(Phi @ W, axis=1)
    return -(Y * logp).sum() + 0.5 * alpha * (W**2).sum()


def blr_fit(Z, y, prior_precision: float = 1.0, num_classes: int | None = None,
            tol: float = 1e-6, max_iter: int = 200) -> BayesLogReg:
    """Damped Newton MAP for softmax regression, then Laplace covariance."""
    y, C = _check_labels(Z, y, num_classes)
    if prior_precision < 0:
        raise ValueError("prior_precision must be >= 0")
    Phi = _design(Z)
    n, p = Phi.shape
    Y = np.eye(C)[y]
    W = np.zeros((p, C))
    alpha = float(prior_precision)

    def grad_hess(W):
        P = softmax(Phi @ W, axis=1)
        g = Phi.T @ (P - Y) + alpha * W  # (p, C)
        # H[c, a, d, b] = sum_i phi_ia phi_ib p_ic (delta_cd - p_id)
        outer = np.einsum("ic,id->icd", P, P)
        Wt = np.einsum("ic,cd->icd", P, np.eye(C)) - outer
        H = np.einsum("ia,ib,icd->cadb", Phi, Phi, Wt).reshape(C * p, C * p)
        H += alpha * np.eye(C * p)
        return g.T.reshape(-1), H

    f = _neg_log_post(W, Phi, Y, alpha)
    converged = False
    for _ in range(max_iter):
        g, H = grad_hess(W)
        if np.linalg.norm(g) < tol:
            converged = True
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError("singular Hessian; use prior_precision > 0") from e
        t = 1.0
        while True:
            W_new = W - t * step.reshape(C, p).T
            f_new = _neg_log_post(W_new, Phi, Y, alpha)
            if f_new <= f - 1e-4 * t * g @ step or t < 1e-10:
                break
            t *= 0.5
        W, f = W_new, f_new
        if not np.all(np.isfinite(W)):
            raise ConvergenceError("non-finite weights")
    if not converged:
        g, H = grad_hess(W)
        converged = np.linalg.norm(g) < tol
    if not converged:
        if alpha == 0:
            raise ConvergenceError("MAP does not exist (separable data with prior_precision = 0)")
        logger.warning("blr_fit stopped after %d iterations, |grad| = %.2e", max_iter, np.linalg.norm(g))
    cov = np.linalg.inv(H)
    return BayesLogReg(W, 0.5 * (cov + cov.T), alpha, C)


def blr_predict(Zstar, model: BayesLogReg, weight_samples: int = 200, seed: int = 0) -> np.ndarray:
    """Posterior predictive class probabilities; weight_samples=0 gives the MAP plug-in."""
    Phi = _design(Zstar)
    if weight_samples == 0:
        return softmax(Phi @ model.weights, axis=1)
    Ws = model.sample_weights(weight_samples, seed)
    probs = np.zeros((Phi.shape[0], model.num_classes))
    for W in Ws:
        probs += softmax(Phi @ W, axis=1)
    return probs / weight_samples


class MLPClassifier:
    """Two-layer ReLU network with a softmax head, trained full-batch with Adam."""

    def __init__(self, hidden: int = 32, epochs: int = 200, lr: float = 0.01,
                 weight_decay: float = 0.0, seed: int = 0):
        self.hidden, self.epochs, self.lr = hidden, epochs, lr
        self.weight_decay, self.seed = weight_decay, seed
        self.net = None
        self.losses: list[float] = []

    def _build(self, d, C):
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(self.seed)
        net = torch.nn.Sequential(
            torch.nn.Linear(d, self.hidden), torch.nn.ReLU(), torch.nn.Linear(self.hidden, C)
        ).double()
        torch.random.set_rng_state(gen_state)
        return net

    def fit(self, Z, y, num_classes: int | None = None) -> "MLPClassifier":
        y, C = _check_labels(Z, y, num_classes)
        Zt = torch.as_tensor(np.asarray(Z, dtype=float))
        if Zt.ndim == 1:
            Zt = Zt[:, None]
        yt = torch.as_tensor(y)
        self.num_classes = C
        self.net = self._build(Zt.shape[1], C)
        opt = torch.optim.Adam(self.net.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        for _ in range(self.epochs):
            opt.zero_grad()
            loss = torch.nn.functional.cross_entropy(self.net(Zt), yt)
            if not torch.isfinite(loss):
                raise ConvergenceError("non-finite MLP loss")
            loss.backward()
            opt.step()
            self.losses.append(loss.item())
        return self

    def predict_proba(self, Z, **_) -> np.ndarray:
        Zt = torch.as_tensor(np.asarray(Z, dtype=float))
        if Zt.ndim == 1:
            Zt = Zt[:, None]
        with torch.no_grad():
            return torch.softmax(self.net(Zt), dim=1).numpy()


def mlp_fit(Z, y, hidden: int = 32, num_classes: int | None = None, seed: int = 0, **kw) -> MLPClassifier:
    return MLPClassifier(hidden=hidden, seed=seed, **kw).fit(Z, y, num_classes)


def fit_classifier(kind: str, Z, y, num_classes: int | None = None, seed: int = 0,
                   prior_precision: float = 1.0, hidden: int = 32):
    if kind == "blr":
        return blr_fit(Z, y, prior_precision, num_classes)
    if kind == "mlp":
        return mlp_fit(Z, y, hidden, num_classes, seed)
    raise ValueError(f"unknown classifier {kind!r}")


def _predict(clf, Z, weight_samples, seed):
    if isinstance(clf, BayesLogReg):
        return blr_predict(Z, clf, weight_samples, seed)
    return clf.predict_proba(Z)


@dataclass
class ClassifierEnsemble:
    """One classifier per representation sample; probabilities are averaged."""

    classifiers: list

    def predict_proba(self, Zstar_samples, weight_samples: int = 200, seed: int = 0) -> np.ndarray:
        if len(Zstar_samples) != len(self.classifiers):
            raise ValueError("need one test embedding per classifier")
        total = None
        for i, (clf, Z) in enumerate(zip(self.classifiers, Zstar_samples)):
            p = _predict(clf, Z, weight_samples, seed + i)
            total = p if total is None else total + p
        return total / len(self.classifiers)


def gpssl_mean_pipeline(model: SparseGPModel, X_train, y, X_test, classifier: str = "blr",
                        num_classes: int | None = None, weight_samples: int = 200, seed: int = 0,
                        **clf_kw) -> np.ndarray:
    """Fit one classifier on posterior-mean embeddings; X are raw (unstandardized) features."""
    Ztr = predict(model.standardize(X_train), model).means
    Zte = predict(model.standardize(X_test), model).means
    clf = fit_classifier(classifier, Ztr, y, num_classes, seed, **clf_kw)
    return _predict(clf, Zte, weight_samples, seed)


def gpssl_full_pipeline(model: SparseGPModel, X_train, y, X_test, num_embedding_samples: int = 100,
                        classifier: str = "blr", num_classes: int | None = None,
                        weight_samples: int = 200, seed: int = 0, **clf_kw) -> np.ndarray:
    """Average predictions of classifiers refit on joint embedding draws over train and test."""
    X_train = np.asarray(X_train, dtype=float)
    n_tr = len(X_train)
    X_all = model.standardize(np.vstack([X_train, np.asarray(X_test, dtype=float)]))
    samples = sample_representations(X_all, model, num_embedding_samples, seed)
    classifiers, tests = [], []
    for s, Z in enumerate(samples):
        classifiers.append(fit_classifier(classifier, Z[:n_tr], y, num_classes, seed + s, **clf_kw))
        tests.append(Z[n_tr:])
    return ClassifierEnsemble(classifiers).predict_proba(tests, weight_samples, seed)

import numpy as np
import pytest
import torch
from scipy.optimize import brentq

from gpssl.downstream import (
    BayesLogReg,
    ClassifierEnsemble,
    ConvergenceError,
    MLPClassifier,
    blr_fit,
    blr_predict,
    fit_classifier,
    gpssl_full_pipeline,
    gpssl_mean_pipeline,
    mlp_fit,
)
from gpssl.kernel import KernelSpec
from gpssl.sparse_gp import SparseGPModel, init_model, predict, with_params


@pytest.fixture
def one_d():
    Z = np.r_[-np.ones(10), np.ones(10)][:, None]
    y = np.r_[np.zeros(10, int), np.ones(10, int)]
    return Z, y


def test_one_d_map_matches_bisection(one_d):
    Z, y = one_d
    model = blr_fit(Z, y, prior_precision=1.0)
    # symmetric optimum: biases 0, slopes +-w with w = 20 * sigmoid(-2w)
    w = brentq(lambda w: w - 20.0 / (1.0 + np.exp(2.0 * w)), 0.0, 20.0)
    np.testing.assert_allclose(model.weights[0], 0.0, atol=1e-8)
    np.testing.assert_allclose(model.weights[1], [-w, w], rtol=1e-7)
    assert model.weights[1, 1] > 0 and np.isfinite(model.weights).all()


def test_laplace_covariance_symmetric_psd(one_d):
    Z, y = one_d
    cov = blr_fit(Z, y).covariance
    np.testing.assert_array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > 0


def test_predict_plugin_and_normalisation(one_d):
    Z, y = one_d
    model = blr_fit(Z, y)
    grid = np.linspace(-5, 5, 11)[:, None]
    plug = blr_predict(grid, model, weight_samples=0)
    mc = blr_predict(grid, model, weight_samples=500, seed=1)
    for p in (plug, mc):
        np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
    # plug-in is confident at the training point; the Laplace average is pulled towards 1/2
    assert blr_predict(np.array([[1.0]]), model, 0).max() > 0.9
    assert 0.85 < blr_predict(np.array([[1.0]]), model, 10_000, seed=0).max() < 0.93


def test_laplace_predictive_vs_plugin(one_d):
    Z, y = one_d
    model = blr_fit(Z, y)
    near = np.array([[0.0], [0.1], [-0.1]])
    far = np.array([[8.0], [-8.0]])
    mc_near = blr_predict(near, model, 10_000, seed=0)
    assert np.abs(mc_near - blr_predict(near, model, 0)).max() < 0.1
    mc_far, plug_far = blr_predict(far, model, 10_000, seed=0), blr_predict(far, model, 0)
    assert np.all(np.abs(mc_far - 0.5).max(1) < np.abs(plug_far - 0.5).max(1))


def test_separable_without_prior_raises(one_d):
    Z, y = one_d
    with pytest.raises(ConvergenceError):
        blr_fit(Z, y, prior_precision=0.0)


def test_input_validation(one_d):
    Z, y = one_d
    with pytest.raises(ValueError):
        blr_fit(Z, np.zeros(20, int))
    with pytest.raises(ValueError):
        blr_fit(Z[:5], y)
    with pytest.raises(ValueError):
        blr_fit(Z[:3], np.array([0, 1, 2]), num_classes=4)
    with pytest.raises(ValueError):
        blr_fit(Z, y, prior_precision=-1.0)


def test_label_permutation_equivariance(rng):
    Z = rng.normal(size=(60, 2))
    y = np.digitize(Z[:, 0] + 0.3 * rng.normal(size=60), [-0.5, 0.5])
    perm = np.array([2, 0, 1])
    a = blr_predict(Z, blr_fit(Z, y), 0)
    b = blr_predict(Z, blr_fit(Z, perm[y]), 0)
    np.testing.assert_allclose(b[:, perm], a, atol=1e-8)


def test_duplicates_sharpen(one_d):
    Z, y = one_d
    a = blr_predict(Z, blr_fit(Z, y), 0).max(1)
    b = blr_predict(Z, blr_fit(np.vstack([Z, Z]), np.r_[y, y]), 0).max(1)
    assert np.all(b >= a - 1e-12)


def test_multiclass_shapes(rng):
    Z = rng.normal(size=(45, 3))
    y = np.repeat([0, 1, 2], 15)
    model = blr_fit(Z + y[:, None], y)
    assert model.weights.shape == (4, 3)
    assert model.covariance.shape == (12, 12)
    assert model.sample_weights(7).shape == (7, 4, 3)


def test_mlp_separable_and_seeded(rng):
    Z = np.r_[rng.normal(-2, 0.3, size=(20, 2)), rng.normal(2, 0.3, size=(20, 2))]
    y = np.r_[np.zeros(20, int), np.ones(20, int)]
    a = mlp_fit(Z, y, seed=1)
    assert (a.predict_proba(Z).argmax(1) == y).mean() == 1.0
    b = mlp_fit(Z, y, seed=1)
    np.testing.assert_array_equal(a.predict_proba(Z), b.predict_proba(Z))
    np.testing.assert_allclose(a.predict_proba(Z).sum(1), 1.0, atol=1e-12)


def test_mlp_gradients_match_finite_differences(rng):
    Z = rng.normal(size=(30, 2))
    y = (Z[:, 0] > 0).astype(int)
    clf = MLPClassifier(epochs=5, seed=0).fit(Z, y)
    Zt, yt = torch.as_tensor(Z), torch.as_tensor(y)

    def f():
        return torch.nn.functional.cross_entropy(clf.net(Zt), yt)

    params = list(clf.net.parameters())
    grads = torch.autograd.grad(f(), params)
    worst, h = 0.0, 1e-6
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat, gf = p.view(-1), g.reshape(-1)
            for i in range(min(flat.numel(), 8)):
                orig = flat[i].item()
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - gf[i].item()) / max(abs(fd), abs(gf[i].item()), 1e-7))
    assert worst < 1e-3


def test_fit_classifier_dispatch(one_d):
    Z, y = one_d
    assert isinstance(fit_classifier("blr", Z, y), BayesLogReg)
    assert isinstance(fit_classifier("mlp", Z, y), MLPClassifier)
    with pytest.raises(ValueError):
        fit_classifier("svm", Z, y)


def test_ensemble_averages(one_d):
    Z, y = one_d
    clfs = [blr_fit(Z, y), blr_fit(Z + 0.5, y)]
    ens = ClassifierEnsemble(clfs)
    out = ens.predict_proba([Z, Z + 0.5], weight_samples=0)
    expect = (blr_predict(Z, clfs[0], 0) + blr_predict(Z + 0.5, clfs[1], 0)) / 2
    np.testing.assert_allclose(out, expect, atol=1e-15)
    with pytest.raises(ValueError):
        ens.predict_proba([Z])


def _degenerate_model(rng):
    """Inducing inputs cover all points and q has zero covariance: no representation uncertainty."""
    U = rng.normal(size=(16, 2)) * 2
    model = init_model(U, KernelSpec(lengthscales=np.full(2, 0.7), jitter=1e-12), 2, num_inducing=16)
    m = rng.normal(size=(16, 2))
    return U, with_params(model, variational_means=m, variational_chol=np.zeros_like(model.variational_chol))


def test_zero_variance_full_equals_mean(rng):
    U, model = _degenerate_model(rng)
    y = (U[:, 0] > 0).astype(int)
    if len(set(y[:10])) < 2:
        y[:2] = [0, 1]
    mean = gpssl_mean_pipeline(model, U[:10], y[:10], U[10:], weight_samples=0)
    for S in (1, 3):
        full = gpssl_full_pipeline(model, U[:10], y[:10], U[10:], num_embedding_samples=S, weight_samples=0)
        np.testing.assert_allclose(full, mean, atol=1e-4)


def test_mean_pipeline_matches_manual(rng):
    X = rng.normal(size=(40, 2))
    model = init_model(X, KernelSpec(lengthscales=np.ones(2)), 3, num_inducing=10)
    model = with_params(model, variational_means=rng.normal(size=(10, 3)), feature_mean=np.full(2, 0.1),
                        feature_std=np.full(2, 1.5))
    y = (X[:, 1] > 0).astype(int)
    out = gpssl_mean_pipeline(model, X[:30], y[:30], X[30:], weight_samples=50, seed=4)
    Ztr = predict(model.standardize(X[:30]), model).means
    Zte = predict(model.standardize(X[30:]), model).means
    np.testing.assert_array_equal(out, blr_predict(Zte, blr_fit(Ztr, y[:30]), 50, 4))


def test_full_pipeline_rows_sum_to_one(rng):
    X = rng.normal(size=(40, 2))
    model = init_model(X, KernelSpec(lengthscales=np.ones(2)), 3, num_inducing=10)
    y = (X[:, 0] > 0).astype(int)
    for clf in ("blr", "mlp"):
        p = gpssl_full_pipeline(model, X[:30], y[:30], X[30:], num_embedding_samples=3, classifier=clf,
                                weight_samples=20)
        assert p.shape == (10, 2)
        np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
    assert isinstance(model, SparseGPModel)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpssl.data import gen_balanced_circles
from gpssl.kernel import KernelSpec, gram, lengthscale_heuristic, neighbour_count
from gpssl.kpca import center_gram, kpca_fit, kpca_project, prop1_mode, prop1_oracle


def iso(l=1.0, d=2):
    return KernelSpec(lengthscales=np.full(d, l))


@pytest.fixture
def circles():
    X = gen_balanced_circles(50, 0, seed=0).fit_standardization(None).standardized()
    return X, KernelSpec(lengthscales=lengthscale_heuristic(X, neighbour_count(50, 5)))


def test_center_gram_examples(rng):
    A = rng.normal(size=(4, 4))
    K = A @ A.T
    Kc = center_gram(K)
    assert np.abs(Kc.sum(0)).max() < 1e-10 and np.abs(Kc.sum(1)).max() < 1e-10
    np.testing.assert_allclose(center_gram(Kc), Kc, atol=1e-12)
    np.testing.assert_allclose(center_gram(np.ones((5, 5))), 0.0, atol=1e-15)


def test_two_points_one_component():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert kpca_fit(X, iso(), 1).num_components == 1
    with pytest.raises(ValueError):
        kpca_fit(X, iso(), 2)
    with pytest.raises(ValueError):
        kpca_fit(X, iso(), 3)


def test_linear_kernel_matches_pca(monkeypatch, rng):
    import gpssl.kpca as kp

    X = rng.normal(size=(30, 2)) @ np.array([[2.0, 0.3], [0.0, 0.5]])
    X = X - X.mean(0)
    monkeypatch.setattr(kp, "gram", lambda A, B, spec, add_jitter=False: np.asarray(A) @ np.asarray(B).T)
    model = kp.kpca_fit(X, iso(), 2)
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    ref = X @ Vt.T
    for j in range(2):
        assert min(np.abs(model.train_scores[:, j] - ref[:, j]).max(),
                   np.abs(model.train_scores[:, j] + ref[:, j]).max()) < 1e-8


def test_duplicated_data_same_directions(rng):
    X = rng.normal(size=(15, 2))
    a = kpca_fit(X, iso(), 3)
    b = kpca_fit(np.vstack([X, X]), iso(), 3)
    for j in range(3):
        u, v = a.train_scores[:, j], b.train_scores[:15, j]
        assert abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v)) > 1 - 1e-8


def test_projection_reproduces_training_scores(circles):
    X, kernel = circles
    model = kpca_fit(X, kernel, 5)
    np.testing.assert_allclose(kpca_project(X, model), model.train_scores, atol=1e-8)


def test_normalisation_and_variance_identity(circles):
    X, kernel = circles
    model = kpca_fit(X, kernel, 5)
    np.testing.assert_allclose((model.alphas**2).sum(0), 1.0 / model.eigenvalues, rtol=1e-10)
    np.testing.assert_allclose(model.train_scores.var(0), model.eigenvalues / len(X), rtol=1e-8)
    assert np.all(np.diff(model.eigenvalues) < 0) and model.eigenvalues.min() > 0


def test_components_uncorrelated(circles):
    X, kernel = circles
    S = np.cov(kpca_fit(X, kernel, 5).train_scores.T)
    assert np.abs(S - np.diag(np.diag(S))).max() < 1e-8


def test_sign_convention(circles):
    X, kernel = circles
    a = kpca_fit(X, kernel, 3).alphas
    idx = np.argmax(np.abs(a), axis=0)
    assert np.all(a[idx, np.arange(3)] > 0)


def test_symmetric_dataset_odd_components():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    model = kpca_fit(X, iso(1.5), 1)
    assert abs(kpca_project(np.zeros((1, 2)), model)[0, 0]) < 1e-10


def test_projection_linear_in_centred_cross_gram(circles, rng):
    X, kernel = circles
    model = kpca_fit(X, kernel, 2)
    Xs = rng.normal(size=(5, 2))
    Ks = gram(Xs, X, kernel)
    Ksc = Ks - Ks.mean(1, keepdims=True) - model.row_means + model.total_mean
    np.testing.assert_allclose(kpca_project(Xs, model), Ksc @ model.alphas, atol=1e-12)


# --- posterior mode vs first kPCA component ------------------------------


def test_prop1_brackets_and_aligns(circles):
    X, kernel = circles
    rep = prop1_oracle(X, kernel, np.geomspace(0.1, 100, 61))
    assert rep.brackets_prediction()
    lo, hi = rep.observed_bracket
    assert lo < rep.predicted_critical < hi
    below = [r for r in rep.rows if r.c_v <= rep.predicted_critical]
    assert below[-1].cosine > 0.99
    assert all(r.bounded for r in below) and not any(r.bounded for r in rep.rows if r.c_v > hi - 1e-12)


def test_prop1_zero_c_is_prior_mode(circles):
    X, kernel = circles
    rep = prop1_oracle(X, kernel, [0.0, 1.0])
    assert rep.rows[0].bounded and rep.rows[0].cosine == 0.0
    assert np.abs(prop1_mode(X, kernel, 0.0, steps=400)).max() < 1e-6


def test_prop1_gradient_ascent_cross_check(circles):
    X, kernel = circles
    rep = prop1_oracle(X, kernel, [1.0])
    c = 1.05 * rep.predicted_critical
    Z = prop1_mode(X, kernel, c, steps=3000, lr=0.5)
    Zc = Z - Z.mean()
    score = kpca_fit(X, kernel, 1).train_scores[:, 0]
    assert abs(Zc @ score) / (np.linalg.norm(Zc) * np.linalg.norm(score)) > 0.99
    assert np.abs(prop1_mode(X, kernel, 0.5 * rep.predicted_critical, steps=3000, lr=0.5)).max() < 1e-3


@given(st.floats(0, 2 * np.pi))
def test_prop1_rotation_invariant(theta):
    X = gen_balanced_circles(30, 0, seed=1).fit_standardization(None).standardized()
    kernel = KernelSpec(lengthscales=lengthscale_heuristic(X, 3))
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    grid = [0.5, 1.0, 2.0, 4.0]
    a, b = prop1_oracle(X, kernel, grid), prop1_oracle(X @ R.T, kernel, grid)
    assert a.predicted_critical == pytest.approx(b.predicted_critical, rel=1e-8)
    for ra, rb in zip(a.rows, b.rows):
        assert ra.bounded == rb.bounded
        assert ra.cosine == pytest.approx(rb.cosine, abs=1e-6)


def test_prop1_rejects_bad_grid(circles):
    X, kernel = circles
    with pytest.raises(ValueError):
        prop1_oracle(X, kernel, [])
    with pytest.raises(ValueError):
        prop1_oracle(X, kernel, [-1.0])


def test_prop1_csv(circles, tmp_path):
    X, kernel = circles
    prop1_oracle(X, kernel, np.array([1.0, 10.0])).write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "c_v,cosine,bounded_flag"
    assert lines[1].endswith(",1") and lines[2].endswith(",0")
    assert [float(v) for v in lines[1].split(",")[:2]]  # plain floats, no numpy reprs

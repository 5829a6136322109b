import csv

import numpy as np
import pytest

import gpssl.experiment as ex
from gpssl.config import ExperimentConfig


@pytest.fixture
def data(tiny_config):
    return ex.prepare(tiny_config)


def _with(cfg, **kw):
    d = cfg.to_dict()
    for key, value in kw.items():
        node = d
        *head, last = key.split("__")
        for h in head:
            node = node[h]
        node[last] = value
    return ExperimentConfig.from_dict(d)


def test_prepare_uses_train_statistics(tiny_config, data):
    assert abs(data.X_train.mean(0)).max() < 1e-12
    assert np.allclose(data.X_train.std(0), 1.0)
    assert len(data.X_fit) == len(data.X_val)  # classifier fits on the whole validation split
    assert data.num_classes == 2 and len(data.y_test) == len(data.X_test)


def test_circles_protocol_uses_downstream_dataset():
    from gpssl.config import circles_preset
    from gpssl.data import QUADRANT_COUNTS

    data = ex.prepare(circles_preset(0))
    assert len(data.X_train) == sum(n for n, _ in QUADRANT_COUNTS.values())
    assert len(data.X_fit) == 50 and len(data.X_test) == 500


def test_validation_split_stratified():
    y = np.repeat([0, 1], 10)
    a, b = ex.validation_split(y, 0)
    assert len(a) == 16 and len(b) == 4 and set(a).isdisjoint(b)
    assert sorted(np.bincount(y[b])) == [2, 2]


def test_single_point_grid(tiny_config, data):
    g = ex.run_grid_search("original", data, tiny_config)
    assert g.points == [{}] and g.best_index == 0 and np.isfinite(g.scores[0])


def test_identical_points_first_selected(tiny_config, data):
    g = ex.run_grid_search("kpca", data, _with(tiny_config, kpca__k_grid=[5, 5]))
    assert g.scores[0] == g.scores[1] and g.best_index == 0


def test_selected_score_is_max_of_persisted(tiny_config, data, tmp_path):
    g = ex.run_grid_search("kpca", data, _with(tiny_config, kpca__k_grid=[3, 5, 10]))
    g.write_csv(tmp_path / "g.csv")
    rows = list(csv.DictReader(open(tmp_path / "g.csv")))
    scores = [float(r["score"]) for r in rows]
    chosen = [r for r in rows if r["selected"] == "1"]
    assert len(chosen) == 1 and float(chosen[0]["score"]) == max(scores)


def test_failed_point_scores_minus_inf(tiny_config, data, monkeypatch):
    real = ex.fit_embedding

    def flaky(method, params, X, config):
        if params.get("k") == 10:
            raise ex.TrainingDivergedError("boom", [])
        return real(method, params, X, config)

    monkeypatch.setattr(ex, "fit_embedding", flaky)
    g = ex.run_grid_search("kpca", data, tiny_config)
    assert g.scores[1] == -np.inf and "boom" in g.errors[1] and g.best_index == 0


def test_all_points_failing(tiny_config, data, monkeypatch):
    def broken(*a):
        raise ex.FactorizationError("nope")

    monkeypatch.setattr(ex, "fit_embedding", broken)
    with pytest.raises(ex.NumericalFailure):
        ex.run_grid_search("kpca", data, tiny_config)


def test_grid_search_ignores_test_labels(tiny_config, data):
    from dataclasses import replace

    a = ex.run_grid_search("kpca", data, tiny_config)
    b = ex.run_grid_search("kpca", replace(data, y_test=1 - data.y_test, X_test=data.X_test * 0), tiny_config)
    assert a.scores == b.scores


def test_workers_match_serial(tiny_config, data):
    serial = ex.run_grid_search("kpca", data, tiny_config)
    par = ex.run_grid_search("kpca", data, _with(tiny_config, workers=2))
    assert serial.scores == par.scores


def test_vicreg_grid_points(tiny_config):
    cfg = _with(tiny_config, vicreg__c_grid=[25.0, 50.0], vicreg__lr_grid=[1e-4, 5e-4])
    pts = ex.grid_points("vicreg", cfg)
    assert len(pts) == 4 and pts[0] == {"c": 25.0, "lr": 1e-4, "noise": 0.1}


def test_original_embedding_is_identity(tiny_config, data):
    emb = ex.fit_embedding("original", {}, data.X_train, tiny_config)
    np.testing.assert_array_equal(emb.mean(data.X_test), data.X_test)
    assert np.all(emb.posterior(data.X_test).stds == 0)


def test_run_experiment_outputs_and_determinism(tiny_config, tmp_path):
    res = ex.run_experiment(tiny_config, tmp_path)
    d = res.run_dir
    assert d.name == f"tiny-{tiny_config.digest()}-seed0"
    assert set(res.metrics) == {"original", "kpca", "gpssl-mean", "gpssl-full"}
    header = (d / "table1.csv").read_text().splitlines()[0]
    assert header == "metric,kpca,gpssl-mean,gpssl-full".replace("metric,", "metric,original,")
    for name in ("config.json", "dataset_manifest.json", "metrics.json", "gpssl_model.json", "gpssl_trace.csv",
                 "embeddings_gpssl_test.csv", "grid_gpssl.csv", "predictions_gpssl-full.csv"):
        assert (d / name).exists(), name
    np.testing.assert_allclose(ex.read_predictions(d / "predictions_gpssl-full.csv"),
                               res.probabilities["gpssl-full"], rtol=0, atol=0)
    first = {p.name: p.read_bytes() for p in d.iterdir()}
    again = ex.run_experiment(tiny_config, tmp_path)
    assert again.run_dir == d
    second = {p.name: p.read_bytes() for p in d.iterdir()}
    for name in ("table1.csv", "metrics.json", "predictions_gpssl-full.csv", "grid_gpssl.csv"):
        assert first[name] == second[name], name


def test_vicreg_method_runs(tiny_config, data):
    cfg = _with(tiny_config, methods=["vicreg"])
    g = ex.run_grid_search("vicreg", data, cfg)
    assert np.isfinite(g.scores[0])

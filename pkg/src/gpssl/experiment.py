"""Grid search and end-to-end experiment runs (embed -> classify -> evaluate)."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from gpssl import metrics
from gpssl.config import ConfigError, DatasetConfig, ExperimentConfig
from gpssl.data import Dataset, gen_balanced_circles, gen_quadrant_circles, load_csv, split
from gpssl.downstream import ConvergenceError, blr_predict, fit_classifier, gpssl_full_pipeline
from gpssl.inference import TrainConfig, TrainingDivergedError, train, write_trace
from gpssl.kernel import KernelSpec, lengthscale_heuristic, neighbour_count
from gpssl.kpca import kpca_fit, kpca_project
from gpssl.losses import LossWeights
from gpssl.sparse_gp import FactorizationError, RepresentationPosterior, init_model, predict
from gpssl.vicreg import AugmentConfig, VicregTrainConfig, vicreg_embed, vicreg_train

logger = logging.getLogger(__name__)

NUMERICAL_ERRORS = (FactorizationError, TrainingDivergedError, ConvergenceError, FloatingPointError,
                    np.linalg.LinAlgError, RuntimeError)
TABLE_COLUMNS = ("original", "vicreg", "kpca", "gpssl-mean", "gpssl-full")
TABLE_METRICS = ("accuracy", "roc_auc", "aurc")


class NumericalFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data


@dataclass
class PreparedData:
    """Standardised arrays for one experiment; all scaling uses training-split statistics."""

    X_train: np.ndarray  # unlabelled representation-learning data
    X_val: np.ndarray
    y_val: np.ndarray
    X_fit: np.ndarray  # classifier training inputs
    y_fit: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    num_classes: int
    feature_mean: np.ndarray
    feature_std: np.ndarray
    manifest: dict


def make_dataset(cfg: DatasetConfig) -> Dataset:
    if cfg.kind == "quadrant_circles":
        return gen_quadrant_circles(noise_std=cfg.noise_std, seed=cfg.seed)
    if cfg.kind == "balanced_circles":
        return gen_balanced_circles(cfg.n_train, cfg.n_test, cfg.noise_std, cfg.seed)
    ds = load_csv(cfg.path, cfg.label_column)
    if ds.labels is None:
        raise ConfigError("experiments need labels; set dataset.label_column")
    if ds.split is None:
        ds = split(ds, cfg.fractions, cfg.seed)
    return replace(ds, seed=cfg.seed)


def prepare(config: ExperimentConfig) -> PreparedData:
    ds = make_dataset(config.dataset).fit_standardization("train")
    Xs = ds.standardized()
    X_train = Xs[ds.split == "train"]
    val = ds.split == "validation"
    if not val.any():
        raise ConfigError("dataset has no validation split")
    manifest = {"dataset": ds.manifest()}
    if config.downstream is None:
        fit, test = val, ds.split == "test"
        if not test.any():
            raise ConfigError("dataset has no test split")
        X_fit, y_fit, X_test, y_test = Xs[fit], ds.labels[fit], Xs[test], ds.labels[test]
        C = ds.num_classes
    else:
        down = make_dataset(config.downstream)
        Ds = (down.features - ds.feature_mean) / ds.feature_std
        tr, te = down.split == "train", down.split == "test"
        X_fit, y_fit, X_test, y_test = Ds[tr], down.labels[tr], Ds[te], down.labels[te]
        C = max(ds.num_classes, down.num_classes)
        manifest["downstream"] = replace(down, feature_mean=ds.feature_mean, feature_std=ds.feature_std).manifest()
    return PreparedData(X_train, Xs[val], ds.labels[val], X_fit, y_fit, X_test, y_test, C,
                        ds.feature_mean, ds.feature_std, manifest)


# --------------------------------------------------------------------------
# embedders


@dataclass
class Embedding:
    method: str
    params: dict
    model: object = None  # SparseGPModel / KpcaModel / MlpNet
    trace: list | None = None

    def mean(self, X) -> np.ndarray:
        if self.method == "original":
            return np.asarray(X, dtype=float)
        if self.method == "kpca":
            return kpca_project(X, self.model)
        if self.method == "vicreg":
            return vicreg_embed(X, self.model)
        return predict(X, self.model).means

    def posterior(self, X) -> RepresentationPosterior:
        if self.method == "gpssl":
            return predict(X, self.model)
        Z = self.mean(X)
        return RepresentationPosterior(Z, np.zeros_like(Z))


def gpssl_kernel(X, k: int) -> KernelSpec:
    return KernelSpec(lengthscales=lengthscale_heuristic(X, neighbour_count(len(X), k)))


def fit_embedding(method: str, params: dict, X, config: ExperimentConfig) -> Embedding:
    J, seed = config.representation_dim, config.seed
    if method == "original":
        return Embedding(method, params)
    if method == "kpca":
        return Embedding(method, params, kpca_fit(X, gpssl_kernel(X, params["k"]), J))
    if method == "vicreg":
        g = config.vicreg
        w = LossWeights(c_invariance=params["c"], c_variance=params["c"], c_covariance=g.c_covariance)
        tc = VicregTrainConfig(iterations=g.iterations, learning_rate=params["lr"], seed=seed)
        net, _ = vicreg_train(X, AugmentConfig(params["noise"], np.asarray(X).std(0)), w, tc, J)
        return Embedding(method, params, net)
    if method == "gpssl":
        g = config.gpssl
        w = LossWeights(c_variance=g.c_variance, c_covariance=g.c_covariance)
        model = init_model(X, gpssl_kernel(X, params["k"]), J, w, g.num_inducing, seed)
        tc = TrainConfig(iterations=g.iterations, learning_rate=params["lr"], mc_samples=g.mc_samples,
                         seed=seed, scale_loss_by_n=g.scale_loss_by_n)
        model, trace = train(X, model, tc)
        return Embedding(method, params, model, trace)
    raise ConfigError(f"unknown method {method!r}")


def grid_points(method: str, config: ExperimentConfig) -> list[dict]:
    if method == "original":
        return [{}]
    if method == "kpca":
        return [{"k": k} for k in config.kpca.k_grid]
    if method == "vicreg":
        v = config.vicreg
        return [{"c": c, "lr": lr, "noise": r} for c, lr, r in itertools.product(v.c_grid, v.lr_grid, v.noise_grid)]
    if method == "gpssl":
        g = config.gpssl
        return [{"k": k, "lr": lr} for k, lr in itertools.product(g.k_grid, g.lr_grid)]
    raise ConfigError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# grid search


def _classify(Z_fit, y_fit, Z_test, config: ExperimentConfig, num_classes: int, seed: int) -> np.ndarray:
    clf = fit_classifier(config.classifier, Z_fit, y_fit, num_classes, seed,
                         prior_precision=config.prior_precision, hidden=config.mlp_hidden)
    if config.classifier == "blr":
        return blr_predict(Z_test, clf, config.weight_samples, seed)
    return clf.predict_proba(Z_test)


def validation_split(y, seed: int):
    """80/20 stratified split of the validation rows (indices)."""
    y = np.asarray(y)
    tags = split(Dataset(np.zeros((len(y), 1)), y), (0.8, 0.2), seed).split
    return np.flatnonzero(tags == "train"), np.flatnonzero(tags == "validation")


def score_point(method: str, params: dict, data: PreparedData, config: ExperimentConfig) -> tuple[float, str]:
    """Validation log-likelihood of one grid point using mean embeddings; -inf on numerical failure."""
    try:
        emb = fit_embedding(method, params, data.X_train, config)
        Z = emb.mean(data.X_val)
        a, b = validation_split(data.y_val, config.seed)
        probs = _classify(Z[a], data.y_val[a], Z[b], config, data.num_classes, config.seed)
        score = metrics.log_likelihood(probs, data.y_val[b])
        return (score, "") if np.isfinite(score) else (-np.inf, "non-finite score")
    except NUMERICAL_ERRORS + (ValueError,) as e:
        logger.warning("grid point %s %s failed: %s", method, params, e)
        return -np.inf, f"{type(e).__name__}: {e}"


def _score_star(args):
    return score_point(*args)


@dataclass
class GridResult:
    method: str
    points: list[dict]
    scores: list[float]
    errors: list[str]

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.scores))  # first maximum wins ties

    @property
    def best(self) -> dict:
        return self.points[self.best_index]

    def write_csv(self, path) -> None:
        keys = sorted({k for p in self.points for k in p})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", *keys, "score", "selected", "error"])
            for i, (p, s, e) in enumerate(zip(self.points, self.scores, self.errors)):
                w.writerow([i, *(repr(p[k]) for k in keys), repr(float(s)), int(i == self.best_index), e])


def run_grid_search(method: str, data: PreparedData, config: ExperimentConfig) -> GridResult:
    points = grid_points(method, config)
    if not points:
        raise ConfigError(f"empty grid for {method}")
    jobs = [(method, p, data, config) for p in points]
    if config.workers > 1 and len(points) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(min(config.workers, len(points)), mp_context=ctx) as pool:
            out = list(pool.map(_score_star, jobs))
    else:
        out = [_score_star(j) for j in jobs]
    scores, errors = [s for s, _ in out], [e for _, e in out]
    if not np.isfinite(scores).any():
        raise NumericalFailure(f"every {method} grid point failed: {errors[0]}")
    return GridResult(method, points, scores, errors)


# --------------------------------------------------------------------------
# experiment


@dataclass
class RunResult:
    run_dir: Path
    metrics: dict  # label -> metric -> value
    selected: dict  # method -> params
    probabilities: dict  # label -> (N_test, C)


def run_dir_for(config: ExperimentConfig, out_root) -> Path:
    return Path(out_root) / f"{config.name}-{config.digest()}-seed{config.seed}"


def _fmt(x) -> str:
    return repr(float(x))


def write_predictions(path, probs, ids=None) -> None:
    probs = np.asarray(probs, dtype=float)
    ids = np.arange(len(probs)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"p_{c}" for c in range(probs.shape[1])), "argmax", "max_prob"])
        for i, row in zip(ids, probs):
            w.writerow([i, *map(_fmt, row), int(np.argmax(row)), _fmt(row.max())])


def read_predictions(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = [i for i, h in enumerate(rows[0]) if h.startswith("p_")]
    return np.array([[float(r[i]) for i in cols] for r in rows[1:]])


def write_embeddings(path, post: RepresentationPosterior, ids=None) -> None:
    n, J = post.means.shape
    ids = np.arange(n) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"mean_{j + 1}" for j in range(J)), *(f"std_{j + 1}" for j in range(J))])
        for i, m, s in zip(ids, post.means, post.stds):
            w.writerow([i, *map(_fmt, m), *map(_fmt, s)])


def write_table(path, results: dict) -> None:
    """Rows are metrics, columns the methods that were run, in results-table order."""
    cols = [c for c in TABLE_COLUMNS if c in results]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", *cols])
        for m in TABLE_METRICS:
            w.writerow([m, *(_fmt(results[c][m]) for c in cols)])


def evaluate(probs, y) -> dict:
    out = metrics.summary(probs, y)
    out["log_likelihood"] = metrics.log_likelihood(probs, y)
    return out


def run_experiment(config: ExperimentConfig, out_root="runs") -> RunResult:
    config.validate()
    run_dir = run_dir_for(config, out_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config.to_json())
    data = prepare(config)
    (run_dir / "dataset_manifest.json").write_text(json.dumps(data.manifest, indent=2, sort_keys=True))

    results, selected, probabilities = {}, {}, {}
    seed, C = config.seed, data.num_classes
    for method in config.methods:
        grid = run_grid_search(method, data, config)
        grid.write_csv(run_dir / f"grid_{method}.csv")
        selected[method] = grid.best
        logger.info("%s: selected %s (score %.4f)", method, grid.best, grid.scores[grid.best_index])
        emb = fit_embedding(method, grid.best, data.X_train, config)
        if method == "gpssl":
            model = emb.model
            replace(model, feature_mean=data.feature_mean, feature_std=data.feature_std).save(
                run_dir / "gpssl_model.json")
            write_trace(emb.trace, run_dir / "gpssl_trace.csv")
            write_embeddings(run_dir / "embeddings_gpssl_test.csv", predict(data.X_test, model))
            probabilities["gpssl-mean"] = _classify(emb.mean(data.X_fit), data.y_fit, emb.mean(data.X_test),
                                                    config, C, seed)
            probabilities["gpssl-full"] = gpssl_full_pipeline(
                model, data.X_fit, data.y_fit, data.X_test, config.num_embedding_samples, config.classifier,
                C, config.weight_samples, seed, **_clf_kw(config))
        else:
            probabilities[method] = _classify(emb.mean(data.X_fit), data.y_fit, emb.mean(data.X_test),
                                              config, C, seed)
    for label, probs in probabilities.items():
        results[label] = evaluate(probs, data.y_test)
        write_predictions(run_dir / f"predictions_{label}.csv", probs)
    write_table(run_dir / "table1.csv", results)
    report = {"metrics": results, "selected": selected, "num_test": int(len(data.y_test))}
    (run_dir / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return RunResult(run_dir, results, selected, probabilities)


def _clf_kw(config: ExperimentConfig) -> dict:
    if config.classifier == "blr":
        return {"prior_precision": config.prior_precision}
    return {"hidden": config.mlp_hidden}

"""Command-line driver.

Exit codes: 0 success, 1 configuration/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from gpssl import metrics
from gpssl.config import ConfigError, ExperimentConfig, apply_override, circles_preset, uci_preset
from gpssl.data import Dataset, gen_balanced_circles, gen_quadrant_circles, load_csv, split, write_csv
from gpssl.downstream import ConvergenceError, gpssl_full_pipeline, gpssl_mean_pipeline
from gpssl.experiment import (
    NumericalFailure,
    evaluate,
    gpssl_kernel,
    prepare,
    read_predictions,
    run_dir_for,
    run_experiment,
    run_grid_search,
    write_embeddings,
    write_predictions,
)
from gpssl.inference import TrainConfig, TrainingDivergedError, train, write_trace
from gpssl.kernel import KernelSpec, lengthscale_heuristic, neighbour_count
from gpssl.kpca import prop1_oracle
from gpssl.losses import LossWeights
from gpssl.sparse_gp import FactorizationError, SparseGPModel, init_model, predict, sample_representations

logger = logging.getLogger("gpssl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def _load_split(path, label_column, tag) -> Dataset:
    ds = load_csv(path, label_column)
    if ds.split is None:
        raise ConfigError(f"{path} has no split column; create one with `gpssl generate --from-csv`")
    if tag not in set(ds.split):
        raise ConfigError(f"{path} has no rows tagged {tag!r}")
    return ds


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(a) -> int:
    if a.from_csv:
        ds = split(load_csv(a.from_csv, a.label_column), tuple(a.fractions), a.seed)
    elif a.kind == "quadrant":
        ds = gen_quadrant_circles(noise_std=a.noise_std, seed=a.seed)
    else:
        ds = gen_balanced_circles(a.n_train, a.n_test, a.noise_std, a.seed)
    ds = ds.fit_standardization("train")
    write_csv(ds, a.out, label_column=a.label_column or "label")
    ds.write_manifest(a.manifest or str(Path(a.out).with_suffix(".manifest.json")))
    print(f"wrote {len(ds)} rows to {a.out}")
    return EXIT_OK


def _train_model(a):
    ds = _load_split(a.data, a.label_column, "train")
    ds = ds.fit_standardization("train")
    X = ds.standardized()[ds.split == "train"]
    kernel = KernelSpec(lengthscales=lengthscale_heuristic(X, neighbour_count(len(X), a.k)))
    w = LossWeights(c_variance=a.c_variance, c_covariance=a.c_covariance)
    model = init_model(X, kernel, a.dim, w, a.num_inducing, a.seed)
    cfg = TrainConfig(iterations=a.iterations, learning_rate=a.lr, mc_samples=a.mc_samples, seed=a.seed)
    model, trace = train(X, model, cfg)
    return replace(model, feature_mean=ds.feature_mean, feature_std=ds.feature_std), trace


def cmd_train(a) -> int:
    model, trace = _train_model(a)
    model.save(a.out)
    if a.trace:
        write_trace(trace, a.trace)
    print(f"final elbo {trace[-1].elbo:.6g}, kl {trace[-1].kl:.6g}; model written to {a.out}")
    return EXIT_OK


def cmd_trace(a) -> int:
    _, trace = _train_model(a)
    write_trace(trace, a.out)
    print(f"wrote {len(trace)} trace rows to {a.out}")
    return EXIT_OK


def cmd_embed(a) -> int:
    model = SparseGPModel.load(a.model)
    ds = load_csv(a.data, a.label_column)
    if ds.features.shape[1] != model.inducing_inputs.shape[1]:
        raise ConfigError(f"{a.data} has {ds.features.shape[1]} feature columns, model expects "
                          f"{model.inducing_inputs.shape[1]}; is --label-column set?")
    mask = np.ones(len(ds), bool) if a.split is None or ds.split is None else ds.split == a.split
    Xs = model.standardize(ds.features[mask])
    write_embeddings(a.out, predict(Xs, model), np.flatnonzero(mask))
    if a.samples:
        Z = sample_representations(Xs, model, a.samples, a.seed)
        np.save(a.samples_out or str(Path(a.out).with_suffix(".samples.npy")), Z)
    print(f"wrote {int(mask.sum())} embeddings to {a.out}")
    return EXIT_OK


def cmd_classify(a) -> int:
    model = SparseGPModel.load(a.model)
    ds = _load_split(a.data, a.label_column, a.fit_split)
    if ds.labels is None:
        raise ConfigError("classify needs --label-column")
    fit, test = ds.split == a.fit_split, ds.split == a.test_split
    kw = dict(classifier=a.classifier, num_classes=ds.num_classes, weight_samples=a.weight_samples, seed=a.seed)
    if a.mode == "mean":
        probs = gpssl_mean_pipeline(model, ds.features[fit], ds.labels[fit], ds.features[test], **kw)
    else:
        probs = gpssl_full_pipeline(model, ds.features[fit], ds.labels[fit], ds.features[test],
                                    num_embedding_samples=a.samples, **kw)
    write_predictions(a.out, probs, np.flatnonzero(test))
    print(f"wrote predictions for {int(test.sum())} rows to {a.out}")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    probs = read_predictions(a.predictions)
    ds = load_csv(a.data, a.label_column)
    if ds.labels is None:
        raise ConfigError("evaluate needs --label-column")
    y = ds.labels if a.split is None or ds.split is None else ds.labels[ds.split == a.split]
    if len(y) != len(probs):
        raise ConfigError(f"{len(probs)} predictions but {len(y)} labelled rows")
    report = evaluate(probs, y)
    if a.true_probs:
        report["pmse"] = metrics.pmse(probs, read_predictions(a.true_probs))
    text = json.dumps(report, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text)
    print(text)
    return EXIT_OK


def _config_from_args(a) -> ExperimentConfig:
    if a.config:
        cfg = ExperimentConfig.load(a.config, a.set)
    elif a.preset == "circles":
        cfg = circles_preset(a.seed or 0)
    elif a.preset == "uci":
        if not a.data:
            raise ConfigError("--preset uci needs --data")
        cfg = uci_preset(a.data, a.label_column or "label", seed=a.seed or 0)
    else:
        raise ConfigError("give --config or --preset")
    d = cfg.to_dict()
    if a.config is None:
        for item in a.set or []:
            apply_override(d, item)
    if a.seed is not None:
        d["seed"] = a.seed
    if a.workers is not None:
        d["workers"] = a.workers
    if getattr(a, "methods", None):
        d["methods"] = a.methods
    return ExperimentConfig.from_dict(d)


def cmd_grid(a) -> int:
    cfg = _config_from_args(a)
    run_dir = run_dir_for(cfg, a.out_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    data = prepare(cfg)
    summary = {}
    for method in cfg.methods:
        g = run_grid_search(method, data, cfg)
        g.write_csv(run_dir / f"grid_{method}.csv")
        summary[method] = {"selected": g.best, "score": g.scores[g.best_index]}
    _dump(summary, run_dir / "grid_selected.json")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_run(a) -> int:
    cfg = _config_from_args(a)
    res = run_experiment(cfg, a.out_root)
    print((res.run_dir / "table1.csv").read_text(), end="")
    print(f"outputs in {res.run_dir}")
    return EXIT_OK


def cmd_prop1(a) -> int:
    if a.grid_num < 1:
        raise ConfigError("--grid-num must be >= 1")
    ds = gen_balanced_circles(a.n, 0, seed=a.seed)
    X = ds.fit_standardization(None).standardized()
    kernel = gpssl_kernel(X, a.k)
    grid = np.geomspace(a.grid_min, a.grid_max, a.grid_num)
    rep = prop1_oracle(X, kernel, grid)
    rep.write_csv(a.out)
    print(json.dumps({
        "predicted_critical": rep.predicted_critical,
        "observed_bracket": rep.observed_bracket,
        "brackets_prediction": rep.brackets_prediction(),
        "max_abs_cosine": rep.max_cosine(),
    }))
    return EXIT_OK


# --------------------------------------------------------------------------


def _add_train_args(p):
    p.add_argument("--data", required=True, help="CSV with a split column (see generate)")
    p.add_argument("--label-column", default=None)
    p.add_argument("--k", type=int, default=20, help="neighbourhood divisor: K = floor(N / k)")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--mc-samples", type=int, default=8)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--num-inducing", type=int, default=None)
    p.add_argument("--c-variance", type=float, default=50.0)
    p.add_argument("--c-covariance", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)


def _add_experiment_args(p):
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--preset", choices=("uci", "circles"))
    p.add_argument("--data", help="CSV for --preset uci")
    p.add_argument("--label-column", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    p.add_argument("--methods", nargs="+", choices=("original", "kpca", "vicreg", "gpssl"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="parallel grid points")
    p.add_argument("--out-root", default="runs")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gpssl", description="Gaussian-process self-supervised learning")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="synthetic circles, or split a CSV 40/20/40")
    p.add_argument("--kind", choices=("quadrant", "balanced"), default="quadrant")
    p.add_argument("--from-csv", help="split an existing labelled CSV instead of generating")
    p.add_argument("--label-column", default=None)
    p.add_argument("--fractions", type=float, nargs="+", default=[0.4, 0.2, 0.4])
    p.add_argument("--noise-std", type=float, default=0.2)
    p.add_argument("--n-train", type=int, default=50)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="manifest JSON path (default: <out>.manifest.json)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the sparse GP on the train split")
    _add_train_args(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--trace", help="also write the ELBO trace CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("trace", help="train and write only the ELBO trace")
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("embed", help="posterior means/stds (and optional joint samples)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default=None)
    p.add_argument("--split", default=None, help="only rows with this split tag")
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--samples-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("classify", help="GPSSL-mean / GPSSL-full predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--mode", choices=("mean", "full"), default="full")
    p.add_argument("--classifier", choices=("blr", "mlp"), default="blr")
    p.add_argument("--fit-split", default="validation")
    p.add_argument("--test-split", default="test")
    p.add_argument("--samples", type=int, default=100, help="embedding samples for --mode full")
    p.add_argument("--weight-samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="accuracy, ROC AUC, AURC, log-likelihood")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--true-probs", help="predictions-format CSV of true probabilities (adds pmse)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="hyperparameter search on validation log-likelihood")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("run", help="grid search + final fits + metrics for every method")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("prop1-check", help="posterior mode vs first kPCA component")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--grid-min", type=float, default=0.1)
    p.add_argument("--grid-max", type=float, default=100.0)
    p.add_argument("--grid-num", type=int, default=61)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prop1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FactorizationError, TrainingDivergedError, ConvergenceError, NumericalFailure,
            FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"gpssl: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError, KeyError) as e:
        print(f"gpssl: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

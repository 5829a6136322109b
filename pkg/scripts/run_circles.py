"""Circles experiment: per-quadrant GPSSL uncertainty and the risk-coverage comparison.

Writes plot-ready CSVs (std over a grid, risk-coverage curves) to --out.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from gpssl.data import gen_balanced_circles, gen_quadrant_circles
from gpssl.downstream import gpssl_full_pipeline, gpssl_mean_pipeline
from gpssl.inference import TrainConfig, train
from gpssl.kernel import KernelSpec, lengthscale_heuristic, neighbour_count
from gpssl.losses import LossWeights
from gpssl.metrics import aurc, risk_coverage
from gpssl.sparse_gp import init_model, predict, with_params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, default=50)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--out", default="runs/circles_figures")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    ds = gen_quadrant_circles(seed=a.seed).fit_standardization("train")
    X = ds.subset("train").standardized()
    kernel = KernelSpec(lengthscales=lengthscale_heuristic(X, neighbour_count(len(X), a.k)))
    model = init_model(X, kernel, 5, LossWeights(), seed=a.seed)
    model, _ = train(X, model, TrainConfig(learning_rate=a.lr, seed=a.seed))
    model = with_params(model, feature_mean=ds.feature_mean, feature_std=ds.feature_std)

    g = np.linspace(-1.5, 1.5, 61)
    grid = np.array([(x, y) for y in g for x in g])
    std = predict(model.standardize(grid), model).stds.mean(1)
    with open(out / "std_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "mean_std"])
        w.writerows([(repr(float(x)), repr(float(y)), repr(float(s))) for (x, y), s in zip(grid, std)])

    down = gen_balanced_circles(seed=1000 + a.seed)
    tr, te = down.subset("train"), down.subset("test")
    curves = {
        "gpssl-mean": gpssl_mean_pipeline(model, tr.features, tr.labels, te.features, num_classes=2, seed=a.seed),
        "gpssl-full": gpssl_full_pipeline(model, tr.features, tr.labels, te.features, num_classes=2, seed=a.seed),
    }
    with open(out / "risk_coverage.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "coverage", "risk"])
        for name, p in curves.items():
            pts, _ = risk_coverage(p, te.labels)
            w.writerows([(name, repr(float(q.coverage)), repr(float(q.risk))) for q in pts])
            print(f"{name}: AURC {aurc(p, te.labels):.4f}")
    print(f"wrote {out}/std_grid.csv and {out}/risk_coverage.csv")


if __name__ == "__main__":
    main()

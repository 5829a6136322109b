"""Full four-method results table on a labelled UCI-style CSV.

    python3 scripts/run_uci.py data/breast_cancer.csv --seed 0
    python3 scripts/run_uci.py data/ecoli.csv --label-column class --expect-accuracy 0.881 --tolerance 0.07
"""

import argparse
import logging
from pathlib import Path

from gpssl.config import uci_preset
from gpssl.experiment import run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--label-column", default="label")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--methods", nargs="+", default=["original", "kpca", "vicreg", "gpssl"])
    ap.add_argument("--out-root", default="runs")
    ap.add_argument("--expect-accuracy", type=float, help="reference GPSSL-full accuracy to report against")
    ap.add_argument("--tolerance", type=float, default=0.05)
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = uci_preset(a.csv, a.label_column, name=Path(a.csv).stem, seed=a.seed)
    cfg.methods, cfg.workers = a.methods, a.workers
    res = run_experiment(cfg.validate(), a.out_root)
    print((res.run_dir / "table1.csv").read_text(), end="")
    print("selected:", res.selected)
    if a.expect_accuracy is not None and "gpssl-full" in res.metrics:
        acc = res.metrics["gpssl-full"]["accuracy"]
        ok = abs(acc - a.expect_accuracy) <= a.tolerance
        print(f"gpssl-full accuracy {acc:.3f} vs {a.expect_accuracy} +- {a.tolerance}: {'within' if ok else 'outside'}")


if __name__ == "__main__":
    main()

"""Write the Wisconsin breast-cancer data bundled with scikit-learn to CSV."""

import argparse

import pandas as pd
from sklearn.datasets import load_breast_cancer


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/breast_cancer.csv")
    args = ap.parse_args(argv)
    bunch = load_breast_cancer()
    df = pd.DataFrame(bunch.data, columns=[c.replace(" ", "_") for c in bunch.feature_names])
    df["label"] = bunch.target
    df.to_csv(args.out, index=False, float_format="%.17g")
    print(f"wrote {len(df)} rows to {args.out}")


if __name__ == "__main__":
    main()

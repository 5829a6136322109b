"""Datasets: CSV loading, standardisation, seeded splits and synthetic circles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

SPLITS = ("train", "validation", "test")

# (train, validation) counts per quadrant: top-right, top-left, bottom-left, bottom-right
QUADRANT_COUNTS = {
    "top_right": (300, 30),
    "top_left": (100, 10),
    "bottom_left": (50, 10),
    "bottom_right": (0, 0),
}
QUADRANT_ANGLES = {
    "top_right": (0.0, 0.5 * np.pi),
    "top_left": (0.5 * np.pi, np.pi),
    "bottom_left": (np.pi, 1.5 * np.pi),
    "bottom_right": (1.5 * np.pi, 2.0 * np.pi),
}
RADII = (0.5, 1.0)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    split: np.ndarray | None = None  # array of tags from SPLITS
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    seed: int | None = None
    feature_names: list[str] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if len(self.labels) != len(self.features):
                raise ValueError("labels and features disagree on N")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.features.shape[1])]

    def __len__(self):
        return len(self.features)

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, tag: str) -> "Dataset":
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        mask = self.split == tag
        return replace(
            self,
            features=self.features[mask],
            labels=None if self.labels is None else self.labels[mask],
            split=self.split[mask],
        )

    def fit_standardization(self, tag: str | None = "train") -> "Dataset":
        """Compute mean/std on one split (or everything when tag is None)."""
        X = self.features if tag is None or self.split is None else self.features[self.split == tag]
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return replace(self, feature_mean=X.mean(axis=0), feature_std=std)

    def standardized(self) -> np.ndarray:
        if self.feature_mean is None:
            raise ValueError("call fit_standardization first")
        return (self.features - self.feature_mean) / self.feature_std

    def destandardize(self, Xs) -> np.ndarray:
        return np.asarray(Xs) * self.feature_std + self.feature_mean

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "n": len(self),
            "feature_names": self.feature_names,
            "label_names": self.label_names,
            "split": None if self.split is None else self.split.tolist(),
            "standardized": self.feature_mean is not None,
            "feature_mean": None if self.feature_mean is None else self.feature_mean.tolist(),
            "feature_std": None if self.feature_std is None else self.feature_std.tolist(),
        }

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2))


def load_csv(path, label_column: str | None = None) -> Dataset:
    """Read a headed, comma-separated file of numeric features.

    A ``split`` column, if present, is read as split tags rather than a feature.
    String labels are mapped to 0..C-1 in order of first appearance.
    """
    try:
        df = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ValueError(f"cannot read {path}: {e}") from e
    split = None
    if "split" in df.columns:
        split = df.pop("split").astype(str).to_numpy()
        bad = set(split) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
    labels, label_names = None, []
    if label_column is not None:
        if label_column not in df.columns:
            raise ValueError(f"label column {label_column!r} not in {list(df.columns)}")
        raw = df.pop(label_column)
        if raw.isna().any():
            row = int(np.flatnonzero(raw.isna().to_numpy())[0])
            raise ValueError(f"missing label at row {row}")
        codes, uniques = pd.factorize(raw, sort=False)
        labels, label_names = codes, [str(u) for u in uniques]
    for col in df.columns:
        if not pd.api.types.is_numeric_dtype(df[col]):
            raise ValueError(f"non-numeric feature column {col!r}")
    values = df.to_numpy(dtype=float)
    if np.isnan(values).any():
        r, c = np.argwhere(np.isnan(values))[0]
        raise ValueError(f"missing value at row {r}, column {df.columns[c]!r}")
    return Dataset(values, labels, split, feature_names=list(df.columns), label_names=label_names)


def write_csv(ds: Dataset, path, label_column: str = "label", include_split: bool = True) -> None:
    df = pd.DataFrame(ds.features, columns=ds.feature_names)
    if ds.labels is not None:
        df[label_column] = ds.labels
    if include_split and ds.split is not None:
        df["split"] = ds.split
    df.to_csv(path, index=False, float_format="%.17g")


def _allocate(n: int, fractions) -> np.ndarray:
    """Integer sizes summing to n; remainders go to the largest fractional parts."""
    raw = np.asarray(fractions, dtype=float) * n
    sizes = np.floor(raw).astype(int)
    rem = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:rem]] += 1
    return sizes


def split(ds: Dataset, fractions=(0.4, 0.2, 0.4), seed: int = 0) -> Dataset:
    """Seeded shuffle, then contiguous train/validation/test blocks.

    With labels the allocation is done per class.
    """
    fractions = tuple(fractions)
    if len(fractions) > len(SPLITS) or not np.isclose(sum(fractions), 1.0):
        raise ValueError(f"fractions must sum to 1 over at most 3 splits, got {fractions}")
    tags = np.array(SPLITS[: len(fractions)])
    rng = np.random.default_rng(seed)
    out = np.empty(len(ds), dtype=object)
    groups = [np.arange(len(ds))] if ds.labels is None else [
        np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)
    ]
    for c, idx in enumerate(groups):
        if ds.labels is not None and 0 < len(idx) < len(fractions):
            raise ValueError(f"class {c} has {len(idx)} rows, fewer than {len(fractions)} splits")
        idx = idx[rng.permutation(len(idx))]
        sizes = _allocate(len(idx), fractions)
        out[idx] = np.repeat(tags, sizes)
    return replace(ds, split=out.astype(str), seed=seed)


def _circle_points(rng, n, lo, hi, noise_std):
    label = rng.integers(0, 2, size=n)
    radius = np.asarray(RADII)[label]
    theta = rng.uniform(lo, hi, size=n)
    xy = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    return xy + rng.normal(0.0, noise_std, size=xy.shape), label


def gen_quadrant_circles(counts: dict | None = None, noise_std: float = 0.2, seed: int = 0) -> Dataset:
    """Concentric circles (radius 0.5 -> label 0, 1.0 -> label 1) weighted by quadrant."""
    counts = QUADRANT_COUNTS if counts is None else counts
    rng = np.random.default_rng(seed)
    feats, labels, tags = [], [], []
    for quad, (n_train, n_val) in counts.items():
        lo, hi = QUADRANT_ANGLES[quad]
        for tag, n in (("train", n_train), ("validation", n_val)):
            xy, lab = _circle_points(rng, n, lo, hi, noise_std)
            feats.append(xy)
            labels.append(lab)
            tags += [tag] * n
    return Dataset(np.vstack(feats), np.concatenate(labels), np.array(tags), seed=seed)


def gen_balanced_circles(n_train: int = 50, n_test: int = 500, noise_std: float = 0.2, seed: int = 0) -> Dataset:
    """Circles with angles uniform over the full turn; tags train/test."""
    rng = np.random.default_rng(seed)
    xy, lab = _circle_points(rng, n_train + n_test, 0.0, 2.0 * np.pi, noise_std)
    tags = np.array(["train"] * n_train + ["test"] * n_test)
    return Dataset(xy, lab, tags, seed=seed)

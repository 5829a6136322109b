"""Experiment configuration: nested dataclasses, JSON round-trip, dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1
METHODS = ("original", "kpca", "vicreg", "gpssl")
DATASET_KINDS = ("csv", "quadrant_circles", "balanced_circles")
CLASSIFIERS = ("blr", "mlp")

# VICReg noise ratios r = sigma_aug / sigma_feature; one grid per experiment family
NOISE_GRID_CIRCLES = [0.1, 0.2, 0.3]
NOISE_GRID_UCI = [0.1, 0.25, 0.5]
VICREG_LR_GRID = [1e-5, 5e-5, 1e-4, 5e-4]


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "csv"
    path: str | None = None
    label_column: str | None = "label"
    seed: int = 0
    fractions: list[float] = field(default_factory=lambda: [0.4, 0.2, 0.4])
    noise_std: float = 0.2
    n_train: int = 50
    n_test: int = 500

    def validate(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("dataset.path is required for kind 'csv'")


@dataclass
class GpsslConfig:
    k_grid: list[int] = field(default_factory=lambda: [5, 10, 20])
    lr_grid: list[float] = field(default_factory=lambda: [0.01, 0.05, 0.001])
    c_variance: float = 50.0
    c_covariance: float = 10.0
    iterations: int = 300
    mc_samples: int = 8
    num_inducing: int | None = None
    scale_loss_by_n: bool = True


@dataclass
class KpcaConfig:
    k_grid: list[int] = field(default_factory=lambda: [5, 10, 20])


@dataclass
class VicregConfig:
    c_grid: list[float] = field(default_factory=lambda: [25.0, 50.0])  # c_V = c_I
    lr_grid: list[float] = field(default_factory=lambda: list(VICREG_LR_GRID))
    noise_grid: list[float] = field(default_factory=lambda: list(NOISE_GRID_UCI))
    c_covariance: float = 1.0
    iterations: int = 2000


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    schema_version: int = SCHEMA_VERSION
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    # circles protocol: classifier trained/tested on a second, labelled dataset
    downstream: DatasetConfig | None = None
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    representation_dim: int = 5
    gpssl: GpsslConfig = field(default_factory=GpsslConfig)
    kpca: KpcaConfig = field(default_factory=KpcaConfig)
    vicreg: VicregConfig = field(default_factory=VicregConfig)
    classifier: str = "blr"
    prior_precision: float = 1.0
    mlp_hidden: int = 32
    num_embedding_samples: int = 100
    weight_samples: int = 200
    seed: int = 0
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        self.dataset.validate()
        if self.downstream is not None:
            self.downstream.validate()
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}")
        if self.representation_dim < 1 or self.num_embedding_samples < 1 or self.workers < 1:
            raise ConfigError("representation_dim, num_embedding_samples and workers must be >= 1")
        for label, grid in (("gpssl.k_grid", self.gpssl.k_grid), ("gpssl.lr_grid", self.gpssl.lr_grid),
                            ("kpca.k_grid", self.kpca.k_grid), ("vicreg.c_grid", self.vicreg.c_grid),
                            ("vicreg.lr_grid", self.vicreg.lr_grid), ("vicreg.noise_grid", self.vicreg.noise_grid)):
            if not grid:
                raise ConfigError(f"{label} must not be empty")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        """Short hash of the configuration, ignoring the worker count."""
        d = self.to_dict()
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "").validate()

    @classmethod
    def load(cls, path, overrides: list[str] | None = None) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        for item in overrides or []:
            apply_override(d, item)
        return cls.from_dict(d)


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(prefix + k for k in unknown)}")
    kw = {}
    for name, value in d.items():
        sub = _nested_type(cls, name)
        kw[name] = _build(sub, value, f"{prefix}{name}.") if sub and value is not None else value
    try:
        return cls(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _nested_type(cls, name):
    return {
        (ExperimentConfig, "dataset"): DatasetConfig,
        (ExperimentConfig, "downstream"): DatasetConfig,
        (ExperimentConfig, "gpssl"): GpsslConfig,
        (ExperimentConfig, "kpca"): KpcaConfig,
        (ExperimentConfig, "vicreg"): VicregConfig,
    }.get((cls, name))


def apply_override(d: dict, item: str) -> None:
    """Apply ``a.b.c=value`` in place; value is parsed as JSON, falling back to a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-object {key!r}")
    node[parts[-1]] = value


def uci_preset(path: str, label_column: str = "label", name: str = "uci", seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(name=name, dataset=DatasetConfig(kind="csv", path=path, label_column=label_column,
                                                             seed=seed), seed=seed).validate()


def circles_preset(seed: int = 0) -> ExperimentConfig:
    """Quadrant circles for representation learning, balanced circles for the classifier."""
    return ExperimentConfig(
        name="circles",
        dataset=DatasetConfig(kind="quadrant_circles", seed=seed, label_column=None),
        downstream=DatasetConfig(kind="balanced_circles", seed=1000 + seed, label_column=None),
        gpssl=GpsslConfig(k_grid=[20, 50, 100], lr_grid=[0.01, 0.05, 0.001]),
        kpca=KpcaConfig(k_grid=[20, 50, 100]),
        vicreg=VicregConfig(c_grid=[25.0, 50.0, 100.0], noise_grid=list(NOISE_GRID_CIRCLES)),
        seed=seed,
    ).validate()

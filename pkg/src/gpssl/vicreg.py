"""Tabular VICReg baseline: MLP encoder + expander, Gaussian-noise positive pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from gpssl.losses import LossWeights, covariance_loss, invariance_loss, variance_loss

SCHEMA = "gpssl.vicreg/v1"
ENCODER_HIDDEN = 10
EXPANDER_HIDDEN = 5


@dataclass
class AugmentConfig:
    noise_ratio: float = 0.1
    stds: np.ndarray | None = None  # per-dimension training-data stds

    def __post_init__(self):
        if not self.noise_ratio > 0:
            raise ValueError("noise_ratio must be positive")


@dataclass
class VicregTrainConfig:
    iterations: int = 2000
    learning_rate: float = 5e-4
    warmup_iterations: int = 20
    warmup_learning_rate: float = 1e-3
    seed: int = 0
    bn_momentum: float = 0.1  # torch convention: weight on the new batch, i.e. 0.9 on the running value


def _block(d_in, d_hidden, d_out, momentum):
    return nn.Sequential(
        nn.Linear(d_in, d_hidden),
        nn.BatchNorm1d(d_hidden, momentum=momentum),
        nn.ReLU(),
        nn.Linear(d_hidden, d_out),
    )


class MlpNet(nn.Module):
    def __init__(self, input_dim: int, representation_dim: int = 5, bn_momentum: float = 0.1):
        super().__init__()
        self.input_dim, self.representation_dim = input_dim, representation_dim
        self.encoder = _block(input_dim, ENCODER_HIDDEN, representation_dim, bn_momentum)
        self.expander = _block(representation_dim, EXPANDER_HIDDEN, representation_dim, bn_momentum)
        self.double()

    def forward(self, x):
        return self.expander(self.encoder(x))

    def save(self, path) -> None:
        state = {k: v.tolist() for k, v in self.state_dict().items()}
        Path(path).write_text(json.dumps({
            "schema": SCHEMA,
            "input_dim": self.input_dim,
            "representation_dim": self.representation_dim,
            "state": state,
        }))

    @classmethod
    def load(cls, path) -> "MlpNet":
        d = json.loads(Path(path).read_text())
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported schema {d.get('schema')!r}")
        net = cls(d["input_dim"], d["representation_dim"])
        net.load_state_dict({k: torch.as_tensor(v, dtype=torch.float64) if isinstance(v, list)
                             else torch.tensor(v) for k, v in d["state"].items()})
        return net.eval()


def augment(X, cfg: AugmentConfig, gen: torch.Generator) -> torch.Tensor:
    """X + N(0, (r * std_d)^2) noise per dimension."""
    X = torch.as_tensor(X, dtype=torch.float64)
    stds = torch.as_tensor(cfg.stds if cfg.stds is not None else X.std(0).numpy(), dtype=torch.float64)
    noise = torch.randn(X.shape, generator=gen, dtype=torch.float64)
    return X + noise * (cfg.noise_ratio * stds)


@dataclass
class VicregHistory:
    loss: list = field(default_factory=list)
    invariance: list = field(default_factory=list)
    variance: list = field(default_factory=list)
    covariance: list = field(default_factory=list)


def vicreg_train(X, aug: AugmentConfig, weights: LossWeights | None = None,
                 config: VicregTrainConfig | None = None, representation_dim: int = 5):
    """Full-batch Adam on the VICReg loss of two noisy views. Returns (net, history)."""
    weights = weights or LossWeights(c_invariance=25.0, c_variance=25.0, c_covariance=1.0)
    config = config or VicregTrainConfig()
    X = torch.as_tensor(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("VICReg needs at least 2 observations")
    if aug.stds is None:
        aug = AugmentConfig(aug.noise_ratio, X.std(0).numpy())
    state = torch.random.get_rng_state()
    torch.manual_seed(config.seed)
    net = MlpNet(X.shape[1], representation_dim, config.bn_momentum)
    torch.random.set_rng_state(state)
    gen = torch.Generator().manual_seed(config.seed + 1)
    opt = torch.optim.Adam(net.parameters(), lr=config.warmup_learning_rate)
    hist = VicregHistory()
    net.train()
    for it in range(config.iterations):
        if it == config.warmup_iterations:
            for g in opt.param_groups:
                g["lr"] = config.learning_rate
        xa, xb = augment(X, aug, gen), augment(X, aug, gen)
        za, zb = net(xa), net(xb)
        inv = invariance_loss(za, zb)
        var = variance_loss(za, weights.gamma, weights.epsilon) + variance_loss(zb, weights.gamma, weights.epsilon)
        cov = covariance_loss(za) + covariance_loss(zb)
        loss = weights.c_invariance * inv + weights.c_variance * var + weights.c_covariance * cov
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite VICReg loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        hist.loss.append(loss.item())
        hist.invariance.append(inv.item())
        hist.variance.append(var.item())
        hist.covariance.append(cov.item())
    return net.eval(), hist


def vicreg_embed(Xstar, net: MlpNet, expander: bool = False) -> np.ndarray:
    """Deterministic representation (encoder output; expander output when asked)."""
    was_training = net.training
    net.eval()
    with torch.no_grad():
        X = torch.as_tensor(np.asarray(Xstar, dtype=float))
        Z = net.encoder(X)
        if expander:
            Z = net.expander(Z)
    net.train(was_training)
    return Z.numpy()

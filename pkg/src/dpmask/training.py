"""Plain SGD and DP-SGD training.

DP-SGD clips every per-example gradient to global L2 norm C, sums the
clipped gradients, adds Gaussian noise with per-element variance
sigma^2 C^2, and divides by the lot size before the parameter update.
The lot is the mini-batch; there is no Poisson subsampling. No privacy
accounting is performed — sigma/C (and an optional delta) are carried as
metadata only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import data, nn
from .tensorops import DTYPE, SeededRng

SIGMA_GRID = (0.0, 1.3, 2.0, 3.0)
CLIP_GRID = (1.0, 3.0, 5.0, 10.0)

_NOISE_STREAM = 3


@dataclass(frozen=True)
class PrivacyParams:
    sigma: float  # noise multiplier
    clip_norm: float  # per-example gradient clip bound C
    delta: Optional[float] = None  # report-only; never used in computation

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 0.05
    batch_size: int = 250
    seed: int = 0
    optimizer: str = "sgd"  # sgd | dpsgd
    privacy: Optional[PrivacyParams] = None
    per_example_noise: bool = False  # sensitivity-study variant

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be > 0 and batch_size >= 1")
        if self.optimizer not in ("sgd", "dpsgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "dpsgd" and self.privacy is None:
            raise ValueError("dpsgd requires privacy params")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)


def global_l2_norm(grads: nn.GradientSet) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads))


def clip_gradient(grads: nn.GradientSet, clip_norm: float) -> nn.GradientSet:
    """Scale the whole GradientSet by min(1, C / ||g||_2); norms <= C pass through."""
    if clip_norm <= 0:
        raise ValueError(f"clip_norm must be > 0, got {clip_norm}")
    norm = global_l2_norm(grads)
    if norm <= clip_norm:
        return [g.copy() for g in grads]
    scale = clip_norm / norm
    return [g * scale for g in grads]


def sgd_step(model: nn.Model, grads: nn.GradientSet, lr: float) -> nn.Model:
    """In-place theta <- theta - lr * g."""
    if len(grads) != len(model.params):
        raise ValueError("gradient/parameter count mismatch")
    for p, g in zip(model.params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        p -= lr * g
    return model


def dp_noise(rng: SeededRng, shapes, sigma: float, clip_norm: float, scale: float = 1.0) -> nn.GradientSet:
    """One Gaussian draw per parameter element, stddev = scale * sigma * C."""
    stddev = scale * sigma * clip_norm
    return [rng.gaussian(shape, 0.0, stddev) for shape in shapes]


def dpsgd_step(model: nn.Model, per_ex_grads: Iterable, pp: PrivacyParams, lr: float,
               rng: SeededRng, per_example_noise: bool = False) -> nn.Model:
    """Clip each per-example gradient, sum, noise, average over the lot, update.

    per_ex_grads may be any iterable of GradientSets; clipped gradients are
    accumulated incrementally so the whole lot is never materialized. With
    per_example_noise, an independent noise draw is added per example
    instead of once per lot.
    """
    shapes = [p.shape for p in model.params]
    total = [np.zeros(s, dtype=DTYPE) for s in shapes]
    lot = 0
    for g in per_ex_grads:
        lot += 1
        for t, c in zip(total, clip_gradient(g, pp.clip_norm)):
            t += c
        if per_example_noise and pp.sigma > 0:
            for t, z in zip(total, dp_noise(rng, shapes, pp.sigma, pp.clip_norm)):
                t += z
    if lot == 0:
        raise ValueError("dpsgd_step needs a nonempty lot")
    if not per_example_noise and pp.sigma > 0:
        for t, z in zip(total, dp_noise(rng, shapes, pp.sigma, pp.clip_norm)):
            t += z
    return sgd_step(model, [t / lot for t in total], lr)


def _dp_step_fused(model: nn.Model, xb: np.ndarray, yb: np.ndarray, pp: PrivacyParams,
                   lr: float, rng: SeededRng, per_example_noise: bool) -> float:
    """DP-SGD step without materializing per-example gradients.

    Per-example norms come from a squared-norm backward pass; the clipped
    sum is one weighted backward pass (gradients are linear in the logit
    error, so scaling each example's row by its clip factor scales its whole
    gradient). With per_example_noise the lot's B independent draws collapse
    into one draw of stddev sigma*C*sqrt(B) — distributionally identical.
    """
    logits, caches = nn.forward_cached(model, xb)
    loss = nn.cross_entropy_loss(logits, yb)
    dlog = nn.cross_entropy_dlogits(logits, yb, mean=False)
    norms = np.sqrt(nn.per_example_sq_norms(model, caches, dlog))
    factors = np.minimum(1.0, pp.clip_norm / np.maximum(norms, 1e-300))
    total = nn.summed_gradients(model, caches, dlog * factors[:, None])
    lot = xb.shape[0]
    if pp.sigma > 0:
        scale = math.sqrt(lot) if per_example_noise else 1.0
        for t, z in zip(total, dp_noise(rng, [p.shape for p in model.params],
                                        pp.sigma, pp.clip_norm, scale)):
            t += z
    sgd_step(model, [t / lot for t in total], lr)
    return loss


def model_id(metadata: dict) -> str:
    """Canonical id string for reports, derived from training provenance."""
    arch = metadata.get("arch", "?")
    epochs = metadata.get("epochs", "?")
    seed = metadata.get("seed", "?")
    if metadata.get("optimizer") == "dpsgd":
        tag = f"dp_s{metadata['sigma']:g}_c{metadata['clip_norm']:g}"
    else:
        tag = "sgd"
    return f"{arch}_{tag}_e{epochs}_r{seed}"


def train(arch: nn.Architecture, ds_train: data.Dataset, ds_test: data.Dataset,
          cfg: TrainConfig) -> tuple:
    """Run the configured optimizer; returns (model, per-epoch history)."""
    model = nn.build_model(arch, cfg.seed)
    model.metadata.update(
        arch=arch.name,
        optimizer=cfg.optimizer,
        sigma=cfg.privacy.sigma if cfg.privacy else 0.0,
        clip_norm=cfg.privacy.clip_norm if cfg.privacy else 0.0,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        train_examples=len(ds_train),
    )
    history = TrainHistory()
    noise_rng = SeededRng(cfg.seed).fork(_NOISE_STREAM)
    for epoch in range(cfg.epochs):
        losses = []
        for xb, yb in data.batches(ds_train, cfg.batch_size, cfg.seed, epoch=epoch):
            if cfg.optimizer == "dpsgd":
                losses.append(_dp_step_fused(model, xb, yb, cfg.privacy, cfg.learning_rate,
                                             noise_rng, cfg.per_example_noise))
            else:
                logits, caches = nn.forward_cached(model, xb)
                losses.append(nn.cross_entropy_loss(logits, yb))
                grads = nn.summed_gradients(model, caches,
                                            nn.cross_entropy_dlogits(logits, yb, mean=True))
                sgd_step(model, grads, cfg.learning_rate)
        history.train_loss.append(float(np.mean(losses)))
        history.test_accuracy.append(nn.accuracy(model, ds_test))
    return model, history

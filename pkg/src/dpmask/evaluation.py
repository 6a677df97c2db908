"""Success rates, epsilon/step sweeps, minimal-perturbation measurement,
plateau detection, and cross-model transferability matrices.

Every sweep reuses one seed set (and one shared PGD random start, scaled by
epsilon) across grid points, so curves are comparable point to point.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import attacks, data, nn, training
from .tensorops import SeededRng

_SWEEP_STREAM = 7

EPS_GRID = tuple(round(0.025 * i, 3) for i in range(21))  # 0.0 .. 0.5
STEPS_GRID = (0, 1, 2, 3, 5, 8, 10, 15, 20, 30, 40, 60, 80, 100)
BA_EPS_GRID = (1.0, 2.0)


@dataclass
class SuccessCurve:
    axis_kind: str  # epsilon | iterations
    points: list  # [(axis value, success rate)], axis strictly increasing
    n_samples: int
    attack_name: str
    model_id: str

    def __post_init__(self):
        axis = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(axis, axis[1:])):
            raise ValueError("curve axis values must be strictly increasing")

    @property
    def rates(self) -> list:
        return [p[1] for p in self.points]

    @property
    def final_rate(self) -> float:
        return self.points[-1][1]


@dataclass
class TransferMatrix:
    surrogate_ids: list
    target_ids: list
    rates: np.ndarray  # rows = surrogates, columns = targets
    attack_name: str
    n_samples: int

    def rate(self, surrogate: str, target: str) -> float:
        return float(self.rates[self.surrogate_ids.index(surrogate), self.target_ids.index(target)])


def model_id_of(model: nn.Model) -> str:
    return training.model_id(model.metadata)


def success_rate(model: nn.Model, adv: attacks.AdversarialBatch) -> float:
    """Misclassification rate of adv.adversarials w.r.t. the true labels on `model`.

    `model` may differ from the generating model (transfer evaluation).
    """
    if len(adv) == 0:
        raise ValueError("empty adversarial batch")
    preds = nn.predict(model, adv.adversarials)
    return float(np.mean(preds != adv.true_labels))


def epsilon_sweep(model: nn.Model, attack_kind: str, eps_grid: Sequence[float],
                  cfg, seeds: data.Dataset, sweep_seed: int = 0) -> SuccessCurve:
    """One attack per epsilon over the same seeds (and one shared random start)."""
    if len(eps_grid) == 0:
        raise ValueError("empty epsilon grid")
    if attack_kind not in ("fgsm", "pgd"):
        raise ValueError(f"epsilon sweeps support fgsm/pgd, not {attack_kind!r}")
    x, y = seeds.images, seeds.labels
    target = attacks.ModelTarget(model)
    shared_noise = SeededRng(sweep_seed).fork(_SWEEP_STREAM).uniform(x.shape, -1.0, 1.0)
    points = []
    for eps in eps_grid:
        if attack_kind == "fgsm":
            adv = attacks.fgsm(target, x, y, attacks.FgsmConfig(epsilon=eps))
        else:
            run_cfg = dataclasses.replace(cfg, epsilon=eps)
            adv = attacks.pgd_linf(target, x, y, run_cfg, init_noise=shared_noise)
        rate = float(np.mean(nn.predict(model, adv) != y))
        points.append((float(eps), rate))
    return SuccessCurve("epsilon", points, len(seeds), attack_kind, model_id_of(model))


def step_sweep(model: nn.Model, steps_grid: Sequence[int], epsilon: float,
               cfg: attacks.PgdConfig, seeds: data.Dataset, sweep_seed: int = 0) -> SuccessCurve:
    """PGD success rate per iteration count at fixed epsilon (one traced run)."""
    if any(b <= a for a, b in zip(steps_grid, list(steps_grid)[1:])):
        raise ValueError("steps grid must be strictly increasing")
    x, y = seeds.images, seeds.labels
    run_cfg = dataclasses.replace(cfg, epsilon=epsilon, iterations=max(int(s) for s in steps_grid) or 1)
    noise = SeededRng(sweep_seed).fork(_SWEEP_STREAM).uniform(x.shape, -1.0, 1.0)
    masks = attacks.pgd_linf_trace(attacks.ModelTarget(model), x, y, run_cfg,
                                   checkpoints=steps_grid, init_noise=noise)
    points = [(float(s), float(np.mean(masks[int(s)]))) for s in steps_grid]
    return SuccessCurve("iterations", points, len(seeds), "pgd", model_id_of(model))


@dataclass
class CwMinEps:
    """Result of the minimal-perturbation measurement (max L2 at full success)."""
    success_rate: float
    value: Optional[float]  # None when the attack fell short of 100%
    model_id: str = ""

    @property
    def reached_full_success(self) -> bool:
        return self.value is not None


def min_eps_full_success(model: nn.Model, cw_cfg: attacks.CwConfig,
                         seeds: data.Dataset) -> CwMinEps:
    """Max per-example L2 of the CW adversarials once every seed is misclassified."""
    batch = attacks.craft(model, seeds.images, seeds.labels, "cw", cw_cfg)
    rate = batch.success_rate()
    if rate < 1.0:
        return CwMinEps(success_rate=rate, value=None, model_id=model_id_of(model))
    return CwMinEps(success_rate=1.0, value=float(np.max(batch.l2_dist)),
                    model_id=model_id_of(model))


def plateau_detect(curve: SuccessCurve, window: int = 5, tol: float = 0.01,
                   ceiling: float = 0.99) -> bool:
    """True when the curve's tail is flat (< tol spread) yet below the ceiling."""
    if window < 2:
        raise ValueError("window must be >= 2")
    rates = curve.rates
    if len(rates) < window:
        raise ValueError(f"curve has {len(rates)} points, plateau window needs {window}")
    tail = rates[-window:]
    # a spread of exactly tol still counts as flat (float slack included)
    return (max(tail) - min(tail)) <= tol + 1e-12 and rates[-1] < ceiling


def transfer_matrix(models: Sequence[nn.Model], attack_kind: str, cfg,
                    seed_pool: data.Dataset, n_seeds: int, seed: int = 0) -> TransferMatrix:
    """Craft on each surrogate (rows), evaluate against every target (columns).

    Seeds are re-selected per surrogate among its own correctly-classified
    points; the same crafted batch is then scored against all targets.
    """
    models = list(models)
    if len(models) < 2:
        raise ValueError("transfer evaluation needs at least two models")
    ids = [model_id_of(m) for m in models]
    rates = np.zeros((len(models), len(models)))
    for i, surrogate in enumerate(models):
        seeds = data.select_attack_seeds(surrogate, seed_pool, n_seeds, seed=seed + i)
        batch = attacks.craft(surrogate, seeds.images, seeds.labels, attack_kind, cfg, seed=seed + i)
        for j, target in enumerate(models):
            rates[i, j] = batch.success_rate() if j == i else success_rate(target, batch)
    return TransferMatrix(ids, list(ids), rates, attack_kind, n_seeds)

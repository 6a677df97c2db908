"""The four attacks: FGSM, PGD-Linf, Carlini-Wagner L2, and the Boundary Attack.

Attacks are batched over the example dimension and deterministic given
(model, input, config, seed). Gradient attacks see a white-box ModelTarget
(logits + input gradients + decisions); the Boundary Attack is handed a
DecisionOracle that exposes predicted labels and nothing else, so it cannot
touch gradients even by accident.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .tensorops import DTYPE, SeededRng, clamp01, sign

_INIT_DRAW_LIMIT = 10_000
_BLEND_STEPS = 12
_ADAPT_WINDOW = 30


class ModelTarget:
    """White-box attack surface over a trained model."""

    def __init__(self, model: nn.Model):
        self._model = model

    def logits(self, x: np.ndarray) -> np.ndarray:
        return nn.forward(self._model, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return nn.predict(self._model, x)

    def ce_input_grad(self, x: np.ndarray, y) -> np.ndarray:
        return nn.input_gradient(self._model, x, y, "cross_entropy")

    def cw_margin_and_grad(self, x: np.ndarray, y, k: float):
        """(margin Z_y - max_other, d max(margin, -k) / dx) in one pass."""
        logits, caches = nn.forward_cached(self._model, x)
        d = nn.cw_margin_dlogits(logits, y, k=k)
        _, dx = nn._backward(self._model, caches, d, mode="input", want_input_grad=True)
        return nn.cw_margins(logits, y), dx


class DecisionOracle:
    """Decision-only model view: predicted labels are the entire interface."""

    __slots__ = ("_predict_fn", "calls")

    def __init__(self, predict_fn):
        self._predict_fn = predict_fn
        self.calls = 0

    @classmethod
    def of_model(cls, model: nn.Model) -> "DecisionOracle":
        return cls(lambda x: nn.predict(model, x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        self.calls += 1
        return self._predict_fn(x)


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float
    step_size: Optional[float] = None  # defaults to epsilon / 10
    iterations: int = 40
    random_init: bool = True
    early_stop: bool = False

    def __post_init__(self):
        if self.epsilon < 0 or self.iterations < 1:
            raise ValueError("epsilon must be >= 0 and iterations >= 1")
        if self.step_size is not None and self.epsilon > 0 and self.step_size > self.epsilon:
            raise ValueError("step_size must not exceed epsilon")

    @property
    def alpha(self) -> float:
        return self.epsilon / 10.0 if self.step_size is None else self.step_size


@dataclass(frozen=True)
class CwConfig:
    iterations: int = 1000  # optimizer steps per binary-search round
    optimizer_step: float = 0.01
    confidence: float = 0.0  # k
    c_init: float = 0.01
    binary_search_steps: int = 9

    def __post_init__(self):
        if self.binary_search_steps < 1 or self.iterations < 1:
            raise ValueError("binary_search_steps and iterations must be >= 1")
        if self.optimizer_step <= 0 or self.c_init <= 0 or self.confidence < 0:
            raise ValueError("optimizer_step/c_init must be > 0 and confidence >= 0")


@dataclass(frozen=True)
class BaConfig:
    iterations: int = 25_000
    spherical_step: float = 0.01
    source_step: float = 0.01
    step_adaptation: float = 0.5
    init_seed: int = 0
    init_draw_limit: int = _INIT_DRAW_LIMIT  # noise resamples before giving up

    def __post_init__(self):
        if self.iterations < 1 or self.init_draw_limit < 1:
            raise ValueError("iterations and init_draw_limit must be >= 1")
        if not (0 < self.step_adaptation < 1):
            raise ValueError("step_adaptation must lie in (0, 1)")


@dataclass
class AdversarialBatch:
    originals: np.ndarray
    adversarials: np.ndarray
    true_labels: np.ndarray
    adversarial_labels: np.ndarray
    success: np.ndarray  # bool per example
    l2_dist: np.ndarray
    linf_dist: np.ndarray
    attack_name: str
    config: dict

    def success_rate(self) -> float:
        return float(np.mean(self.success))

    def __len__(self) -> int:
        return int(self.true_labels.shape[0])


def _flat_l2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a - b).reshape(a.shape[0], -1)
    return np.sqrt(np.einsum("ni,ni->n", d, d))


def _flat_linf(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b).reshape(a.shape[0], -1).max(axis=1)


def project_linf(candidate: np.ndarray, center: np.ndarray, epsilon: float) -> np.ndarray:
    """Elementwise clamp of candidate into [center - eps, center + eps]."""
    if candidate.shape != center.shape:
        raise ValueError(f"shape mismatch: {candidate.shape} vs {center.shape}")
    return np.clip(candidate, center - epsilon, center + epsilon)


def fgsm(target, x: np.ndarray, y, cfg: FgsmConfig) -> np.ndarray:
    """One step of eps * sign(input gradient), clamped to the pixel box."""
    g = target.ce_input_grad(x, y)
    return clamp01(x + cfg.epsilon * sign(g))


def _pgd_start(target, x, cfg: PgdConfig, rng, init_noise):
    if not cfg.random_init:
        return x.copy()
    if init_noise is None:
        if rng is None:
            raise ValueError("random_init needs an rng or a pre-drawn init_noise")
        init_noise = rng.uniform(x.shape, -1.0, 1.0)
    return clamp01(x + cfg.epsilon * init_noise)


def pgd_linf(target, x: np.ndarray, y, cfg: PgdConfig, rng: Optional[SeededRng] = None,
             init_noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Iterated sign steps, each projected back into the Linf ball around x.

    init_noise, when given, must be uniform on [-1, 1] and is scaled by
    epsilon: sweeps pass one shared draw so curves across epsilon values use
    nested random starts.
    """
    adv = _pgd_start(target, x, cfg, rng, init_noise)
    y = np.asarray(y)
    for _ in range(cfg.iterations):
        g = target.ce_input_grad(adv, y)
        adv = clamp01(project_linf(adv + cfg.alpha * sign(g), x, cfg.epsilon))
        if cfg.early_stop and bool(np.all(target.predict(adv) != y)):
            break
    return adv


def pgd_linf_trace(target, x: np.ndarray, y, cfg: PgdConfig, checkpoints,
                   rng: Optional[SeededRng] = None,
                   init_noise: Optional[np.ndarray] = None) -> dict:
    """Success masks after selected iteration counts of one PGD run.

    A k-iteration PGD equals the first k iterations of a longer run (no
    early stop here), so one pass serves a whole step sweep. Checkpoint 0
    means "no attack": an all-false mask for correctly-classified seeds.
    """
    y = np.asarray(y)
    wanted = set(int(c) for c in checkpoints)
    out = {}
    if 0 in wanted:
        out[0] = target.predict(x) != y
    adv = _pgd_start(target, x, cfg, rng, init_noise)
    for it in range(1, max(wanted, default=0) + 1):
        g = target.ce_input_grad(adv, y)
        adv = clamp01(project_linf(adv + cfg.alpha * sign(g), x, cfg.epsilon))
        if it in wanted:
            out[it] = target.predict(adv) != y
    return out


def cw_loss(logits_row, target_class: int, k: float) -> float:
    """max(max_{i != t} Z_i - Z_t, -k): the margin the CW objective drives down."""
    z = np.asarray(logits_row, dtype=DTYPE)
    if not (0 <= target_class < z.shape[-1]):
        raise ValueError(f"target class {target_class} out of range")
    other = np.max(np.delete(z, target_class))
    return float(max(other - z[target_class], -k))


def _arctanh_box(x: np.ndarray, margin: float = 1e-6) -> np.ndarray:
    return np.arctanh((2.0 * x - 1.0) * (1.0 - margin))


def cw_l2(target, x: np.ndarray, y, cfg: CwConfig) -> tuple:
    """Untargeted CW-L2: minimize ||x'-x||^2 + c * max(Z_y - max_other, -k).

    The pixel box is enforced through the tanh change of variables, the
    inner minimizer is Adam, and c is searched per example (double on
    failure, bisect on success). Returns (adversarials, success flags);
    unsuccessful rows carry the last iterate of the final round.
    """
    y = np.asarray(y)
    n = x.shape[0]
    # seeds that are already misclassified need no perturbation at all
    clean_pred = target.predict(x)
    trivial = clean_pred != y

    best_adv = x.copy()
    best_l2 = np.where(trivial, 0.0, np.inf)
    c = np.full(n, cfg.c_init, dtype=DTYPE)
    c_lo = np.zeros(n, dtype=DTYPE)
    c_hi = np.full(n, np.inf, dtype=DTYPE)
    last_iterate = x.copy()

    w0 = _arctanh_box(x)
    flat = (n, -1)
    for _ in range(cfg.binary_search_steps):
        w = w0.copy()
        m_state = np.zeros_like(w)
        v_state = np.zeros_like(w)
        succeeded = trivial.copy()
        for step in range(1, cfg.iterations + 1):
            adv = (np.tanh(w) + 1.0) / 2.0
            margins, margin_grad = target.cw_margin_and_grad(adv, y, cfg.confidence)
            hit = margins < 0
            if np.any(hit):
                l2 = _flat_l2(adv, x)
                better = hit & (l2 < best_l2)
                best_adv[better] = adv[better]
                best_l2[better] = l2[better]
                succeeded |= hit
            gx = 2.0 * (adv - x) + c.reshape((n,) + (1,) * (x.ndim - 1)) * margin_grad
            gw = gx * (1.0 - np.tanh(w) ** 2) / 2.0
            m_state = 0.9 * m_state + 0.1 * gw
            v_state = 0.999 * v_state + 0.001 * gw**2
            m_hat = m_state / (1.0 - 0.9**step)
            v_hat = v_state / (1.0 - 0.999**step)
            w = w - cfg.optimizer_step * m_hat / (np.sqrt(v_hat) + 1e-8)
        last_iterate = (np.tanh(w) + 1.0) / 2.0
        # per-example binary search over c
        c_hi = np.where(succeeded, np.minimum(c_hi, c), c_hi)
        c_lo = np.where(succeeded, c_lo, c)
        c = np.where(np.isinf(c_hi), c_lo * 2.0, (c_lo + c_hi) / 2.0)
    success = np.isfinite(best_l2)
    out = np.where(success.reshape((n,) + (1,) * (x.ndim - 1)), best_adv, clamp01(last_iterate))
    return out, success


def boundary_attack(model_or_oracle, x: np.ndarray, y, cfg: BaConfig) -> tuple:
    """Decision-only random walk along the class boundary, shrinking L2.

    Starts from uniform-noise images resampled until misclassified (at most
    10^4 draws per example), blends toward x while staying adversarial, then
    alternates orthogonal (spherical) proposals with contractions toward x.
    A proposal is kept only if the oracle still misclassifies it. Step sizes
    adapt per example toward a 0.2-0.5 acceptance band. Returns
    (best adversarials, init_success flags).
    """
    oracle = model_or_oracle if hasattr(model_or_oracle, "predict") else DecisionOracle.of_model(model_or_oracle)
    y = np.asarray(y)
    n = x.shape[0]
    rng = SeededRng(cfg.init_seed).fork(6)

    # --- initialization: adversarial noise, then binary blend toward x
    adv = x.copy()
    alive = np.zeros(n, dtype=bool)
    draws = 0
    while draws < cfg.init_draw_limit and not np.all(alive):
        todo = np.flatnonzero(~alive)
        candidates = rng.uniform((len(todo),) + x.shape[1:], 0.0, 1.0)
        ok = oracle.predict(candidates) != y[todo]
        adv[todo[ok]] = candidates[ok]
        alive[todo[ok]] = True
        draws += 1
    if np.any(alive):
        lo = np.zeros(n)
        hi = np.ones(n)
        for _ in range(_BLEND_STEPS):
            mid = (lo + hi) / 2.0
            blend = x + mid.reshape((n,) + (1,) * (x.ndim - 1)) * (adv - x)
            still = oracle.predict(blend) != y
            ok = still & alive
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, np.where(alive, mid, lo))
        adv = x + hi.reshape((n,) + (1,) * (x.ndim - 1)) * (adv - x)
        # the blend endpoint hi stays adversarial by construction, but guard anyway
        bad = (oracle.predict(adv) == y) & alive
        if np.any(bad):
            alive[bad] = False
            adv[bad] = x[bad]

    best = adv.copy()
    best_l2 = np.where(alive, _flat_l2(adv, x), 0.0)

    sph_step = np.full(n, cfg.spherical_step)
    src_step = np.full(n, cfg.source_step)
    sph_hits = np.zeros(n)
    src_hits = np.zeros(n)
    src_trials = np.zeros(n)
    expand = lambda v: v.reshape((n,) + (1,) * (x.ndim - 1))

    for it in range(1, cfg.iterations + 1):
        direction = x - adv
        dist = _flat_l2(adv, x)
        unit = direction / expand(np.maximum(dist, 1e-12))
        eta = rng.gaussian(x.shape)
        eta_norm = np.maximum(_flat_l2(eta, np.zeros_like(eta)), 1e-12)
        eta = eta * expand(sph_step * dist / eta_norm)
        # remove the component along the source direction, stay on the sphere
        dot = np.einsum("ni,ni->n", eta.reshape(n, -1), unit.reshape(n, -1))
        eta = eta - expand(dot) * unit
        sph_cand = adv + eta
        off = _flat_l2(sph_cand, x)
        sph_cand = x + (sph_cand - x) * expand(dist / np.maximum(off, 1e-12))
        sph_cand = clamp01(sph_cand)
        sph_ok = (oracle.predict(sph_cand) != y) & alive
        sph_hits += sph_ok

        cand = sph_cand + expand(src_step) * (x - sph_cand)
        cand = clamp01(cand)
        cand_ok = sph_ok.copy()
        if np.any(sph_ok):
            idx = np.flatnonzero(sph_ok)
            cand_ok[idx] = oracle.predict(cand[idx]) != y[idx]
            src_trials += sph_ok
            src_hits += cand_ok
        adv = np.where(expand(cand_ok), cand, adv)
        new_l2 = _flat_l2(adv, x)
        improved = cand_ok & (new_l2 < best_l2)
        best[improved] = adv[improved]
        best_l2[improved] = new_l2[improved]

        if it % _ADAPT_WINDOW == 0:
            sph_rate = sph_hits / _ADAPT_WINDOW
            sph_step = np.where(sph_rate < 0.2, sph_step * cfg.step_adaptation, sph_step)
            sph_step = np.where(sph_rate > 0.5, sph_step / cfg.step_adaptation, sph_step)
            with np.errstate(invalid="ignore"):
                src_rate = np.where(src_trials > 0, src_hits / np.maximum(src_trials, 1), 0.5)
            src_step = np.where(src_rate < 0.2, src_step * cfg.step_adaptation, src_step)
            src_step = np.where(src_rate > 0.5, np.minimum(src_step / cfg.step_adaptation, 0.9), src_step)
            sph_hits[:] = 0.0
            src_hits[:] = 0.0
            src_trials[:] = 0.0

    return np.where(expand(alive), best, x), alive


ATTACK_NAMES = ("fgsm", "pgd", "cw", "ba")


def craft(model: nn.Model, x: np.ndarray, y, attack_name: str, cfg, seed: int = 0) -> AdversarialBatch:
    """Run one attack over a seed batch and package the results."""
    y = np.asarray(y)
    if attack_name == "fgsm":
        adv = fgsm(ModelTarget(model), x, y, cfg)
    elif attack_name == "pgd":
        adv = pgd_linf(ModelTarget(model), x, y, cfg, rng=SeededRng(seed).fork(5))
    elif attack_name == "cw":
        adv, _ = cw_l2(ModelTarget(model), x, y, cfg)
    elif attack_name == "ba":
        adv, _ = boundary_attack(DecisionOracle.of_model(model), x, y, cfg)
    else:
        raise ValueError(f"unknown attack {attack_name!r} (expected one of {ATTACK_NAMES})")
    adv_labels = nn.predict(model, adv)
    return AdversarialBatch(
        originals=x,
        adversarials=adv,
        true_labels=y,
        adversarial_labels=adv_labels,
        success=adv_labels != y,
        l2_dist=_flat_l2(adv, x),
        linf_dist=_flat_linf(adv, x),
        attack_name=attack_name,
        config=dataclasses.asdict(cfg),
    )

"""Seven-criteria gradient-masking audit.

The criteria (sane, unmasked gradients should satisfy all of them):
  1. iterative attacks beat one-step attacks
  2. white-box attacks beat black-box attacks
  3. gradient-based attacks beat gradient-free attacks
  4. unbounded attacks reach 100% success
  5. more attack iterations do not stall below full success
  6. a larger distortion bound does not stall below full success
  7. white-box attacks beat transfer attacks from a similar substitute

Criteria 2 and 3 share their evidence here: the Boundary Attack is the
black-box *and* gradient-free reference, measured against the white-box,
gradient-based PGD reference rate. evaluate_criteria is a pure function of
(bundle, thresholds); missing evidence yields 'insufficient', never an
exception.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import attacks, data, evaluation, nn
from .evaluation import SuccessCurve

PASS, FAIL, INSUFFICIENT = "pass", "fail", "insufficient"


@dataclass
class EvidenceBundle:
    model_id: str
    fgsm_rate: Optional[float] = None
    pgd_rate_at_reference: Optional[float] = None  # eps=0.3, 40 iterations
    pgd_curve_eps: Optional[SuccessCurve] = None
    pgd_curve_steps: Optional[SuccessCurve] = None
    ba_rates: Optional[dict] = None  # eps -> success rate
    cw_unbounded_success_rate: Optional[float] = None
    cw_min_eps: Optional[float] = None
    transfer_row: Optional[dict] = None  # substitute id -> rate on this model


@dataclass(frozen=True)
class AuditThresholds:
    margin: float = 0.05
    plateau_window: int = 5
    plateau_tol: float = 0.01
    plateau_ceiling: float = 0.99
    masked_min_failures: int = 2


@dataclass
class CriterionVerdict:
    criterion_id: int
    verdict: str  # pass | fail | insufficient
    evidence: dict
    # signed excess past the failure threshold: positive = failed by that
    # much, negative = passed with that slack
    margin: Optional[float] = None


@dataclass
class MaskingReport:
    model_id: str
    criteria: list
    masked: bool
    thresholds: dict

    def verdict(self, criterion_id: int) -> str:
        return next(c.verdict for c in self.criteria if c.criterion_id == criterion_id)

    def failed_ids(self) -> list:
        return [c.criterion_id for c in self.criteria if c.verdict == FAIL]


def _plateaus(curve: Optional[SuccessCurve], th: AuditThresholds):
    if curve is None:
        return None
    try:
        return evaluation.plateau_detect(curve, th.plateau_window, th.plateau_tol, th.plateau_ceiling)
    except ValueError:
        return None


def evaluate_criteria(e: EvidenceBundle, thresholds: AuditThresholds = AuditThresholds()) -> MaskingReport:
    """Map an evidence bundle onto the seven criteria; >= N failures flags masking."""
    th = thresholds
    out = []

    def add(cid, verdict, evidence, margin=None):
        out.append(CriterionVerdict(cid, verdict, evidence, margin))

    # 1: one-step should not beat the iterative reference
    if e.pgd_rate_at_reference is None or e.fgsm_rate is None:
        add(1, INSUFFICIENT, {})
    else:
        excess = (e.fgsm_rate - e.pgd_rate_at_reference) - th.margin
        add(1, FAIL if excess > 0 else PASS,
            {"pgd_rate": e.pgd_rate_at_reference, "fgsm_rate": e.fgsm_rate}, margin=excess)

    # 2 + 3: the black-box, gradient-free attack should not beat white-box PGD
    if e.ba_rates and e.pgd_rate_at_reference is not None:
        ba_max = max(e.ba_rates.values())
        excess = (ba_max - e.pgd_rate_at_reference) - th.margin
        verdict = FAIL if excess > 0 else PASS
        ev = {"ba_max_rate": ba_max, "pgd_rate": e.pgd_rate_at_reference,
              "ba_rates": dict(e.ba_rates)}
        add(2, verdict, ev, margin=excess)
        add(3, verdict, ev, margin=excess)
    else:
        add(2, INSUFFICIENT, {})
        add(3, INSUFFICIENT, {})

    # 4: the unbounded attack must reach 100%
    if e.cw_unbounded_success_rate is None:
        add(4, INSUFFICIENT, {})
    else:
        add(4, FAIL if e.cw_unbounded_success_rate < 1.0 else PASS,
            {"cw_success_rate": e.cw_unbounded_success_rate, "cw_min_eps": e.cw_min_eps},
            margin=1.0 - e.cw_unbounded_success_rate)

    # 5 / 6: no plateau in the step sweep / epsilon sweep
    for cid, curve in ((5, e.pgd_curve_steps), (6, e.pgd_curve_eps)):
        plateaued = _plateaus(curve, th)
        if plateaued is None:
            add(cid, INSUFFICIENT, {})
        else:
            add(cid, FAIL if plateaued else PASS,
                {"final_rate": curve.final_rate, "tail": curve.rates[-th.plateau_window:]})

    # 7: transfer from a similar substitute should not beat white-box PGD
    if e.transfer_row and e.pgd_rate_at_reference is not None:
        t_max = max(e.transfer_row.values())
        excess = (t_max - e.pgd_rate_at_reference) - th.margin
        add(7, FAIL if excess > 0 else PASS,
            {"transfer_max_rate": t_max, "pgd_rate": e.pgd_rate_at_reference,
             "transfer_row": dict(e.transfer_row)}, margin=excess)
    else:
        add(7, INSUFFICIENT, {})

    failures = sum(1 for c in out if c.verdict == FAIL)
    return MaskingReport(
        model_id=e.model_id,
        criteria=out,
        masked=failures >= th.masked_min_failures,
        thresholds=dataclasses.asdict(th),
    )


@dataclass(frozen=True)
class MaskedModelPreset:
    preset_id: str
    sigma: float
    clip_norm: float
    epochs: int
    arch: str = "custom"
    reference_cw_eps: float = 0.0  # reported perturbation at 100% CW success


def build_masked_presets() -> list:
    """The three intentionally-masked training presets with reported CW budgets."""
    return [
        MaskedModelPreset("m1", sigma=2.0, clip_norm=5.0, epochs=50, reference_cw_eps=1.34),
        MaskedModelPreset("m2", sigma=2.0, clip_norm=6.0, epochs=40, reference_cw_eps=1.64),
        MaskedModelPreset("m3", sigma=2.0, clip_norm=7.0, epochs=20, reference_cw_eps=1.82),
    ]


@dataclass(frozen=True)
class AuditSuiteConfig:
    """Attack protocol used by assemble_evidence."""
    n_seeds: int = 200
    seed: int = 0
    reference_epsilon: float = 0.3
    pgd: attacks.PgdConfig = attacks.PgdConfig(epsilon=0.3, iterations=40)
    eps_grid: tuple = evaluation.EPS_GRID
    steps_grid: tuple = evaluation.STEPS_GRID
    ba: attacks.BaConfig = attacks.BaConfig(iterations=5000)
    ba_eps: tuple = evaluation.BA_EPS_GRID
    cw: attacks.CwConfig = attacks.CwConfig(iterations=300, binary_search_steps=6)


def ba_rates_at(batch: attacks.AdversarialBatch, eps_values) -> dict:
    """Boundary-attack success per budget: misclassified and within L2 <= eps."""
    return {
        float(eps): float(np.mean(batch.success & (batch.l2_dist <= eps)))
        for eps in eps_values
    }


def assemble_evidence(model: nn.Model, suite: AuditSuiteConfig, seed_pool: data.Dataset,
                      substitute: Optional[nn.Model] = None) -> EvidenceBundle:
    """Run the attack suite against one model and collect the audit evidence.

    The substitute (same architecture and optimizer settings, different
    seed) provides the transfer row; without one, criterion 7 will come out
    'insufficient'.
    """
    bundle = EvidenceBundle(model_id=evaluation.model_id_of(model))
    seeds = data.select_attack_seeds(model, seed_pool, suite.n_seeds, suite.seed)
    x, y = seeds.images, seeds.labels

    fgsm_batch = attacks.craft(model, x, y, "fgsm",
                               attacks.FgsmConfig(suite.reference_epsilon), suite.seed)
    bundle.fgsm_rate = fgsm_batch.success_rate()

    ref_cfg = dataclasses.replace(suite.pgd, epsilon=suite.reference_epsilon)
    pgd_batch = attacks.craft(model, x, y, "pgd", ref_cfg, suite.seed)
    bundle.pgd_rate_at_reference = pgd_batch.success_rate()

    bundle.pgd_curve_eps = evaluation.epsilon_sweep(model, "pgd", suite.eps_grid,
                                                    suite.pgd, seeds, suite.seed)
    bundle.pgd_curve_steps = evaluation.step_sweep(model, suite.steps_grid,
                                                   suite.reference_epsilon, suite.pgd,
                                                   seeds, suite.seed)

    ba_batch = attacks.craft(model, x, y, "ba", suite.ba, suite.seed)
    bundle.ba_rates = ba_rates_at(ba_batch, suite.ba_eps)

    cw_result = evaluation.min_eps_full_success(model, suite.cw, seeds)
    bundle.cw_unbounded_success_rate = cw_result.success_rate
    bundle.cw_min_eps = cw_result.value

    if substitute is not None:
        sub_seeds = data.select_attack_seeds(substitute, seed_pool, suite.n_seeds, suite.seed + 1)
        sub_batch = attacks.craft(substitute, sub_seeds.images, sub_seeds.labels, "cw",
                                  suite.cw, suite.seed + 1)
        bundle.transfer_row = {
            evaluation.model_id_of(substitute): evaluation.success_rate(model, sub_batch)
        }
    return bundle

"""Experiment orchestration: grid training through the model cache, the
evaluation runners behind each CLI subcommand, and report emission.

Every runner writes its outputs atomically under <out>/<kind>/ and returns a
ResultRecord. Numbers in metric files derive only from (config, seed), so
rerunning an identical config reproduces byte-identical CSVs; wall-clock
timestamps live solely in record.json.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attacks, audit, data, evaluation, forensics, nn, reporting, training
from .config import ConfigError, ExperimentConfig
from .store import ModelKey, ModelStore, ResultRecord, atomic_write_text

DATA_ENV_VAR = "DPMASK_DATA_DIR"


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    optimizer: str  # sgd | dpsgd
    sigma: float = 0.0
    clip_norm: float = 0.0
    epochs: int = 15
    seed: int = 0

    def label(self) -> str:
        if self.optimizer == "sgd":
            return f"{self.arch}_sgd_e{self.epochs}_r{self.seed}"
        return f"{self.arch}_dp_s{self.sigma:g}_c{self.clip_norm:g}_e{self.epochs}_r{self.seed}"


def grid_specs(cfg: ExperimentConfig) -> list:
    """Baseline (plain SGD) plus one DP-SGD spec per (sigma, clip) pair."""
    specs = []
    if cfg.include_baseline:
        specs.append(ModelSpec(cfg.arch, "sgd", epochs=cfg.epochs, seed=cfg.seed))
    for sigma in cfg.sigmas:
        for clip in cfg.clips:
            specs.append(ModelSpec(cfg.arch, "dpsgd", sigma=sigma, clip_norm=clip,
                                   epochs=cfg.epochs, seed=cfg.seed))
    return specs


def resolve_data_dir(cfg: ExperimentConfig) -> Path:
    root = cfg.data_dir or os.environ.get(DATA_ENV_VAR, "") or "data"
    root = Path(root)
    if not root.is_dir():
        raise data.DataError(
            f"data directory {root} does not exist (set --data-dir or ${DATA_ENV_VAR}; "
            f"`dpmask synth-data --out {root}` generates a stand-in corpus)"
        )
    return root


class Workspace:
    """Loaded datasets, the model cache, and the output directory for one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        root = resolve_data_dir(cfg)
        train_full, self.test = data.load_dir(root)
        if cfg.train_subset and cfg.train_subset < len(train_full):
            self.train = data.subsample(train_full, cfg.train_subset, seed=cfg.seed)
        else:
            self.train = train_full
        digest = hashlib.sha256()
        digest.update(self.train.images.tobytes())
        digest.update(self.train.labels.tobytes())
        self.data_tag = digest.hexdigest()[:16]
        self.out_root = Path(cfg.out_dir)
        self.out_dir = self.out_root / cfg.kind
        self.store = ModelStore(self.out_root / "models")
        self.record = ResultRecord(experiment_id=cfg.kind, config_hash=self._config_hash())
        self.cache_hits = 0

    def _config_hash(self) -> str:
        payload = self.cfg.echo() + f"data_tag={getattr(self, 'data_tag', '')}\n"
        return hashlib.sha256(payload.encode()).hexdigest()

    def out(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def key(self, spec: ModelSpec) -> ModelKey:
        return ModelKey(
            arch=spec.arch,
            pool_stride=self.cfg.pool_stride,
            optimizer=spec.optimizer,
            sigma=spec.sigma,
            clip_norm=spec.clip_norm,
            epochs=spec.epochs,
            learning_rate=self.cfg.learning_rate,
            batch_size=self.cfg.batch_size,
            seed=spec.seed,
            data_tag=self.data_tag,
            per_example_noise=self.cfg.per_example_noise,
        )

    def model(self, spec: ModelSpec) -> nn.Model:
        key = self.key(spec)

        def train_fn():
            privacy = (training.PrivacyParams(spec.sigma, spec.clip_norm)
                       if spec.optimizer == "dpsgd" else None)
            tc = training.TrainConfig(
                epochs=spec.epochs,
                learning_rate=self.cfg.learning_rate,
                batch_size=self.cfg.batch_size,
                seed=spec.seed,
                optimizer=spec.optimizer,
                privacy=privacy,
                per_example_noise=self.cfg.per_example_noise,
            )
            arch = nn.architecture(spec.arch, pool_stride=self.cfg.pool_stride)
            model, _ = training.train(arch, self.train, self.test, tc)
            return model

        model, cached = self.store.get(key, train_fn)
        self.cache_hits += int(cached)
        self.record.model_hashes[evaluation.model_id_of(model)] = key.hash()
        return model

    def attack_seeds(self, model: nn.Model) -> data.Dataset:
        return data.select_attack_seeds(model, self.test, self.cfg.n_attack_seeds,
                                        self.cfg.attack_seed)

    # attack configs derived from the experiment config
    def pgd_cfg(self) -> attacks.PgdConfig:
        return attacks.PgdConfig(epsilon=self.cfg.reference_epsilon,
                                 iterations=self.cfg.pgd_iterations)

    def cw_cfg(self) -> attacks.CwConfig:
        return attacks.CwConfig(iterations=self.cfg.cw_iterations,
                                binary_search_steps=self.cfg.cw_search_steps,
                                optimizer_step=self.cfg.cw_step,
                                c_init=self.cfg.cw_c_init,
                                confidence=self.cfg.cw_confidence)

    def ba_cfg(self) -> attacks.BaConfig:
        return attacks.BaConfig(iterations=self.cfg.ba_iterations,
                                init_seed=self.cfg.attack_seed)

    def audit_suite(self) -> audit.AuditSuiteConfig:
        return audit.AuditSuiteConfig(
            n_seeds=self.cfg.n_attack_seeds,
            seed=self.cfg.attack_seed,
            reference_epsilon=self.cfg.reference_epsilon,
            pgd=self.pgd_cfg(),
            eps_grid=self.cfg.eps_grid,
            steps_grid=self.cfg.steps_grid,
            ba=self.ba_cfg(),
            ba_eps=self.cfg.ba_eps,
            cw=self.cw_cfg(),
        )


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def run_train_grid(ws: Workspace) -> list:
    rows = []
    for spec in grid_specs(ws.cfg):
        model = ws.model(spec)
        acc = nn.accuracy(model, ws.test)
        rows.append((evaluation.model_id_of(model), spec.optimizer, spec.sigma,
                     spec.clip_norm, spec.epochs, spec.seed, acc))
        ws.record.metrics[evaluation.model_id_of(model)] = {"test_accuracy": acc}
    path = reporting.write_csv(
        ws.out("train_manifest.csv"),
        ("model_id", "optimizer", "sigma", "clip", "epochs", "seed", "test_accuracy"),
        rows,
    )
    return [path]


def _sweep(ws: Workspace, axis: str) -> list:
    curves = []
    for spec in grid_specs(ws.cfg):
        model = ws.model(spec)
        seeds = ws.attack_seeds(model)
        if axis == "epsilon":
            curves.append(evaluation.epsilon_sweep(model, "pgd", ws.cfg.eps_grid,
                                                   ws.pgd_cfg(), seeds, ws.cfg.attack_seed))
        else:
            curves.append(evaluation.step_sweep(model, ws.cfg.steps_grid,
                                                ws.cfg.reference_epsilon, ws.pgd_cfg(),
                                                seeds, ws.cfg.attack_seed))
    fig = "fig2" if axis == "epsilon" else "fig3"
    stem = f"{fig}_{ws.cfg.arch}"
    files = [
        reporting.write_csv(ws.out(f"{stem}.csv"), reporting.CURVE_HEADER, reporting.curve_rows(curves)),
        reporting.render_curves(curves, ws.out(f"{stem}.png"),
                                f"PGD success vs {axis} ({ws.cfg.arch})"),
        reporting.write_json(ws.out(f"{stem}.json"), {"config": ws.cfg, "curves": curves}),
    ]
    ws.record.metrics["final_rates"] = {c.model_id: c.final_rate for c in curves}
    return files


def run_eps_sweep(ws: Workspace) -> list:
    return _sweep(ws, "epsilon")


def run_step_sweep(ws: Workspace) -> list:
    return _sweep(ws, "iterations")


def run_ba_eval(ws: Workspace) -> list:
    rows = []
    results = {}
    for spec in grid_specs(ws.cfg):
        model = ws.model(spec)
        seeds = ws.attack_seeds(model)
        batch = attacks.craft(model, seeds.images, seeds.labels, "ba", ws.ba_cfg(),
                              ws.cfg.attack_seed)
        rates = audit.ba_rates_at(batch, ws.cfg.ba_eps)
        mid = evaluation.model_id_of(model)
        results[mid] = rates
        for eps in ws.cfg.ba_eps:
            rows.append((mid, "ba", "epsilon", eps, rates[eps], len(seeds)))
    files = [
        reporting.write_csv(ws.out("table3_ba_rates.csv"), reporting.CURVE_HEADER, rows),
        reporting.write_json(ws.out("table3_ba_rates.json"), {"config": ws.cfg, "rates": results}),
    ]
    ws.record.metrics["ba_rates"] = results
    return files


def run_cw_eval(ws: Workspace) -> list:
    rows = []
    results = {}
    for spec in grid_specs(ws.cfg):
        model = ws.model(spec)
        seeds = ws.attack_seeds(model)
        res = evaluation.min_eps_full_success(model, ws.cw_cfg(), seeds)
        rows.append((res.model_id, "cw", res.success_rate,
                     res.value if res.value is not None else "", len(seeds)))
        results[res.model_id] = {"success_rate": res.success_rate, "cw_min_eps": res.value}
    files = [
        reporting.write_csv(ws.out("table2_cw_min_eps.csv"),
                            ("model_id", "attack", "success_rate", "cw_min_eps", "n"), rows),
        reporting.write_json(ws.out("table2_cw_min_eps.json"), {"config": ws.cfg, "results": results}),
    ]
    ws.record.metrics["cw"] = results
    return files


def run_transfer(ws: Workspace) -> list:
    models = [ws.model(spec) for spec in grid_specs(ws.cfg)]
    cfg = ws.pgd_cfg() if ws.cfg.transfer_attack == "pgd" else ws.cw_cfg()
    tm = evaluation.transfer_matrix(models, ws.cfg.transfer_attack, cfg, ws.test,
                                    ws.cfg.n_attack_seeds, ws.cfg.attack_seed)
    stem = f"fig4_{ws.cfg.transfer_attack}"
    files = [
        reporting.write_csv(ws.out(f"{stem}.csv"), reporting.MATRIX_HEADER, reporting.matrix_rows(tm)),
        reporting.render_matrix(tm, ws.out(f"{stem}.png"),
                                f"{ws.cfg.transfer_attack} transferability ({ws.cfg.arch})"),
        reporting.write_json(ws.out(f"{stem}.json"), {"config": ws.cfg, "matrix": tm}),
    ]
    ws.record.metrics["transfer_mean"] = float(np.mean(tm.rates))
    return files


def forensics_batch(ws: Workspace) -> data.Dataset:
    n = min(250, len(ws.test))
    return data.subsample(ws.test, n, seed=ws.cfg.attack_seed)


def run_forensics(ws: Workspace) -> list:
    batch = forensics_batch(ws)
    profiles = {}
    stats_by_layer = {}
    hist_stats = []
    for spec in grid_specs(ws.cfg):
        model = ws.model(spec)
        mid = evaluation.model_id_of(model)
        profiles[mid] = forensics.zero_fraction_profile(model, batch.images, batch.labels)
        layer = forensics.first_dense_layer_index(model.arch)
        st = forensics.layer_gradient_stats(model, batch.images, batch.labels, layer)
        stats_by_layer[(mid, layer)] = st
        hist_stats.append(st)
    stem7, stem8 = f"fig7_{ws.cfg.arch}", f"fig8_{ws.cfg.arch}"
    files = [
        reporting.write_csv(ws.out("forensics.csv"), reporting.FORENSICS_HEADER,
                            reporting.forensics_rows(profiles, stats_by_layer)),
        reporting.write_csv(ws.out(f"{stem7}.csv"), reporting.HIST_HEADER,
                            reporting.hist_rows(hist_stats)),
        reporting.render_histograms(hist_stats, ws.out(f"{stem7}.png"),
                                    f"first-dense-layer gradients ({ws.cfg.arch})"),
        reporting.write_csv(ws.out(f"{stem8}.csv"), reporting.FORENSICS_HEADER,
                            reporting.forensics_rows(profiles, stats_by_layer)),
        reporting.render_zero_fractions(profiles, ws.out(f"{stem8}.png"),
                                        f"zero-gradient fractions ({ws.cfg.arch})"),
        reporting.write_json(ws.out("forensics.json"),
                             {"config": ws.cfg, "profiles": profiles,
                              "first_dense_stats": {k[0]: v for k, v in stats_by_layer.items()}}),
    ]
    ws.record.metrics["zero_fractions"] = {m: dict(p) for m, p in profiles.items()}
    return files


def _audit_one(ws: Workspace, spec: ModelSpec) -> audit.MaskingReport:
    model = ws.model(spec)
    substitute = ws.model(dataclasses.replace(spec, seed=spec.seed + 1000))
    bundle = audit.assemble_evidence(model, ws.audit_suite(), ws.test, substitute=substitute)
    thresholds = audit.AuditThresholds(margin=ws.cfg.audit_margin,
                                       masked_min_failures=ws.cfg.masked_min_failures)
    return audit.evaluate_criteria(bundle, thresholds)


def run_audit(ws: Workspace) -> list:
    files = []
    for spec in grid_specs(ws.cfg):
        report = _audit_one(ws, spec)
        files.append(reporting.write_json(ws.out(f"audit_{report.model_id}.json"),
                                          reporting.masking_report_json(report)))
        ws.record.metrics[report.model_id] = {
            "masked": report.masked, "failed_criteria": report.failed_ids(),
        }
    return files


def run_masked_presets(ws: Workspace) -> list:
    presets = audit.build_masked_presets()
    specs = {p.preset_id: ModelSpec("custom", "dpsgd", sigma=p.sigma, clip_norm=p.clip_norm,
                                    epochs=p.epochs, seed=ws.cfg.seed) for p in presets}
    baselines = {
        "bs1": ModelSpec("custom", "sgd", epochs=ws.cfg.epochs, seed=ws.cfg.seed),
        "bs2": ModelSpec("lenet", "sgd", epochs=ws.cfg.epochs, seed=ws.cfg.seed),
    }
    table4 = []
    table5 = []
    files = []
    audit_results = {}
    cw_models = []

    for name, spec in list(baselines.items()) + list(specs.items()):
        model = ws.model(spec)
        mid = evaluation.model_id_of(model)
        seeds = ws.attack_seeds(model)
        cw_res = evaluation.min_eps_full_success(model, ws.cw_cfg(), seeds)
        ref = next((p.reference_cw_eps for p in presets if p.preset_id == name), "")
        table4.append((name, mid, spec.sigma, spec.clip_norm, spec.epochs,
                       cw_res.success_rate, cw_res.value if cw_res.value is not None else "", ref))
        ba_batch = attacks.craft(model, seeds.images, seeds.labels, "ba", ws.ba_cfg(),
                                 ws.cfg.attack_seed)
        rates = audit.ba_rates_at(ba_batch, ws.cfg.ba_eps)
        for eps in ws.cfg.ba_eps:
            table5.append((name, mid, eps, rates[eps], len(seeds)))
        if spec.arch == "custom":
            cw_models.append(model)
        if name in specs:
            report = _audit_one(ws, spec)
            audit_results[name] = report
            files.append(reporting.write_json(ws.out(f"audit_{name}.json"),
                                              reporting.masking_report_json(report)))
            ws.record.metrics[name] = {"masked": report.masked,
                                       "failed_criteria": report.failed_ids()}

    tm = evaluation.transfer_matrix(cw_models, "cw", ws.cw_cfg(), ws.test,
                                    ws.cfg.n_attack_seeds, ws.cfg.attack_seed)
    files.extend([
        reporting.write_csv(ws.out("table4_masked_cw.csv"),
                            ("name", "model_id", "sigma", "clip", "epochs",
                             "cw_success_rate", "cw_min_eps", "paper_reference_eps"), table4),
        reporting.write_csv(ws.out("table5_masked_ba.csv"),
                            ("name", "model_id", "epsilon", "success_rate", "n"), table5),
        reporting.write_csv(ws.out("transfer_masked_cw.csv"), reporting.MATRIX_HEADER,
                            reporting.matrix_rows(tm)),
        reporting.render_matrix(tm, ws.out("transfer_masked_cw.png"),
                                "CW transferability, baseline vs masked models"),
        reporting.write_json(ws.out("masked_presets.json"),
                             {"config": ws.cfg, "table4": table4, "table5": table5,
                              "audits": {k: reporting.masking_report_json(v)
                                         for k, v in audit_results.items()}}),
    ])
    return files


RUNNERS = {
    "train-grid": run_train_grid,
    "eps-sweep": run_eps_sweep,
    "step-sweep": run_step_sweep,
    "ba-eval": run_ba_eval,
    "cw-eval": run_cw_eval,
    "transfer": run_transfer,
    "forensics": run_forensics,
    "audit": run_audit,
    "masked-presets": run_masked_presets,
}


def run_experiment(cfg: ExperimentConfig) -> ResultRecord:
    """Train/load what the experiment needs, run it, and write all outputs."""
    if cfg.kind not in RUNNERS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
    ws = Workspace(cfg)
    atomic_write_text(ws.out("config.txt"), cfg.echo())
    files = RUNNERS[cfg.kind](ws)
    ws.record.metrics["cache_hits"] = ws.cache_hits
    ws.record.finish().write(ws.out("record.json"))
    return ws.record

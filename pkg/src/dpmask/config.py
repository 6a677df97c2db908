"""Experiment configuration: flat dotted-key files, flag overrides, scale presets.

Config files are plain text, one `section.key=value` per line, `#` comments
allowed. Precedence: scale-preset defaults < file values < flag overrides.
Unknown keys are rejected with their key path. The effective configuration
can be echoed back as a sorted dump, which also feeds the model-cache hash.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

EXPERIMENT_KINDS = (
    "train-grid", "eps-sweep", "step-sweep", "ba-eval", "cw-eval",
    "transfer", "forensics", "audit", "masked-presets",
)

SCALES = ("paper", "desk")


class ConfigError(Exception):
    """Raised for unknown keys, type errors, and invalid values."""


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(",") if str(v).strip() != "")
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in _floats(text))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes"):
        return True
    if str(text).lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class ExperimentConfig:
    kind: str = "train-grid"
    scale: str = "desk"
    arch: str = "custom"
    pool_stride: int = 1
    sigmas: tuple = (0.0, 1.3, 2.0, 3.0)
    clips: tuple = (1.0, 3.0, 5.0, 10.0)
    include_baseline: bool = True
    epochs: int = 15
    learning_rate: float = 0.05
    batch_size: int = 250
    seed: int = 0
    train_subset: int = 10_000  # 0 = full training split
    per_example_noise: bool = False
    n_attack_seeds: int = 200
    attack_seed: int = 0
    reference_epsilon: float = 0.3
    pgd_iterations: int = 40
    eps_grid: tuple = tuple(round(0.025 * i, 3) for i in range(21))
    steps_grid: tuple = (0, 1, 2, 3, 5, 8, 10, 15, 20, 30, 40, 60, 80, 100)
    ba_iterations: int = 5000
    ba_eps: tuple = (1.0, 2.0)
    cw_iterations: int = 300
    cw_search_steps: int = 6
    cw_step: float = 0.01
    cw_c_init: float = 0.01
    cw_confidence: float = 0.0
    transfer_attack: str = "pgd"
    audit_margin: float = 0.05
    masked_min_failures: int = 2
    data_dir: str = ""
    out_dir: str = "out"

    def echo(self) -> str:
        """Sorted key=value dump of the effective configuration."""
        lines = []
        for key, (attr, _) in sorted(KEY_SCHEMA.items()):
            value = getattr(self, attr)
            if isinstance(value, tuple):
                value = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


# dotted key -> (ExperimentConfig attribute, caster)
KEY_SCHEMA = {
    "scale": ("scale", str),
    "model.arch": ("arch", str),
    "model.pool_stride": ("pool_stride", int),
    "privacy.sigmas": ("sigmas", _floats),
    "privacy.clips": ("clips", _floats),
    "privacy.baseline": ("include_baseline", _bool),
    "privacy.per_example_noise": ("per_example_noise", _bool),
    "train.epochs": ("epochs", int),
    "train.lr": ("learning_rate", float),
    "train.batch_size": ("batch_size", int),
    "train.seed": ("seed", int),
    "train.subset": ("train_subset", int),
    "attack.seeds": ("n_attack_seeds", int),
    "attack.seed": ("attack_seed", int),
    "pgd.epsilon": ("reference_epsilon", float),
    "pgd.iterations": ("pgd_iterations", int),
    "sweep.eps_grid": ("eps_grid", _floats),
    "sweep.steps_grid": ("steps_grid", _ints),
    "ba.iterations": ("ba_iterations", int),
    "ba.eps": ("ba_eps", _floats),
    "cw.iterations": ("cw_iterations", int),
    "cw.search_steps": ("cw_search_steps", int),
    "cw.step": ("cw_step", float),
    "cw.c_init": ("cw_c_init", float),
    "cw.confidence": ("cw_confidence", float),
    "transfer.attack": ("transfer_attack", str),
    "audit.margin": ("audit_margin", float),
    "audit.min_failures": ("masked_min_failures", int),
    "data.dir": ("data_dir", str),
    "out.dir": ("out_dir", str),
}

# scale presets: the paper protocol and a reduced desk-scale variant
SCALE_PRESETS = {
    "paper": {
        "train.epochs": 50,
        "train.subset": 0,
        "attack.seeds": 1000,
        "ba.iterations": 25_000,
        "cw.iterations": 10_000,
        "cw.search_steps": 9,
        "cw.c_init": 1.0,
    },
    "desk": {
        "train.epochs": 15,
        "train.subset": 10_000,
        "attack.seeds": 200,
        "ba.iterations": 5000,
        "cw.iterations": 300,
        "cw.search_steps": 6,
        "cw.c_init": 1.0,
    },
}


def _read_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def bad(key, msg):
        raise ConfigError(f"invalid value for {key}: {msg}")

    if cfg.kind not in EXPERIMENT_KINDS:
        bad("kind", f"{cfg.kind!r} not one of {EXPERIMENT_KINDS}")
    if cfg.scale not in SCALES:
        bad("scale", f"{cfg.scale!r} not one of {SCALES}")
    if cfg.arch not in ("lenet", "custom"):
        bad("model.arch", f"{cfg.arch!r} not one of ('lenet', 'custom')")
    if not cfg.sigmas:
        bad("privacy.sigmas", "empty noise grid")
    if any(s < 0 for s in cfg.sigmas):
        bad("privacy.sigmas", "sigma must be >= 0")
    if not cfg.clips or any(c <= 0 for c in cfg.clips):
        bad("privacy.clips", "clip norms must be a nonempty list of positives")
    if cfg.epochs < 0:
        bad("train.epochs", "epochs must be >= 0")
    if cfg.learning_rate <= 0:
        bad("train.lr", "learning rate must be > 0")
    if cfg.batch_size < 1:
        bad("train.batch_size", "batch size must be >= 1")
    if cfg.n_attack_seeds < 1:
        bad("attack.seeds", "need at least one attack seed")
    if not cfg.eps_grid or any(b <= a for a, b in zip(cfg.eps_grid, cfg.eps_grid[1:])):
        bad("sweep.eps_grid", "must be nonempty and strictly increasing")
    if any(b <= a for a, b in zip(cfg.steps_grid, cfg.steps_grid[1:])):
        bad("sweep.steps_grid", "must be strictly increasing")
    if cfg.transfer_attack not in ("pgd", "cw"):
        bad("transfer.attack", f"{cfg.transfer_attack!r} not one of ('pgd', 'cw')")
    if cfg.pool_stride not in (1, 2):
        bad("model.pool_stride", "pool stride must be 1 or 2")
    return cfg


def parse_config(kind: str, path=None, overrides: dict = None) -> ExperimentConfig:
    """Build the effective config from preset defaults, a file, and overrides."""
    file_values = _read_file(path) if path else {}
    overrides = dict(overrides or {})
    for source in (file_values, overrides):
        for key in source:
            if key != "kind" and key not in KEY_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")

    # scale must be resolved first: it supplies defaults for unset keys
    scale = overrides.get("scale", file_values.get("scale", "desk"))
    if scale not in SCALE_PRESETS:
        raise ConfigError(f"invalid value for scale: {scale!r} not one of {SCALES}")

    merged = dict(SCALE_PRESETS[scale])
    merged.update(file_values)
    merged.update(overrides)
    merged["scale"] = scale

    cfg = ExperimentConfig(kind=kind)
    for key, text in merged.items():
        if key == "kind":
            continue
        attr, caster = KEY_SCHEMA[key]
        try:
            setattr(cfg, attr, caster(text))
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for {key}: {e}") from e
    return _validate(cfg)

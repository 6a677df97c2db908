"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
The data directory resolves from --data-dir, then $DPMASK_DATA_DIR, then ./data.
"""

from __future__ import annotations

import argparse
import sys
import traceback

from . import __version__, datagen
from .config import ConfigError, EXPERIMENT_KINDS, parse_config
from .data import DataError
from .experiments import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

# CLI subcommand -> experiment kind
COMMANDS = {
    "train": "train-grid",
    "sweep-eps": "eps-sweep",
    "sweep-steps": "step-sweep",
    "eval-ba": "ba-eval",
    "eval-cw": "cw-eval",
    "transfer": "transfer",
    "forensics": "forensics",
    "audit": "audit",
    "presets-masked": "masked-presets",
}


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key=value config file")
    p.add_argument("--arch", choices=["lenet", "custom"], help="model architecture")
    p.add_argument("--sigma", metavar="LIST", help="noise multiplier grid, e.g. 0,1.3,2,3")
    p.add_argument("--clip", metavar="LIST", help="clip norm grid, e.g. 1,3,5,10")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--scale", choices=["paper", "desk"], help="protocol preset")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--data-dir", metavar="DIR", help="directory with MNIST IDX files")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpmask",
        description="Train (DP-)SGD MNIST classifiers, attack them, and audit gradient masking.",
    )
    parser.add_argument("--version", action="version", version=f"dpmask {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        _add_common_flags(p)
    synth = sub.add_parser("synth-data", help="write a synthetic digit corpus as IDX files")
    synth.add_argument("--out", default="data", metavar="DIR")
    synth.add_argument("--train", type=int, default=12_000, metavar="N")
    synth.add_argument("--test", type=int, default=2_000, metavar="N")
    synth.add_argument("--seed", type=int, default=0)
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    flag_map = {
        "arch": "model.arch",
        "sigma": "privacy.sigmas",
        "clip": "privacy.clips",
        "epochs": "train.epochs",
        "scale": "scale",
        "seed": "train.seed",
        "out": "out.dir",
        "data_dir": "data.dir",
    }
    overrides = {}
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-data":
            paths = datagen.write_corpus(args.out, args.train, args.test, args.seed)
            for name, path in paths.items():
                print(f"wrote {name}: {path}")
            return EXIT_OK
        cfg = parse_config(COMMANDS[args.command], path=args.config,
                           overrides=_overrides_from_args(args))
        print(f"[dpmask] {cfg.kind} (scale={cfg.scale}, arch={cfg.arch})")
        print("[dpmask] effective config:")
        for line in cfg.echo().strip().splitlines():
            print(f"    {line}")
        record = run_experiment(cfg)
        print(f"[dpmask] done; outputs under {cfg.out_dir}/{cfg.kind}/ "
              f"(cache hits: {record.metrics.get('cache_hits', 0)})")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - CLI boundary
        traceback.print_exc()
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``ivdfm <subcommand> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .archive import ArchiveError, load_model, save_model
from .config import ConfigError, config_hash, load_config, validate
from .io import IngestError, apply_scaler, fit_scaler, ingest_csv, write_csv
from .runners import run_degeneracy, run_forecast, run_gradcheck, run_intervention, run_recovery

SUBCOMMANDS = {
    "recovery": "recovery",
    "intervene": "intervention",
    "forecast": "forecast",
    "degeneracy": "degeneracy-demo",
    "gradcheck": "gradcheck",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ivdfm", description="Identifiable variational dynamic factor model experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name == "intervene":
            p.add_argument("--oracle-model", action="store_true", help="use the SCM itself instead of a trained model")
        if name == "recovery":
            p.add_argument("--constant-context", action="store_true", help="hold the auxiliary input at its t=0 value")
    return parser


def resolve_config(args):
    kind = SUBCOMMANDS[args.command]
    cfg = load_config(args.config) if args.config else validate({"kind": kind})
    if cfg["kind"] != kind:
        raise ConfigError(f"config kind {cfg['kind']!r} does not match subcommand {args.command!r}")
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if args.out:
        cfg["out"] = args.out
    return cfg


def dispatch(args, cfg):
    if args.command == "recovery":
        return run_recovery(cfg, constant_context=True if args.constant_context else None)
    if args.command == "intervene":
        return run_intervention(cfg, oracle=True if args.oracle_model else None)
    if args.command == "forecast":
        return run_forecast(cfg)
    if args.command == "degeneracy":
        return run_degeneracy(cfg)
    return run_gradcheck(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        dispatch(args, cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        print(json.dumps({"status": "error", "command": args.command, "type": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, "out": cfg["out"],
                      "config_hash": config_hash(cfg)}))
    return 0


__all__ = [
    "main", "build_parser", "load_config", "validate", "config_hash", "ConfigError",
    "ingest_csv", "write_csv", "fit_scaler", "apply_scaler", "IngestError",
    "save_model", "load_model", "ArchiveError",
    "run_recovery", "run_intervention", "run_forecast", "run_degeneracy", "run_gradcheck",
]


if __name__ == "__main__":
    sys.exit(main())

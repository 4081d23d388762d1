"""Command-line entry point: generate / train / evaluate / ablate / report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, experiments
from .config import DEFAULTS, dump_config, load_config, validate_config


def _write_manifest(out_dir: Path, command: str, cfg: dict, args_ns) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "config.yaml")
    manifest = {
        "command": command,
        "version": __version__,
        "root_seed": cfg["root_seed"],
        "jobs": getattr(args_ns, "jobs", 1),
    }
    tmp = out_dir / "manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out_dir / "manifest.json")


def _load_cfg(args) -> dict:
    cfg = load_config(args.config) if args.config else validate_config({})
    if args.seed is not None:
        cfg["root_seed"] = args.seed
    return cfg


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None,
                     help="YAML experiment config (defaults used when omitted)")
    sub.add_argument("--seed", type=int, default=None, help="override root seed")
    sub.add_argument("--out", type=Path, required=True, help="run output directory")
    sub.add_argument("--jobs", type=int, default=1,
                     help="parallel evaluation workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steerlab",
        description="Desk-scale comparison of implicit (energy-based) and explicit "
                    "steering policies in a procedural road world.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate", help="record the expert dataset")
    _common_flags(gen)

    tr = subs.add_parser("train", help="train the six model variants")
    _common_flags(tr)
    tr.add_argument("--variants", nargs="*", default=None,
                    choices=list(experiments.VARIANT_NAMES),
                    help="subset of variants (default: all six)")

    ev = subs.add_parser("evaluate", help="closed-loop evaluation of checkpoints")
    _common_flags(ev)

    ab = subs.add_parser("ablate", help="negative-sampling and data-size ablations")
    _common_flags(ab)

    rep = subs.add_parser("report", help="aggregate runs into tables and a summary")
    rep.add_argument("runs", nargs="+", type=Path, help="completed run directories")
    rep.add_argument("--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    if args.command == "report":
        missing = [str(r) for r in args.runs if not Path(r).is_dir()]
        if missing:
            print(f"error: run directories not found: {missing}", file=sys.stderr)
            return 2
        return experiments.build_report(args.runs, args.out)

    cfg = _load_cfg(args)
    out = Path(args.out)
    _write_manifest(out, args.command, cfg, args)

    if args.command == "generate":
        result = experiments.generate_dataset(cfg, out)
        print(f"recorded {len(result['recordings'])} recordings "
              f"({result['aborted_runs']} aborted), "
              f"train/validation = {len(result['train'])}/{len(result['validation'])}")
        return 0
    if args.command == "train":
        if not (out / "dataset_manifest.json").exists():
            print(f"error: no dataset manifest under {out}; run generate first",
                  file=sys.stderr)
            return 2
        paths = experiments.train_variants(cfg, out, variants=args.variants)
        n = sum(len(v) for v in paths.values())
        print(f"checkpoints ready: {n} under {out / 'checkpoints'}")
        return 0
    if args.command == "evaluate":
        try:
            results = experiments.evaluate(cfg, out, jobs=args.jobs)
        except FileNotFoundError as err:
            print(f"error: {err}; run train first", file=sys.stderr)
            return 2
        print(f"evaluated {len(results)} episodes; tables under {out / 'eval'}")
        return 0
    if args.command == "ablate":
        if not (out / "dataset_manifest.json").exists():
            print(f"error: no dataset manifest under {out}; run generate first",
                  file=sys.stderr)
            return 2
        experiments.ablate(cfg, out)
        print(f"ablation tables under {out / 'ablate'}")
        return 0
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())

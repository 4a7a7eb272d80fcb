"""``mmc-lab`` command line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .config import KINDS, SPACES, ConfigError, build_config, load_config
from .errors import InvalidArgument, MMCLabError, NotAdmissible
from .harness import EXIT_INVALID, run_experiment


def build_parser():
    p = argparse.ArgumentParser(prog="mmc-lab", description="Markovian maximal coupling laboratory")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--paths", type=int, help="override n_paths")
    p.add_argument("--threads", type=int, help="worker threads (default: $MMC_LAB_THREADS or 1)")
    p.add_argument("--space", choices=SPACES, help="override the config space")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(cfg, args):
    raw = dataclasses.asdict(cfg)
    for key, value in (("seed", args.seed), ("n_paths", args.paths), ("space", args.space)):
        if value is not None:
            raw[key] = value
    if args.space is not None and args.space != "euclidean":
        raw["drift"] = None
    return build_config(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config, kind=args.kind), args)
        record = run_experiment(cfg, args.out, threads=args.threads)
    except (ConfigError, NotAdmissible, InvalidArgument, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        field = getattr(exc, "field", None)
        if field:
            err["field"] = field
        print(json.dumps(err), file=sys.stderr)
        return EXIT_INVALID
    except MMCLabError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(record.verdict, sort_keys=True))
    return record.exit_code


if __name__ == "__main__":
    sys.exit(main())

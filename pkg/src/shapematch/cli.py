"""Command-line entry point: ``shapematch <stage> [--config cfg.json] [--key value ...]``.

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from threadpoolctl import threadpool_limits

from .config import ConfigError, PipelineConfig, field_types, load_config
from .errors import ShapeMatchError
from .pipeline import STAGES

log = logging.getLogger("shapematch")


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapematch", description="Spectral + spatial shape matching and interpolation.")
    sub = parser.add_subparsers(dest="command", required=True)
    types = field_types()
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, typ in types.items():
            flag = "--" + key.replace("_", "-")
            if typ is list:
                p.add_argument(flag, dest=key, nargs="+", default=None)
            elif typ is bool:
                p.add_argument(flag, dest=key, type=_bool, default=None, metavar="BOOL")
            else:
                p.add_argument(flag, dest=key, type=typ, default=None)
    return parser


def _print(results) -> None:
    rows = results if isinstance(results, list) else [results]
    for r in rows:
        stage = r.get("stage", "")
        for key, val in r.items():
            if key == "stage":
                continue
            if isinstance(val, float):
                val = f"{val:.6g}"
            print(f"{stage}\t{key}\t{val}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: getattr(args, k) for k in field_types() if getattr(args, k, None) is not None}
    try:
        cfg = load_config(args.config, overrides)
        if args.dump_config:
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return 0
        cfg.validate(args.command)
    except ConfigError as exc:
        print(f"shapematch: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=cfg.threads):
            results = STAGES[args.command](cfg)
    except ShapeMatchError as exc:
        print(f"shapematch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    _print(results)
    return 0


if __name__ == "__main__":
    sys.exit(main())

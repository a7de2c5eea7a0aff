"""Command line: ``nncores <command> <config.json>``.

Exit status is 0 on success, 2 when the config is invalid and 1 when a run
fails numerically (the manifest is still written, with status ``failed``).
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigInvalid, NNCoResError
from .experiments import COMMANDS, OUTPUT_ENV

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nncores", description="Train and evaluate NN-CoRes models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "train one model per seed and score it against the reference",
        "sweep-omega": "boundary error of the untrained field over a range of omega",
        "noise": "train with corrupted boundary data at each configured noise level",
        "gp-demo": "1-D GP regression of sine targets with fixed omega",
        "inverse": "estimate unknown PDE parameters from interior observations",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="path to a JSON run config")
        p.add_argument("-o", "--output", default=None,
                       help=f"output root (default: ${OUTPUT_ENV}, else ./runs)")
        if name == "sweep-omega":
            p.add_argument("--stage-b", action="store_true", default=None,
                           help="also train a model at each stage-B omega")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    kwargs = {"out": args.output}
    if args.command == "sweep-omega":
        kwargs["stage_b"] = args.stage_b
    try:
        manifest = COMMANDS[args.command](args.config, **kwargs)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NNCoResError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not manifest.ok:
        print(f"run failed: {manifest.error}", file=sys.stderr)
        print(manifest.out_dir)
        return EXIT_NUMERICAL
    print(manifest.out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

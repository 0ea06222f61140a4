"""Entry point: python -m pdecalib COMMAND [--preset NAME] [--config PATH] [options]"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from typing import Any

from colorama import just_fix_windows_console

from .cli import COMMANDS, run
from .presets import PRESETS, presets


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON run config (see README for the schema)")
    common.add_argument("--preset", default=None, help="Named experiment configuration (see --list-presets)")
    common.add_argument("--problem", choices=["diffusion", "wave", "burgers"], default=None, help="Problem kind")
    common.add_argument("--seed", type=int, default=None, help="Master seed")
    common.add_argument("--seeds", type=int, default=None, help="Seeds per sweep configuration")
    common.add_argument("--jobs", type=int, default=None, help="Sweep worker processes (default: logical cores)")
    common.add_argument("--out", default=None, help="Output root (default: $PDECALIB_OUT or runs/)")
    common.add_argument(
        "--set",
        dest="sets",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted-key override, e.g. --set grid.n=640 (repeatable, applied last)",
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Warnings and errors only")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdecalib",
        description="Calibrate coefficient fields of 1D evolution PDEs with small dense networks",
    )
    parser.add_argument("--list-presets", action="store_true", help="List the named experiment configurations")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    common = _common_options()
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} command")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {"command": args.command}
    if args.preset:
        overrides["preset"] = args.preset
    if args.problem:
        overrides["problem"] = {"kind": args.problem}
    if args.seeds is not None:
        overrides["sweep"] = {"seeds": args.seeds}
    for key in ("seed", "jobs", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    just_fix_windows_console()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.list_presets:
        for name in presets():
            kind = PRESETS[name]["problem"]["kind"]
            print(f"{name:<22} {kind}")
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, _overrides(args), args.sets)


if __name__ == "__main__":
    raise SystemExit(main())

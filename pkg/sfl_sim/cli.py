"""Command-line interface: run, aa, grid and verify-ledger."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING

import colorlog

from . import __version__
from .config import OPTION_KEYS, load_config
from .const import (
    CONF_AA_AUTO,
    CONF_THRESHOLD,
    LOGGER,
    SWEEP_DELTA_EXPONENTS,
    SWEEP_LAMBDAS,
)
from .contract import check_transaction_order
from .exceptions import SflError
from .harness import compute_aa_threshold, run, run_grid
from .ledger import check_chain, load_chain

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .config import RunConfig

_FLAG_KEYS = {
    "aa_auto",
    "rational",
    "local_evaluation",
    "record_timing",
}
_LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


def setup_logging(level: str) -> None:
    """Send package logs to stderr through a colored formatter."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(_LOG_FORMAT))
    LOGGER.handlers.clear()
    LOGGER.addHandler(handler)
    LOGGER.setLevel(level.upper())


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    for key in OPTION_KEYS:
        if key in {CONF_THRESHOLD, CONF_AA_AUTO}:
            continue
        flag = f"--{key.replace('_', '-')}"
        if key in _FLAG_KEYS:
            parser.add_argument(flag, dest=key, action="store_const", const="true")
        else:
            parser.add_argument(flag, dest=key)
    threshold = parser.add_mutually_exclusive_group()
    threshold.add_argument("--threshold", dest=CONF_THRESHOLD)
    threshold.add_argument("--aa-auto", dest=CONF_AA_AUTO, action="store_const", const="true")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfl_sim", description="Secure federated learning simulator"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_run_options(commands.add_parser("run", help="run one simulation"))
    _add_run_options(
        commands.add_parser("aa", help="compute HA, MA and AA over repeated runs")
    )

    grid = commands.add_parser("grid", help="sweep lambda x delta (x P)")
    _add_run_options(grid)
    grid.add_argument("--lambdas", default=",".join(str(value) for value in SWEEP_LAMBDAS))
    grid.add_argument(
        "--delta-exponents",
        default=",".join(str(value) for value in SWEEP_DELTA_EXPONENTS),
    )
    grid.add_argument("--populations", default=None)
    grid.add_argument("--seeds", type=int, default=3)

    verify = commands.add_parser("verify-ledger", help="check a ledger dump end to end")
    verify.add_argument("path", type=Path)
    verify.add_argument("--log-level", dest="log_level", default="info")
    return parser


def _numbers(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _load(args: argparse.Namespace) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in OPTION_KEYS}
    config = load_config(args.config, overrides)
    setup_logging(config.log_level)
    return config


def _verify(path: Path) -> int:
    blocks = load_chain(path)
    check_chain(blocks)
    check_transaction_order(tx.kind for block in blocks for tx in block.txs)
    transactions = sum(len(block.txs) for block in blocks)
    head = blocks[-1].block_hash.hex() if blocks else "-"
    sys.stdout.write(f"ok: {len(blocks)} blocks, {transactions} transactions, head {head}\n")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit status."""
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify-ledger":
            setup_logging(args.log_level)
            return _verify(args.path)

        config = _load(args)
        base = Path(config.out_dir)
        if args.command == "aa":
            statistics = compute_aa_threshold(config, out_dir=base / config.run_name / "aa")
            sys.stdout.write(json.dumps(statistics.as_dict(), indent=2) + "\n")
            return 0
        if args.command == "grid":
            cells = run_grid(
                config,
                _numbers(args.lambdas),
                _numbers(args.delta_exponents),
                [int(value) for value in _numbers(args.populations)]
                if args.populations
                else None,
                seeds=args.seeds,
                out_dir=base / "grid",
            )
            sys.stdout.write(f"{len(cells)} cells written to {base / 'grid'}\n")
            return 0

        result = run(config, out_dir=base / config.run_name)
    except SflError as err:
        LOGGER.error("%s", err)  # noqa: TRY400
        return 1
    sys.stdout.write(f"{result.out_dir}\n")
    return 0 if result.finalized else 1

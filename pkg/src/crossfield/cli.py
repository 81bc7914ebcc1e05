"""Command-line entry point: ``crossfield <figure> [flags]``.

Exit codes: 0 on success, 2 on a configuration error, 3 on a numerical
failure (singular whitening or least-squares system, zero capacity).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DegenerateSceneError, NoCapacityError, NumericalError
from .experiments import FIGURES, parse_config, run_figure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# flag -> config key
_FLAGS = {
    "--freq-ghz": "frequency_ghz",
    "--n-antennas": "n_antennas",
    "--n-subarrays": "n_subarrays",
    "--n-rf": "n_rf",
    "--n-paths": "n_paths",
    "--subarray-spacing-wl": "subarray_spacing_wl",
    "--distance-m": "distance_m",
    "--snr-db": "snr_db",
    "--tx-power-dbm": "tx_power_dbm",
    "--trials": "trials",
    "--seed": "seed",
    "--out": "output_path",
    "--workers": "workers",
}


class _ConfigArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ConfigArgumentParser(prog="crossfield", description="Reproduce the cross-field array figures as CSV.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="figure", required=True, parser_class=_ConfigArgumentParser)
    for name in FIGURES:
        p = sub.add_parser(name, help=f"run {name}")
        p.add_argument("--config", metavar="PATH", help="JSON file with configuration keys")
        for flag, key in _FLAGS.items():
            # values stay strings; parse_config validates and converts them
            p.add_argument(flag, dest=key, metavar=key.upper(), help=f"override '{key}'")
        p.add_argument("-v", "--verbose", action="store_true", help="log estimator fallbacks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {key: getattr(args, key) for key in _FLAGS.values()}
    try:
        cfg = parse_config(args.config, overrides, figure=args.figure)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = run_figure(args.figure, cfg)
    except (NumericalError, NoCapacityError, DegenerateSceneError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if cfg.output_path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(cfg.output_path).write_text(text, encoding="utf-8")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

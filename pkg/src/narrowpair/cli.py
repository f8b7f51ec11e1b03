"""Command-line entry point.

Usage::

    narrowpair <kind> [--config FILE] [--seed N] [--out DIR] [--grating {850,854}]

Exit status is 0 on success, 1 on a domain or I/O error and 2 on a usage or
configuration error.
"""

import argparse
import logging
import sys

from .config import KINDS, load_config
from .errors import ConfigError, NarrowPairError
from .pipeline import execute

log = logging.getLogger("narrowpair")


def build_parser():
    p = argparse.ArgumentParser(prog="narrowpair", description=__doc__.split("\n")[0])
    p.add_argument("kind", choices=KINDS, help="pipeline to run")
    p.add_argument("--config", help="TOML configuration file (defaults: reference design)")
    p.add_argument("--seed", type=int, help="root seed, unsigned 64-bit")
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--grating", type=int, choices=(850, 854),
                   help="poling grating by target wavelength in nm")
    p.add_argument("--workers", type=int, default=1,
                   help="threads for chunked simulation and bootstrap (does not change output)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(config, workers=1):
    """Execute a validated config; returns ``(exit_status, state_or_None)``."""
    try:
        state = execute(config, workers=workers)
    except (NarrowPairError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1, None
    log.info("wrote %d data files to %s", len(state.data_files), state.out)
    return 0, state


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        overrides = {"kind": args.kind}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if args.no_plots:
            overrides["plots"] = False
        config = config.replace("run", **overrides)
        if args.grating is not None:
            config = config.replace("crystal", grating=args.grating)
    except ConfigError as exc:
        where = ""
        if exc.line is not None:
            where = " (line %d, column %d)" % (exc.line, exc.column)
        print("config error%s: %s" % (where, exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: cannot read config: %s" % exc, file=sys.stderr)
        return 2
    status, _ = run(config, workers=args.workers)
    return status

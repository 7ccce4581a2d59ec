"""Command line entry point: ``epihom run|validate|demo-cell <config>``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_config
from .errors import ConfigError, EpihomError
from .experiments import emit_outputs, run_convergence, run_single_cell_demo, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("epihom")


def build_parser():
    parser = argparse.ArgumentParser(prog="epihom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the experiment described by a config"),
                       ("validate", "check a config and print it with defaults filled in"),
                       ("demo-cell", "single-cell TMP simulation")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        if name != "validate":
            p.add_argument("-o", "--output-dir", help="override output_dir of the config")
    return parser


def _run(args):
    spec = parse_config(args.config)
    if args.command == "validate":
        sys.stdout.write(spec.dump())
        return
    out = args.output_dir or spec.output_dir
    if args.command == "demo-cell" or spec.experiment == "single_cell":
        trace, report = run_single_cell_demo(spec, out)
        log.info("pole TMP at final time %.4f V, energy bound %s", trace.v_at_pole[-1],
                 "ok" if report.ok else "violated")
    elif spec.experiment == "convergence":
        res = run_convergence(spec, out)
        log.info("L1 errors %s", ", ".join(f"{e:.3e}" for e in res.errors))
    else:
        result = run_sweep(spec)
        emit_outputs(result, out)
        failed = sum(r.status != "ok" for r in result.records)
        log.info("%d points, %d failed", len(result.records), failed)
    log.info("outputs written to %s", out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"{exc.code} {exc.detail}", file=sys.stderr)
        return EXIT_CONFIG
    except EpihomError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

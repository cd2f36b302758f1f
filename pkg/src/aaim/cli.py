"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import AaimError, NonConvergenceError, NotPositiveDefiniteError
from .pipeline import RunConfig, run_cov, run_csm, run_pipeline, run_stats, run_synth

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _workdir(args) -> Path:
    return Path(args.workdir).resolve() if args.workdir else Path.cwd()


def _resolve(args, p) -> Path:
    return _workdir(args) / p


def _cmd_synth(args) -> int:
    run_synth(_resolve(args, args.config), _resolve(args, args.out), workdir=_workdir(args))
    return EXIT_OK


def _cmd_csm(args) -> int:
    run_csm(
        _resolve(args, args.blocks),
        _resolve(args, args.out_csm),
        _resolve(args, args.out_pcsm) if args.out_pcsm else None,
    )
    return EXIT_OK


def _cmd_cov(args) -> int:
    run_cov(_resolve(args, args.blocks), _resolve(args, args.out), args.method, args.repair_alpha)
    return EXIT_OK


def _cmd_stats(args) -> int:
    run_stats(
        _resolve(args, args.blocks),
        _resolve(args, args.out),
        _resolve(args, args.fig) if args.fig else None,
    )
    return EXIT_OK


def _load_config(args) -> RunConfig:
    return RunConfig.load(_resolve(args, args.config), workdir=_workdir(args))


def _cmd_beamform(args) -> int:
    config = _load_config(args)
    config.damas_enabled = False
    run_pipeline(config)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    config = _load_config(args)
    config.damas_enabled = False
    run_pipeline(config)
    return EXIT_OK


def _cmd_damas(args) -> int:
    config = _load_config(args)
    config.damas_enabled = True
    run_pipeline(config)
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    manifest = run_pipeline(_load_config(args))
    print(json.dumps({"output_dir": manifest["config"]["output_dir"], "bands": len(manifest["bands"])}))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="aaim", description="Microphone-array imaging with weighted data spaces.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--workdir", default=None, help="base directory for all relative paths")
        p.set_defaults(func=func)
        return p

    p = add("synth", _cmd_synth, "synthesize block samples from a scenario config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("csm", _cmd_csm, "estimate CSM (and PCSM) from block samples")
    p.add_argument("--blocks", required=True)
    p.add_argument("--out-csm", required=True)
    p.add_argument("--out-pcsm", default=None)

    p = add("cov", _cmd_cov, "estimate the vec-CSM covariance per frequency")
    p.add_argument("--blocks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("gaussian", "sample"), default="gaussian")
    p.add_argument("--repair-alpha", type=float, default=None, help="opt-in eigenvalue floor")

    p = add("beamform", _cmd_beamform, "band source maps for the configured weightings")
    p.add_argument("--config", required=True)

    p = add("damas", _cmd_damas, "beamform plus regularized DAMAS-NNLS deconvolution")
    p.add_argument("--config", required=True)

    p = add("metrics", _cmd_metrics, "band source maps plus quality metric tables")
    p.add_argument("--config", required=True)

    p = add("stats", _cmd_stats, "statistical assumption diagnostics from block samples")
    p.add_argument("--blocks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fig", default=None)

    p = add("pipeline", _cmd_pipeline, "full run: data, spectra, maps, DAMAS, metrics, stats")
    p.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except (NotPositiveDefiniteError, NonConvergenceError) as exc:
        print(f"aaim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"aaim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AaimError as exc:
        print(f"aaim: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError) as exc:
        print(f"aaim: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

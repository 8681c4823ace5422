"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 input/output failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import BASELINES, RunConfig, load_config
from .dataio import format_summary, summary_table
from .errors import ConfigError, DataError, StageError
from .pipeline import format_report, load_dataset, report, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("countqr")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _smoothing(text: str):
    return text if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run options (override the config file)")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--input", help="CSV with a header row")
    g.add_argument("--response")
    g.add_argument("--covariates", type=_names, help="comma-separated column names")
    g.add_argument("--exclude-rows", type=_ints, help="comma-separated 1-based data rows to drop")
    g.add_argument("-o", "--output-dir")
    g.add_argument("--taus", type=_floats, help="comma-separated quantile levels")
    g.add_argument("--burn-in", type=int)
    g.add_argument("--iterations", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--M", type=int, dest="M")
    g.add_argument("--chains", type=int)
    g.add_argument("--rw-step", type=float)
    g.add_argument("--cluster-mean", type=float)
    g.add_argument("--cluster-sd", type=float)
    g.add_argument("--discount", type=float)
    g.add_argument("--strength", type=float)
    g.add_argument("--prior-only", action="store_const", const=True)
    g.add_argument("--spline-degree", type=int)
    g.add_argument("--spline-knots", type=int)
    g.add_argument("--penalty-order", type=int)
    g.add_argument("--smoothing", type=_smoothing, help="'auto' or a fixed lambda")
    g.add_argument("--grid-points", type=int)
    g.add_argument("--mode", choices=("paper", "exact"))
    g.add_argument("--quantile-tol", type=float)
    g.add_argument("--paper-latent", action="store_const", const=True)
    g.add_argument("--shared-fresh", action="store_const", const=True,
                   help="one block of fresh values shared by all observations")
    g.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    g.add_argument("--seed", type=int)
    g.add_argument("--setting", type=int, choices=(1, 2))
    g.add_argument("--n", type=int)
    g.add_argument("--baseline", choices=BASELINES)
    g.add_argument("--bootstrap", type=int)
    g.add_argument("--n-jitters", type=int)
    g.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="countqr", description="Bayesian quantile regression for counts.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "generate a simulation setting with its true quantile curves",
        "fit": "run the mixture sampler and store posterior draws",
        "quantile": "solve conditional quantiles for every draw and observation",
        "regress": "fit spline quantile curves to every draw",
        "baseline": "fit a comparison method",
        "compare": "relative integrated squared errors against the truth",
        "report": "summarize a run directory",
        "run": "fit, quantile and regress in one go (simulating first if --setting is set)",
        "summary": "mean and standard deviation of every column",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    return load_config(args.config, overrides)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, DataError)):
        return EXIT_IO
    return EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if cfg.command == "summary":
            print(format_summary(summary_table(load_dataset(cfg, Path(cfg.output_dir)))))
            return EXIT_OK
        manifest = run_pipeline(cfg)
        if cfg.command == "report":
            print(format_report(report(cfg.output_dir)))
        else:
            print(json.dumps({"status": manifest.status, "output_dir": cfg.output_dir,
                              "files": manifest.checksums}, indent=2, sort_keys=True))
        return EXIT_OK
    except Exception as exc:  # mapped to documented exit codes
        code = _exit_code(exc)
        print(f"countqr: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return code


if __name__ == "__main__":
    sys.exit(main())

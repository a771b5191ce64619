"""Command-line front end: ``ctspin run | validate | scan``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import EXPERIMENT_KINDS, ConfigError, load_config, parse_config
from .errors import CTSpinError
from .experiments import DESCRIPTIONS, run_experiment

THREADS_ENV = "CTSPIN_THREADS"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


def _kinds_help() -> str:
    return "\n".join(f"  {k:<18} {DESCRIPTIONS[k]}" for k in EXPERIMENT_KINDS)


# (flag, config section, key, type, help)
_OVERRIDES = [
    ("--seed", None, "seed", int, "master seed"),
    ("--density", "ensemble", "density", float, "bath density x"),
    ("--n-spins", "ensemble", "n_spins", int, "spins per configuration"),
    ("--geometry", "ensemble", "geometry", str, "host geometry: sphere or cube (dissected cube, 7 spins)"),
    ("--n-configs", "ensemble", "n_configs", int, "accepted configurations per ensemble"),
    ("--sigma", "ensemble", "gap_std_fraction", float, "bath gap standard deviation as a fraction of E"),
    ("--fit-max-2tau", "ensemble", "fit_max_two_tau_us", float, "upper end of the fit window in us"),
    ("--n-tau", "echo", "n_tau", int, "number of delays"),
    ("--two-tau-max", "echo", "two_tau_max_us", float, "longest echo time 2 tau in us"),
    ("--cce-order", "cce", "max_order", int, "maximum cluster size"),
    ("--r-bath", "cce", "r_bath", float, "bath cutoff radius in Angstrom"),
    ("--r-dipole", "cce", "r_dipole", float, "cluster-forming distance in Angstrom"),
    ("--divergence-threshold", "cce", "divergence_threshold", float, "largest allowed |contribution|"),
]


_GEOMETRY_FLAG = {"sphere": "sphere", "cube": "dissected-cube"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, help=f"worker processes (default: ${THREADS_ENV} or all available cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctspin",
        description="Echo decoherence of clock-transition spin qubits in an electron spin bath.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="experiment kinds and what they reproduce:\n" + _kinds_help(),
    )
    parser.add_argument("--version", action="version", version=f"ctspin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run",
        help="run the experiment described by a config file",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="experiment kinds and what they reproduce:\n" + _kinds_help(),
    )
    run.add_argument("config", help="TOML config, or a manifest.json from an earlier run")
    _add_common(run)

    val = sub.add_parser("validate", help="check a config and print it with every default filled in")
    val.add_argument("config")

    scan = sub.add_parser(
        "scan",
        help="run an experiment kind from defaults plus flag overrides",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="experiment kinds and what they reproduce:\n" + _kinds_help(),
    )
    scan.add_argument("--kind", required=True, choices=EXPERIMENT_KINDS)
    scan.add_argument("--config", help="optional base config file")
    scan.add_argument("--values", type=float, nargs="+", help="scan points (densities, sigmas or spin counts)")
    for flag, _, _, typ, text in _OVERRIDES:
        if flag == "--geometry":
            scan.add_argument(flag, choices=sorted(_GEOMETRY_FLAG), help=text)
        else:
            scan.add_argument(flag, type=typ, help=text)
    _add_common(scan)
    return parser


def _scan_config(args):
    if args.config:
        doc = load_config(args.config).model_dump(mode="json", exclude_unset=True)
    else:
        doc = {}
    doc["kind"] = args.kind
    for flag, section, key, _, _ in _OVERRIDES:
        value = getattr(args, flag[2:].replace("-", "_"))
        if value is None:
            continue
        if flag == "--geometry":
            value = _GEOMETRY_FLAG[value]
        if section is None:
            doc[key] = value
        else:
            doc.setdefault(section, {})[key] = value
    if args.values is not None:
        doc.setdefault("scan", {})["values"] = args.values
    return parse_config(doc)


def _report_config_error(exc: ConfigError) -> int:
    print(f"error: {exc}", file=sys.stderr)
    for problem in exc.problems:
        print(f"  {problem}", file=sys.stderr)
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(json.dumps(cfg.resolved(), indent=2))
            return EXIT_OK
        cfg = load_config(args.config) if args.command == "run" else _scan_config(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        threads = args.threads if args.threads is not None else default_threads()
    except ConfigError as exc:
        return _report_config_error(exc)

    out_dir = Path(args.out) if args.out else Path(cfg.output.directory)
    try:
        manifest = run_experiment(cfg, out_dir, workers=threads)
    except CTSpinError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        print(f"partial results in {out_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.kind}: wrote {len(manifest['artifacts'])} files to {out_dir} in {manifest['wall_time_s']:.1f} s")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

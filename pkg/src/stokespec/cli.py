"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad config, missing artifacts,
bad arguments), 2 runtime failure (including failed verification checks).
The worker count can be overridden with the ``STOKESPEC_WORKERS``
environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .config import ConfigError, ScenarioKind, load_config
from .experiments import analyze_dir, run_scenario
from .plotting import ArtifactMissingError, plot_outputs

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("stokespec")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


class ValidationFailure(Exception):
    """User-facing input problem mapped to exit code 1."""


def _load(path: str, args) -> object:
    p = Path(path)
    if not p.is_file():
        raise ValidationFailure(f"config file not found: {p}")
    cfg = load_config(p)
    if args.output:
        cfg.output_dir = Path(args.output)
    if args.workers:
        cfg.workers = args.workers
    return cfg


def _print_summary(manifest: dict) -> None:
    root = Path(manifest["_root"])
    summary = json.loads((root / "summary.json").read_text())
    print(f"{manifest['scenario']}: {len(manifest['files'])} files in {root}")
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_simulate(args) -> int:
    cfg = _load(args.config, args)
    manifest = run_scenario(cfg, plots=not args.no_plots)
    _print_summary(manifest)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config, args)
    cfg = dataclasses.replace(cfg, kind=ScenarioKind.DISTANCE_SWEEP)
    if args.spans:
        try:
            cfg.spans.span_counts = [int(x) for x in args.spans.split(",")]
        except ValueError:
            raise ValidationFailure("--spans expects comma-separated integers") from None
        if any(n < 1 for n in cfg.spans.span_counts):
            raise ValidationFailure("--spans values must be positive")
    manifest = run_scenario(cfg, plots=not args.no_plots)
    root = Path(manifest["_root"])
    print((root / "fwhm_vs_distance.csv").read_text(), end="")
    summary = json.loads((root / "summary.json").read_text())
    print(f"strictly decreasing: {summary['strictly_decreasing']}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_dir = Path(args.dir)
    if not (run_dir / "manifest.json").is_file():
        raise ValidationFailure(f"{run_dir} has no manifest.json")
    rows = analyze_dir(run_dir)
    for r in rows:
        flag = " degenerate" if r["degenerate"] else ""
        print(f"{r['label']}: fwhm={r['fwhm_hz']:.4e} Hz converged={r['converged']}{flag}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        written = plot_outputs(args.manifest)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None
    for p in written:
        print(p)
    return EXIT_OK


def verification_checks(quick: bool = False, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Oracle checks printed by ``verify``: (name, passed, detail)."""
    rotations = 20_000 if quick else 100_000
    samples = 512 if quick else 1024
    fs = 108.4e6
    checks = []

    zero = oracle.ou_realization(0.0, 2e6, fs, samples, seed)
    rep0 = oracle.mc_sphere_acf(zero, rotations, 0.1, seed)
    dev0 = np.max(np.abs(rep0.empirical_envelope - 0.5) / rep0.mc_stderr.clip(1e-15))
    checks.append(("zero perturbation gives the 1/2 baseline", bool(dev0 <= 3 or np.ptp(rep0.empirical_envelope) < 1e-12),
                   f"max deviation {dev0:.2f} stderr"))

    sigma = oracle.ou_realization(0.05, 2e6, fs, samples, seed)
    rep = oracle.mc_sphere_acf(sigma, rotations, 0.1, seed)
    checks.append(("envelope matches 1/2 + 1/3 C(tau)", rep.passed,
                   f"max relative error {rep.max_relative_error:.4f}, rotations {rep.sample_count}"))

    rows = oracle.first_order_validity([0.01, 0.1], 2e6, rotations, 0.1, fs, samples, seed)
    checks.append(("first-order error grows with rms", rows[0]["max_relative_error"] < rows[1]["max_relative_error"],
                   f"{rows[0]['max_relative_error']:.4f} < {rows[1]['max_relative_error']:.4f}"))

    excl = oracle.exclusion_sensitivity([0.5], 0.05, 2e6, rotations, fs, samples, seed)[0]
    shift_ok = excl["baseline_mc"] > 0.5 and abs(excl["baseline_mc"] - excl["baseline_closed_form"]) < 0.01
    checks.append(("excluded cap raises the baseline", shift_ok,
                   f"baseline {excl['baseline_mc']:.4f} vs closed form {excl['baseline_closed_form']:.4f}"))
    return checks


def cmd_verify(args) -> int:
    ok = True
    for name, passed, detail in verification_checks(args.quick, args.seed):
        print(f"{'PASS' if passed else 'FAIL'}  {name}  ({detail})")
        ok &= passed
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stokespec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, helptext in (
        ("simulate", cmd_simulate, "run the scenario described by a TOML config"),
        ("sweep", cmd_sweep, "run a distance sweep with the config's parameters"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config")
        s.add_argument("-o", "--output", help="override output_dir")
        s.add_argument("-j", "--workers", type=int, help="worker processes")
        s.add_argument("--no-plots", action="store_true")
        if name == "sweep":
            s.add_argument("--spans", help="comma-separated span counts, e.g. 1,2,5,10,20")
        s.set_defaults(func=fn)

    s = sub.add_parser("analyze", help="refit the spectra stored in a run directory")
    s.add_argument("dir")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("verify", help="run the Monte Carlo oracle checks")
    s.add_argument("--quick", action="store_true", help="fewer rotations and shorter realizations")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("plot", help="render SVG figures for a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationFailure, ArtifactMissingError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

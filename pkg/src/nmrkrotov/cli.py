"""Command-line entry point: ``nmrkrotov {optimize,simulate,profile,compare}``.

Exit codes: 0 success (also when an optimizer stops at its iteration cap),
2 configuration error, 3 input/output error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError, PulseTableParseError
from .io import format_float, load_config, read_pulse_table
from . import runner

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

logger = logging.getLogger("nmrkrotov")


def _snapshot_list(text: str):
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("snapshot iterations must be non-negative")
    return values


def _seed(text: str):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmrkrotov", description="Smooth Krotov pulse optimization for NMR.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key = value run configuration")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--seed", type=_seed, help="random seed (overrides run.seed)")

    p = sub.add_parser("optimize", help="optimize a pulse sequence")
    common(p)
    p.add_argument("--snapshots", type=_snapshot_list, help="iterations to export, e.g. 0,5,20")
    p.add_argument("--export-phase-amp", action="store_true", help="also write amplitude/phase tables")

    p = sub.add_parser("simulate", help="spectrum produced by a pulse table")
    common(p)
    p.add_argument("--pulses", required=True, help="pulse table CSV")

    p = sub.add_parser("profile", help="efficiency of a pulse table versus quadrupolar coupling")
    common(p)
    p.add_argument("--pulses", required=True, help="pulse table CSV")

    p = sub.add_parser("compare", help="optimizers x seeds with success rates")
    common(p)
    return parser


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)] + [",".join(format_float(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def _dispatch(args) -> int:
    overrides = {"out": args.out, "seed": args.seed}
    if args.command == "optimize":
        overrides["snapshots"] = args.snapshots
        if args.export_phase_amp:
            overrides["export_phase_amp"] = True
    cfg = load_config(args.config, **overrides)
    out = Path(cfg.out)

    if args.command == "optimize":
        outcome = runner.optimize(cfg)
        summary = runner.write_run(outcome, out, cfg.export_phase_amp)
        print(f"{summary['status']}: efficiency {summary['efficiency']:.4f} "
              f"after {summary['iterations']} iterations -> {out}")
        return EXIT_OK

    if args.command == "compare":
        summary = runner.compare(cfg, out)
        for name, s in summary.items():
            print(f"{name}: success {s['success_rate']:.2f}, best {s['best_efficiency']:.4f}")
        return EXIT_OK

    seq = read_pulse_table(args.pulses)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "simulate":
        try:
            rows, summary = runner.spectrum_rows(cfg, seq)
        except ValueError as exc:
            raise ConfigError("experiment", str(exc)) from None
        _write_csv(out / "spectrum.csv", ("frequency_hz", "intensity"), rows)
        _write_json(out / "spectrum_summary.json", summary)
    else:
        if cfg.kind == "two_spin_cos3":
            raise ConfigError("experiment.kind", "profile needs a spin-3/2 experiment")
        rows = runner.profile_rows(cfg, seq)
        _write_csv(out / "profile.csv", ("omega_q_hz", "efficiency"), rows)
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, PulseTableParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

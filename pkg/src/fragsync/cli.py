"""Command-line entry point.

Subcommands:
  run       execute one experiment file (all its methods x seeds)
  compare   run and print a per-method comparison table
  sweep     cartesian product over list-valued scalar keys in the file
  validate  check a config file and exit

Exit codes: 0 all runs finished, 1 some run hit a non-finite value,
2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfg_mod
from .config import ExperimentConfig
from .errors import ConfigError
from .harness import RunRecord, emit, run_experiment, summarize


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment YAML file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seeds", default=None, help="comma-separated seed list override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fragsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "compare", "sweep", "validate"):
        _add_common(sub.add_parser(name))
    return parser


def _effective_overrides(args) -> list[str]:
    overrides = list(args.overrides)
    if args.seeds is not None:
        overrides.append(f"seeds=[{args.seeds}]")
    return overrides


def _out_dir(args, cfg: ExperimentConfig, default: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg.out is not None:
        return Path(cfg.out)
    return Path(default)


def _fmt(value, spec: str, width: int) -> str:
    return f"{value:>{width}{spec}}" if value is not None else f"{'n/a':>{width}}"


def _print_summary(summary: dict) -> None:
    value = summary["threshold"]["value"]
    metric = summary["threshold"]["metric"]
    header = (
        f"{'method':<18} {'final loss':>12} {'final ppl':>12} "
        f"{f'steps({metric}<={value:g})':>18} {'virt. seconds':>14} {'bytes':>12}"
    )
    print(header)
    print("-" * len(header))
    for method, s in summary["methods"].items():
        steps = s["median_steps_to_threshold"]
        steps_str = "not reached" if steps is None else f"{steps:g}"
        bytes_median = sorted(s["bytes_transmitted"])[len(s["bytes_transmitted"]) // 2]
        print(
            f"{method:<18} {_fmt(s['median_final_loss'], '.6f', 12)} "
            f"{_fmt(s['median_final_ppl'], '.4f', 12)} {steps_str:>18} "
            f"{_fmt(s['median_virtual_seconds'], '.1f', 14)} {bytes_median:>12d}"
        )


def _run_one_case(cfg: ExperimentConfig, out_dir: Path, verbose_table: bool) -> list[RunRecord]:
    records = run_experiment(cfg)
    emit(records, cfg, out_dir)
    if verbose_table:
        _print_summary(summarize(records, cfg))
    for r in records:
        status = f"FAILED ({r.failure})" if r.failed else "ok"
        reached = "-" if r.steps_to_threshold is None else str(r.steps_to_threshold)
        print(
            f"  {r.method} seed={r.seed}: {status}, final_loss="
            f"{r.final_loss if r.final_loss is not None else 'n/a'}, steps_to_threshold={reached}"
        )
    print(f"  wrote results to {out_dir}")
    return records


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = _effective_overrides(args)

    try:
        raw = cfg_mod.load_raw(args.config)
        raw = cfg_mod.apply_overrides(raw, overrides)

        if args.command == "validate":
            cfg_mod.from_dict(raw)
            print(f"{args.config}: OK")
            return 0

        if args.command == "sweep":
            axes = cfg_mod.sweep_axes(raw)
            cases = cfg_mod.sweep_cases(raw)
            any_failed = False
            for i, case in enumerate(cases):
                cfg = cfg_mod.from_dict(case)
                base = _out_dir(args, cfg, f"runs/{Path(args.config).stem}")
                case_dir = base / f"case_{i:03d}" if len(cases) > 1 else base
                label = ", ".join(f"{k}={case[k]}" for k in axes) or "(no sweep axes)"
                print(f"case {i}: {label}")
                records = _run_one_case(cfg, case_dir, verbose_table=False)
                any_failed |= any(r.failed for r in records)
            return 1 if any_failed else 0

        cfg = cfg_mod.from_dict(raw)
        out_dir = _out_dir(args, cfg, f"runs/{Path(args.config).stem}")
        records = _run_one_case(cfg, out_dir, verbose_table=(args.command == "compare"))
        return 1 if any(r.failed for r in records) else 0

    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

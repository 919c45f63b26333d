"""Command-line driver.

Subcommands:
  run <config.json>     execute the experiment grid and emit the report
  report <results.json> <outdir>   re-emit CSVs/SVG from a saved report
  grad-check            finite-difference suite plus gradient-flow contract
  bench reservoir|metrics          statistical oracles

Errors print a machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import (CONFIG_SCHEMA, ConfigError, default_gaussian_config, load_config)
from .experiment import run_experiment
from .report import emit_report, load_report
from .stream import CIFAR10_CONFUSION_SCHEDULE


def standard_confusion_schedule(kind: str, num_classes: int, num_tasks: int,
                                classes_per_task: int):
    """Fixed class order splitting each similar pair (2i, 2i+1) across tasks;
    CIFAR datasets get the canonical label schedule."""
    if num_tasks != 5 or classes_per_task != 2 or num_classes < 10:
        raise ConfigError(
            "--fixed-class-order needs a 10-class, 5-task, 2-classes-per-task setup")
    if kind == "cifar":
        return [list(t) for t in CIFAR10_CONFUSION_SCHEDULE]
    return [[0, 2], [1, 4], [3, 6], [5, 8], [7, 9]]


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.fixed_class_order:
        raw = dict(cfg.raw)
        raw["fixed_class_order"] = standard_confusion_schedule(
            cfg.dataset_spec["kind"], cfg.dataset_spec.get("num_classes", 10),
            cfg.num_tasks, cfg.classes_per_task)
        from .config import parse_config
        cfg = parse_config(raw)
    report = run_experiment(cfg, jobs=args.jobs, seed_offset=args.seed_offset)
    outdir = args.out or cfg.output_dir
    written = emit_report(report, outdir)
    failures = [c for c in report.cells if c.error]
    print(f"wrote {len(written)} files to {outdir}")
    for agg in report.aggregates:
        aa = agg.get("aa_mean")
        aa_txt = f"{aa:.4f}" if aa is not None else "n/a"
        print(f"  {agg['method']:<10} M={agg['capacity']:<6} AA={aa_txt}")
    if failures:
        for c in failures:
            print(f"  FAILED {c.method} M={c.capacity} seed={c.seed}: {c.error}",
                  file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.results)
    written = emit_report(report, args.outdir)
    print(f"wrote {len(written)} files to {args.outdir}")
    return 0


def _cmd_grad_check(args) -> int:
    from .diagnostics import run_grad_check, run_gradient_flow_check

    worst = run_grad_check(num_instances=args.instances, seed=args.seed)
    ok = True
    for name, err in worst.items():
        status = "ok" if err <= args.tolerance else "FAIL"
        ok = ok and err <= args.tolerance
        print(f"{name:<16} max rel err {err:.3e}  {status}")
    flow = run_gradient_flow_check(num_instances=max(args.instances // 2, 1),
                                   seed=args.seed + 1)
    leaks = (flow["align_to_stream_leaks"] + flow["buffer_ce_to_stream_leaks"]
             + flow["stream_to_buffer_leaks"])
    print(f"gradient flow    {flow['instances']} instances, {leaks} leaks  "
          f"{'ok' if leaks == 0 else 'FAIL'}")
    return 0 if ok and leaks == 0 else 1


def _cmd_bench(args) -> int:
    from .diagnostics import run_inclusion_bench, run_metrics_bench, run_reservoir_bench

    if args.target == "reservoir":
        stats = run_reservoir_bench(trials=args.trials, seed=args.seed)
        print(json.dumps(stats, indent=2))
        ok = abs(stats["first_half_fraction"] - 0.5) <= 0.05
        incl = run_inclusion_bench(trials=args.trials, seed=args.seed + 1)
        print(json.dumps(incl, indent=2))
        ok = ok and incl["worst_deviation_sds"] < 4.0
    else:
        stats = run_metrics_bench(num_matrices=args.trials, seed=args.seed)
        print(json.dumps(stats, indent=2))
        ok = stats["max_abs_difference"] <= 1e-12
    print("ok" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bisoncl",
        description="Online class-incremental learning experiment driver")
    parser.add_argument("--print-schema", action="store_true",
                        help="print the experiment config JSON schema and exit")
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the shipped Split-Gaussian-10 config and exit")
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="execute an experiment grid")
    p_run.add_argument("config", help="path to the experiment config JSON")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.add_argument("--fixed-class-order", action="store_true",
                       help="use the standard confusion-protocol class schedule")
    p_run.add_argument("--out", default=None, help="override the config output_dir")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="re-emit files from a saved results.json")
    p_rep.add_argument("results")
    p_rep.add_argument("outdir")
    p_rep.set_defaults(func=_cmd_report)

    p_gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p_gc.add_argument("--instances", type=int, default=20)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.set_defaults(func=_cmd_grad_check)

    p_bench = sub.add_parser("bench", help="statistical oracles")
    p_bench.add_argument("target", choices=("reservoir", "metrics"))
    p_bench.add_argument("--trials", type=int, default=500)
    p_bench.add_argument("--seed", type=int, default=7)
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return 0
    if args.print_default_config:
        print(json.dumps(default_gaussian_config(), indent=2))
        return 0
    if not args.command:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        json.dump({"error": str(exc), "kind": "config"}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except (OSError, ValueError) as exc:
        json.dump({"error": str(exc), "kind": type(exc).__name__}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""The shipped Split-Gaussian-10 benchmark: four methods, five seeds, one
buffer size, with per-task upper bounds and the full report (CSVs plus the
forgetting-vs-intransigence scatter).

Takes under a minute. Run:  python demos/04_split_gaussian_benchmark.py
"""

import time

from bisoncl.config import default_gaussian_config, parse_config
from bisoncl.experiment import run_experiment
from bisoncl.metrics import average_accuracy
from bisoncl.report import emit_report

cfg = parse_config(default_gaussian_config(output_dir="demo_results"))
print("grid:", [m["id"] for m in cfg.raw["methods"]],
      "x capacities", cfg.buffer_capacities, "x seeds", cfg.seeds)

t0 = time.perf_counter()
report = run_experiment(cfg)
print(f"ran {len(report.cells)} cells in {time.perf_counter() - t0:.1f}s\n")

print(f"{'method':<10} {'AA':>14} {'AF':>14} {'AI':>14}")
for agg in report.aggregates:
    print(f"{agg['method']:<10} "
          f"{agg['aa_mean']:>7.3f} ± {agg['aa_std']:.3f} "
          f"{agg['af_mean']:>7.3f} ± {agg['af_std']:.3f} "
          f"{agg['ai_mean']:>7.3f} ± {agg['ai_std']:.3f}")

# accuracy trajectory of one run: watch early tasks erode (or not)
cell = next(c for c in report.cells if c.method == "bison" and c.seed == 0)
print("\nbison seed 0, accuracy rows after each task:")
for k, row in enumerate(cell.matrix.rows):
    cells = " ".join(f"{a:.2f}" for a in row)
    print(f"  after task {k}: [{cells}]  AA_{k + 1} = "
          f"{average_accuracy(cell.matrix, k + 1):.3f}")

paths = emit_report(report, "demo_results")
print(f"\nwrote {len(paths)} files to demo_results/ "
      "(see interplay.svg for the stability-plasticity scatter)")

"""Run the reference three-way comparison and print the summary table.

Equivalent to `fragsync compare configs/reference.yaml` but trimmed to three
seeds so it finishes in a few seconds. The full ten-seed comparison is what
the acceptance suite checks.
"""

import time
from pathlib import Path

import numpy as np

from fragsync import load_config, run_experiment, summarize

config_path = Path(__file__).resolve().parent.parent / "configs" / "reference.yaml"
cfg = load_config(config_path, overrides=["seeds=[0,1,2]"])

start = time.time()
records = run_experiment(cfg)
summary = summarize(records, cfg)
print(f"{len(records)} runs in {time.time() - start:.1f}s "
      f"({cfg.total_steps} steps, {cfg.num_workers} workers each)\n")

print(f"{'method':<18} {'median loss':>12} {'median ppl':>11} {'steps to loss<=1':>17} "
      f"{'virt secs':>10} {'bytes/run':>10}")
for method, s in summary["methods"].items():
    steps = s["median_steps_to_threshold"]
    print(f"{method:<18} {s['median_final_loss']:>12.4f} {s['median_final_ppl']:>11.4f} "
          f"{steps if steps is not None else 'not reached':>17} "
          f"{s['median_virtual_seconds']:>10.0f} {s['bytes_transmitted'][0]:>10d}")

print("\nvalidation-loss curves (median over seeds):")
step_axis = [p.step for p in records[0].points]
for method in cfg.methods:
    curves = np.array([[p.val_loss for p in r.points] for r in records if r.method == method])
    med = np.median(curves, axis=0)
    picks = range(0, len(step_axis), max(1, len(step_axis) // 8))
    line = "  ".join(f"{step_axis[i]:>4d}:{med[i]:.3f}" for i in picks)
    print(f"  {method:<18} {line}")

print("\nNote the wall-clock column: blocking full-model syncs stall the "
      "workers, overlapped fragment syncs do not.")

"""Cross-task confusion protocol: a pair-structured dataset, a fixed class
schedule that splits each similar pair across tasks, and the SC@1 / P_sim
trajectories that quantify whether residual errors stay inside the pairs.

Run:  python demos/05_confusion_analysis.py
"""

import numpy as np

from bisoncl.harness import run_single
from bisoncl.methods import MethodConfig
from bisoncl.metrics import SimilarPairs, p_sim, row_normalize, sc_at_1
from bisoncl.model import ModelConfig
from bisoncl.stream import AugmentPolicy, GaussianSpec, gen_synthetic_gaussian

# classes (2i, 2i+1) share a base direction: five similar pairs by design
spec = GaussianSpec(num_classes=10, dim=16, train_per_class=120, test_per_class=40,
                    radius=3.0, sigma=0.8, pair_offset=1.0)
dataset = gen_synthetic_gaussian(spec, seed=5)
pairs = SimilarPairs([(2 * i, 2 * i + 1) for i in range(5)])

# the schedule plants the two halves of every pair in different tasks
schedule = [[0, 2], [1, 4], [3, 6], [5, 8], [7, 9]]
print("task schedule:", schedule)

model_cfg = ModelConfig(input_dim=16, num_classes=10, hidden_dims=(48,), embed_dim=12)

results = {}
for method_id, aug in (("bison", "vector-noise"), ("er-ncm", "none"),
                       ("ssil-lite", "none")):
    res = run_single(dataset, num_tasks=5, classes_per_task=2,
                     method_cfg=MethodConfig(method=method_id,
                                             augmentation=AugmentPolicy(aug)),
                     model_cfg=model_cfg, capacity=150, seed=0,
                     fixed_class_order=schedule)
    results[method_id] = res

# --- SC@1 averaged over classes seen so far, per boundary ------------------------
print("\nmean SC@1 over seen classes after each task (lower = less pair confusion)")
print(f"{'after task':<12}" + "".join(f"{m:>12}" for m in results))
for k in range(5):
    seen = sorted(c for t in schedule[:k + 1] for c in t)
    line = f"{k:<12}"
    for method_id, res in results.items():
        rows = row_normalize(res.task_confusions[k].counts)
        vals = [sc_at_1(rows, pairs, c) for c in seen]
        line += f"{np.mean(vals):>12.3f}"
    print(line)

print("\nwithin-pair precision P_sim per class after the final task")
print(f"{'class':<8}" + "".join(f"{m:>12}" for m in results))
for c in range(10):
    line = f"{c:<8}"
    for method_id, res in results.items():
        rows = row_normalize(res.confusion.counts)
        v = p_sim(rows, pairs, c)
        line += f"{'undef' if v is None else format(v, '.3f'):>12}"
    print(line)

print("\nfinal accuracy rows:")
for method_id, res in results.items():
    print(f"  {method_id:<10}", " ".join(f"{a:.2f}" for a in res.matrix.rows[-1]))

# Steps to a loss threshold across batch sizes, and the batch size that
# minimises the total number of gradient samples K b.

import numpy as np

from critbatch import (
    HyperParams, NoisyQuadratic, estimate_critical_batch, fit_rational, get_rule, sfo_sweep, summarize,
)
from critbatch.sweep import halving_runs, records_csv, summary_csv
from critbatch.plots import emit_plots

problem = NoisyQuadratic(dimension=10, noise_variance=4.0)
hyper = HyperParams(alpha=0.01, beta=0.9, gamma=0.9)
batches = [2**j for j in range(9)]

for name in ("sgd", "momentum", "adam"):
    records = sfo_sweep(problem, get_rule(name), hyper, batches, tau=0.3, budget=50, seeds=3,
                        theta0=np.ones(10))
    rows = summarize(records)
    b, sfo = estimate_critical_batch(records)
    print(f"--- {name}: critical batch {b}, min Kb {sfo:g}, halving runs {halving_runs(records)}")
    print(summary_csv(rows), end="")

# rational fit on the last sweep: K(b) ~ a b / (b - b0)
try:
    fit = fit_rational(records)
    print(f"fit: asymptote {fit.asymptote:.1f}, implied critical batch {fit.critical_batch:.2f}")
except ValueError as err:
    print("fit failed:", err)

print(records_csv(records[:3], wall_time=False))
print("wrote", emit_plots("demo_output/sweep", summary=rows, critical=(b, sfo)))

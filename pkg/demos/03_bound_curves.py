# Closed-form step bounds as functions of the batch size b.
# K(b) falls like a hyperbola toward an asymptote; K(b) b is U-shaped with its
# minimum at twice the domain threshold.

import numpy as np

from critbatch import (
    BoundConstants, critical_batch_lower, critical_batch_upper, curve_table,
    fit_condition_residuals, lower_steps,
)
from critbatch.bounds import curve_csv, golden_section_minimize
from critbatch.plots import emit_plots

k = BoundConstants(A=3.5, B=0.8, C=0.25, D=0.0, E=2.0, F=0.5, G=0.1, eps=1.0, delta=0.5)

lo = critical_batch_lower(k)
up = critical_batch_upper(k)
print(f"lower: threshold {k.lower_threshold:.4f}, b_* = {lo.b:.6f}, min Kb = {lo.sfo:.6f}")
print(f"upper: threshold {k.upper_threshold:.4f}, b^* = {up.b:.6f}, min Kb = {up.sfo:.6f}")
print(f"|b_* - b^*| / b_* = {abs(lo.b - up.b) / lo.b:.4f}")
print("fit residuals", fit_condition_residuals(k))

# numeric cross-check of the closed form
x, fx = golden_section_minimize(lambda b: lower_steps(b, k) * b, 1.07, 1e3)
print(f"golden section: b = {x:.6f}, Kb = {fx:.6f}")

rows = curve_table(k, list(np.geomspace(2.2, 200, 48)))
print(curve_csv(rows[:5]))
print("wrote", emit_plots("demo_output/bounds", curves=rows))

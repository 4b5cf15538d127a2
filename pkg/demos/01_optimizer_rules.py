# Six preconditioner rules, one update loop.
# Each rule only changes the diagonal h; momentum and bias correction are shared.

import numpy as np

from critbatch import ALL_RULES, HyperParams, NoisyQuadratic, StopCondition, run

problem = NoisyQuadratic(dimension=20, noise_variance=4.0)   # L = 0.5 ||theta||^2, noisy gradients
hyper = HyperParams(alpha=1e-3, beta=0.9, gamma=0.9)          # constant step, Adam-style momentum
stop = StopCondition(max_steps=2000)

print(f"{'rule':10s} {'beta':>5s} {'gamma':>5s} {'final loss':>12s} {'h min':>10s} {'h max':>10s}")
for rule in ALL_RULES:
    traj = run(problem, hyper, rule, b=16, stop=stop, seed=0)
    eff = traj.hyper                                         # coefficients the rule pins to zero
    h = traj.h[-1]
    print(f"{rule.name:10s} {eff.beta:5.2f} {eff.gamma:5.2f} {traj.losses[-1]:12.5f} {h.min():10.4g} {h.max():10.4g}")

# sgd and momentum keep h = 1, so alpha = 1e-3 moves slowly;
# the adaptive rules divide by roughly |g| and take unit-size steps in every coordinate.

# per-step table for one run
traj = run(problem, hyper, ALL_RULES[4], b=16, stop=StopCondition(max_steps=5), seed=0)
print()
print(traj.to_csv())

# A small nonconvex finite sum: a two-layer softplus MLP on two Gaussian
# clusters.  Minibatches are drawn from 128 examples; thresholds are checked
# once per epoch on the full loss.

import numpy as np

from critbatch import FiniteSumMLP, HyperParams, full_gradient, get_rule, make_rng, sfo_sweep, summarize
from critbatch.oracle import minibatch_gradient

problem = FiniteSumMLP(sample_count=128, hidden=8)
theta0 = problem.init_params(make_rng(0))
print("parameters:", problem.dimension, " initial loss:", round(problem.loss(theta0), 4))
print("per-example gradient variance at theta0:", round(problem.gradient_table(theta0).var(axis=0).sum(), 4))

# the full batch without replacement reproduces the full gradient bit for bit
g = minibatch_gradient(problem, theta0, 128, make_rng(1), replace=False)
print("b = n exact:", np.array_equal(g, full_gradient(problem, theta0)))

hyper = HyperParams(alpha=0.01, beta=0.9, gamma=0.9)
records = sfo_sweep(problem, get_rule("adam"), hyper, [1, 2, 4, 8, 16, 32, 64, 128], tau=0.35,
                    budget=300, seeds=3, theta0=theta0)
for row in summarize(records):
    print(row)

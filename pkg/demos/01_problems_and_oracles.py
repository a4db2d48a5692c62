"""Building federated objectives and checking their gradient oracles.

Every problem is a finite sum per worker, so local gradients, the
intra-node variance sigma^2 and the inter-node spread zeta are exact.
"""

import numpy as np

from stemfl import finite_diff_check, least_squares_from_offsets, make_problem, measure_profile
from stemfl.experiment import REFERENCE_PROBLEM
from stemfl.problems import default_probes, inter_node_spread, intra_node_variance

# the reference problem: logistic loss plus a bounded nonconvex penalty,
# eight workers with strongly skewed labels
p = make_problem(REFERENCE_PROBLEM)
print("family", p.family.value, "dim", p.dim, "workers", p.workers, "samples/worker", p.n_samples(0))

x = np.zeros(p.dim)
print("f(0) =", p.loss(x))
print("|grad f(0)|^2 =", float(p.global_gradient(x) @ p.global_gradient(x)))

# label skew shows up as inter-node spread
print("zeta at 0 =", inter_node_spread(p, x))
print("sigma^2 at 0, worker 0 =", intra_node_variance(p, 0, x))

# a minibatch gradient is the mean of per-sample gradients
batch = [0, 5, 5, 17]
g = p.sample_gradient(0, x, batch)
rows = p.per_sample_gradients(0, x, batch)
print("minibatch == mean of rows:", np.array_equal(g, rows.mean(axis=0)))

# central differences against the analytic gradient
probes = default_probes(p, n_points=3)
print("finite-difference relative error:", finite_diff_check(p, probes))

# constants measured on probe points feed the schedules
prof = measure_profile(p, probes)
print(prof)

# two workers whose gradients differ by the constant offset (3, 4)
q = least_squares_from_offsets([[2.0, 0.5], [0.5, 1.0]], [[0.0, 0.0], [3.0, 4.0]], n_per_worker=5, noise=0.5)
print("zeta for offsets (0,0) vs (3,4):", measure_profile(q, [np.zeros(2), np.ones(2)]).zeta)

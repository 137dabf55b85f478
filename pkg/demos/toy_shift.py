"""Two-dimensional confounded shift: who wins on the target, and where.

Run: python demos/toy_shift.py
"""

import numpy as np

from confshift.analysis import improvement_region_scan, population_pair
from confshift.objective import RegParams
from confshift.optimizer import OptimizerOptions, minimize
from confshift.scm import best_linear, population_moments, risk, subspace_oracle, toy_params

p = toy_params(gamma=1.0)
src, tgt = population_moments(p, "source"), population_moments(p, "target")

b_s, b_t = best_linear(src), best_linear(tgt)
oracle = subspace_oracle(p)
print("source minimizer ", b_s, " target risk", risk(tgt, b_s))
print("target minimizer ", b_t, " target risk", risk(tgt, b_t))
print("invariant oracle ", oracle, " target risk", risk(tgt, oracle))

# the learner sees source labels and target covariates only
m, _ = population_pair(p)
print("\neta      |V'Delta|   R_S       R_T")
for eta in (0.0, 1.0, 10.0, 100.0):
    fit = minimize(m, RegParams(1e-3, eta), 1, opts=OptimizerOptions(n_starts=3))
    print(f"{eta:<8g} {abs(fit.v.v[1, 0]):.4f}     {risk(src, fit.beta):.4f}    {risk(tgt, fit.beta):.4f}")

# Here beta_star is orthogonal to Delta, which lies outside the improvement
# region below, so suppressing the confounded direction costs target risk.
print("\ntoy (source var 1, target var 4):", improvement_region_scan(1.0, 4.0, 1.0, np.linspace(-2, 2, 4001)).scanned)

# scalar model: range of Delta' beta_star / gamma where dropping the confounded direction helps
grid = np.linspace(-2, 2, 4001)
for s_s, s_t in ((2.0, 10.0), (10.0, 2.0)):
    reg = improvement_region_scan(s_s, s_t, 10.0, grid)
    print(f"\nsource var {s_s:g}, target var {s_t:g}: improvement for x in {reg.scanned}")

"""Alignment with the confounded subspace and the target-risk gap as the penalty grows.

Run: python demos/canonical_bounds.py
"""

from confshift.analysis import alignment_bound_check, population_pair, stability_bound_check
from confshift.objective import RegParams
from confshift.optimizer import OptimizerOptions, minimize
from confshift.scm import CANONICAL_ELL, canonical_params

p = canonical_params()
m, _ = population_pair(p)
upsilon = 0.1

print("eta       |V'Delta|_op  bound^(1/6)   gap        gap bound")
for eta in (1e1, 1e2, 1e3, 1e4):
    reg = RegParams(upsilon, eta)
    fit = minimize(m, reg, CANONICAL_ELL, opts=OptimizerOptions(n_starts=4))
    align = alignment_bound_check(p, fit.v, reg)
    stab = stability_bound_check(p, fit, reg, epsilon=1.0)
    print(
        f"{eta:<9g} {align.terms['max_cosine']:.4f}        {align.rhs ** (1 / 6):.4f}        "
        f"{stab.lhs:.5f}    {stab.rhs:.5f}"
    )

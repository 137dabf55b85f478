"""Self-contained numerical check suite over seeded synthetic instances.

Each check returns a :class:`CheckResult`.  ``failed`` means an identity or
a bound did not hold on inputs that satisfy its hypotheses; checks whose
hypotheses fail are reported with warnings and do not count as failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    alignment_bound_check,
    eigenvalue_lemma_check,
    improvement_at,
    improvement_region_scan,
    population_pair,
    stability_bound_check,
    surrogate_bound_check,
)
from .objective import RegParams
from .optimizer import FitResult, OptimizerOptions, minimize
from .scm import (
    best_linear,
    best_linear_closed_form,
    canonical_params,
    CANONICAL_ELL,
    improvement_condition,
    population_moments,
    random_params,
    restricted_least_squares,
    risk,
    risk_gap_identity,
)
from .stiefel import random_point, random_tangent, retract_polar


@dataclass
class CheckResult:
    name: str
    cases: int = 0
    violations: int = 0
    flagged: int = 0
    max_error: float = 0.0
    details: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.violations > 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": not self.failed,
            "cases": self.cases,
            "violations": self.violations,
            "flagged": self.flagged,
            "max_error": self.max_error,
            "details": self.details,
            "warnings": self.warnings,
        }


def _rel(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / (1.0 + np.max(np.abs(b))))


def _instances(seed: int, n: int, d: int = 4, k: int = 2, r: int = 2):
    return [random_params(d, k, r, seed * 1000 + i) for i in range(n)]


def check_identities(seed: int, n_instances: int, n_betas: int, tol: float = 1e-10) -> list[CheckResult]:
    gap_res = CheckResult("risk_gap_identity")
    inv_res = CheckResult("subspace_invariance")
    cf_res = CheckResult("best_linear_closed_form")
    rng = np.random.default_rng(seed)
    for p in _instances(seed, n_instances):
        for _ in range(n_betas):
            gap, quad = risk_gap_identity(p, rng.standard_normal(p.d))
            err = abs(gap - quad) / (1.0 + abs(quad))
            gap_res.cases += 1
            gap_res.max_error = max(gap_res.max_error, err)
            gap_res.violations += err > tol
        src, tgt = population_moments(p, "source"), population_moments(p, "target")
        err = _rel(restricted_least_squares(src, p.theta), restricted_least_squares(tgt, p.theta))
        inv_res.cases += 1
        inv_res.max_error = max(inv_res.max_error, err)
        inv_res.violations += err > tol
        for env, m in (("source", src), ("target", tgt)):
            err = _rel(best_linear(m), best_linear_closed_form(p, env))
            cf_res.cases += 1
            cf_res.max_error = max(cf_res.max_error, err)
            cf_res.violations += err > tol
    return [gap_res, inv_res, cf_res]


def check_improvement_condition(seed: int, n_instances: int) -> CheckResult:
    """Closed-form criterion against a direct comparison of target risks."""
    res = CheckResult("improvement_condition")
    for p in _instances(seed, n_instances, d=3, k=1, r=2):
        verdict = improvement_condition(p)
        src, tgt = population_moments(p, "source"), population_moments(p, "target")
        diff = risk(tgt, restricted_least_squares(src, p.theta), tol=0.0) - risk(tgt, best_linear(src), tol=0.0)
        res.cases += 1
        margin = abs(verdict.lhs - verdict.rhs) / (1.0 + abs(verdict.rhs))
        if margin < 1e-9:
            continue  # boundary case, either answer is acceptable
        if verdict.improves != (diff < 0):
            res.violations += 1
            res.details.append({"lhs": verdict.lhs, "rhs": verdict.rhs, "direct": diff})
        res.max_error = max(res.max_error, abs((verdict.lhs - verdict.rhs) - diff) / (1.0 + abs(diff)))
    return res


def check_surrogate(seed: int, n_instances: int) -> CheckResult:
    res = CheckResult("surrogate_bound")
    rng = np.random.default_rng(seed + 17)
    for i, p in enumerate(_instances(seed + 1, n_instances, d=5, k=2, r=2)):
        ell = int(rng.integers(1, p.d + 1))
        v = random_point(p.d, ell, seed * 7919 + i)
        alpha = rng.standard_normal(ell) * rng.uniform(0.1, 3.0)
        xi, zeta = float(np.exp(rng.uniform(-3, 3))), float(np.exp(rng.uniform(-3, 3)))
        rep = surrogate_bound_check(p, v, alpha, xi, zeta)
        res.cases += 1
        if rep.violation:
            res.violations += 1
            res.details.append(rep.to_dict())
    return res


def check_eigenvalue_lemma(seed: int, n_instances: int) -> CheckResult:
    res = CheckResult("eigenvalue_lemma")
    rng = np.random.default_rng(seed + 29)
    for i in range(n_instances):
        d = int(rng.integers(2, 8))
        ell = int(rng.integers(1, d + 1))
        a = rng.standard_normal((d, int(rng.integers(1, d + 1))))
        sigma = a @ a.T
        rep = eigenvalue_lemma_check(sigma, random_point(d, ell, seed * 104729 + i), float(np.exp(rng.uniform(-4, 3))))
        res.cases += 1
        res.max_error = max(res.max_error, rep.lhs)
        res.violations += not rep.satisfied
    # equality case: singular value squared equal to upsilon
    tight = eigenvalue_lemma_check(np.diag([2.0, 2.0]), np.array([[1.0], [0.0]]), 2.0)
    gap = abs(tight.terms["second_eigenvalues"].max() - 0.125)
    res.cases += 1
    res.details.append({"tight_case_error": gap})
    res.violations += (gap > 1e-10) or not tight.satisfied
    return res


def check_region(tol: float = 1e-3) -> CheckResult:
    res = CheckResult("improvement_region")
    grid = np.linspace(-2.0, 2.0, 4001)
    for s_s, s_t, tau in ((2.0, 10.0, 10.0), (10.0, 2.0, 10.0)):
        reg = improvement_region_scan(s_s, s_t, tau, grid)
        res.cases += 1
        err = np.inf if reg.scanned is None else max(abs(a - b) for a, b in zip(reg.scanned, reg.analytic))
        res.max_error = max(res.max_error, err)
        res.violations += err > tol
        res.details.append({"sigma_s_sq": s_s, "sigma_t_sq": s_t, "tau_sq": tau, "scanned": reg.scanned, "analytic": reg.analytic})
    res.cases += 1
    res.violations += improvement_region_scan(5.0, 5.0, 10.0, grid).scanned is not None
    # sanity: the scan's sign agrees with the risk difference at the midpoint
    res.violations += improvement_at(2.0, 10.0, 10.0, -0.5) >= 0
    return res


def _perturb(fit: FitResult, scale: float, seed: int) -> FitResult:
    v = retract_polar(fit.v, random_tangent(fit.v, seed, scale))
    return FitResult(v, fit.alpha, v.v @ fit.alpha, fit.objective, np.nan, fit.iterations, False, seed=fit.seed)


def check_stationary_bounds(
    upsilon: float,
    eta_grid,
    epsilons,
    delta_floor: float,
    opts: OptimizerOptions,
    perturb_scale: float = 0.0,
) -> list[CheckResult]:
    """Alignment and stability bounds at fitted points of the canonical instance."""
    p = canonical_params()
    m, _ = population_pair(p)
    align = CheckResult("alignment_bound")
    stab = CheckResult("stability_bound")
    mono = CheckResult("gap_monotone_in_eta")
    gaps = []
    for j, eta in enumerate(sorted(float(e) for e in eta_grid)):
        reg = RegParams(upsilon, eta)
        fit = minimize(m, reg, CANONICAL_ELL, opts=opts)
        if perturb_scale > 0:
            fit = _perturb(fit, perturb_scale, opts.seed + j)
        rep = alignment_bound_check(p, fit.v, reg, delta_floor)
        align.cases += 1
        align.flagged += not rep.hypotheses_ok
        align.violations += rep.violation
        align.warnings += [f"eta={eta:g}: {w}" for w in rep.warnings]
        align.details.append({"eta": eta, "lhs": rep.lhs, "rhs": rep.rhs, "max_cosine": rep.terms["max_cosine"]})
        for eps in epsilons:
            srep = stability_bound_check(p, fit, reg, delta_floor, float(eps))
            stab.cases += 1
            stab.flagged += not srep.hypotheses_ok
            stab.violations += srep.violation
            stab.details.append({"eta": eta, "epsilon": float(eps), "lhs": srep.lhs, "rhs": srep.rhs})
        gaps.append(stab.details[-1]["lhs"])
    rises = [b - a for a, b in zip(gaps, gaps[1:])]
    mono.cases = len(rises)
    mono.max_error = max([0.0] + rises)
    if perturb_scale == 0:
        mono.violations = sum(r > 1e-6 for r in rises)
    else:
        mono.flagged = sum(r > 1e-6 for r in rises)
    mono.details.append({"gaps": gaps})
    return [align, stab, mono]


def run_suite(
    seed: int = 0,
    n_instances: int = 20,
    n_betas: int = 10,
    upsilon: float = 0.1,
    eta_grid=(1e1, 1e2, 1e3, 1e4),
    epsilons=(0.1, 1.0, 10.0),
    delta_floor: float = 0.05,
    opts: OptimizerOptions = OptimizerOptions(n_starts=4),
    perturb_scale: float = 0.0,
) -> list[CheckResult]:
    results = check_identities(seed, n_instances, n_betas)
    results.append(check_improvement_condition(seed, n_instances))
    results.append(check_surrogate(seed, n_instances))
    results.append(check_eigenvalue_lemma(seed, n_instances))
    results.append(check_region())
    results += check_stationary_bounds(upsilon, eta_grid, epsilons, delta_floor, opts, perturb_scale)
    return results

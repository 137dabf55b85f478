"""Regularization sweeps and numerical checks of the risk and alignment bounds.

Every checker returns a :class:`BoundReport` holding the two sides of an
inequality, the inputs that produced them and any hypothesis that failed.
A report whose hypotheses hold but whose inequality fails is a bug, since
the bounds are theorems about the model.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .objective import MomentPair, RegParams, evaluate, stability_penalty
from .optimizer import FitResult, OptimizerOptions, minimize, stationarity_residual
from .scm import (
    EnvironmentMoments,
    ParameterError,
    RankDeficientError,
    ScmParams,
    best_linear,
    population_moments,
    psd_sqrt,
    restricted_least_squares,
    risk,
    scalar_shift_params,
)
from .stiefel import StiefelPoint

log = logging.getLogger(__name__)

BOUND_RTOL = 1e-10
DEFAULT_UPSILON_GRID = tuple(np.logspace(-3, 1, 9))
DEFAULT_ETA_GRID = tuple(np.logspace(-2, 4, 13))
SWEEP_COLUMNS = (
    "upsilon", "eta", "risk_source", "risk_target", "gap",
    "penalty_frobenius", "alpha_norm", "grad_norm", "iterations", "converged",
)


def stationarity_threshold(phi: float) -> float:
    """Residual below which a point counts as approximately stationary."""
    return 1e-6 * (1.0 + abs(phi))


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    satisfied: bool
    inputs: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)
    hypotheses_ok: bool = True
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, name, lhs, rhs, extra_ok: bool = True, **kw) -> "BoundReport":
        lhs, rhs = float(lhs), float(rhs)
        ok = lhs <= rhs + BOUND_RTOL * (1.0 + abs(rhs)) if np.isfinite(rhs) else rhs > 0
        return cls(name, lhs, rhs, bool(ok and extra_ok), **kw)

    @property
    def violation(self) -> bool:
        """Inequality fails although every hypothesis holds."""
        return self.hypotheses_ok and not self.satisfied

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "satisfied": self.satisfied,
            "hypotheses_ok": self.hypotheses_ok,
            "inputs": _jsonable(self.inputs),
            "terms": _jsonable(self.terms),
            "warnings": list(self.warnings),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# --------------------------------------------------------------------------- sweeps


@dataclass
class CellRecord:
    upsilon: float
    eta: float
    fit: FitResult | None
    risk_source: float | None
    risk_target: float | None = None
    gap: float | None = None
    penalty_frobenius: float | None = None
    alpha_norm: float | None = None
    error: str | None = None

    def row(self) -> dict:
        fit = self.fit
        return {
            "upsilon": self.upsilon,
            "eta": self.eta,
            "risk_source": self.risk_source,
            "risk_target": self.risk_target,
            "gap": self.gap,
            "penalty_frobenius": self.penalty_frobenius,
            "alpha_norm": self.alpha_norm,
            "grad_norm": fit.grad_norm if fit else None,
            "iterations": fit.iterations if fit else None,
            "converged": fit.converged if fit else False,
        }


@dataclass
class SweepResult:
    upsilon_grid: list[float]
    eta_grid: list[float]
    cells: list[list[CellRecord]]
    baselines: dict = field(default_factory=dict)
    ell: int | None = None
    evaluation: str | None = None  # None, "population" or "held_out"

    def column(self, name: str) -> np.ndarray:
        """``len(upsilon_grid) x len(eta_grid)`` array of one record field (NaN when missing)."""
        out = np.full((len(self.upsilon_grid), len(self.eta_grid)), np.nan)
        for i, row in enumerate(self.cells):
            for j, cell in enumerate(row):
                val = cell.row()[name]
                if val is not None:
                    out[i, j] = float(val)
        return out

    def rows(self) -> list[dict]:
        return [cell.row() for row in self.cells for cell in row]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows():
            writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def baselines_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["baseline", "risk_source", "risk_target"])
        for name in ("source_minimizer", "target_minimizer"):
            b = self.baselines.get(name)
            if b is not None:
                writer.writerow([name, repr(b["risk_source"]), "" if b["risk_target"] is None else repr(b["risk_target"])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "upsilon_grid": list(self.upsilon_grid),
            "eta_grid": list(self.eta_grid),
            "ell": self.ell,
            "evaluation": self.evaluation,
            "baselines": _jsonable(self.baselines),
            "cells": [
                [dict(c.row(), error=c.error, beta=None if c.fit is None else c.fit.beta.tolist()) for c in row]
                for row in self.cells
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _fit_cell(m, ell, upsilon, eta, opts, eval_target) -> CellRecord:
    try:
        reg = RegParams(float(upsilon), float(eta))
        fit = minimize(m, reg, ell, opts=opts)
    except Exception as exc:  # recorded per cell, sweep continues
        log.warning("cell upsilon=%g eta=%g failed: %s", upsilon, eta, exc)
        return CellRecord(float(upsilon), float(eta), None, None, error=f"{type(exc).__name__}: {exc}")
    rec = CellRecord(
        float(upsilon),
        float(eta),
        fit,
        risk(m.source, fit.beta),
        penalty_frobenius=stability_penalty(fit.v, m),
        alpha_norm=float(np.linalg.norm(fit.alpha)),
    )
    if eval_target is not None:
        rec.risk_target = risk(eval_target, fit.beta)
        rec.gap = rec.risk_target - rec.risk_source
    return rec


def sweep(
    m: MomentPair,
    ell: int,
    upsilon_grid: Sequence[float] = DEFAULT_UPSILON_GRID,
    eta_grid: Sequence[float] = DEFAULT_ETA_GRID,
    opts: OptimizerOptions = OptimizerOptions(),
    eval_target: EnvironmentMoments | None = None,
    evaluation: str | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Fit every ``(upsilon, eta)`` pair of the grid.

    ``eval_target`` carries labeled target statistics used only to score the
    fits; the learner itself sees ``m``, which holds no target labels.
    Cells run on a thread pool and are stored by grid index, so the result
    does not depend on completion order.
    """
    ups = sorted(float(u) for u in upsilon_grid)
    etas = sorted(float(e) for e in eta_grid)
    if not ups or not etas:
        raise ParameterError("grids must be non-empty")
    if eval_target is not None and evaluation is None:
        evaluation = "held_out"
    jobs = [(i, j) for i in range(len(ups)) for j in range(len(etas))]
    workers = workers or min(4, os.cpu_count() or 1)
    cells: list[list[CellRecord | None]] = [[None] * len(etas) for _ in ups]
    if workers == 1:
        for i, j in jobs:
            cells[i][j] = _fit_cell(m, ell, ups[i], etas[j], opts, eval_target)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_fit_cell, m, ell, ups[i], etas[j], opts, eval_target): (i, j) for i, j in jobs}
            for fut, (i, j) in futs.items():
                cells[i][j] = fut.result()

    baselines = {}
    try:
        b_s = best_linear(m.source)
        baselines["source_minimizer"] = {
            "beta": b_s,
            "risk_source": risk(m.source, b_s),
            "risk_target": None if eval_target is None else risk(eval_target, b_s),
        }
    except RankDeficientError as exc:
        log.warning("source minimizer unavailable: %s", exc)
    if eval_target is not None:
        try:
            b_t = best_linear(eval_target)
            baselines["target_minimizer"] = {
                "beta": b_t,
                "risk_source": risk(m.source, b_t),
                "risk_target": risk(eval_target, b_t),
            }
        except RankDeficientError as exc:
            log.warning("target minimizer unavailable: %s", exc)
    return SweepResult(ups, etas, cells, baselines, ell=ell, evaluation=evaluation)


def population_pair(params: ScmParams) -> tuple[MomentPair, EnvironmentMoments]:
    """Learner-facing moment pair plus labeled target moments for scoring."""
    src = population_moments(params, "source")
    tgt = population_moments(params, "target")
    return MomentPair(src, tgt.covariates()), tgt


# --------------------------------------------------------------------------- bound checks


def _spectral_quantities(params: ScmParams) -> dict:
    src = population_moments(params, "source")
    shift = params.shift
    inner = params.delta.T @ shift @ params.delta
    w_inner = np.linalg.eigvalsh(inner)
    whitened = np.linalg.solve(psd_sqrt(src.sigma), src.xy)
    return {
        "lambda_max_sigma_s": float(np.linalg.eigvalsh(src.sigma).max()),
        "whitened_signal_norm": float(np.linalg.norm(whitened)),
        "lambda_min_shift": float(w_inner.min()),
        "lambda_max_shift": float(w_inner.max()),
    }


def _structural_hypotheses(params: ScmParams, warnings: list[str]) -> bool:
    ok = True
    if np.linalg.norm(params.delta.T @ params.delta - np.eye(params.r)) > 1e-8:
        warnings.append("Delta^T Delta != I")
        ok = False
    if not params.richer_target():
        warnings.append("Lambda_T - Lambda_S is not positive definite")
        ok = False
    return ok


def _alignment(v: np.ndarray, params: ScmParams) -> float:
    return float(np.linalg.norm(v.T @ params.delta, 2))


def _admissibility(v, params, delta_margin, warnings) -> tuple[float, float, bool]:
    """Measured margin ``1 - ||V^T Delta||_op^2`` and the value plugged into the bound."""
    measured = 1.0 - _alignment(v, params) ** 2
    ok = measured >= delta_margin and measured > 0
    if not ok:
        warnings.append(f"V outside the admissible set: measured margin {measured:.3g} < floor {delta_margin:.3g}")
    # smaller margins only loosen the bound, so the measured one is the tightest valid choice
    used = measured if measured > 0 else delta_margin
    return measured, used, ok


def _stationarity(v, params, reg, warnings) -> tuple[float, float, bool]:
    m, _ = population_pair(params)
    phi = evaluate(v, m, reg, with_grad=False).phi
    resid = stationarity_residual(v, m, reg)
    thresh = stationarity_threshold(phi)
    ok = resid <= thresh
    if not ok:
        warnings.append(f"not stationary: residual {resid:.3g} > {thresh:.3g}")
    return resid, thresh, ok


def surrogate_bound_check(params: ScmParams, v, alpha, xi: float, zeta: float) -> BoundReport:
    """Target risk of ``V alpha`` against the label-free upper bound.

    Also checks ``R_S(V alpha) <= R_T(V alpha)``; both must hold for
    ``satisfied``.
    """
    if not (xi > 0 and zeta > 0):
        raise ParameterError("xi and zeta must be positive")
    v = v.v if isinstance(v, StiefelPoint) else np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[0] != params.d:
        v = v.reshape(params.d, -1)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    warnings: list[str] = []
    hyp = _structural_hypotheses(params, warnings)
    src = population_moments(params, "source")
    tgt = population_moments(params, "target")
    beta = v @ alpha
    r_s, r_t = risk(src, beta, tol=0.0), risk(tgt, beta, tol=0.0)
    shift = tgt.sigma - src.sigma
    c = params.confounded_center
    a2 = float(alpha @ alpha)
    pen_sq = float(np.linalg.norm(v.T @ shift @ v) ** 2)
    oracle = float(c @ shift @ c)
    terms = {
        "risk_source": r_s,
        "alpha_term": (1 + xi) * zeta / 2 * a2**2,
        "penalty_term": (1 + xi) / (2 * zeta) * pen_sq,
        "oracle_term": (1 + 1 / xi) * oracle,
    }
    rhs = r_s + terms["alpha_term"] + terms["penalty_term"] + terms["oracle_term"]
    lower_ok = r_s <= r_t + BOUND_RTOL * (1 + abs(r_t))
    terms["lower_bound_holds"] = bool(lower_ok)
    if not lower_ok:
        warnings.append("source risk exceeds target risk")
    return BoundReport.build(
        "surrogate_target_bound", r_t, rhs, extra_ok=lower_ok,
        inputs={"xi": xi, "zeta": zeta}, terms=terms, hypotheses_ok=hyp, warnings=warnings,
    )


def eigenvalue_lemma_check(sigma, v, upsilon: float) -> BoundReport:
    """Loewner bounds on the ridge hat-type matrices built from ``Sigma^{1/2} V``.

    Checks ``upsilon/(upsilon + lambda_max) I <= I - H <= I`` and
    ``K <= I / (4 upsilon)`` with ``H = S V (V^T Sigma V + upsilon I)^{-1} V^T S``,
    ``K = S V (V^T Sigma V + upsilon I)^{-2} V^T S`` and ``S = Sigma^{1/2}``.
    ``lhs`` is the largest signed violation across the three inequalities, so
    ``satisfied`` means ``lhs <= 0`` up to rounding.
    """
    if not upsilon > 0:
        raise ParameterError("upsilon must be positive")
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    v = v.v if isinstance(v, StiefelPoint) else np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    d, ell = v.shape
    root = psd_sqrt(sigma)
    sv = root @ v
    inv = np.linalg.inv(v.T @ sigma @ v + upsilon * np.eye(ell))
    first = np.eye(d) - sv @ inv @ sv.T
    second = sv @ inv @ inv @ sv.T
    w1 = np.linalg.eigvalsh(0.5 * (first + first.T))
    w2 = np.linalg.eigvalsh(0.5 * (second + second.T))
    lam_max = float(np.linalg.eigvalsh(sigma).max())
    lower1 = upsilon / (upsilon + lam_max)
    slacks = {
        "first_lower": lower1 - w1.min(),
        "first_upper": w1.max() - 1.0,
        "second_upper": w2.max() - 1.0 / (4 * upsilon),
    }
    worst = max(slacks.values())
    terms = {
        "first_eigenvalues": w1,
        "second_eigenvalues": w2,
        "first_lower_bound": lower1,
        "second_upper_bound": 1.0 / (4 * upsilon),
        **slacks,
    }
    return BoundReport.build("eigenvalue_lemma", worst, 0.0, inputs={"upsilon": upsilon}, terms=terms)


def alignment_rhs(params: ScmParams, reg: RegParams, delta: float) -> float:
    q = _spectral_quantities(params)
    if reg.eta == 0:
        return np.inf
    return (
        q["lambda_max_sigma_s"] * q["whitened_signal_norm"] ** 4
        / (delta * q["lambda_min_shift"] ** 4)
        / (4 * reg.upsilon * reg.eta**2)
    )


def alignment_bound_check(params: ScmParams, v, reg: RegParams, delta_margin: float = 0.05) -> BoundReport:
    """``||V^T Delta||_op^6`` at a stationary ``V`` against its ``1/(upsilon eta^2)`` bound."""
    v = v.v if isinstance(v, StiefelPoint) else np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    warnings: list[str] = []
    hyp = _structural_hypotheses(params, warnings)
    resid, thresh, stat_ok = _stationarity(v, params, reg, warnings)
    measured, used, adm_ok = _admissibility(v, params, delta_margin, warnings)
    cosine = _alignment(v, params)
    rhs = alignment_rhs(params, reg, used)
    return BoundReport.build(
        "alignment", cosine**6, rhs,
        inputs={"upsilon": reg.upsilon, "eta": reg.eta, "delta_floor": delta_margin},
        terms={
            "max_cosine": cosine,
            "delta_measured": measured,
            "delta_used": used,
            "delta_binding": "measured" if adm_ok else "floor_violated",
            "stationarity_residual": resid,
            "stationarity_threshold": thresh,
            **_spectral_quantities(params),
        },
        hypotheses_ok=hyp and stat_ok and adm_ok,
        warnings=warnings,
    )


def stability_constant(params: ScmParams, delta: float, epsilon: float) -> float:
    q = _spectral_quantities(params)
    return (
        (1 + 1 / epsilon)
        * delta ** (-1 / 3)
        * q["lambda_max_sigma_s"] ** (1 / 3)
        * q["lambda_max_shift"] / q["lambda_min_shift"] ** (4 / 3)
        * q["whitened_signal_norm"] ** (10 / 3)
    )


def stability_bound_check(
    params: ScmParams, fit: FitResult, reg: RegParams, delta_margin: float = 0.05, epsilon: float = 1.0
) -> BoundReport:
    """Target-minus-source risk of a fitted predictor against the oracle gap plus decay term."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    v = fit.v.v
    warnings: list[str] = []
    hyp = _structural_hypotheses(params, warnings)
    resid, thresh, stat_ok = _stationarity(v, params, reg, warnings)
    measured, used, adm_ok = _admissibility(v, params, delta_margin, warnings)
    src = population_moments(params, "source")
    tgt = population_moments(params, "target")
    beta = v @ inner_alpha(v, src, reg)
    lhs = risk(tgt, beta, tol=0.0) - risk(src, beta, tol=0.0)
    c = params.confounded_center
    oracle = float(c @ params.shift @ c)
    const = stability_constant(params, used, epsilon)
    decay = np.inf if reg.eta == 0 else const / ((4 * reg.upsilon) ** (4 / 3) * reg.eta ** (2 / 3))
    first = (1 + epsilon) * oracle
    return BoundReport.build(
        "stability", lhs, first + decay,
        inputs={"upsilon": reg.upsilon, "eta": reg.eta, "epsilon": epsilon, "delta_floor": delta_margin},
        terms={
            "oracle_term": first,
            "decay_term": decay,
            "stability_constant": const,
            "delta_measured": measured,
            "delta_used": used,
            "stationarity_residual": resid,
            "stationarity_threshold": thresh,
        },
        hypotheses_ok=hyp and stat_ok and adm_ok,
        warnings=warnings,
    )


def inner_alpha(v, src: EnvironmentMoments, reg: RegParams) -> np.ndarray:
    from .objective import inner_ridge

    return inner_ridge(v, src, reg.upsilon)


# --------------------------------------------------------------------------- improvement region


class ImprovementRegion(NamedTuple):
    scanned: tuple[float, float] | None
    analytic: tuple[float, float] | None
    x: np.ndarray
    improvement: np.ndarray


def analytic_improvement_interval(sigma_s_sq, sigma_t_sq, tau_sq) -> tuple[float, float] | None:
    """Endpoints of ``{x : (x + t)^2 < (s - t)^2}`` in closed form.

    ``s`` and ``t`` are the shrinkage ratios ``sigma^2 / (sigma^2 + tau^2)``
    of source and target.
    """
    a = -sigma_s_sq / (sigma_s_sq + tau_sq)
    b = a - 2 * tau_sq * (sigma_t_sq - sigma_s_sq) / ((sigma_t_sq + tau_sq) * (sigma_s_sq + tau_sq))
    if a == b:
        return None
    return (min(a, b), max(a, b))


def improvement_at(sigma_s_sq, sigma_t_sq, tau_sq, x: float) -> float:
    """``R_T(beta_S^Theta) - R_T(beta_S)`` on the scalar instance."""
    p = scalar_shift_params(sigma_s_sq, sigma_t_sq, tau_sq, x)
    src = population_moments(p, "source")
    tgt = population_moments(p, "target")
    b_theta = restricted_least_squares(src, p.theta)
    return risk(tgt, b_theta, tol=0.0) - risk(tgt, best_linear(src), tol=0.0)


def improvement_region_scan(sigma_s_sq, sigma_t_sq, tau_sq, x_grid) -> ImprovementRegion:
    """Locate where the invariant predictor beats source least squares on the target.

    The improvement is evaluated on ``x_grid`` from closed-form risks;
    endpoints are sign changes refined by linear interpolation.  The analytic
    interval is returned next to it for comparison.
    """
    if min(sigma_s_sq, sigma_t_sq, tau_sq) <= 0:
        raise ParameterError("variances must be positive")
    x = np.sort(np.asarray(x_grid, dtype=float))
    vals = np.array([improvement_at(sigma_s_sq, sigma_t_sq, tau_sq, xi) for xi in x])
    neg = vals < 0
    scanned = None
    if neg.any():
        idx = np.flatnonzero(neg)
        lo_i, hi_i = idx[0], idx[-1]

        def cross(i, j):
            x0, x1, f0, f1 = x[i], x[j], vals[i], vals[j]
            return float(x0 - f0 * (x1 - x0) / (f1 - f0))

        lo = cross(lo_i - 1, lo_i) if lo_i > 0 else float(x[0])
        hi = cross(hi_i, hi_i + 1) if hi_i < len(x) - 1 else float(x[-1])
        scanned = (lo, hi)
    return ImprovementRegion(scanned, analytic_improvement_interval(sigma_s_sq, sigma_t_sq, tau_sq), x, vals)

"""Riemannian gradient descent on St(d, l) with Armijo backtracking and polar retraction."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .objective import MomentPair, RegParams, evaluate
from .scm import ParameterError
from .stiefel import (
    ManifoldError,
    StiefelPoint,
    TangentVector,
    check_feasible,
    random_point,
    retract_polar_array,
)


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 5000
    grad_tol: float = 1e-8
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 50
    seed: int = 0
    n_starts: int = 1
    step_rule: str = "bb"
    step_optimism: float = 2.0
    approx_wolfe: bool = True
    wolfe_sigma: float = 0.9
    flat_tol_ulps: float = 64.0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ParameterError("max_iters must be >= 0")
        if not self.grad_tol > 0:
            raise ParameterError("grad_tol must be positive")
        if not self.initial_step > 0:
            raise ParameterError("initial_step must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ParameterError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ParameterError("armijo_c must lie in (0, 1)")
        if self.max_backtracks < 0:
            raise ParameterError("max_backtracks must be >= 0")
        if self.n_starts < 1:
            raise ParameterError("n_starts must be >= 1")
        if self.step_rule not in ("fixed", "adaptive", "bb"):
            raise ParameterError(f"unknown step_rule {self.step_rule!r}")
        if not self.step_optimism >= 1:
            raise ParameterError("step_optimism must be >= 1")

    def with_(self, **changes) -> "OptimizerOptions":
        return replace(self, **changes)


@dataclass(eq=False)
class FitResult:
    v: StiefelPoint
    alpha: np.ndarray
    beta: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    line_search_failed: bool = False
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "v": self.v.v.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "line_search_failed": self.line_search_failed,
            "seed": self.seed,
            "trace": [list(t) for t in self.trace],
        }


class LineSearchResult(NamedTuple):
    step: float
    v: StiefelPoint
    objective: float
    backtracks: int
    success: bool


_EPS = np.finfo(float).eps


def _armijo(v, direction, phi_v, slope, m, reg, opts, t0=None):
    t = opts.initial_step if t0 is None else t0
    flat = opts.flat_tol_ulps * _EPS * max(1.0, abs(phi_v))
    lo = hi = None  # bracket, only used once values are at rounding level
    for k in range(opts.max_backtracks + 1):
        v_new = retract_polar_array(v, t * direction)
        phi_new = evaluate(v_new, m, reg, with_grad=False).phi
        if phi_new <= phi_v + opts.armijo_c * t * slope:
            if phi_new < phi_v or not np.array_equal(v_new, v):
                return t, v_new, phi_new, k, True
            hi = t
        elif opts.approx_wolfe and abs(phi_new - phi_v) <= flat:
            # values are at rounding level: fall back to a slope test
            slope_new = float(np.sum(evaluate(v_new, m, reg).grad * direction))
            if slope_new < opts.wolfe_sigma * slope:
                lo = t  # still descending steeply, step too short
            elif slope_new <= (2 * opts.armijo_c - 1) * slope:
                return t, v_new, phi_new, k, True
            else:
                hi = t
        else:
            hi = t
        if k < opts.max_backtracks:
            if lo is None:
                t *= opts.backtrack_factor
            elif hi is None:
                t /= opts.backtrack_factor
            else:
                t = 0.5 * (lo + hi)
    return t, v_new, phi_new, opts.max_backtracks, False


def armijo_step(
    v: StiefelPoint,
    direction: TangentVector,
    phi_at_v: float,
    grad_dot_dir: float,
    m: MomentPair,
    reg: RegParams,
    opts: OptimizerOptions = OptimizerOptions(),
    t0: float | None = None,
) -> LineSearchResult:
    """Largest ``t`` in ``{t0 * rho^k}`` meeting the sufficient-decrease rule.

    ``t0`` defaults to ``opts.initial_step``.  On exhaustion the last trial
    is returned with ``success=False``.
    """
    if not grad_dot_dir < 0:
        raise ParameterError(f"not a descent direction (slope {grad_dot_dir} >= 0)")
    xi = direction.xi if isinstance(direction, TangentVector) else np.asarray(direction, dtype=float)
    t, v_new, phi_new, k, ok = _armijo(v.v, xi, phi_at_v, grad_dot_dir, m, reg, opts, t0)
    return LineSearchResult(t, StiefelPoint(v_new), phi_new, k, ok)


def stationarity_residual(v, m: MomentPair, reg: RegParams) -> float:
    """Frobenius norm of the Riemannian gradient at ``v``."""
    arr = v.v if isinstance(v, StiefelPoint) else np.asarray(v, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return float(np.linalg.norm(evaluate(arr, m, reg).grad))


def _initial_step(opts, it, gnorm, last_decrease, prev, v, grad) -> float:
    if opts.step_rule == "adaptive" and last_decrease is not None and last_decrease > 0:
        # step reproducing the last decrease on a quadratic model
        return opts.step_optimism * 2.0 * last_decrease / gnorm**2
    if opts.step_rule == "bb" and prev is not None:
        s = v - prev[0]
        y = grad - prev[1]
        sy = abs(float(np.sum(s * y)))
        if sy > 0:
            # alternate the two Barzilai-Borwein step lengths
            t = float(np.sum(s * s)) / sy if it % 2 else sy / float(np.sum(y * y))
            if np.isfinite(t) and t > 0:
                return min(t, 1e10)
    return opts.initial_step


def _descend(v: np.ndarray, m: MomentPair, reg: RegParams, opts: OptimizerOptions, seed) -> FitResult:
    ev = evaluate(v, m, reg)
    gnorm = float(np.linalg.norm(ev.grad))
    trace = [(0, ev.phi, gnorm)]
    it = 0
    failed = False
    last_decrease = None
    prev = None
    while gnorm > opts.grad_tol and it < opts.max_iters:
        slope = -gnorm**2
        t0 = _initial_step(opts, it, gnorm, last_decrease, prev, v, ev.grad)
        _, v_new, phi_new, _, ok = _armijo(v, -ev.grad, ev.phi, slope, m, reg, opts, t0)
        if not ok:
            failed = True
            break
        last_decrease = ev.phi - phi_new
        prev = (v, ev.grad)
        v = v_new
        ev = evaluate(v, m, reg)
        gnorm = float(np.linalg.norm(ev.grad))
        it += 1
        trace.append((it, ev.phi, gnorm))
    return FitResult(
        v=StiefelPoint(v),
        alpha=ev.alpha,
        beta=v @ ev.alpha,
        objective=ev.phi,
        grad_norm=gnorm,
        iterations=it,
        converged=gnorm <= opts.grad_tol,
        trace=trace,
        line_search_failed=failed,
        seed=seed,
    )


def minimize(
    m: MomentPair,
    reg: RegParams,
    ell: int,
    init: StiefelPoint | np.ndarray | None = None,
    opts: OptimizerOptions = OptimizerOptions(),
) -> FitResult:
    """Minimize the reduced objective over St(d, ell).

    Iterates ``V <- R_V(-t G)`` with ``G`` the Riemannian gradient and ``t``
    chosen by backtracking.  Stops once ``||G||_F <= grad_tol`` or after
    ``max_iters`` iterations; running out of iterations is reported through
    ``converged=False`` and is not an error.

    With ``opts.n_starts > 1`` the descent is repeated from random points
    seeded ``seed, seed + 1, ...`` (plus ``init`` when given) and the lowest
    objective wins.
    """
    d = m.d
    if not 1 <= ell <= d:
        raise ParameterError(f"need 1 <= ell <= d, got ell={ell}, d={d}")
    starts: list[tuple[np.ndarray, int | None]] = []
    if init is not None:
        arr = init.v if isinstance(init, StiefelPoint) else np.asarray(init, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape != (d, ell) or not check_feasible(arr):
            raise ManifoldError("initial point is not a feasible d x ell frame")
        starts.append((np.array(arr), None))
    n_random = opts.n_starts - len(starts) if init is not None else opts.n_starts
    for i in range(n_random):
        starts.append((np.array(random_point(d, ell, opts.seed + i).v), opts.seed + i))

    best = None
    for v0, seed in starts:
        res = _descend(v0, m, reg, opts, seed)
        if best is None or res.objective < best.objective:
            best = res
    return best

"""Stability-penalized source risk over a subspace, and its Riemannian gradient.

For a frame ``V`` and coefficients ``alpha``::

    F(V, alpha) = 1/2 * { R_S(V alpha) + upsilon ||alpha||^2
                          + eta/2 * ||V^T D V||_F^2 }

with ``D = Sigma_T - Sigma_S``.  The inner problem in ``alpha`` is a ridge
regression with a closed-form solution, so the outer problem only sees the
reduced objective ``Phi(V) = F(V, alpha_V)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .scm import CovariateMoments, EnvironmentMoments, ParameterError
from .stiefel import StiefelPoint, TangentVector, project_tangent_array


@dataclass(frozen=True)
class RegParams:
    upsilon: float
    eta: float = 0.0

    def __post_init__(self):
        if not self.upsilon > 0:
            raise ParameterError(f"upsilon must be positive, got {self.upsilon}")
        if not self.eta >= 0:
            raise ParameterError(f"eta must be nonnegative, got {self.eta}")


@dataclass(frozen=True, eq=False)
class MomentPair:
    """Labeled source moments plus the target covariate second moment.

    Target response statistics are discarded on construction, so nothing
    downstream of a ``MomentPair`` can depend on target labels.
    """

    source: EnvironmentMoments
    target: CovariateMoments

    def __post_init__(self):
        target = self.target
        if isinstance(target, EnvironmentMoments):
            target = target.covariates()
        if not isinstance(target, CovariateMoments):
            target = CovariateMoments(np.asarray(target, dtype=float))
        if target.d != self.source.d:
            raise ParameterError(f"source d={self.source.d} but target d={target.d}")
        object.__setattr__(self, "target", target)
        shift = target.sigma - self.source.sigma
        shift.setflags(write=False)
        object.__setattr__(self, "shift", shift)

    @property
    def d(self) -> int:
        return self.source.d


def _frame(v) -> np.ndarray:
    if isinstance(v, StiefelPoint):
        return v.v
    v = np.asarray(v, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def inner_ridge(v, source: EnvironmentMoments, upsilon: float) -> np.ndarray:
    """Ridge coefficients ``(V^T Sigma_S V + upsilon I)^{-1} V^T E_S[XY]``."""
    if not upsilon > 0:
        raise ParameterError(f"upsilon must be positive, got {upsilon}")
    v = _frame(v)
    gram = v.T @ source.sigma @ v
    gram[np.diag_indices_from(gram)] += upsilon
    return cho_solve(cho_factor(gram), v.T @ source.xy)


def stability_penalty(v, m: MomentPair) -> float:
    """``||V^T D V||_F``."""
    v = _frame(v)
    return float(np.linalg.norm(v.T @ m.shift @ v))


def objective_value(v, alpha, m: MomentPair, reg: RegParams) -> float:
    v = _frame(v)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != v.shape[1] or v.shape[0] != m.d:
        raise ParameterError("dimension mismatch between V, alpha and moments")
    beta = v @ alpha
    src = m.source
    r_s = beta @ src.sigma @ beta - 2.0 * beta @ src.xy + src.y_sq
    pen = np.linalg.norm(v.T @ m.shift @ v) ** 2
    return float(0.5 * (r_s + reg.upsilon * alpha @ alpha + 0.5 * reg.eta * pen))


class Evaluation(NamedTuple):
    phi: float
    alpha: np.ndarray
    grad: np.ndarray


def evaluate(v: np.ndarray, m: MomentPair, reg: RegParams, with_grad: bool = True) -> Evaluation:
    """Reduced objective, inner ridge solution and (optionally) the Riemannian gradient.

    Works on raw arrays; shares the intermediate products between the three.
    """
    src = m.source
    sv = src.sigma @ v
    gram = v.T @ sv
    gram[np.diag_indices_from(gram)] += reg.upsilon
    vxy = v.T @ src.xy
    alpha = cho_solve(cho_factor(gram), vxy)
    dv = m.shift @ v
    vdv = v.T @ dv
    beta_fit = sv @ alpha  # Sigma_S V alpha
    r_s = (v @ alpha) @ beta_fit - 2.0 * alpha @ vxy + src.y_sq
    phi = 0.5 * (r_s + reg.upsilon * alpha @ alpha + 0.5 * reg.eta * np.sum(vdv * vdv))
    if not with_grad:
        return Evaluation(float(phi), alpha, None)
    euclid = np.outer(beta_fit - src.xy, alpha) + reg.eta * dv @ vdv
    grad = euclid - v @ (v.T @ euclid)
    return Evaluation(float(phi), alpha, grad)


def reduced_objective(v, m: MomentPair, reg: RegParams) -> float:
    return evaluate(_frame(v), m, reg, with_grad=False).phi


def euclidean_gradient(v, m: MomentPair, reg: RegParams) -> np.ndarray:
    """Ambient gradient of ``Phi`` (envelope theorem, alpha held at alpha_V)."""
    v = _frame(v)
    alpha = inner_ridge(v, m.source, reg.upsilon)
    src = m.source
    dv = m.shift @ v
    return np.outer(src.sigma @ v @ alpha - src.xy, alpha) + reg.eta * dv @ (v.T @ dv)


def riemannian_gradient(v, m: MomentPair, reg: RegParams, debug: bool = False) -> TangentVector:
    """Gradient of ``Phi`` restricted to the manifold.

    ``V^T`` times the ambient gradient is symmetric at ``alpha_V``, so the
    skew part of the tangent projection drops out and the result is simply
    ``(I - V V^T)`` applied to the ambient gradient.  With ``debug=True`` the
    generic projection is computed too and the two are compared.
    """
    p = v if isinstance(v, StiefelPoint) else StiefelPoint(v)
    grad = evaluate(p.v, m, reg).grad
    if debug:
        generic = project_tangent_array(p.v, euclidean_gradient(p.v, m, reg))
        scale = max(1.0, float(np.linalg.norm(generic)))
        if np.linalg.norm(generic - grad) > 1e-9 * scale:
            raise AssertionError("projected gradient disagrees with the generic tangent projection")
    return TangentVector(grad, p)

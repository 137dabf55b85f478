"""Geometry of the Stiefel manifold St(d, l) = {V : V^T V = I_l} embedded in R^{d x l}.

The metric is the Euclidean (trace) inner product inherited from the ambient
space.  Only what first-order descent needs lives here: the tangent
projection, the polar retraction and seeded random points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEASIBILITY_TOL = 1e-8


class ManifoldError(ValueError):
    pass


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def skew(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a - a.T)


def feasibility_error(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(v.T @ v - np.eye(v.shape[1])))


def check_feasible(v, tol: float = FEASIBILITY_TOL) -> bool:
    """True iff ``||v^T v - I||_F <= tol``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] > v.shape[0]:
        return False
    return feasibility_error(v) <= tol


@dataclass(frozen=True, eq=False)
class StiefelPoint:
    """An orthonormal d x l frame."""

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if not check_feasible(v):
            raise ManifoldError(f"frame is not orthonormal (error {feasibility_error(v):.2e})")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape

    @property
    def d(self) -> int:
        return self.v.shape[0]

    @property
    def ell(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True, eq=False)
class TangentVector:
    xi: np.ndarray
    base: StiefelPoint

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).reshape(self.base.shape)
        v = self.base.v
        err = np.linalg.norm(v.T @ xi + xi.T @ v)
        if err > FEASIBILITY_TOL * max(1.0, np.linalg.norm(xi)):
            raise ManifoldError(f"matrix is not tangent at the base point (error {err:.2e})")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)


def project_tangent_array(v: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``(I - V V^T) xi + V skew(V^T xi)`` on raw arrays."""
    vtx = v.T @ xi
    return xi - v @ vtx + v @ skew(vtx)


def project_tangent(p: StiefelPoint, xi) -> TangentVector:
    """Orthogonal projection of an ambient matrix onto the tangent space at ``p``."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[:, None]
    if xi.shape != p.shape:
        raise ManifoldError(f"expected shape {p.shape}, got {xi.shape}")
    return TangentVector(project_tangent_array(p.v, xi), p)


def inv_sqrt_spd(a: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(sym(a))
    return (q / np.sqrt(w)) @ q.T


def retract_polar_array(v: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Polar factor of ``V + xi``; unchecked fast path for inner loops.

    For orthonormal ``V`` and tangent ``xi`` the Gram matrix of ``V + xi`` is
    exactly ``I + xi^T xi``, so this equals ``(V + xi)(I + xi^T xi)^{-1/2}``.
    Using the computed Gram matrix keeps rounding drift from accumulating
    over many iterations.
    """
    w = v + xi
    return w @ inv_sqrt_spd(w.T @ w)


def retract_polar_textbook(v: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``(V + xi)(I + xi^T xi)^{-1/2}`` evaluated literally."""
    return (v + xi) @ inv_sqrt_spd(np.eye(v.shape[1]) + xi.T @ xi)


def retract_polar(p: StiefelPoint, xi: TangentVector | np.ndarray) -> StiefelPoint:
    """Polar retraction of a tangent vector back onto the manifold."""
    if not isinstance(xi, TangentVector):
        xi = TangentVector(xi, p)
    elif xi.base is not p and not np.array_equal(xi.base.v, p.v):
        raise ManifoldError("tangent vector is attached to a different base point")
    return StiefelPoint(retract_polar_array(p.v, xi.xi))


def orthonormalize(a: np.ndarray) -> np.ndarray:
    """Q factor of a thin QR with a sign convention making diag(R) >= 0."""
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_point(d: int, ell: int, seed: int) -> StiefelPoint:
    if not 1 <= ell <= d:
        raise ManifoldError(f"need 1 <= ell <= d, got ell={ell}, d={d}")
    rng = np.random.default_rng(seed)
    return StiefelPoint(orthonormalize(rng.standard_normal((d, ell))))


def random_tangent(p: StiefelPoint, seed: int, scale: float = 1.0) -> TangentVector:
    """Projection of a seeded Gaussian matrix, scaled to Frobenius norm ``scale``.

    Draws that are numerically normal to the manifold (their projection is
    round-off) are discarded and redrawn.
    """
    if p.d == p.ell == 1:
        raise ManifoldError("tangent space of St(1, 1) is trivial")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        z = rng.standard_normal(p.shape)
        xi = project_tangent_array(p.v, z)
        norm = np.linalg.norm(xi)
        if norm > 1e-6 * np.linalg.norm(z):
            return TangentVector(scale * xi / norm, p)
    raise ManifoldError("could not draw a tangent direction")

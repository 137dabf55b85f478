"""Linear structural causal model with a confounder that shifts across environments.

Covariates and response are generated as::

    X = Theta Z + Delta E + W
    Y = <beta_star, X> + <gamma, E> + U

where ``Z`` (invariant latent), ``E`` (confounder), ``W`` and ``U`` are
independent and mean zero.  Only the second moment of ``E`` changes between
the source and the target environment.  Everything a quadratic risk needs is
carried by :class:`EnvironmentMoments`, so the closed forms here double as
oracles for the optimizer and the bound checkers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

Environment = Literal["source", "target"]

ORTHO_TOL = 1e-8
PSD_TOL = 1e-10


class ParameterError(ValueError):
    """Invalid model parameters or mismatched dimensions."""


class RankDeficientError(np.linalg.LinAlgError):
    """Second-moment matrix is singular; the least-squares minimizer is not unique."""

    def __init__(self, rank: int, d: int):
        super().__init__(f"second-moment matrix has rank {rank} < d={d}")
        self.rank = rank
        self.d = d


def _as_sym(a, name: str, size: int) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (size, size):
        raise ParameterError(f"{name} must be {size}x{size}, got {a.shape}")
    if not np.allclose(a, a.T, atol=ORTHO_TOL):
        raise ParameterError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


def _check_psd(a: np.ndarray, name: str, tol: float = PSD_TOL) -> None:
    if a.size and np.linalg.eigvalsh(a).min() < -tol:
        raise ParameterError(f"{name} is not positive semi-definite")


def psd_sqrt(a: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything below ``-tol``
    is rejected.
    """
    w, q = np.linalg.eigh(a)
    if w.size and w.min() < -tol:
        raise ParameterError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


@dataclass(frozen=True, eq=False)
class ScmParams:
    """Full parameterization of the linear SCM.

    Shapes: ``beta_star`` (d,), ``gamma`` (r,), ``theta`` (d, k), ``delta``
    (d, r), ``cov_z`` (k, k), ``lambda_source`` / ``lambda_target`` (r, r).
    Arrays are copied and frozen on construction.
    """

    beta_star: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    cov_z: np.ndarray
    lambda_source: np.ndarray
    lambda_target: np.ndarray
    tau_sq: float = 1.0
    sigma_u_sq: float = 1.0
    tol: float = field(default=ORTHO_TOL, compare=False)

    def __post_init__(self):
        beta = np.array(self.beta_star, dtype=float).reshape(-1)
        d = beta.size
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        r = gamma.size
        theta = np.array(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta.reshape(d, -1)
        delta = np.array(self.delta, dtype=float)
        if delta.ndim == 1:
            delta = delta.reshape(d, -1)
        if theta.shape[0] != d:
            raise ParameterError(f"theta must have {d} rows, got {theta.shape}")
        if delta.shape != (d, r):
            raise ParameterError(f"delta must be {d}x{r}, got {delta.shape}")
        k = theta.shape[1]
        if k + r > d:
            raise ParameterError(f"k + r = {k + r} exceeds d = {d}")
        frame = np.hstack([theta, delta])
        if np.linalg.norm(frame.T @ frame - np.eye(k + r)) > self.tol:
            raise ParameterError("[theta, delta] does not have orthonormal columns")
        cov_z = _as_sym(self.cov_z, "cov_z", k)
        lam_s = _as_sym(self.lambda_source, "lambda_source", r)
        lam_t = _as_sym(self.lambda_target, "lambda_target", r)
        for name, mat in (("cov_z", cov_z), ("lambda_source", lam_s), ("lambda_target", lam_t)):
            _check_psd(mat, name)
        tau_sq = float(self.tau_sq)
        if not tau_sq > 0:
            raise ParameterError(f"tau_sq must be positive, got {tau_sq}")
        sigma_u_sq = float(self.sigma_u_sq)
        if sigma_u_sq < 0:
            raise ParameterError(f"sigma_u_sq must be nonnegative, got {sigma_u_sq}")

        for name, val in (
            ("beta_star", beta), ("gamma", gamma), ("theta", theta), ("delta", delta),
            ("cov_z", cov_z), ("lambda_source", lam_s), ("lambda_target", lam_t),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "tau_sq", tau_sq)
        object.__setattr__(self, "sigma_u_sq", sigma_u_sq)

    @property
    def d(self) -> int:
        return self.beta_star.size

    @property
    def k(self) -> int:
        return self.theta.shape[1]

    @property
    def r(self) -> int:
        return self.gamma.size

    def lam(self, env: Environment) -> np.ndarray:
        if env == "source":
            return self.lambda_source
        if env == "target":
            return self.lambda_target
        raise ParameterError(f"unknown environment {env!r}")

    @property
    def shift(self) -> np.ndarray:
        """Population covariance shift ``Delta (Lambda_T - Lambda_S) Delta^T``."""
        return self.delta @ (self.lambda_target - self.lambda_source) @ self.delta.T

    @property
    def confounded_center(self) -> np.ndarray:
        """``beta_star + Delta gamma``, the center of the risk-gap quadratic."""
        return self.beta_star + self.delta @ self.gamma

    def richer_target(self, tol: float = 0.0) -> bool:
        """True when ``Lambda_T - Lambda_S`` is positive definite."""
        diff = self.lambda_target - self.lambda_source
        return bool(np.linalg.eigvalsh(diff).min() > tol)

    def replace(self, **changes) -> "ScmParams":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ScmParams(**kw)

    def to_dict(self) -> dict:
        return {
            "beta_star": self.beta_star.tolist(),
            "gamma": self.gamma.tolist(),
            "theta": self.theta.tolist(),
            "delta": self.delta.tolist(),
            "cov_z": self.cov_z.tolist(),
            "lambda_source": self.lambda_source.tolist(),
            "lambda_target": self.lambda_target.tolist(),
            "tau_sq": self.tau_sq,
            "sigma_u_sq": self.sigma_u_sq,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScmParams":
        return cls(**data)


def _clean_sigma(sigma) -> np.ndarray:
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ParameterError(f"sigma must be square, got {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=ORTHO_TOL * max(1.0, np.abs(sigma).max())):
        raise ParameterError("sigma is not symmetric")
    sigma = 0.5 * (sigma + sigma.T)
    sigma.setflags(write=False)
    return sigma


@dataclass(frozen=True, eq=False)
class CovariateMoments:
    """Second moment of the covariates only (all an unlabeled environment provides)."""

    sigma: np.ndarray
    n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", _clean_sigma(self.sigma))

    @property
    def d(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True, eq=False)
class EnvironmentMoments:
    """Sufficient statistics ``E[XX^T]``, ``E[XY]`` and ``E[Y^2]`` of one environment."""

    sigma: np.ndarray
    xy: np.ndarray
    y_sq: float
    n: int | None = None

    def __post_init__(self):
        sigma = _clean_sigma(self.sigma)
        d = sigma.shape[0]
        xy = np.array(self.xy, dtype=float).reshape(-1)
        if xy.size != d:
            raise ParameterError(f"xy must have length {d}, got {xy.size}")
        y_sq = float(self.y_sq)
        if y_sq < 0:
            raise ParameterError("y_sq must be nonnegative")
        xy.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "y_sq", y_sq)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    def covariates(self) -> CovariateMoments:
        """Drop the label-dependent statistics."""
        return CovariateMoments(self.sigma, self.n)


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    environment: Environment = "source"

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape[0] < 1:
            raise ParameterError("dataset is empty")
        if y.size != x.shape[0]:
            raise ParameterError(f"{x.shape[0]} rows of x but {y.size} responses")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ParameterError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def _check_vec(beta, d: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != d:
        raise ParameterError(f"expected a vector of length {d}, got {beta.size}")
    return beta


def population_moments(params: ScmParams, env: Environment) -> EnvironmentMoments:
    lam = params.lam(env)
    th, de, b, g = params.theta, params.delta, params.beta_star, params.gamma
    sigma = th @ params.cov_z @ th.T + de @ lam @ de.T + params.tau_sq * np.eye(params.d)
    x_e = de @ lam  # E[X E^T]
    xy = sigma @ b + x_e @ g
    y_sq = b @ sigma @ b + g @ lam @ g + 2.0 * b @ x_e @ g + params.sigma_u_sq
    return EnvironmentMoments(sigma=sigma, xy=xy, y_sq=y_sq)


def risk(m: EnvironmentMoments, beta, tol: float = 1e-12) -> float:
    """Quadratic risk ``E[(Y - <X, beta>)^2]`` from moments."""
    beta = _check_vec(beta, m.d)
    val = float(beta @ m.sigma @ beta - 2.0 * beta @ m.xy + m.y_sq)
    scale = max(1.0, m.y_sq, float(beta @ m.sigma @ beta))
    if -tol * scale < val < 0.0:
        return 0.0
    return val


def best_linear(m: EnvironmentMoments, rtol: float = 1e-12) -> np.ndarray:
    """Unique risk minimizer ``Sigma^{-1} E[XY]``.

    Raises
    ------
    RankDeficientError
        If ``Sigma`` is numerically singular (e.g. fewer samples than features).
    """
    w = np.linalg.eigvalsh(m.sigma)
    top = max(w.max(), 0.0)
    rank = int(np.sum(w > rtol * max(top, 1e-300) * m.d))
    if rank < m.d:
        raise RankDeficientError(rank, m.d)
    return np.linalg.solve(m.sigma, m.xy)


def best_linear_closed_form(params: ScmParams, env: Environment) -> np.ndarray:
    """``beta_star + Delta gamma - tau^2 Delta (Lambda + tau^2 I)^{-1} gamma``.

    Valid under orthonormal ``[Theta, Delta]``; used to cross-check
    :func:`best_linear` on population moments.
    """
    lam = params.lam(env)
    inner = np.linalg.solve(lam + params.tau_sq * np.eye(params.r), params.gamma)
    return params.beta_star + params.delta @ params.gamma - params.tau_sq * params.delta @ inner


def restricted_least_squares(m: EnvironmentMoments, basis) -> np.ndarray:
    """Risk minimizer over ``{basis @ a}``, returned in ambient coordinates."""
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.shape[0] != m.d:
        basis = basis.reshape(m.d, -1)
    a = np.linalg.solve(basis.T @ m.sigma @ basis, basis.T @ m.xy)
    return basis @ a


def subspace_oracle(params: ScmParams) -> np.ndarray:
    """Best predictor restricted to span(Theta); identical in both environments."""
    return params.theta @ (params.theta.T @ params.beta_star)


def _check_delta_orthonormal(params: ScmParams, tol: float = ORTHO_TOL) -> None:
    if np.linalg.norm(params.delta.T @ params.delta - np.eye(params.r)) > tol:
        raise ParameterError("delta must have orthonormal columns")


def risk_gap_identity(params: ScmParams, beta) -> tuple[float, float]:
    """Return ``(R_T(beta) - R_S(beta), <beta - c, D (beta - c)>)`` with ``c = beta_star + Delta gamma``.

    The two numbers agree exactly in exact arithmetic; callers compare them.
    """
    _check_delta_orthonormal(params)
    beta = _check_vec(beta, params.d)
    src = population_moments(params, "source")
    tgt = population_moments(params, "target")
    gap = risk(tgt, beta, tol=0.0) - risk(src, beta, tol=0.0)
    e = beta - params.confounded_center
    quad = float(e @ (tgt.sigma - src.sigma) @ e)
    return gap, quad


class ImprovementVerdict(NamedTuple):
    improves: bool
    lhs: float
    rhs: float


def improvement_condition(params: ScmParams) -> ImprovementVerdict:
    """Whether restricting to span(Theta) beats source least squares on the target.

    Compares the weighted norms (weight ``tau^2 I + Lambda_T``) of the
    invariant-model suboptimality (``lhs``) and of the concept shift between
    environments (``rhs``).  Requires ``k + r == d``.
    """
    if params.k + params.r != params.d:
        raise ParameterError(
            f"improvement condition needs k + r == d, got k={params.k}, r={params.r}, d={params.d}"
        )
    eye = params.tau_sq * np.eye(params.r)
    lam_s, lam_t, g = params.lambda_source, params.lambda_target, params.gamma
    weight = eye + lam_t
    pull_t = np.linalg.solve(eye + lam_t, lam_t @ g)
    pull_s = np.linalg.solve(eye + lam_s, lam_s @ g)
    a = params.delta.T @ params.beta_star + pull_t
    b = pull_s - pull_t
    lhs = float(a @ weight @ a)
    rhs = float(b @ weight @ b)
    return ImprovementVerdict(lhs < rhs, lhs, rhs)


def sample(params: ScmParams, env: Environment, n: int, seed: int) -> Dataset:
    """Draw ``n`` Gaussian rows from the SCM in environment ``env``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    d, k, r = params.d, params.k, params.r
    z = rng.standard_normal((n, k)) @ psd_sqrt(params.cov_z)
    e = rng.standard_normal((n, r)) @ psd_sqrt(params.lam(env))
    w = np.sqrt(params.tau_sq) * rng.standard_normal((n, d))
    u = np.sqrt(params.sigma_u_sq) * rng.standard_normal(n)
    x = z @ params.theta.T + e @ params.delta.T + w
    y = x @ params.beta_star + e @ params.gamma + u
    return Dataset(x=x, y=y, environment=env)


def _random_psd(rng: np.random.Generator, size: int, floor: float) -> np.ndarray:
    a = rng.standard_normal((size, size))
    return a @ a.T / size + floor * np.eye(size)


def random_params(d: int, k: int, r: int, seed: int) -> ScmParams:
    """Seeded random instance with orthonormal ``[Theta, Delta]`` and ``Lambda_T > Lambda_S``."""
    if k + r > d:
        raise ParameterError(f"k + r = {k + r} exceeds d = {d}")
    rng = np.random.default_rng(seed)
    q, rr = np.linalg.qr(rng.standard_normal((d, k + r)))
    q = q * np.sign(np.diag(rr))
    lam_s = _random_psd(rng, r, 0.1)
    lam_t = lam_s + _random_psd(rng, r, 0.5)
    return ScmParams(
        beta_star=rng.standard_normal(d),
        gamma=rng.standard_normal(r),
        theta=q[:, :k],
        delta=q[:, k:],
        cov_z=_random_psd(rng, k, 0.5),
        lambda_source=lam_s,
        lambda_target=lam_t,
        tau_sq=float(rng.uniform(0.5, 2.0)),
        sigma_u_sq=float(rng.uniform(0.5, 1.5)),
    )


def toy_params(gamma: float = 1.0) -> ScmParams:
    """Two-dimensional instance: Theta = e1, Delta = e2, beta_star = e1, Lambda_S = 1, Lambda_T = 4."""
    return ScmParams(
        beta_star=[1.0, 0.0],
        gamma=[gamma],
        theta=[[1.0], [0.0]],
        delta=[[0.0], [1.0]],
        cov_z=[[1.0]],
        lambda_source=[[1.0]],
        lambda_target=[[4.0]],
        tau_sq=1.0,
        sigma_u_sq=1.0,
    )


def scalar_shift_params(
    sigma_s_sq: float, sigma_t_sq: float, tau_sq: float, x: float, gamma: float = 1.0
) -> ScmParams:
    """k = r = 1, d = 2 instance with ``Delta^T beta_star = x * gamma``."""
    return ScmParams(
        beta_star=[1.0, x * gamma],
        gamma=[gamma],
        theta=[[1.0], [0.0]],
        delta=[[0.0], [1.0]],
        cov_z=[[1.0]],
        lambda_source=[[sigma_s_sq]],
        lambda_target=[[sigma_t_sq]],
        tau_sq=tau_sq,
        sigma_u_sq=1.0,
    )


def canonical_params() -> ScmParams:
    """Richer-target instance used for the alignment and stability experiments.

    d = 5 with span(Theta) = {e1, e2}, span(Delta) = {e3, e4} and one free
    direction e5.  ``Delta^T beta_star = -gamma`` so the confounded center
    ``beta_star + Delta gamma`` has no endogenous component: a predictor that
    avoids span(Delta) has zero risk gap.
    """
    eye = np.eye(5)
    return ScmParams(
        beta_star=[1.0, -0.5, -1.0, -0.5, 0.3],
        gamma=[1.0, 0.5],
        theta=eye[:, :2],
        delta=eye[:, 2:4],
        cov_z=np.eye(2),
        lambda_source=np.diag([1.0, 0.5]),
        lambda_target=np.diag([3.0, 2.0]),
        tau_sq=0.5,
        sigma_u_sq=1.0,
    )


CANONICAL_ELL = 3

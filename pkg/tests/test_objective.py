import numpy as np
import pytest
from hypothesis import given, strategies as st

from confshift.analysis import population_pair
from confshift.objective import (
    MomentPair,
    RegParams,
    evaluate,
    inner_ridge,
    objective_value,
    reduced_objective,
    riemannian_gradient,
    stability_penalty,
)
from confshift.scm import (
    CovariateMoments,
    EnvironmentMoments,
    ParameterError,
    best_linear,
    population_moments,
    random_params,
    toy_params,
)
from confshift.stiefel import StiefelPoint, random_point, random_tangent, retract_polar_array

E1 = np.array([[1.0], [0.0]])
E2 = np.array([[0.0], [1.0]])


@pytest.fixture
def toy():
    return population_pair(toy_params())[0]


def fd_directional(v, xi, m, reg, h=1e-5):
    """Central difference of the reduced objective along the retraction curve."""
    plus = reduced_objective(retract_polar_array(v, h * xi), m, reg)
    minus = reduced_objective(retract_polar_array(v, -h * xi), m, reg)
    return (plus - minus) / (2 * h)


def test_reg_params_validation():
    with pytest.raises(ParameterError):
        RegParams(0.0)
    with pytest.raises(ParameterError):
        RegParams(1.0, -1.0)


def test_moment_pair_strips_target_labels(toy):
    tgt = population_moments(toy_params(), "target")
    m = MomentPair(toy.source, tgt)
    assert isinstance(m.target, CovariateMoments)
    assert not hasattr(m.target, "xy")
    np.testing.assert_array_equal(m.shift, tgt.sigma - toy.source.sigma)
    with pytest.raises(ValueError):
        m.shift[0, 0] = 1.0


def test_moment_pair_dimension_check(toy):
    with pytest.raises(ParameterError):
        MomentPair(toy.source, CovariateMoments(np.eye(3)))


def test_inner_ridge_examples(toy):
    np.testing.assert_allclose(inner_ridge(np.eye(2), toy.source, 2.0), np.linalg.solve(4 * np.eye(2), [2.0, 1.0]))
    np.testing.assert_allclose(inner_ridge(np.eye(2), toy.source, 2.0), [0.5, 0.25], atol=1e-15)
    assert inner_ridge(E1, toy.source, 1e-10)[0] == pytest.approx(1.0, abs=1e-9)
    big = inner_ridge(np.eye(2), toy.source, 1e6)
    assert np.linalg.norm(big) <= np.linalg.norm(toy.source.xy) / 1e6


def test_inner_ridge_normal_equations():
    m, _ = population_pair(random_params(6, 2, 2, seed=3))
    v = random_point(6, 3, seed=4).v
    a = inner_ridge(v, m.source, 0.3)
    resid = (v.T @ m.source.sigma @ v + 0.3 * np.eye(3)) @ a - v.T @ m.source.xy
    assert np.linalg.norm(resid) <= 1e-10 * (1 + np.linalg.norm(m.source.xy))


def test_objective_value_examples(toy):
    assert objective_value(E2, [0.0], toy, RegParams(1.0, 2.0)) == pytest.approx(6.5)
    assert objective_value(np.eye(2), [0, 0], toy, RegParams(1.0, 0.0)) == pytest.approx(2.0)
    vals = {objective_value(E1, [0.7], toy, RegParams(1.0, eta)) for eta in (0.0, 1.0, 1e3)}
    assert len(vals) == 1
    with pytest.raises(ParameterError):
        objective_value(E1, [1.0, 2.0], toy, RegParams(1.0))


def test_reduced_objective_toy_oracle(toy):
    # 1-D oracle: minimize 0.5 * (R_S((a, 0)) + a^2) over a on a fine grid
    a = np.linspace(0, 2, 200_001)
    f = 0.5 * (2 * a**2 - 4 * a + 4 + a**2)
    for eta in (0.0, 5.0, 100.0):
        assert reduced_objective(E1, toy, RegParams(1.0, eta)) == pytest.approx(f.min(), abs=1e-9)
    assert inner_ridge(E1, toy.source, 1.0)[0] == pytest.approx(2 / 3)


def test_stability_penalty_examples(toy):
    assert stability_penalty(E2, toy) == pytest.approx(3.0)
    assert stability_penalty(E1, toy) == 0.0
    p = random_params(6, 2, 2, seed=0)
    m, _ = population_pair(p)
    assert stability_penalty(p.theta, m) == pytest.approx(0.0, abs=1e-12)


def test_stability_penalty_variational():
    m, _ = population_pair(random_params(5, 2, 2, seed=1))
    v = random_point(5, 3, seed=2).v
    vdv = v.T @ m.shift @ v
    rng = np.random.default_rng(0)
    best = 0.0
    for _ in range(200):
        mat = rng.standard_normal((3, 3))
        best = max(best, np.sum(mat * vdv) / np.linalg.norm(mat))
    assert best <= stability_penalty(v, m) + 1e-12
    assert np.sum(vdv * vdv) / np.linalg.norm(vdv) == pytest.approx(stability_penalty(v, m))


def test_gradient_hand_example():
    p = toy_params().replace(beta_star=[0.0, 0.0], gamma=[0.0])
    m, _ = population_pair(p)
    v = np.array([[1.0], [1.0]]) / np.sqrt(2)
    g = riemannian_gradient(v, m, RegParams(1.0, 1.0)).xi
    np.testing.assert_allclose(g.ravel(), [-9 / (4 * np.sqrt(2)), 9 / (4 * np.sqrt(2))], atol=1e-13)
    xi = np.array([[-1.0], [1.0]]) / np.sqrt(2)
    assert fd_directional(v, xi, m, RegParams(1.0, 1.0)) == pytest.approx(np.sum(g * xi), rel=1e-7)


def test_gradient_vanishes_on_fitted_invariant_direction():
    m, _ = population_pair(toy_params(gamma=0.0))
    for eta in (0.0, 10.0):
        g = riemannian_gradient(E1, m, RegParams(1e-9, eta)).xi
        assert np.linalg.norm(g) < 1e-8


def test_gradient_debug_mode_agrees():
    m, _ = population_pair(random_params(6, 2, 2, seed=5))
    riemannian_gradient(random_point(6, 2, seed=6), m, RegParams(0.2, 3.0), debug=True)


def test_evaluate_consistent_with_parts():
    m, _ = population_pair(random_params(6, 2, 2, seed=7))
    reg = RegParams(0.4, 2.0)
    v = random_point(6, 3, seed=8).v
    ev = evaluate(v, m, reg)
    np.testing.assert_allclose(ev.alpha, inner_ridge(v, m.source, reg.upsilon), atol=1e-13)
    assert ev.phi == pytest.approx(objective_value(v, ev.alpha, m, reg), rel=1e-13)


def test_ols_limit():
    p = random_params(5, 2, 2, seed=12)
    m, _ = population_pair(p)
    v = random_point(5, 5, seed=1).v
    beta = v @ inner_ridge(v, m.source, 1e-10)
    np.testing.assert_allclose(beta, best_linear(m.source), atol=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 7))
def test_gradient_tangent_and_orthogonal_to_frame(seed, d):
    rng = np.random.default_rng(seed)
    p = random_params(d, 1, 1, seed)
    m, _ = population_pair(p)
    v = random_point(d, int(rng.integers(1, d + 1)), seed)
    g = riemannian_gradient(v, m, RegParams(float(rng.uniform(0.01, 2)), float(rng.uniform(0, 50)))).xi
    assert np.abs(v.v.T @ g).max() <= 1e-12 * (1 + np.abs(g).max())


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 9))
    p = random_params(d, 1, 1, seed)
    m, _ = population_pair(p)
    v = random_point(d, int(rng.integers(1, d + 1)), seed).v
    reg = RegParams(float(rng.uniform(0.05, 2)), float(rng.uniform(0, 20)))
    g = evaluate(v, m, reg).grad
    xi = random_tangent(StiefelPoint(v), seed + 1).xi
    exact = float(np.sum(g * xi))
    approx = fd_directional(v, xi, m, reg)
    assert abs(approx - exact) <= 1e-5 * max(1.0, abs(exact))


@given(st.integers(0, 10_000))
def test_reduced_objective_rotation_invariant(seed):
    m, _ = population_pair(random_params(6, 2, 2, seed))
    v = random_point(6, 3, seed).v
    q = random_point(3, 3, seed + 1).v
    reg = RegParams(0.3, 5.0)
    assert reduced_objective(v @ q, m, reg) == pytest.approx(reduced_objective(v, m, reg), rel=1e-10)


@given(st.integers(0, 10_000))
def test_reduced_objective_below_any_alpha(seed):
    rng = np.random.default_rng(seed)
    m, _ = population_pair(random_params(5, 2, 2, seed))
    v = random_point(5, 2, seed).v
    reg = RegParams(0.5, 1.0)
    phi = reduced_objective(v, m, reg)
    assert phi <= objective_value(v, rng.standard_normal(2), m, reg) + 1e-12
    assert phi <= objective_value(v, np.zeros(2), m, reg) + 1e-12

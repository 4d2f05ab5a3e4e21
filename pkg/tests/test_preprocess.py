import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import make_smoothing_spline

from netinfer.errors import ConfigError
from netinfer.preprocess import (VectorFieldSamples, finite_difference, finite_difference_all,
                                 mean_field_estimate, nearest_neighbours, save_samples_csv,
                                 smooth_trajectory, smoothing_spline)
from netinfer.simulate import Trajectory


def test_ramp_differences_are_exact():
    t = np.arange(100) * 0.02
    tr = Trajectory(np.stack([3 * t, -t, 0 * t], axis=1)[:, None, :], 0.02)
    fd = finite_difference(tr, 0)
    assert len(fd) == 99
    assert np.allclose(fd.velocities, [3.0, -1.0, 0.0], atol=1e-12)


def test_sine_differences_match_midpoint_derivative():
    dt = 0.02
    t = np.arange(500) * dt
    tr = Trajectory(np.sin(t)[:, None, None].repeat(3, axis=2), dt)
    fd = finite_difference(tr, 0).velocities[:, 0]
    assert np.max(np.abs(fd - np.cos(t[:-1] + dt / 2))) < 1e-4


def test_all_nodes_pooled_node_major():
    data = np.random.default_rng(0).normal(size=(20, 3, 3))
    fd = finite_difference_all(Trajectory(data, 0.1))
    assert len(fd) == 57
    assert np.array_equal(fd.states[19:38], data[:-1, 1])


def dense_spline(y, lam):
    """Reference: dense solve of the same penalised least-squares problem."""
    M = y.size
    Q = np.zeros((M, M - 2))
    for k in range(M - 2):
        Q[k, k], Q[k + 1, k], Q[k + 2, k] = 1.0, -2.0, 1.0
    R = np.diag(np.full(M - 2, 2 / 3)) + np.diag(np.full(M - 3, 1 / 6), 1) + np.diag(np.full(M - 3, 1 / 6), -1)
    g = np.linalg.solve(R + lam * Q.T @ Q, Q.T @ y)
    return y - lam * Q @ g


def test_spline_matches_dense_solve_and_scipy():
    rng = np.random.default_rng(1)
    y = np.sin(np.linspace(0, 6, 300)) + rng.normal(0, 0.1, 300)
    s, _ = smoothing_spline(y, 0.02, 10.0)
    assert np.allclose(s, dense_spline(y, 10.0), atol=1e-10)
    ref = make_smoothing_spline(np.arange(300.0), y, lam=10.0)
    assert np.allclose(s, ref(np.arange(300.0)), atol=1e-8)


def test_spline_derivative_matches_scipy():
    rng = np.random.default_rng(2)
    y = np.cos(np.linspace(0, 8, 200)) + rng.normal(0, 0.05, 200)
    dt = 0.05
    _, ds = smoothing_spline(y, dt, 3.0)
    ref = make_smoothing_spline(np.arange(200.0), y, lam=3.0).derivative()(np.arange(200.0)) / dt
    assert np.allclose(ds, ref, atol=1e-7)


def test_spline_zero_lambda_interpolates():
    y = np.random.default_rng(3).normal(size=50)
    s, _ = smoothing_spline(y, 0.1, 0.0)
    assert np.allclose(s, y, atol=1e-9)


def test_spline_denoises_sine():
    rng = np.random.default_rng(4)
    t = np.arange(2000) * 0.02
    clean = np.sin(t)
    y = clean + rng.normal(0, 0.1, t.size)
    s, _ = smoothing_spline(y, 0.02, 10.0)
    rmse = lambda a: np.sqrt(np.mean((a - clean) ** 2))
    assert rmse(s) < rmse(y) / 2


def test_spline_roughness_nonincreasing_in_lambda():
    y = np.random.default_rng(5).normal(size=120)
    rough = []
    for lam in [0.0, 0.1, 1.0, 10.0, 100.0]:
        s, _ = smoothing_spline(y, 1.0, lam)
        rough.append(np.sum(np.diff(s, 2) ** 2))
    assert np.all(np.diff(rough) <= 1e-12)


def test_spline_argument_checks():
    with pytest.raises(ValueError):
        smoothing_spline(np.ones(3), 0.1, 1.0)
    with pytest.raises(ConfigError):
        smoothing_spline(np.ones(10), 0.1, -1.0)


def test_smooth_trajectory_per_channel():
    rng = np.random.default_rng(6)
    data = rng.normal(size=(40, 2, 3))
    out = smooth_trajectory(Trajectory(data, 0.1), 2.0).data
    assert np.allclose(out[:, 1, 2], smoothing_spline(data[:, 1, 2], 0.1, 2.0)[0])


def brute_knn(S, K):
    out = []
    for r in range(S.shape[0]):
        d = ((S - S[r]) ** 2).sum(axis=1)
        d[r] = -1.0
        out.append(np.sort(np.lexsort((np.arange(d.size), d))[:K]))
    return np.array(out)


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 80), st.integers(1, 9), st.integers(0, 2**31 - 1), st.booleans())
def test_knn_matches_brute_force(M, K, seed, grid):
    rng = np.random.default_rng(seed)
    # grid points create many exact distance ties
    S = rng.integers(0, 4, size=(M, 3)).astype(float) if grid else rng.normal(size=(M, 3))
    if grid:
        S += np.arange(M)[:, None] * 1e-3  # keep points distinct
    K = min(K, M)
    assert np.array_equal(nearest_neighbours(S, K), brute_knn(S, K))


def test_knn_exact_ties_broken_by_index():
    S = np.array([[0.0], [1.0], [-1.0], [2.0]])
    # from point 0, points 1 and 2 tie; the lower index wins
    assert list(nearest_neighbours(S, 2)[0]) == [0, 1]


def test_mean_field_k1_is_identity_and_k_equals_m_is_global_mean():
    rng = np.random.default_rng(7)
    s = VectorFieldSamples(rng.normal(size=(30, 3)), rng.normal(size=(30, 3)))
    assert np.array_equal(mean_field_estimate(s, 1).velocities, s.velocities)
    full = mean_field_estimate(s, 30)
    assert np.allclose(full.velocities, s.velocities.mean(axis=0))
    assert full.source == "mean_field"
    with pytest.raises(ValueError):
        mean_field_estimate(s, 31)


def test_samples_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        VectorFieldSamples(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        VectorFieldSamples(np.zeros((3, 3)), np.zeros((3, 3)), "guess")
    s = VectorFieldSamples(np.eye(3), 2 * np.eye(3))
    save_samples_csv(tmp_path / "s.csv", s)
    back = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back, np.hstack([np.eye(3), 2 * np.eye(3)]))

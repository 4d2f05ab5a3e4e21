"""Vector-field samples from trajectories: differencing, spline smoothing,
and the K-nearest-neighbour mean-field estimate."""
import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solveh_banded
from scipy.spatial import cKDTree

from .errors import ConfigError

__all__ = [
    "VectorFieldSamples", "finite_difference", "finite_difference_all",
    "smoothing_spline", "smooth_trajectory", "nearest_neighbours",
    "mean_field_estimate", "save_samples_csv",
]

SOURCES = ("finite_difference", "mean_field", "decoupled")


@dataclass(eq=False)
class VectorFieldSamples:
    states: np.ndarray
    velocities: np.ndarray
    source: str = "finite_difference"

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.states.shape != self.velocities.shape or self.states.ndim != 2:
            raise ValueError("states and velocities must be matching (M, D) arrays")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    def __len__(self):
        return self.states.shape[0]

    @classmethod
    def concat(cls, parts, source=None):
        parts = list(parts)
        return cls(np.concatenate([p.states for p in parts]),
                   np.concatenate([p.velocities for p in parts]),
                   source or parts[0].source)


def finite_difference(traj, node):
    """Forward differences ``(x(t + dt) - x(t)) / dt`` for one node."""
    x = traj.data[:, node, :]
    if x.shape[0] < 2:
        raise ValueError("need at least two samples to difference")
    return VectorFieldSamples(x[:-1].copy(), (x[1:] - x[:-1]) / traj.dt)


def finite_difference_all(traj):
    """Forward differences for every node, pooled node-major."""
    return VectorFieldSamples.concat(finite_difference(traj, i) for i in range(traj.n_nodes))


def smoothing_spline(y, dt, lam):
    """Natural cubic smoothing spline on equally spaced samples (Reinsch).

    Minimises ``sum (y_i - s_i)**2 + lam * integral(s''(u)**2 du)`` where the
    abscissa ``u`` is the sample index (knot spacing 1), so ``lam`` does not
    depend on ``dt``.  The pentadiagonal system ``(R + lam Q^T Q) g = Q^T y``
    for the interior second derivatives ``g`` is solved by banded Cholesky.

    Returns
    -------
    s : ndarray
        Smoothed values at the samples.
    ds : ndarray
        First derivative of the spline with respect to time (``1/dt`` scaled).
    """
    y = np.asarray(y, dtype=float)
    M = y.size
    if M < 4:
        raise ValueError("smoothing spline needs at least 4 samples")
    if lam < 0:
        raise ConfigError("must be >= 0", "spline_lambda")
    n = M - 2
    # upper banded storage of R + lam * Q^T Q (R: h=1 tridiagonal of 2/3, 1/6)
    ab = np.zeros((3, n))
    ab[2, :] = 2.0 / 3.0 + 6.0 * lam
    ab[1, 1:] = 1.0 / 6.0 - 4.0 * lam
    ab[0, 2:] = lam
    qty = y[:-2] - 2.0 * y[1:-1] + y[2:]
    g_int = solveh_banded(ab, qty, lower=False, check_finite=False)
    g = np.zeros(M)
    g[1:-1] = g_int
    # s = y - lam * Q g
    qg = np.zeros(M)
    qg[:-2] += g_int
    qg[1:-1] -= 2.0 * g_int
    qg[2:] += g_int
    s = y - lam * qg
    ds = np.empty(M)
    ds[:-1] = (s[1:] - s[:-1]) - (2.0 * g[:-1] + g[1:]) / 6.0
    ds[-1] = (s[-1] - s[-2]) + (g[-2] + 2.0 * g[-1]) / 6.0
    return s, ds / dt


def smooth_trajectory(traj, lam):
    """Smooth every node and component independently; returns a new trajectory."""
    out = np.empty_like(traj.data)
    for i in range(traj.n_nodes):
        for d in range(traj.dim):
            out[:, i, d], _ = smoothing_spline(traj.data[:, i, d], traj.dt, lam)
    return replace(traj, data=out, meta=dict(traj.meta))


def _brute_row(states, r, K):
    d = ((states - states[r]) ** 2).sum(axis=1)
    d[r] = -1.0  # the query point always counts as its own nearest neighbour
    order = np.lexsort((np.arange(d.size), d))
    return np.sort(order[:K])


def nearest_neighbours(states, K):
    """Exact K-nearest-neighbour index sets (self included), sorted by index.

    Ties on the K-th distance are resolved by lower index.
    """
    states = np.asarray(states, dtype=float)
    M = states.shape[0]
    if K < 1:
        raise ConfigError("must be >= 1", "k_init")
    if K > M:
        raise ValueError(f"K={K} exceeds the number of samples M={M}")
    if K == M:
        return np.broadcast_to(np.arange(M), (M, M))
    tree = cKDTree(states)
    dist, idx = tree.query(states, k=K + 1)
    nbr = np.sort(idx[:, :K], axis=1)
    ties = np.nonzero(dist[:, K - 1] == dist[:, K])[0]
    for r in ties:
        nbr[r] = _brute_row(states, r, K)
    # guard: the query itself must be present (only fails on duplicate points)
    missing = np.nonzero(~(nbr == np.arange(M)[:, None]).any(axis=1))[0]
    for r in missing:
        nbr[r] = _brute_row(states, r, K)
    return nbr


def mean_field_estimate(samples, K=8):
    """Replace each velocity by the mean velocity of its K nearest states."""
    if K > len(samples):
        raise ValueError(f"K={K} exceeds the number of samples M={len(samples)}")
    if K == len(samples):
        v = np.broadcast_to(samples.velocities.mean(axis=0), samples.velocities.shape).copy()
        return VectorFieldSamples(samples.states.copy(), v, "mean_field")
    nbr = nearest_neighbours(samples.states, K)
    v = samples.velocities[nbr].mean(axis=1)
    return VectorFieldSamples(samples.states.copy(), v, "mean_field")


def save_samples_csv(path, samples):
    D = samples.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{d + 1}" for d in range(D)] + [f"v{d + 1}" for d in range(D)])
        for s, v in zip(samples.states, samples.velocities):
            w.writerow([repr(float(a)) for a in s] + [repr(float(a)) for a in v])

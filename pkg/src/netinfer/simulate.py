"""Ground-truth network trajectories: RK4 integration, normalisation, noise."""
import csv
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynsys import DiffusiveCoupling, stack_models
from .errors import ConfigError, IntegrationDiverged
from .netgen import CouplingMatrix

__all__ = [
    "Trajectory", "integrate_rk4", "rk4_step", "initial_conditions",
    "add_noise", "normalize", "denormalize", "downsample",
    "save_trajectory", "load_trajectory", "NormalizedField",
]


@dataclass(eq=False)
class Trajectory:
    """Node states sampled at a fixed timestep.

    ``data`` has shape ``(n_steps, n_nodes, dim)``.  ``latent`` optionally
    holds unobserved state components (e.g. the drive velocity of the
    FitzHugh-Nagumo system) in raw units.  When ``normalized`` is set,
    ``data = (raw - norm_mean) / norm_std`` per state component, with the
    same affine map for every node so coupling weights are unchanged.
    """

    data: np.ndarray
    dt: float
    normalized: bool = False
    norm_mean: Optional[np.ndarray] = None
    norm_std: Optional[np.ndarray] = None
    latent: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise ValueError(f"trajectory data must be 3-D, got shape {self.data.shape}")
        if not self.dt > 0:
            raise ConfigError("must be > 0", "dt")

    @property
    def n_steps(self):
        return self.data.shape[0]

    @property
    def n_nodes(self):
        return self.data.shape[1]

    @property
    def dim(self):
        return self.data.shape[2]

    def slice(self, start=None, stop=None, step=None):
        s = slice(start, stop, step)
        lat = None if self.latent is None else self.latent[s]
        dt = self.dt * (step or 1)
        return replace(self, data=self.data[s], latent=lat, dt=dt, meta=dict(self.meta))


def rk4_step(F, X, dt):
    k1 = F(X)
    k2 = F(X + 0.5 * dt * k1)
    k3 = F(X + 0.5 * dt * k2)
    k4 = F(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _network_field(model, C, coupling):
    def F(X):
        return model.f(X) + coupling.network_term(C, X)
    return F


def initial_conditions(models, rng):
    """Uniform draws from each system's bounding box, shape ``(N, state_dim)``."""
    models = list(models)
    sysdef = models[0].system
    n = len(models)
    lo = np.array(sysdef.ic_low)
    hi = np.array(sysdef.ic_high)
    obs = lo + (hi - lo) * rng.random((n, lo.size))
    if sysdef.state_dim == sysdef.observed_dim:
        return obs
    latent = sysdef.latent_init(models[0].params, rng, n, obs)
    return np.concatenate([obs, latent], axis=1)


def integrate_rk4(models, C, x0, dt, n_steps, washout=0, coupling=None,
                  blowup=1e6, oversample=1):
    """Integrate the coupled network with classic RK4.

    Parameters
    ----------
    models : sequence of OscillatorModel
        One model per node (identical objects for a homogeneous network).
    C : CouplingMatrix or array
        ``C[i, j]`` weights ``g(x_i, x_j)`` in node ``i``'s equation.
    x0 : array, shape (N, state_dim)
    dt : float
        Sampling step of the returned trajectory.
    n_steps : int
        Number of samples produced, ``x0`` included; the first ``washout``
        are discarded.
    oversample : int
        Internal substeps per sample (integration step ``dt / oversample``).

    Returns
    -------
    Trajectory with ``n_steps - washout`` samples.
    """
    if not dt > 0:
        raise ConfigError("must be > 0", "dt")
    if n_steps < 1 or washout < 0 or washout >= n_steps:
        raise ConfigError("need n_steps >= 1 and 0 <= washout < n_steps", "n_steps")
    models = list(models)
    model = stack_models(models)
    W = C.weights if isinstance(C, CouplingMatrix) else np.asarray(C, dtype=float)
    coupling = coupling or DiffusiveCoupling(model.coupled_component)
    F = _network_field(model, W, coupling)
    X = np.array(x0, dtype=float)
    if X.shape != (len(models), model.state_dim):
        raise ValueError(f"x0 must have shape {(len(models), model.state_dim)}")
    h = dt / oversample
    out = np.empty((n_steps - washout,) + X.shape)
    for n in range(n_steps):
        if n:
            for _ in range(oversample):
                X = rk4_step(F, X, h)
            if not np.all(np.abs(X) <= blowup):
                raise IntegrationDiverged("integration diverged", step=n)
        if n >= washout:
            out[n - washout] = X
    D = model.dim
    latent = out[..., D:] if model.state_dim > D else None
    return Trajectory(out[..., :D].copy(), dt, latent=latent)


def normalize(traj, mean=None, std=None):
    """Map every state component to zero mean, unit std (pooled over nodes)."""
    if traj.normalized:
        return traj
    if mean is None:
        mean = traj.data.mean(axis=(0, 1))
        std = traj.data.std(axis=(0, 1))
        std = np.where(std > 0, std, 1.0)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    data = (traj.data - mean) / std
    return replace(traj, data=data, normalized=True, norm_mean=mean, norm_std=std,
                   meta=dict(traj.meta))


def denormalize(traj):
    if not traj.normalized:
        return traj
    data = traj.data * traj.norm_std + traj.norm_mean
    return replace(traj, data=data, normalized=False, norm_mean=None, norm_std=None,
                   meta=dict(traj.meta))


def add_noise(traj, xi, rng):
    """Additive i.i.d. Gaussian observation noise of std ``xi`` (normalised units)."""
    if xi < 0:
        raise ConfigError("must be >= 0", "noise_xi")
    if not traj.normalized:
        raise ValueError("noise is defined on normalised data; call normalize() first")
    if xi == 0:
        return replace(traj, meta=dict(traj.meta))
    noisy = traj.data + rng.normal(0.0, xi, size=traj.data.shape)
    return replace(traj, data=noisy, meta=dict(traj.meta))


def downsample(traj, factor):
    if factor == 1:
        return traj
    return traj.slice(step=factor)


class NormalizedField:
    """True local field expressed in a trajectory's normalised coordinates.

    Observed components are normalised, latent ones stay raw:
    ``F(z) = f(mean + std * z) / std`` on the observed part.
    """

    def __init__(self, model, mean, std):
        self.model = model
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)
        self.dim = self.mean.size

    def to_raw(self, Z):
        X = np.array(Z, dtype=float)
        X[..., :self.dim] = X[..., :self.dim] * self.std + self.mean
        return X

    def __call__(self, Z):
        V = self.model.f(self.to_raw(Z))
        V[..., :self.dim] /= self.std
        return V

    forward = __call__

    def forward_and_jacobian(self, Z):
        X = self.to_raw(Z)
        V = self.model.f(X)
        J = self.model.jacobian(X)
        scale = np.ones(X.shape[-1])
        scale[:self.dim] = self.std
        V /= scale
        J = J * scale[None, :] / scale[:, None]
        return V, J

    @classmethod
    def identity(cls, model):
        """The raw field, for use where a learned model would go."""
        return cls(model, np.zeros(model.dim), np.ones(model.dim))


def save_trajectory(path, traj):
    """CSV ``step,node,x1..xD[,h1..]`` plus a ``<path>.json`` sidecar."""
    n, N, D = traj.data.shape
    L = 0 if traj.latent is None else traj.latent.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "node"] + [f"x{d + 1}" for d in range(D)]
                   + [f"h{d + 1}" for d in range(L)])
        for t in range(n):
            for i in range(N):
                row = [t, i] + [repr(float(v)) for v in traj.data[t, i]]
                if L:
                    row += [repr(float(v)) for v in traj.latent[t, i]]
                w.writerow(row)
    side = {
        "dt": traj.dt, "n_steps": n, "n_nodes": N, "dim": D, "latent_dim": L,
        "normalized": traj.normalized,
        "norm_mean": None if traj.norm_mean is None else traj.norm_mean.tolist(),
        "norm_std": None if traj.norm_std is None else traj.norm_std.tolist(),
        **traj.meta,
    }
    with open(f"{path}.json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def load_trajectory(path):
    with open(f"{path}.json") as fh:
        side = json.load(fh)
    n, N, D, L = side["n_steps"], side["n_nodes"], side["dim"], side.get("latent_dim", 0)
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape != (n * N, 2 + D + L):
        raise ValueError(f"{path}: table shape {raw.shape} does not match sidecar")
    data = raw[:, 2:2 + D].reshape(n, N, D)
    latent = raw[:, 2 + D:].reshape(n, N, L) if L else None
    meta = {k: v for k, v in side.items() if k not in {
        "dt", "n_steps", "n_nodes", "dim", "latent_dim", "normalized", "norm_mean", "norm_std"}}
    mean = None if side["norm_mean"] is None else np.array(side["norm_mean"])
    std = None if side["norm_std"] is None else np.array(side["norm_std"])
    return Trajectory(data, side["dt"], side["normalized"], mean, std, latent, meta)

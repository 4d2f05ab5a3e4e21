"""Local oscillator dynamics and diffusive coupling.

Each system is described by a :class:`SystemDef` holding its vector field,
analytic Jacobian and default constants.  New systems can be added with
:func:`register_system`.  All right-hand sides act on arrays of shape
``(..., state_dim)`` so a whole network (or a batch of networks) is evaluated
in one call; parameters may be scalars or arrays that broadcast against the
leading axes, which is how per-node heterogeneity is represented.
"""
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigError, NumericError

__all__ = [
    "SystemDef", "OscillatorModel", "DiffusiveCoupling", "SYSTEMS",
    "register_system", "make_model", "lorenz", "chua", "fitzhugh_nagumo",
    "eval_f", "eval_jacobian_f", "eval_g", "stack_models",
]


@dataclass(frozen=True)
class SystemDef:
    name: str
    rhs: Callable
    jacobian: Callable
    defaults: Mapping[str, float]
    state_dim: int
    observed_dim: int
    coupled_component: int = 0
    ic_low: tuple = ()
    ic_high: tuple = ()
    # draws unobserved state components, shape (n, state_dim - observed_dim)
    latent_init: Optional[Callable] = None


SYSTEMS: dict = {}


def register_system(sysdef):
    if sysdef.coupled_component >= sysdef.observed_dim:
        raise ConfigError("coupled component must be observed", "coupled_component")
    SYSTEMS[sysdef.name] = sysdef
    return sysdef


def _lorenz_rhs(p, x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([
        p["gamma"] * (Y - X),
        X * (p["rho"] - Z) - Y,
        X * Y - p["beta"] * Z,
    ], axis=-1)


def _lorenz_jac(p, x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    J = np.zeros(x.shape + (3,))
    J[..., 0, 0] = -p["gamma"]
    J[..., 0, 1] = p["gamma"]
    J[..., 1, 0] = p["rho"] - Z
    J[..., 1, 1] = -1.0
    J[..., 1, 2] = -X
    J[..., 2, 0] = Y
    J[..., 2, 1] = X
    J[..., 2, 2] = -p["beta"]
    return J


def _chua_rhs(p, x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    k = p["k"]
    phi = p["a"] * Y**3 + p["b"] * Y
    return np.stack([
        k * (Y - X + Z),
        k * p["alpha"] * (X - phi),
        k * (-p["beta"] * X - p["gamma"] * Z),
    ], axis=-1)


def _chua_jac(p, x):
    Y = x[..., 1]
    k = p["k"]
    J = np.zeros(x.shape + (3,))
    J[..., 0, 0] = -k
    J[..., 0, 1] = k
    J[..., 0, 2] = k
    J[..., 1, 0] = k * p["alpha"]
    J[..., 1, 1] = -k * p["alpha"] * (3.0 * p["a"] * Y**2 + p["b"])
    J[..., 2, 0] = -k * p["beta"]
    J[..., 2, 2] = -k * p["gamma"]
    return J


# FitzHugh-Nagumo with a harmonic drive: state (V, w, I, dI/dt); the drive
# velocity is integrated but not observed.
def _fhn_rhs(p, x):
    V, W, I, dI = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    return np.stack([
        V * (V - 1.0) * (1.0 - p["b1"] * V) - W + p["alpha"] * I / p["omega"],
        p["b2"] * V,
        dI,
        -p["omega"] ** 2 * I,
    ], axis=-1)


def _fhn_jac(p, x):
    V = x[..., 0]
    b1 = p["b1"]
    J = np.zeros(x.shape + (4,))
    J[..., 0, 0] = -3.0 * b1 * V**2 + 2.0 * (1.0 + b1) * V - 1.0
    J[..., 0, 1] = -1.0
    J[..., 0, 2] = p["alpha"] / p["omega"]
    J[..., 1, 0] = p["b2"]
    J[..., 2, 3] = 1.0
    J[..., 3, 2] = -p["omega"] ** 2
    return J


def _fhn_latent(p, rng, n, observed):
    # unit-amplitude drive: recover the phase from the sampled I where possible
    amp = p.get("drive_amplitude", 1.0)
    I = observed[:, 2]
    s = np.sqrt(np.clip(amp**2 - I**2, 0.0, None))
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return (sign * p["omega"] * s)[:, None]


register_system(SystemDef(
    name="lorenz", rhs=_lorenz_rhs, jacobian=_lorenz_jac,
    defaults={"gamma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    state_dim=3, observed_dim=3,
    ic_low=(-15.0, -20.0, 5.0), ic_high=(15.0, 20.0, 40.0),
))

register_system(SystemDef(
    name="chua", rhs=_chua_rhs, jacobian=_chua_jac,
    defaults={"k": -1.0, "alpha": 17.0, "beta": 53.61, "gamma": -0.75,
              "a": -0.08, "b": 0.17},
    state_dim=3, observed_dim=3,
    ic_low=(-0.5, -0.5, -0.5), ic_high=(0.5, 0.5, 0.5),
))

register_system(SystemDef(
    name="fhn", rhs=_fhn_rhs, jacobian=_fhn_jac,
    defaults={"alpha": 0.1, "b1": 10.0, "b2": 1.0, "omega": 0.8105,
              "drive_amplitude": 1.0},
    state_dim=4, observed_dim=3,
    ic_low=(-0.5, -0.2, -1.0), ic_high=(1.0, 0.2, 1.0),
    latent_init=_fhn_latent,
))


@dataclass(frozen=True, eq=False)
class OscillatorModel:
    """A local vector field with its constants.

    Parameters
    ----------
    kind : str
        Registered system name (``"lorenz"``, ``"chua"``, ``"fhn"``, ...).
    params : mapping
        Complete set of constants for ``kind``.  Values may be arrays that
        broadcast over leading state axes (one value per node).
    """

    kind: str
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYSTEMS:
            raise ConfigError(f"unknown system {self.kind!r}", "system")
        missing = set(SYSTEMS[self.kind].defaults) - set(self.params)
        if missing:
            raise ConfigError(f"missing parameters {sorted(missing)}", self.kind)

    @property
    def system(self):
        return SYSTEMS[self.kind]

    @property
    def dim(self):
        """Number of observed state components."""
        return self.system.observed_dim

    @property
    def state_dim(self):
        return self.system.state_dim

    @property
    def coupled_component(self):
        return self.system.coupled_component

    def with_params(self, **updates):
        return OscillatorModel(self.kind, {**self.params, **updates})

    def f(self, x):
        return eval_f(self, x)

    def jacobian(self, x):
        return eval_jacobian_f(self, x)


def make_model(kind, **overrides):
    if kind not in SYSTEMS:
        raise ConfigError(f"unknown system {kind!r}", "system")
    unknown = set(overrides) - set(SYSTEMS[kind].defaults)
    if unknown:
        raise ConfigError(f"unknown parameters {sorted(unknown)}", kind)
    return OscillatorModel(kind, {**SYSTEMS[kind].defaults, **overrides})


def lorenz(**overrides):
    return make_model("lorenz", **overrides)


def chua(**overrides):
    return make_model("chua", **overrides)


def fitzhugh_nagumo(**overrides):
    return make_model("fhn", **overrides)


def _check_state(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.state_dim,):
        raise ValueError(f"expected trailing dimension {model.state_dim}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite state passed to vector field")
    return x


def eval_f(model, x):
    """Uncoupled local vector field ``f(x)``."""
    x = _check_state(model, x)
    return model.system.rhs(model.params, x)


def eval_jacobian_f(model, x):
    """Analytic Jacobian ``df/dx`` with shape ``x.shape + (state_dim,)``."""
    x = _check_state(model, x)
    return model.system.jacobian(model.params, x)


def stack_models(models):
    """Merge per-node models of one kind into a model with per-node parameter arrays.

    The result evaluates an ``(N, state_dim)`` network state (or any array
    whose second-to-last axis is the node axis) in one call.
    """
    models = list(models)
    kinds = {m.kind for m in models}
    if len(kinds) != 1:
        raise ConfigError("all nodes must share one system kind", "system")
    params = {}
    for name in models[0].params:
        vals = np.array([m.params[name] for m in models], dtype=float)
        params[name] = vals[0] if np.all(vals == vals[0]) else vals
    return OscillatorModel(models[0].kind, params)


@dataclass(frozen=True)
class DiffusiveCoupling:
    """``g(x_i, x_j) = x_j - x_i`` restricted to a single state component."""

    component: int = 0

    def g(self, x_i, x_j):
        x_i = np.asarray(x_i, dtype=float)
        x_j = np.asarray(x_j, dtype=float)
        if x_i.shape != x_j.shape:
            raise ValueError("coupled states must have equal shapes")
        out = np.zeros_like(x_i)
        out[..., self.component] = x_j[..., self.component] - x_i[..., self.component]
        return out

    def partials(self, dim):
        """Return ``(dg/dx_i, dg/dx_j)`` as constant ``dim x dim`` matrices."""
        d_i = np.zeros((dim, dim))
        d_j = np.zeros((dim, dim))
        d_i[self.component, self.component] = -1.0
        d_j[self.component, self.component] = 1.0
        return d_i, d_j

    def network_term(self, C, X):
        """``sum_j C[i, j] g(X_i, X_j)`` for every node; ``X`` is ``(..., N, D)``."""
        c = self.component
        out = np.zeros_like(X)
        xc = X[..., c]
        out[..., c] = xc @ C.T - C.sum(axis=1) * xc
        return out


def eval_g(spec, x_i, x_j):
    return spec.g(x_i, x_j)

"""Coupling-matrix regression by backpropagation through Euler freeruns.

The local model ``fhat`` and the coupling estimate ``Chat`` are refined in
alternation:

1. initialise ``fhat`` on mean-field vector-field estimates;
2. repeat: take ``n_backprop_steps`` gradient steps on ``Chat`` using the
   freerun loss, then decouple the observed increments with ``Chat`` and
   retrain ``fhat`` at the lower refit rate.

Gradients of the freerun loss are exact: forward sensitivities
``S[i, d, p] = d xhat_i^(d) / d theta_p`` are propagated through every Euler
step alongside the prediction.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynsys import DiffusiveCoupling
from .errors import ConfigError, InferenceDiverged, NumericError
from .mlp import LocalModel, TrainConfig, train
from .preprocess import (VectorFieldSamples, finite_difference_all,
                         mean_field_estimate)

__all__ = [
    "RegressionConfig", "CouplingParams", "RegressionState", "IterationRecord",
    "InferenceResult", "forward_euler_freerun", "loss", "grad_c",
    "sample_segments", "coupling_rate", "update_c", "scheduler_step",
    "decouple", "initialise", "backprop_phase", "run_inference",
]


@dataclass
class RegressionConfig:
    t_in: int = 10
    alpha_bar: float = 0.0005
    momentum: float = 0.9
    n_backprop_steps: int = 300
    n_refit: int = 40
    batch_starts: int = 32
    d_eff: float = 0.98
    r: float = 2.0
    cycle_len: int = 10
    symmetric: bool = True
    c_init: str = "zeros"
    flat_rate: Optional[float] = None
    edge_prob: Optional[float] = None  # prior p in the rate formula; None -> log(N)/N
    k_init: int = 8
    blowup: float = 1e6

    def __post_init__(self):
        if self.t_in < 1:
            raise ConfigError("must be >= 1", "t_in")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must lie in [0, 1)", "momentum")
        if self.batch_starts < 1:
            raise ConfigError("must be >= 1", "batch_starts")
        if self.cycle_len < 1:
            raise ConfigError("must be >= 1", "cycle_len")
        if self.c_init not in ("zeros",):
            raise ConfigError(f"unknown scheme {self.c_init!r}", "c_init")


class CouplingParams:
    """Free coupling parameters of an ``n``-node network.

    Symmetric mode keeps one parameter per unordered pair (upper triangle);
    otherwise every directed off-diagonal pair is free.
    """

    def __init__(self, n, symmetric):
        self.n = n
        self.symmetric = symmetric
        if symmetric:
            self.rows, self.cols = np.triu_indices(n, k=1)
        else:
            self.rows, self.cols = np.nonzero(~np.eye(n, dtype=bool))

    @property
    def size(self):
        return self.rows.size

    def to_matrix(self, theta):
        C = np.zeros((self.n, self.n))
        C[self.rows, self.cols] = theta
        if self.symmetric:
            C[self.cols, self.rows] = theta
        return C

    def from_matrix(self, C):
        return np.asarray(C, dtype=float)[self.rows, self.cols].copy()


def _check(X, blowup, step):
    if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > blowup:
        raise NumericError("freerun diverged", step=step)


def forward_euler_freerun(model, C, x0, dt, t_in, coupling=None, blowup=1e6):
    """Euler freerun ``x <- x + dt (fhat(x) + sum_j C_ij g(x_i, x_j))``.

    ``x0`` has shape ``(..., N, D)``; the result has shape ``(t_in + 1, ..., N, D)``
    and starts with ``x0``.
    """
    coupling = coupling or DiffusiveCoupling(0)
    C = np.asarray(C, dtype=float)
    X = np.array(x0, dtype=float)
    out = np.empty((t_in + 1,) + X.shape)
    out[0] = X
    for t in range(1, t_in + 1):
        X = X + dt * (model.forward(X) + coupling.network_term(C, X))
        _check(X, blowup, t)
        out[t] = X
    return out


def loss(predicted, observed):
    """Sum of squared freerun errors and the per-step, per-node breakdown.

    Arrays are ``(T, N, D)`` (extra leading batch axes after ``T`` allowed).
    """
    E = np.sum((np.asarray(predicted) - np.asarray(observed)) ** 2, axis=-1)
    return float(E.sum()), E


def grad_c(model, C, segments, dt, params, coupling=None, blowup=1e6,
           return_sensitivities=False):
    """Loss and exact gradient over free coupling parameters.

    Parameters
    ----------
    model : object with ``forward_and_jacobian``
        Local field; ``LocalModel`` or an analytic field.
    C : (N, N) array
        Current coupling estimate (consistent with ``params``).
    segments : array, shape (B, t_in + 1, N, D)
        Observed windows; row 0 seeds the freerun.
    params : CouplingParams

    Returns
    -------
    loss : float
        Freerun loss averaged over the batch.
    grad : (P,) array
        Gradient averaged over the batch.
    """
    coupling = coupling or DiffusiveCoupling(0)
    c = coupling.component
    C = np.asarray(C, dtype=float)
    segments = np.asarray(segments, dtype=float)
    if segments.ndim == 3:
        segments = segments[None]
    B, T, N, D = segments.shape
    P = params.size
    rows, cols = params.rows, params.cols
    pidx = np.arange(P)
    rowsum = C.sum(axis=1)
    X = segments[:, 0].copy()
    S = np.zeros((B, N, D, P))
    total = 0.0
    grad = np.zeros(P)
    for t in range(1, T):
        F, J = model.forward_and_jacobian(X)
        xc = X[:, :, c]
        # coupling contribution to the coupled-component sensitivity
        Sc = S[:, :, c, :]
        dc = np.matmul(C, Sc) - rowsum[None, :, None] * Sc
        dc[:, rows, pidx] += xc[:, cols] - xc[:, rows]
        if params.symmetric:
            dc[:, cols, pidx] += xc[:, rows] - xc[:, cols]
        S_new = S + dt * np.matmul(J, S)
        S_new[:, :, c, :] += dt * dc
        X = X + dt * (F + coupling.network_term(C, X))
        S = S_new
        _check(X, blowup, t)
        if not np.all(np.isfinite(S)):
            raise NumericError("non-finite sensitivity", step=t)
        res = X - segments[:, t]
        total += float(np.sum(res**2))
        grad += 2.0 * (res.reshape(-1) @ S.reshape(-1, P))
    if return_sensitivities:
        return total / B, grad / B, S
    return total / B, grad / B


def sample_segments(data, t_in, n, rng):
    """``n`` random windows of ``t_in + 1`` consecutive samples, ``(n, t_in+1, N, D)``."""
    T = data.shape[0]
    if T < t_in + 1:
        raise ValueError(f"trajectory of {T} samples is shorter than t_in + 1")
    starts = rng.integers(0, T - t_in, size=n)
    idx = starts[:, None] + np.arange(t_in + 1)[None, :]
    return data[idx]


def coupling_rate(cfg, n_nodes):
    """Base coupling learning rate ``sqrt(p N (N-1) / 2 * alpha_bar)``."""
    if cfg.flat_rate is not None:
        return float(cfg.flat_rate)
    p = cfg.edge_prob
    if p is None:
        p = math.log(n_nodes) / n_nodes if n_nodes > 1 else 0.0
    return math.sqrt(p * n_nodes * (n_nodes - 1) / 2.0 * cfg.alpha_bar)


@dataclass
class IterationRecord:
    iteration: int
    c_hat: np.ndarray
    loss: float
    lr_scale: float
    train_mse: float
    grad_norm: float


@dataclass(eq=False)
class RegressionState:
    """Mutable state of one inference run.

    ``theta`` holds the free coupling parameters; ``c_hat`` is derived.
    ``velocity`` is the momentum-filtered step direction (None before the
    first update).
    """

    params: CouplingParams
    theta: np.ndarray
    model: LocalModel
    base_rate: float
    momentum: float = 0.9
    velocity: Optional[np.ndarray] = None
    lr_scale: float = 1.0
    iteration: int = 0
    cycle_pos: int = 0
    n_updates: int = 0
    loss_history: list = field(default_factory=list)

    @property
    def c_hat(self):
        return self.params.to_matrix(self.theta)

    @property
    def alpha_lr(self):
        return self.base_rate * self.lr_scale


def update_c(state, gradient):
    """Momentum-filtered gradient step on the free coupling parameters.

    ``v <- M v + (1 - M) g`` with ``v`` seeded by the first gradient, then
    ``theta <- theta - alpha_LR * v``.  The diagonal never enters ``theta``.
    """
    gradient = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(gradient)):
        raise NumericError("non-finite coupling gradient", step=state.n_updates)
    if state.velocity is None:
        state.velocity = gradient.copy()
    else:
        state.velocity = state.momentum * state.velocity + (1.0 - state.momentum) * gradient
    state.theta = state.theta - state.alpha_lr * state.velocity
    state.n_updates += 1
    return state


def scheduler_step(state, cfg):
    """Advance the decay-reset schedule by one iteration.

    The rate decays by ``(d_eff / r) ** (1 / cycle_len)`` per iteration and is
    multiplied by ``r`` when a cycle completes, for a net ``d_eff`` per cycle.
    """
    gamma = (cfg.d_eff / cfg.r) ** (1.0 / cfg.cycle_len)
    state.lr_scale *= gamma
    state.cycle_pos += 1
    if state.cycle_pos == cfg.cycle_len:
        state.lr_scale *= cfg.r
        state.cycle_pos = 0
    return state.lr_scale


def decouple(traj, C, coupling=None):
    """Vector-field targets with the estimated coupling removed.

    ``(x_i(t+1) - x_i(t)) / dt - sum_j C_ij g(x_i(t), x_j(t))`` for every node
    and step, pooled node-major like :func:`finite_difference_all`.
    """
    coupling = coupling or DiffusiveCoupling(0)
    data = traj.data
    C = C.weights if hasattr(C, "weights") else np.asarray(C, dtype=float)
    vel = (data[1:] - data[:-1]) / traj.dt - coupling.network_term(C, data[:-1])
    states = data[:-1].transpose(1, 0, 2).reshape(-1, traj.dim)
    vel = vel.transpose(1, 0, 2).reshape(-1, traj.dim)
    return VectorFieldSamples(states.copy(), vel, "decoupled")


@dataclass
class InferenceResult:
    state: RegressionState
    history: list
    init_report: object = None
    refit_reports: list = field(default_factory=list)

    @property
    def c_hat(self):
        return self.state.c_hat


def initialise(traj, cfg, train_cfg, rng, model=None):
    """Mean-field local model and zero coupling estimate."""
    fd = finite_difference_all(traj)
    mf = mean_field_estimate(fd, cfg.k_init)
    if model is None:
        model = LocalModel(traj.dim, seed=int(rng.integers(2**31)))
    report = train(model, mf, train_cfg, rate=train_cfg.learning_rate, rng=rng)
    params = CouplingParams(traj.n_nodes, cfg.symmetric)
    state = RegressionState(params, np.zeros(params.size), model,
                            base_rate=coupling_rate(cfg, traj.n_nodes),
                            momentum=cfg.momentum)
    return state, report


def backprop_phase(state, traj, cfg, rng, coupling=None):
    """``n_backprop_steps`` batched gradient updates; returns mean loss and last grad norm."""
    losses = []
    gnorm = 0.0
    for _ in range(cfg.n_backprop_steps):
        seg = sample_segments(traj.data, cfg.t_in, cfg.batch_starts, rng)
        L, g = grad_c(state.model, state.c_hat, seg, traj.dt, state.params,
                      coupling, cfg.blowup)
        update_c(state, g)
        losses.append(L)
        gnorm = float(np.linalg.norm(g))
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    state.loss_history.append(mean_loss)
    return mean_loss, gnorm


def run_inference(traj, cfg=None, train_cfg=None, rng=None, coupling=None,
                  callback: Optional[Callable] = None):
    """Jointly infer the coupling matrix and local model from a trajectory.

    Parameters
    ----------
    traj : Trajectory
        Observed (normally normalised, possibly smoothed) node states.
    cfg : RegressionConfig
    train_cfg : TrainConfig
    rng : numpy Generator
        Drives model initialisation, shuffling and segment sampling.
    callback : callable, optional
        ``callback(record, state)`` after initialisation and after every
        refit iteration.

    Returns
    -------
    InferenceResult
        ``history`` has ``n_refit + 1`` records; record 0 is the initial state.

    Raises
    ------
    InferenceDiverged
        With the partial result attached, if any stage produces non-finite
        values or a freerun blows up.
    """
    cfg = cfg or RegressionConfig()
    train_cfg = train_cfg or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    coupling = coupling or DiffusiveCoupling(0)

    state, init_report = initialise(traj, cfg, train_cfg, rng)
    result = InferenceResult(state, [], init_report)

    def record(loss_value, train_mse, gnorm):
        rec = IterationRecord(state.iteration, state.c_hat, loss_value,
                              state.lr_scale, train_mse, gnorm)
        result.history.append(rec)
        if callback is not None:
            callback(rec, state)

    record(float("nan"), init_report.final_mse, 0.0)
    try:
        for _ in range(cfg.n_refit):
            mean_loss, gnorm = backprop_phase(state, traj, cfg, rng, coupling)
            targets = decouple(traj, state.c_hat, coupling)
            rep = train(state.model, targets, train_cfg, rate=train_cfg.refit_rate,
                        rng=rng, fit_scaling=False)
            result.refit_reports.append(rep)
            state.iteration += 1
            scheduler_step(state, cfg)
            record(mean_loss, rep.final_mse, gnorm)
    except NumericError as exc:
        raise InferenceDiverged(f"inference stopped at iteration {state.iteration + 1}: {exc}",
                                step=state.iteration + 1, result=result) from exc
    return result

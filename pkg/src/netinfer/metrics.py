"""Evaluation measures: weight error, prediction horizon, histogram mutual
information and its cumulative score, weight thresholding, and the
perturbed-truth control baseline."""
import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dynsys import DiffusiveCoupling, stack_models
from .errors import ConfigError
from .netgen import CouplingMatrix
from .simulate import rk4_step

__all__ = [
    "weight_error", "entropy_estimate", "horizon_from_errors", "prediction_horizon",
    "tolerant_freerun", "mutual_information_curve", "mi_score", "threshold_weights",
    "weight_histogram",
    "choose_starts", "batched_rk4", "control_predictions", "local_truth", "local_freerun",
    "MetricsConfig", "MetricsReport", "evaluate", "save_histogram_csv", "save_curves_csv",
    "REPORT_SCHEMA",
]


def weight_error(c_hat, c_true):
    """Normalised weight error ``||Chat - C||^2 / ||C||^2`` (Frobenius)."""
    c_hat = getattr(c_hat, "weights", c_hat)
    c_true = getattr(c_true, "weights", c_true)
    c_hat = np.asarray(c_hat, dtype=float)
    c_true = np.asarray(c_true, dtype=float)
    if c_hat.shape != c_true.shape:
        raise ValueError(f"shape mismatch {c_hat.shape} vs {c_true.shape}")
    denom = np.sum(c_true**2)
    if denom == 0:
        raise ValueError("weight error is undefined for an all-zero true matrix")
    return float(np.sum((c_hat - c_true) ** 2) / denom)


# prediction horizon -------------------------------------------------------

def tolerant_freerun(model, C, x0, dt, n_steps, coupling=None, blowup=1e6):
    """Euler freerun over a batch that marks blown-up members instead of raising.

    ``x0`` has shape ``(B, N, D)``.  Returns ``(n_steps + 1, B, N, D)``; once a
    member leaves the ``blowup`` box its remaining samples are ``inf``.
    """
    coupling = coupling or DiffusiveCoupling(0)
    C = np.asarray(getattr(C, "weights", C), dtype=float)
    X = np.array(x0, dtype=float)
    out = np.empty((n_steps + 1,) + X.shape)
    out[0] = X
    alive = np.ones(X.shape[0], dtype=bool)
    for t in range(1, n_steps + 1):
        Xa = X[alive]
        if Xa.shape[0]:
            Xa = Xa + dt * (model.forward(Xa) + coupling.network_term(C, Xa))
            ok = np.all(np.isfinite(Xa) & (np.abs(Xa) <= blowup), axis=(1, 2))
            idx = np.nonzero(alive)[0]
            X[idx[ok]] = Xa[ok]
            alive[idx[~ok]] = False
        X[~alive] = np.inf
        out[t] = X
    return out


def horizon_from_errors(err, epsilon, dt):
    """Per-member, per-node horizons from squared errors.

    ``err`` has shape ``(T + 1, ...)`` with row 0 at the start; the horizon is
    ``k * dt`` for the first ``k >= 1`` with ``err >= epsilon``, or ``T * dt``
    when the threshold is never reached.  Non-finite errors count as exceeded.
    """
    err = np.asarray(err, dtype=float)
    T = err.shape[0] - 1
    hit = ~(err[1:] < epsilon)  # nan/inf count as exceeded
    first = np.where(hit.any(axis=0), hit.argmax(axis=0) + 1, T)
    return first * dt


def choose_starts(n_steps, window, n_starts, rng):
    """Sorted random start indices leaving ``window`` samples after each start."""
    if n_steps <= window:
        raise ValueError(f"trajectory of {n_steps} samples is too short for a {window}-step window")
    return np.sort(rng.choice(n_steps - window, size=min(n_starts, n_steps - window),
                              replace=False))


def prediction_horizon(model, c_hat, observed, epsilon=1.0, n_starts=16, window=500,
                       rng=None, starts=None, coupling=None):
    """Mean prediction horizon ``t_p`` (time units) of the combined model.

    A freerun from each observed start is compared with the observed
    continuation; per node the horizon is the first time the squared error
    reaches ``epsilon``.  The result averages over nodes and starts.
    """
    if starts is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        starts = choose_starts(observed.n_steps, window, n_starts, rng)
    pred = tolerant_freerun(model, c_hat, observed.data[starts], observed.dt, window, coupling)
    obs = _windows(observed.data, starts, window)
    err = np.sum((pred - obs) ** 2, axis=-1)
    return float(horizon_from_errors(err, epsilon, observed.dt).mean())


def _windows(data, starts, window):
    """``(window + 1, B, ...)`` slices of ``data`` beginning at each start."""
    idx = np.asarray(starts)[None, :] + np.arange(window + 1)[:, None]
    return data[idx]


# mutual information -------------------------------------------------------

def _bin_index(values, n_bins):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.zeros(values.shape, dtype=int)
    lo, hi = finite.min(), finite.max()
    if hi == lo:
        return np.zeros(values.shape, dtype=int)
    v = np.where(np.isfinite(values), values, np.where(values > 0, hi, lo))
    v = np.clip(v, lo, hi)
    return np.minimum(((v - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1)


def mutual_information_curve(true_x, pred_x, tau_max=500, n_bins=16):
    """Histogram estimate of ``I(tau)`` for ``tau = 1 .. tau_max``.

    Parameters
    ----------
    true_x, pred_x : array, shape (n_starts, T + 1)
        One scalar component along freeruns; column 0 is the start and is
        not used.
    tau_max : int
    n_bins : int
        Equal-width bins per variable over the pooled range of samples
        ``1 .. tau_max`` (fixed for every ``tau``).

    Returns
    -------
    I : ndarray, shape (tau_max,)
        ``I[k]`` uses the pooled pairs ``(x(t), xhat(t))`` for ``t <= k + 1``.
        Natural logarithm.
    """
    true_x = np.atleast_2d(np.asarray(true_x, dtype=float))
    pred_x = np.atleast_2d(np.asarray(pred_x, dtype=float))
    if true_x.shape != pred_x.shape:
        raise ValueError("true and predicted series must have the same shape")
    if true_x.shape[1] < tau_max + 1:
        raise ValueError(f"need {tau_max + 1} samples per start, got {true_x.shape[1]}")
    a = _bin_index(true_x[:, 1:tau_max + 1], n_bins)
    b = _bin_index(pred_x[:, 1:tau_max + 1], n_bins)
    joint = np.zeros((tau_max, n_bins, n_bins))
    t_idx = np.broadcast_to(np.arange(tau_max), a.shape)
    np.add.at(joint, (t_idx, a, b), 1.0)
    joint = np.cumsum(joint, axis=0)
    total = joint.sum(axis=(1, 2), keepdims=True)
    pxy = joint / total
    px = pxy.sum(axis=2, keepdims=True)
    py = pxy.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pxy > 0, pxy * np.log(pxy / (px * py)), 0.0)
    return np.maximum(terms.sum(axis=(1, 2)), 0.0)


def entropy_estimate(x, n_bins=16):
    """Plug-in entropy of one series with the same binning as the MI estimate."""
    counts = np.bincount(_bin_index(np.ravel(np.asarray(x, dtype=float)), n_bins),
                         minlength=n_bins)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mi_score(I_curve):
    """Trapezoidal area under ``I(tau)`` for ``tau = 1 .. tau_max`` (unit spacing)."""
    I_curve = np.asarray(I_curve, dtype=float)
    if I_curve.size < 2:
        return 0.0
    return float(np.trapezoid(I_curve))


# weights ------------------------------------------------------------------

def threshold_weights(c_hat, threshold):
    """Zero every weight with ``|c| < threshold``."""
    symmetric = getattr(c_hat, "symmetric", None)
    W = np.array(getattr(c_hat, "weights", c_hat), dtype=float)
    W[np.abs(W) < threshold] = 0.0
    if symmetric is None:
        symmetric = bool(np.array_equal(W, W.T))
    return CouplingMatrix(W, symmetric=symmetric)


def weight_histogram(c_hat, n_bins=40, off_diagonal=True):
    """Histogram of regressed weights; returns ``(counts, edges)``.

    A zero-width range is widened by 0.5 on each side so all weights share
    one bin.
    """
    W = np.asarray(getattr(c_hat, "weights", c_hat), dtype=float)
    if off_diagonal and W.ndim == 2 and W.shape[0] == W.shape[1]:
        vals = W[~np.eye(W.shape[0], dtype=bool)]
    else:
        vals = W.ravel()
    if vals.size == 0:
        return np.zeros(n_bins, dtype=int), np.linspace(-0.5, 0.5, n_bins + 1)
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(vals, bins=n_bins, range=(lo, hi))
    return counts, edges


def save_histogram_csv(path, counts, edges):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


# truth and control runs -----------------------------------------------------

def _raw_state(traj, t, node=None):
    """Full raw state (observed + latent) at sample ``t``, shape ``(N, state_dim)``."""
    z = traj.data[t]
    x = z * traj.norm_std + traj.norm_mean if traj.normalized else z.copy()
    if traj.latent is not None:
        x = np.concatenate([x, traj.latent[t]], axis=-1)
    return x if node is None else x[node:node + 1]


def _to_obs_units(traj, raw):
    D = traj.dim
    obs = raw[..., :D]
    return (obs - traj.norm_mean) / traj.norm_std if traj.normalized else obs


def batched_rk4(models, C, x0, dt, n_steps, oversample=1, coupling=None, blowup=1e6):
    """RK4 runs of the true network from a batch of full states.

    ``x0`` has shape ``(B, N, state_dim)``.  Returns ``(n_steps + 1, B, N,
    state_dim)``; a member leaving the ``blowup`` box is ``inf`` from then on.
    """
    model = stack_models(list(models))
    coupling = coupling or DiffusiveCoupling(model.coupled_component)
    W = np.asarray(getattr(C, "weights", C), dtype=float)

    def F(X):
        return model.f(X) + coupling.network_term(W, X)

    X = np.array(x0, dtype=float)
    out = np.empty((n_steps + 1,) + X.shape)
    out[0] = X
    alive = np.ones(X.shape[0], dtype=bool)
    h = dt / oversample
    for t in range(1, n_steps + 1):
        if alive.any():
            Xa = X[alive]
            for _ in range(oversample):
                Xa = rk4_step(F, Xa, h)
            ok = np.all(np.isfinite(Xa) & (np.abs(Xa) <= blowup), axis=(1, 2))
            idx = np.nonzero(alive)[0]
            X[idx[ok]] = Xa[ok]
            alive[idx[~ok]] = False
        X[~alive] = np.inf
        out[t] = X
    return out


def _perturbed_starts(observed, starts, xi, rng):
    x0 = np.stack([_raw_state(observed, s) for s in starts])
    if xi > 0:
        D = observed.dim
        noise = rng.normal(0.0, xi, size=(len(starts), observed.n_nodes, D))
        if observed.normalized:
            noise = noise * observed.norm_std
        x0[..., :D] += noise
    return x0


def control_predictions(models, C, observed, starts, window, xi=0.005, rng=None,
                        oversample=1, coupling=None):
    """True-network RK4 runs from starts perturbed by ``N(0, xi^2)``.

    The perturbation is applied to the observed components in the units of
    ``observed`` (normalised units for normalised data).  Returns
    ``(window + 1, B, N, D)`` in the same units; a diverged run is ``inf``
    from then on.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x0 = _perturbed_starts(observed, starts, xi, rng)
    raw = batched_rk4(models, C, x0, observed.dt, window, oversample, coupling)
    return _to_obs_units(observed, raw)


def local_truth(models, observed, starts, window, xi=0.0, rng=None, oversample=1):
    """Uncoupled runs of the true local dynamics from every node's states.

    ``models`` holds one model per node.  Returns ``(window + 1, B, N, D)``:
    entry ``[:, b, i]`` starts at node ``i``'s observed state at ``starts[b]``
    and evolves in isolation.  ``xi > 0`` perturbs the start as in
    :func:`control_predictions`.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    N = observed.n_nodes
    x0 = _perturbed_starts(observed, starts, xi, rng)
    raw = batched_rk4(models, np.zeros((N, N)), x0, observed.dt, window, oversample)
    return _to_obs_units(observed, raw)


def local_freerun(fhat, observed, starts, window):
    """Uncoupled Euler freeruns of the learned local model from every node's states."""
    N = observed.n_nodes
    return tolerant_freerun(fhat, np.zeros((N, N)), observed.data[starts], observed.dt, window)


# report ---------------------------------------------------------------------

@dataclass
class MetricsConfig:
    epsilon: float = 1.0
    tau_max: int = 500
    n_bins: int = 16
    n_starts: int = 16
    control_xi: float = 0.005
    n_control: int = 8
    component: int = 0
    threshold: Optional[float] = None
    hist_bins: int = 40

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("must be > 0", "epsilon")
        if self.tau_max < 2:
            raise ConfigError("must be >= 2", "tau_max")
        if self.n_bins < 2:
            raise ConfigError("must be >= 2", "n_bins")


@dataclass
class MetricsReport:
    epsilon_C: Optional[float]
    t_p: float
    S_local: list
    S_local_total: float
    S_combined: float
    I_local: list
    I_combined: list
    control_t_p: list = field(default_factory=list)
    control_S_local: list = field(default_factory=list)
    control_S_combined: list = field(default_factory=list)
    epsilon_C_thresholded: Optional[float] = None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "netinfer metrics report",
    "type": "object",
    "required": ["epsilon_C", "t_p", "S_local", "S_local_total", "S_combined",
                 "I_local", "I_combined", "config"],
    "properties": {
        "epsilon_C": {"type": ["number", "null"], "minimum": 0},
        "epsilon_C_thresholded": {"type": ["number", "null"], "minimum": 0},
        "t_p": {"type": "number", "minimum": 0},
        "S_local": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "S_local_total": {"type": "number", "minimum": 0},
        "S_combined": {"type": "number", "minimum": 0},
        "I_local": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "I_combined": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "control_t_p": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "control_S_local": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "control_S_combined": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "config": {"type": "object"},
    },
}


def _scores(true_w, pred_w, cfg):
    """Per-node MI curves and scores from ``(T + 1, B, N, D)`` windows."""
    c = cfg.component
    N = true_w.shape[2]
    curves = [mutual_information_curve(true_w[:, :, i, c].T, pred_w[:, :, i, c].T,
                                       cfg.tau_max, cfg.n_bins) for i in range(N)]
    return curves, [mi_score(I) for I in curves]


def evaluate(fhat, c_hat, observed, true_models=None, c_true=None, cfg=None, rng=None,
             oversample=1, coupling=None):
    """Compute every measure for a regressed model against observed data.

    Parameters
    ----------
    fhat : object with ``forward``
        Learned local field in the units of ``observed``.
    c_hat : (N, N) array or CouplingMatrix
    observed : Trajectory
        Clean reference trajectory (normally normalised).
    true_models : sequence of OscillatorModel, optional
        Per-node ground truth; enables the local score and the control runs.
    c_true : optional
        True coupling; enables ``epsilon_C`` and the control runs.
    """
    cfg = cfg or MetricsConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    window = cfg.tau_max
    starts = choose_starts(observed.n_steps, window, cfg.n_starts, rng)
    obs_w = _windows(observed.data, starts, window)
    W_hat = np.asarray(getattr(c_hat, "weights", c_hat), dtype=float)

    pred = tolerant_freerun(fhat, W_hat, observed.data[starts], observed.dt, window, coupling)
    err = np.sum((pred - obs_w) ** 2, axis=-1)
    t_p = float(horizon_from_errors(err, cfg.epsilon, observed.dt).mean())
    I_comb, S_comb = _scores(obs_w, pred, cfg)

    eps_c = eps_thr = None
    W_true = None
    if c_true is not None:
        W_true = np.asarray(getattr(c_true, "weights", c_true), dtype=float)
        eps_c = weight_error(W_hat, W_true)
        if cfg.threshold is not None:
            eps_thr = weight_error(threshold_weights(W_hat, cfg.threshold), W_true)

    I_loc, S_loc = [], []
    ctrl_tp, ctrl_sl, ctrl_sc = [], [], []
    if true_models is not None:
        models = list(true_models)
        if len(models) == 1:
            models = models * observed.n_nodes
        truth = local_truth(models, observed, starts, window, oversample=oversample)
        loc = local_freerun(fhat, observed, starts, window)
        I_loc, S_loc = _scores(truth, loc, cfg)
        if W_true is not None:
            for _ in range(cfg.n_control):
                ctrl = control_predictions(models, W_true, observed, starts, window,
                                           cfg.control_xi, rng, oversample, coupling)
                e = np.sum((ctrl - obs_w) ** 2, axis=-1)
                ctrl_tp.append(float(horizon_from_errors(e, cfg.epsilon, observed.dt).mean()))
                ctrl_sc.append(float(np.sum(_scores(obs_w, ctrl, cfg)[1])))
                lctrl = local_truth(models, observed, starts, window, cfg.control_xi,
                                    rng, oversample)
                ctrl_sl.append(float(np.sum(_scores(truth, lctrl, cfg)[1])))

    return MetricsReport(
        epsilon_C=eps_c, t_p=t_p,
        S_local=[float(s) for s in S_loc], S_local_total=float(np.sum(S_loc)),
        S_combined=float(np.sum(S_comb)),
        I_local=np.mean(I_loc, axis=0).tolist() if I_loc else [],
        I_combined=np.mean(I_comb, axis=0).tolist(),
        control_t_p=ctrl_tp, control_S_local=ctrl_sl, control_S_combined=ctrl_sc,
        epsilon_C_thresholded=eps_thr,
        config=asdict(cfg),
    )


def save_curves_csv(path, report):
    """``tau, I_local, I_combined`` (node-averaged curves)."""
    n = max(len(report.I_local), len(report.I_combined))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "I_local", "I_combined"])
        for k in range(n):
            w.writerow([k + 1,
                        repr(float(report.I_local[k])) if k < len(report.I_local) else "",
                        repr(float(report.I_combined[k])) if k < len(report.I_combined) else ""])

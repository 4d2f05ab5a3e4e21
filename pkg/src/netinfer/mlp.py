"""Feedforward local-dynamics model: two sigmoid hidden layers, linear output.

Plain numpy.  Inputs and outputs pass through per-channel affine scalings fit
on the first training set, so ``forward`` and ``input_jacobian`` work in the
caller's units.
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError

__all__ = ["TrainConfig", "TrainingReport", "LocalModel", "train"]

_MAGIC = b"NETINFER-MLP v1\n"
_CHUNK = 65536


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    refit_rate: float = 0.0002
    epochs: int = 30
    batch_size: int = 64
    momentum: float = 0.9
    optimizer: str = "adam"
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "optimizer")
        if not self.refit_rate < self.learning_rate:
            warnings.warn(f"refit rate {self.refit_rate} should be below the "
                          f"training rate {self.learning_rate}", stacklevel=2)


@dataclass
class TrainingReport:
    initial_mse: float
    epoch_mse: list = field(default_factory=list)

    @property
    def final_mse(self):
        return self.epoch_mse[-1] if self.epoch_mse else self.initial_mse

    @property
    def converged(self):
        return self.final_mse <= self.initial_mse


class LocalModel:
    """MLP ``R^D -> R^D`` approximating a local vector field.

    Weight matrices are stored ``(fan_in, fan_out)``.
    """

    def __init__(self, dim, hidden=(128, 128), seed=0):
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = seed
        rng = np.random.default_rng(seed)
        sizes = (self.dim,) + self.hidden + (self.dim,)
        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self._allocate(shapes)
        for W in self.weights:
            limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        self.in_mean = np.zeros(self.dim)
        self.in_std = np.ones(self.dim)
        self.out_mean = np.zeros(self.dim)
        self.out_std = np.ones(self.dim)
        self.scaled = False

    def _allocate(self, shapes):
        # every parameter is a view into one flat buffer
        self._flat = np.zeros(sum(int(np.prod(sh)) for sh in shapes))
        views = []
        pos = 0
        for sh in shapes:
            n = int(np.prod(sh))
            views.append(self._flat[pos:pos + n].reshape(sh))
            pos += n
        self.weights = views[0::2]
        self.biases = views[1::2]

    @property
    def layer_dims(self):
        return [self.dim, *self.hidden, self.dim]

    def copy(self):
        new = LocalModel.__new__(LocalModel)
        new.__dict__.update(self.__dict__)
        new._allocate([p.shape for p in self.params()])
        new._flat[...] = self._flat
        for name in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def fit_scaling(self, states, targets):
        def stats(a):
            m = a.mean(axis=0)
            s = a.std(axis=0)
            return m, np.where(s > 0, s, 1.0)
        self.in_mean, self.in_std = stats(np.asarray(states, dtype=float))
        self.out_mean, self.out_std = stats(np.asarray(targets, dtype=float))
        self.scaled = True

    # parameters -----------------------------------------------------------
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def get_flat(self):
        return self._flat.copy()

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self._flat.shape:
            raise ValueError("flat parameter vector has the wrong length")
        self._flat[...] = flat

    # evaluation -----------------------------------------------------------
    def _hidden(self, xs):
        acts = []
        h = xs
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = expit(h @ W + b)
            acts.append(h)
        return acts

    def _forward_2d(self, x):
        xs = (x - self.in_mean) / self.in_std
        h = self._hidden(xs)[-1]
        return (h @ self.weights[-1] + self.biases[-1]) * self.out_std + self.out_mean

    def forward(self, x):
        """Evaluate the model on ``(..., D)`` states."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite input to local model")
        flat = x.reshape(-1, self.dim)
        if flat.shape[0] <= _CHUNK:
            y = self._forward_2d(flat)
        else:
            y = np.concatenate([self._forward_2d(flat[i:i + _CHUNK])
                                for i in range(0, flat.shape[0], _CHUNK)])
        return y.reshape(x.shape)

    __call__ = forward

    def forward_and_jacobian(self, x):
        """Return ``(f(x), df/dx)`` with shapes ``(..., D)`` and ``(..., D, D)``."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite input to local model")
        flat = x.reshape(-1, self.dim)
        xs = (flat - self.in_mean) / self.in_std
        acts = self._hidden(xs)
        y = (acts[-1] @ self.weights[-1] + self.biases[-1]) * self.out_std + self.out_mean
        # Jt[b, d, h] = d(pre-activation h) / d x_d, one GEMM per layer
        B = flat.shape[0]
        W0 = self.weights[0] / self.in_std[:, None]
        Jt = W0[None] * (acts[0] * (1.0 - acts[0]))[:, None, :]
        for W, h in zip(self.weights[1:-1], acts[1:]):
            Jt = (Jt.reshape(B * self.dim, -1) @ W).reshape(B, self.dim, -1)
            Jt *= (h * (1.0 - h))[:, None, :]
        Jt = (Jt.reshape(B * self.dim, -1) @ self.weights[-1]).reshape(B, self.dim, self.dim)
        J = Jt.transpose(0, 2, 1) * self.out_std[:, None]
        return y.reshape(x.shape), J.reshape(x.shape + (self.dim,))

    def input_jacobian(self, x):
        return self.forward_and_jacobian(x)[1]

    def loss_and_grads(self, x, y):
        """MSE in scaled output units and its gradient for every parameter.

        Returns ``(loss, grads)``; ``grads`` is a flat vector laid out like
        :meth:`get_flat`.
        """
        xs = (x - self.in_mean) / self.in_std
        ys = (y - self.out_mean) / self.out_std
        acts = self._hidden(xs)
        pred = acts[-1] @ self.weights[-1] + self.biases[-1]
        err = pred - ys
        loss = float(np.mean(err**2))
        delta = 2.0 * err / err.size
        grads = np.empty_like(self._flat)
        layer_in = [xs] + acts
        offsets = np.cumsum([0] + [p.size for p in self.params()])
        for k in range(len(self.weights) - 1, -1, -1):
            W = self.weights[k]
            a, b, c = offsets[2 * k], offsets[2 * k + 1], offsets[2 * k + 2]
            np.matmul(layer_in[k].T, delta, out=grads[a:b].reshape(W.shape))
            np.sum(delta, axis=0, out=grads[b:c])
            if k:
                h = acts[k - 1]
                delta = (delta @ self.weights[k].T) * h * (1.0 - h)
        return loss, grads

    def mse(self, x, y):
        ys = (np.asarray(y) - self.out_mean) / self.out_std
        ps = (self.forward(x) - self.out_mean) / self.out_std
        return float(np.mean((ps - ys) ** 2))

    # checkpoints ----------------------------------------------------------
    def save(self, path, extra=None):
        """JSON header line followed by little-endian float64 parameters."""
        header = {
            "layer_dims": self.layer_dims,
            "activation": "sigmoid",
            "layout": "W1(in,out),b1,W2,b2,W3,b3 row-major",
            "seed": self.seed,
            "in_mean": self.in_mean.tolist(), "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(), "out_std": self.out_std.tolist(),
            "scaled": self.scaled,
            "n_params": int(self.get_flat().size),
            **(extra or {}),
        }
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(self.get_flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.readline() != _MAGIC:
                raise ValueError(f"{path}: not a model checkpoint")
            header = json.loads(fh.readline())
            flat = np.frombuffer(fh.read(), dtype="<f8")
        dims = header["layer_dims"]
        model = cls(dims[0], dims[1:-1], seed=header.get("seed", 0))
        model.set_flat(flat)
        for name in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(model, name, np.array(header[name], dtype=float))
        model.scaled = header.get("scaled", True)
        return model


def train(model, samples, cfg, rate=None, epochs=None, rng=None, fit_scaling=None):
    """Minibatch training of ``model`` on the MSE between model and velocities.

    ``cfg.optimizer`` selects Adam (first-moment decay ``cfg.momentum``) or
    SGD with heavy-ball momentum ``cfg.momentum``.  Optimiser state starts
    fresh on every call.

    ``rate`` defaults to ``cfg.learning_rate``; pass ``cfg.refit_rate`` for
    refits.  Scalings are fit on the first call unless ``fit_scaling`` says
    otherwise.  The training set is reshuffled every epoch.
    """
    X = np.asarray(samples.states, dtype=float)
    Y = np.asarray(samples.velocities, dtype=float)
    M = X.shape[0]
    if M == 0:
        raise ValueError("cannot train on an empty sample set")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NumericError("non-finite training samples")
    rate = cfg.learning_rate if rate is None else rate
    epochs = cfg.epochs if epochs is None else epochs
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if fit_scaling or (fit_scaling is None and not model.scaled):
        model.fit_scaling(X, Y)
    theta = model._flat
    first = np.zeros_like(theta)
    second = np.zeros_like(theta)
    report = TrainingReport(initial_mse=model.mse(X, Y))
    bs = max(1, int(cfg.batch_size))
    b1, b2 = cfg.momentum, cfg.beta2
    step = 0
    for _ in range(epochs):
        order = rng.permutation(M)
        for start in range(0, M, bs):
            idx = order[start:start + bs]
            _, g = model.loss_and_grads(X[idx], Y[idx])
            step += 1
            if cfg.optimizer == "sgd":
                first *= b1
                first += g
                theta -= rate * first
                continue
            first *= b1
            first += (1.0 - b1) * g
            second *= b2
            second += (1.0 - b2) * g * g
            scale = rate * np.sqrt(1.0 - b2**step) / (1.0 - b1**step)
            theta -= scale * first / (np.sqrt(second) + cfg.eps)
        mse = model.mse(X, Y)
        if not np.isfinite(mse):
            raise NumericError("training diverged", step=len(report.epoch_mse))
        report.epoch_mse.append(mse)
    return report

"""Random weighted coupling matrices.

``weights[i, j]`` is the influence of node ``j`` on node ``i`` (row = receiver).
"""
import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError

__all__ = [
    "CouplingMatrix", "NetworkGenSpec", "generate", "perturb_params",
    "is_weakly_connected", "save_matrix_csv", "load_matrix_csv",
]


@dataclass(eq=False)
class CouplingMatrix:
    weights: np.ndarray
    symmetric: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"coupling matrix must be square, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("coupling matrix has non-finite entries")
        if np.any(np.diag(w) != 0):
            raise ValueError("coupling matrix diagonal must be zero")
        if self.symmetric and not np.array_equal(w, w.T):
            raise ValueError("matrix flagged symmetric is not symmetric")
        self.weights = w

    @property
    def n_nodes(self):
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, n, symmetric=False):
        return cls(np.zeros((n, n)), symmetric=symmetric)

    def to_json(self):
        return json.dumps({
            "n_nodes": self.n_nodes,
            "symmetric": self.symmetric,
            "seed": self.seed,
            "weights": self.weights.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.array(d["weights"], dtype=float), d.get("symmetric", False), d.get("seed"))


@dataclass
class NetworkGenSpec:
    n_nodes: int
    edge_prob: Optional[float] = None  # None -> log(N)/N
    weight_mean: float = 0.15
    weight_std: float = 0.02
    negative_prob: float = 0.0
    symmetric: bool = True
    hetero_xi_alpha: float = 0.0
    require_connected: bool = False

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigError("must be >= 1", "n_nodes")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("must lie in [0, 1]", "edge_prob")
        if self.weight_std < 0:
            raise ConfigError("must be >= 0", "weight_std")
        if not 0.0 <= self.negative_prob <= 1.0:
            raise ConfigError("must lie in [0, 1]", "negative_prob")
        if self.hetero_xi_alpha < 0:
            raise ConfigError("must be >= 0", "hetero_xi_alpha")

    @property
    def p(self):
        """Edge probability, ``log(N)/N`` unless set."""
        if self.edge_prob is not None:
            return float(self.edge_prob)
        return math.log(self.n_nodes) / self.n_nodes if self.n_nodes > 1 else 0.0


def _draw(spec, rng):
    n = spec.n_nodes
    if spec.symmetric:
        rows, cols = np.triu_indices(n, k=1)
    else:
        mask = ~np.eye(n, dtype=bool)
        rows, cols = np.nonzero(mask)
    present = rng.random(rows.size) < spec.p
    w = rng.normal(spec.weight_mean, spec.weight_std, size=rows.size)
    flip = rng.random(rows.size) < spec.negative_prob
    w = np.where(flip, -w, w) * present
    C = np.zeros((n, n))
    C[rows, cols] = w
    if spec.symmetric:
        C[cols, rows] = w
    return C


def is_weakly_connected(C):
    A = (np.asarray(C) != 0)
    A = A | A.T
    n = A.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(A[i] & ~seen)[0]:
            seen[j] = True
            stack.append(j)
    return bool(seen.all())


def generate(spec, rng, max_tries=1000):
    """Draw a random coupling matrix.

    Every candidate edge (upper triangle when symmetric, every directed pair
    otherwise) is present with probability ``edge_prob``; present edges get
    weights from ``N(weight_mean, weight_std**2)`` and are negated with
    probability ``negative_prob``.
    """
    for _ in range(max_tries):
        C = _draw(spec, rng)
        if not spec.require_connected or is_weakly_connected(C):
            return CouplingMatrix(C, symmetric=spec.symmetric)
    raise ConfigError(f"no connected network after {max_tries} draws", "require_connected")


def perturb_params(base, xi_alpha, rng, n_nodes):
    """Per-node copies of ``base`` with ``alpha_i = alpha + U(0, xi_alpha)``."""
    if xi_alpha < 0:
        raise ConfigError("must be >= 0", "hetero_xi_alpha")
    if "alpha" not in base.params:
        raise ConfigError(f"system {base.kind!r} has no alpha parameter", "hetero_xi_alpha")
    if xi_alpha == 0:
        return [base] * n_nodes
    eps = rng.uniform(0.0, xi_alpha, size=n_nodes)
    return [base.with_params(alpha=float(base.params["alpha"]) + e) for e in eps]


def save_matrix_csv(path, C, stamp=None):
    """Dense row-major CSV; the first row is ``n_nodes,<N>`` followed by
    optional ``key,value`` pairs from ``stamp``."""
    W = C.weights if isinstance(C, CouplingMatrix) else np.asarray(C)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["n_nodes", W.shape[0]]
        for k, v in (stamp or {}).items():
            head += [k, v]
        writer.writerow(head)
        for row in W:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix_csv(path, symmetric=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "n_nodes":
        raise ValueError(f"{path}: missing n_nodes header")
    n = int(rows[0][1])
    W = np.array([[float(v) for v in r] for r in rows[1:1 + n]])
    if W.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n} weights, got {W.shape}")
    if symmetric is None:
        symmetric = bool(np.array_equal(W, W.T))
    return CouplingMatrix(W, symmetric=symmetric)

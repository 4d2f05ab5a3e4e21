"""How the evaluation measures behave for good and bad models.

Three stand-ins for a regressed model are scored on the same data: the true
field with the true couplings, the true field with the couplings removed,
and a model that predicts no motion at all.  The control row is the true
network itself, started from slightly perturbed states, which is the best any
model can hope for on chaotic data.

The true field scores only a short horizon here because the model freerun is
a forward Euler step at the sampling interval, while the data come from RK4.
The pooled MI needs many starts: with only a handful, a frozen model's
constant prediction already tells which start a sample came from, and that
alone buys it a respectable score.
"""
import numpy as np

from netinfer.dynsys import lorenz
from netinfer.metrics import MetricsConfig, evaluate
from netinfer.netgen import NetworkGenSpec, generate
from netinfer.simulate import NormalizedField, initial_conditions, integrate_rk4, normalize

rng = np.random.default_rng(2)
m = lorenz()
N = 4
C = generate(NetworkGenSpec(N, edge_prob=1.0), rng).weights
truth = normalize(integrate_rk4([m] * N, C, initial_conditions([m] * N, rng), 0.02, 3000, 500))
field = NormalizedField(m, truth.norm_mean, truth.norm_std)


class Frozen:
    def forward(self, x):
        return np.zeros_like(x)


cfg = MetricsConfig(tau_max=300, n_starts=64, n_control=4)
rows = [("true field, true C", field, C), ("true field, C = 0", field, 0 * C),
        ("frozen", Frozen(), C)]
print(f"{'model':<22}{'t_p':>6}{'S_combined':>12}{'S_local':>10}")
for name, model, W in rows:
    rep = evaluate(model, W, truth, [m], C, cfg, np.random.default_rng(0))
    print(f"{name:<22}{rep.t_p:6.2f}{rep.S_combined:12.1f}{rep.S_local_total:10.1f}")
print(f"{'control (median)':<22}{np.median(rep.control_t_p):6.2f}"
      f"{np.median(rep.control_S_combined):12.1f}{np.median(rep.control_S_local):10.1f}")

"""Recover the couplings of four diffusively coupled Lorenz oscillators.

Only the node trajectories are handed to the regression.  It first fits a
local model on the data as if the nodes were independent, then alternates
gradient steps on the coupling matrix with refits of the local model on the
decoupled data.  Takes a few minutes on one core.

    python3 demos/infer_small_network.py [seed]
"""
import sys
import time

import numpy as np

from netinfer import metrics, pipeline
from netinfer.config import preset_config, run_seeds
from netinfer.dynsys import DiffusiveCoupling
from netinfer.regression import run_inference

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = preset_config("lorenz4-fast").replace(seed=seed)
models, C, observed, truth = pipeline.simulate_data(cfg)
print("true coupling matrix")
print(np.array2string(C.weights, precision=3, suppress_small=True))

t0 = time.time()


def report(rec, state):
    eps = metrics.weight_error(rec.c_hat, C)
    print(f"iteration {rec.iteration:2d}  eps_C {eps:.4f}  local mse {rec.train_mse:.2e}"
          f"  ({time.time() - t0:.0f} s)")


res = run_inference(observed, cfg.regression, cfg.train, run_seeds(seed, 0)["inference"],
                    DiffusiveCoupling(0), callback=report)
print("regressed coupling matrix")
print(np.array2string(res.c_hat, precision=3, suppress_small=True))

# horizon and MI scores, against the true network started from slightly perturbed states
rep = metrics.evaluate(res.state.model, res.c_hat, truth, models, C, cfg.metrics,
                       run_seeds(seed, 0)["metrics"])
print(f"prediction horizon  t_p = {rep.t_p:.2f}  (control median {np.median(rep.control_t_p):.2f})")
print(f"combined MI score   S   = {rep.S_combined:.1f}  "
      f"(control median {np.median(rep.control_S_combined):.1f})")
print(f"local MI score      S   = {rep.S_local_total:.1f}  "
      f"(control median {np.median(rep.control_S_local):.1f})")

"""Plug-in versus one-step estimation on one Scenario 1 sample.

Fits Cox working models for the event and censoring times, estimates the
scoring rule, and prints the plug-in, the correction and the one-step value
for each measure next to the Monte-Carlo truth and the three competitors.

    python demos/one_step_walkthrough.py [n] [seed]
"""
import sys

import numpy as np

from concordia.competitors import evaluate_competitor
from concordia.discrimination import (compute_dl_matrix, estimate_AUC_t, estimate_C_tau,
                                      estimate_K_tau, fit_bundle)
from concordia.simlab import ScenarioConfig, generate, truth


def main(n=500, seed=1):
    d = generate(ScenarioConfig(1, n, seed=seed))
    print(f"Scenario 1, n={d.n}, {d.event.mean():.0%} events, tau={d.tau}")

    bundle = fit_bundle(d)
    print("scoring rule beta:", np.round(bundle.beta.coefficients, 3),
          "(generating coefficients", np.round(np.log([0.5, 2.0]), 3), ")")

    dl = compute_dl_matrix(d, bundle)
    K = estimate_K_tau(d, bundle, d.tau, dl=dl)
    ests = {"K": K, "C": estimate_C_tau(d, bundle, d.tau, k_estimate=K),
            "AUC": estimate_AUC_t(d, bundle, d.tau, dl=dl)}
    tv = truth(1, mc_size=2 * 10 ** 5, n_pairs=2 * 10 ** 6)

    print(f"\n{'':5}{'plug-in':>9}{'corr':>9}{'one-step':>10}{'truth':>8}")
    for m, e in ests.items():
        print(f"{m:5}{e.plugin:9.4f}{e.correction:+9.4f}{e.point:10.4f}{getattr(tv, m):8.4f}")
    print(f"efficient S(tau) = {K.s_hat:.4f}")

    print("\ncompetitors (Cox linear predictor):")
    for name in ("gh", "ipcw-uno", "ipcw-cox"):
        vals = evaluate_competitor(name, d)
        print(f"  {name:9}", "  ".join(f"{m}={v:.4f}" for m, v in vals.items()))


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)

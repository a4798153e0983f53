"""Regenerate circle_train.csv: one draw of a nu=3/2 prior on the circle.

The draw uses a dense Cholesky factor of the closed-form kernel (not the
spectral series) with kappa=0.2, sigma2=1, n=60 and noise variance 1e-4.
"""

from pathlib import Path

import numpy as np

from rmgp.kernels import Hyperparameters, circle_closed_form

rng = np.random.default_rng(20240601)
x = np.sort(rng.random(60))
K = circle_closed_form(Hyperparameters(1.0, 0.2, 1.5), x, x)
f = np.linalg.cholesky(K + 1e-12 * np.eye(60)) @ rng.standard_normal(60)
y = f + 1e-2 * rng.standard_normal(60)
lines = ["point,y"] + [f"{a:.17g},{b:.17g}" for a, b in zip(x, y)]
Path(__file__).with_name("circle_train.csv").write_text("\n".join(lines) + "\n")

# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Matern kernels on the circle
#
# The circle of length 1 has Laplace-Beltrami eigenvalues `(2 pi n)^2`, each
# (apart from `n = 0`) with a cosine and a sine eigenfunction. A Matern kernel
# is a weighted sum of these eigenfunctions; for a few smoothness values the
# sum has a closed form, which makes the circle a good place to check the
# truncated series.

# %%
import math

import numpy as np

from rmgp import Hyperparameters, KernelEvaluator, circle_closed_form, circle_eigensystem, truncation_diagnostic
from rmgp.kernels import naive_geodesic_kernel

es = circle_eigensystem(5000)
r = np.linspace(0, 1, 11)

# %% [markdown]
# Spectral series against the closed forms, as a function of the distance `r`.

# %%
for nu in (0.5, 1.5, 2.5, math.inf):
    h = Hyperparameters(sigma2=1.0, kappa=0.2, nu=nu)
    series = KernelEvaluator(h, es)(np.zeros(1), r)[0]
    closed = circle_closed_form(h, np.zeros(1), r)[0]
    print(f"nu={nu:<4}  k(0, r) = {np.round(closed, 4)}")
    print(f"          max |series - closed| = {np.max(np.abs(series - closed)):.1e}")

# %% [markdown]
# The rougher the kernel, the slower its series converges. The truncation
# diagnostic extrapolates the eigenvalues with Weyl's law and estimates the
# fraction of the spectral mass that a truncation drops.

# %%
for nu in (0.5, 1.5, math.inf):
    h = Hyperparameters(1.0, 0.2, nu)
    fr = [truncation_diagnostic(h, circle_eigensystem(N))["tail_fraction"] for N in (25, 50, 100)]
    print(f"nu={nu:<4}  tail fraction at N = 25, 50, 100: " + ", ".join(f"{f:.1e}" for f in fr))

# %% [markdown]
# Plugging the geodesic distance into the Euclidean squared exponential does
# not give a valid kernel on the circle: for larger length scales the Gram
# matrix on a regular grid has negative eigenvalues.

# %%
x = np.arange(100) / 100
for kappa in (0.2, 0.5, 0.7, 1.0, 3.0):
    w = np.linalg.eigvalsh(naive_geodesic_kernel(kappa, 1.0, es, x, x))
    print(f"kappa={kappa:<4} (radians)  min/max eigenvalue = {w[0] / w[-1]: .2e}")

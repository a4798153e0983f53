# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Regression on the circle
#
# Fit the variance and length scale of a Matern-3/2 kernel by maximizing the
# marginal likelihood, then draw posterior samples by pathwise conditioning:
# a prior path from the Fourier feature expansion is corrected by a kernel
# update at the data.

# %%
from pathlib import Path

import numpy as np

from rmgp import (
    Dataset,
    DeterministicFeaturePrior,
    Hyperparameters,
    KernelEvaluator,
    circle_eigensystem,
    fit,
    optimize_hyperparameters,
    predict,
    sample_posterior_pathwise,
)

here = Path(__file__).resolve().parent if "__file__" in globals() else Path.cwd()
d = np.loadtxt(here.parent / "tests" / "fixtures" / "circle_train.csv", delimiter=",", skiprows=1)
data = Dataset(d[:, 0], d[:, 1], noise_variance=1e-4)
es = circle_eigensystem(200)

# %%
res = optimize_hyperparameters(es, data, Hyperparameters(0.5, 0.6, 1.5), steps=1000)
h = res.hyperparameters
print(f"sigma2 = {h.sigma2:.3f}, kappa = {h.kappa:.3f} after {res.iterations} steps")
print(f"log evidence {res.initial_log_evidence:.1f} -> {res.log_evidence:.1f}")

# %% [markdown]
# Posterior mean and standard deviation on a grid, and the spread of 1000
# pathwise samples at the same points.

# %%
post = fit(KernelEvaluator(h, es), data)
grid = np.linspace(0, 1, 9)
pred = predict(post, grid)
paths = sample_posterior_pathwise(post, DeterministicFeaturePrior(h, es), 0, grid, 1000)
for x, m, s, e in zip(grid, pred.mean, np.sqrt(pred.variance), paths.std(axis=1)):
    print(f"x={x:.3f}  mean={m: .3f}  std={s:.3f}  sample std={e:.3f}")

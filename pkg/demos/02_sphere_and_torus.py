# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Spheres and flat tori
#
# On the sphere the eigenfunctions of each level collapse, through the
# addition formula, into a Gegenbauer polynomial of the cosine of the angle
# between two points. On the flat torus the spectral kernel coincides with
# the periodic summation of the Euclidean Matern kernel.

# %%
import numpy as np

from rmgp import Hyperparameters, KernelEvaluator, sample_prior_deterministic, sphere_eigensystem, torus_eigensystem

rng = np.random.default_rng(0)

# %% [markdown]
# ## Sphere
# Kernel value against angle on the 2-sphere for a few smoothness values.

# %%
s2 = sphere_eigensystem(2, 40)
theta = np.linspace(0, np.pi, 7)
pts = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=1)
north = np.array([[0.0, 0.0, 1.0]])
for nu in (0.5, 2.5, np.inf):
    k = KernelEvaluator(Hyperparameters(1.0, 0.5, nu), s2)(north, pts)[0]
    print(f"nu={nu:<4}", np.round(k, 4))

# %% [markdown]
# The same series works on higher spheres, where only the pair sums (not the
# individual harmonics) are available.

# %%
s3 = sphere_eigensystem(3, 30)
v = rng.standard_normal((4, 4))
v /= np.linalg.norm(v, axis=1, keepdims=True)
print(np.round(KernelEvaluator(Hyperparameters(1.0, 0.5, 1.5), s3)(v), 4))

# %% [markdown]
# Prior draws on the 2-sphere from the truncated feature expansion, summarized
# by their empirical variance (which should be close to `sigma2 = 1`).

# %%
draws = sample_prior_deterministic(Hyperparameters(1.0, 0.3, 1.5), s2, 1, pts, num_samples=2000)
print("empirical variance per point:", np.round(draws.var(axis=1), 2))

# %% [markdown]
# ## Torus
# Spectral series against periodic summation on the 2-torus.

# %%
t2 = torus_eigensystem(2, 40)
h = Hyperparameters(1.0, 0.25, 1.5)
X, X2 = rng.random((5, 2)), rng.random((5, 2))
spec = KernelEvaluator(h, t2)(X, X2)
per = KernelEvaluator(h, t2, mode="torus_periodic_sum")(X, X2)
print("max |spectral - periodic| =", f"{np.max(np.abs(spec - per)):.1e}")

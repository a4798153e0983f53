"""Spectral Matern and squared-exponential GP kernels for curved spaces.

Kernels are built from Laplace-Beltrami eigenpairs: analytic ones on the
circle, flat tori and spheres, and finite-element ones on triangle meshes.
"""

from .gp import (
    Dataset,
    DeterministicFeaturePrior,
    ExactPosterior,
    FactorizationError,
    FeatureSample,
    OptimizationResult,
    Prediction,
    RandomFeaturePrior,
    fit,
    log_marginal_likelihood,
    optimize_hyperparameters,
    predict,
    sample_posterior_pathwise,
    sample_prior_deterministic,
    sample_prior_random_features,
)
from .kernels import (
    DegenerateWeightsError,
    Hyperparameters,
    KernelEvaluator,
    SpectralWeights,
    circle_closed_form,
    kernel_gram,
    matern_euclidean,
    naive_geodesic_kernel,
    sphere_gegenbauer_kernel,
    spectral_weights,
    torus_periodic_kernel,
    truncation_diagnostic,
)
from .lanczos import EigensolverError, smallest_eigenpairs
from .mesh import (
    CacheError,
    MeshEigenSystem,
    MeshError,
    MeshParseError,
    MeshValidationError,
    TriangleMesh,
    assemble_cotangent_stiffness,
    assemble_lumped_mass,
    cache_read,
    cache_write,
    icosphere,
    load_mesh,
    mesh_eigen_to_eigensystem,
    mesh_eigenpairs,
    solve_smallest_eigenpairs,
    torus_mesh,
)
from .spectral import (
    EigenSystem,
    MeshPoints,
    UnsupportedError,
    circle_eigensystem,
    gegenbauer,
    real_spherical_harmonic,
    sphere_eigensystem,
    torus_eigensystem,
)

__version__ = "0.1.0"

"""Matern and squared-exponential kernels on compact manifolds.

The main path is the truncated spectral series

    k(x, x') = sum_n rho(n) sum_k f_{n,k}(x) f_{n,k}(x')

with ``rho(n) = sigma2 / C * a_n`` and
``a_n = (2 nu / kappa^2 + lambda_n)^(-nu - d/2)`` (``exp(-kappa^2 lambda_n / 2)``
for ``nu = inf``). ``C`` makes the volume-averaged variance equal ``sigma2``.

Closed forms on the circle, lattice sums on the torus, the Gegenbauer form on
spheres and the (not positive-definite) geodesic kernel serve as oracles and
comparisons.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from .spectral import (
    EigenSystem,
    SphereEigenSystem,
    TorusEigenSystem,
    circle_points,
    geodesic_cosine,
    sphere_points,
    torus_points,
)

MODES = ("spectral", "circle_closed_form", "torus_periodic_sum", "sphere_gegenbauer", "naive_geodesic")
CLOSED_FORM_NUS = (0.5, 1.5, 2.5, math.inf)


class DegenerateWeightsError(FloatingPointError):
    pass


def parse_nu(nu) -> float:
    if isinstance(nu, str):
        if nu.strip().lower() in ("inf", "infinity", "oo"):
            return math.inf
        nu = float(nu)
    return float(nu)


@dataclass(frozen=True)
class Hyperparameters:
    sigma2: float = 1.0
    kappa: float = 1.0
    nu: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "nu", parse_nu(self.nu))
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive or inf, got {self.nu}")

    def replace(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)


@dataclass(frozen=True)
class SpectralWeights:
    """Per-level weights: raw ``a``, normalization ``C`` and density ``rho``."""

    a: np.ndarray
    normalization: float
    log_normalization: float
    rho: np.ndarray
    multiplicities: np.ndarray
    volume: float


def log_weights(h: Hyperparameters, eigenvalues, dim: int) -> np.ndarray:
    lam = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
    if math.isinf(h.nu):
        return -0.5 * h.kappa**2 * lam
    return (-h.nu - dim / 2) * np.log(2 * h.nu / h.kappa**2 + lam)


def spectral_weights(h: Hyperparameters, es: EigenSystem, num_levels: int | None = None) -> SpectralWeights:
    """Spectral density of the Matern / squared-exponential kernel over ``es``.

    Normalized so that ``sum_n d_n rho(n) = sigma2 * vol``; computed in log
    space, so extreme ``kappa`` does not underflow.
    """
    N = es._levels(num_levels)
    log_a = log_weights(h, es.eigenvalues[:N], es.dim)
    mult = np.asarray(es.multiplicities[:N])
    log_c = logsumexp(log_a + np.log(mult)) - math.log(es.volume)
    rho = h.sigma2 * np.exp(log_a - log_c)
    if not np.isfinite(log_c) or not np.all(np.isfinite(rho)) or not np.any(rho > 0):
        raise DegenerateWeightsError("degenerate weights (kappa too large for spectrum)")
    with np.errstate(over="ignore", under="ignore"):
        a = np.exp(log_a)
        c = math.exp(log_c) if log_c < 700 else math.inf
    return SpectralWeights(a, c, float(log_c), rho, mult, es.volume)


# ---------------------------------------------------------------------------
# Euclidean and closed forms


def matern_euclidean(nu, kappa: float, sigma2: float, r):
    """Half-integer and infinite-smoothness Matern kernel on ``R^d`` at distance ``r``."""
    nu = parse_nu(nu)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be nonnegative")
    s = r / kappa
    if nu == 0.5:
        val = np.exp(-s)
    elif nu == 1.5:
        val = (1 + math.sqrt(3) * s) * np.exp(-math.sqrt(3) * s)
    elif nu == 2.5:
        val = (1 + math.sqrt(5) * s + 5 * s**2 / 3) * np.exp(-math.sqrt(5) * s)
    elif math.isinf(nu):
        val = np.exp(-0.5 * s**2)
    else:
        raise ValueError(f"unsupported nu={nu}: closed forms exist for 1/2, 3/2, 5/2, inf")
    return sigma2 * val


def jacobi_theta3(z, q: float):
    """``1 + 2 sum_{n>=1} q^{n^2} cos(2 n z)``, truncated once ``q^{n^2} < 1e-17``."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    if q <= 0:
        return out
    n = 1
    while True:
        term = q ** (n * n)
        if term < 1e-17:
            break
        out = out + 2 * term * np.cos(2 * n * z)
        n += 1
    return out


def _circle_shape(h: Hyperparameters, r):
    """Unnormalized circle kernel as a function of ``r = |x - x'|`` in ``[0, 1]``."""
    k, nu = h.kappa, h.nu
    if math.isinf(nu):
        q = math.exp(-2 * math.pi**2 * k**2)
        return jacobi_theta3(math.pi * r, q)
    if nu == 0.5:
        return np.cosh((r - 0.5) / k)
    if nu == 1.5:
        u = math.sqrt(3) * (r - 0.5) / k
        coth = 1 / math.tanh(math.sqrt(3) / (2 * k))
        return (math.pi**2 * k / 3 * (2 * k + math.sqrt(3) * coth) * np.cosh(u)
                - 2 * math.pi**2 * k**2 / 3 * u * np.sinh(u))
    if nu == 2.5:
        u = math.sqrt(5) * (r - 0.5) / k
        coth = 1 / math.tanh(math.sqrt(5) / (2 * k))
        a0 = -math.pi**4 * k**2 / 50 * (-5 + 12 * k**2 + 6 * math.sqrt(5) * k * coth + 10 * coth**2)
        a1 = 2 * math.pi**4 * k**3 / 25 * (3 * k + math.sqrt(5) * coth)
        a2 = -2 * math.pi**4 * k**4 / 25
        return a0 * np.cosh(u) + a1 * u * np.sinh(u) + a2 * u**2 * np.cosh(u)
    raise ValueError(f"unsupported nu={nu}: circle closed forms exist for 1/2, 3/2, 5/2, inf")


def circle_closed_form(h: Hyperparameters, x, x2):
    """Closed-form circle kernel between all pairs of ``x`` and ``x2``.

    Uses the cosh / hyperbolic-polynomial forms for ``nu`` in {1/2, 3/2, 5/2}
    and the Jacobi theta function for ``nu = inf``, rescaled so that
    ``k(x, x) = sigma2``. Scalars in give a scalar out.
    """
    scalar = np.ndim(x) == 0 and np.ndim(x2) == 0
    x, x2 = circle_points(x), circle_points(x2)
    r = np.abs(x[:, None] - x2[None, :])
    val = h.sigma2 * _circle_shape(h, r) / _circle_shape(h, 0.0)
    return float(val[0, 0]) if scalar else val


def _lattice(d: int, radius: int) -> np.ndarray:
    return np.array(list(itertools.product(range(-radius, radius + 1), repeat=d)), dtype=float)


def torus_periodic_kernel(nu, kappa: float, sigma2: float, x, x2, radius: int = 10):
    """Periodic summation of the Euclidean Matern kernel over ``||n||_inf <= radius``.

    ``x`` and ``x2`` are ``(n, d)`` / ``(m, d)`` torus points (``(n,)`` on the
    circle); normalized by the same lattice sum at zero offset.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    scalar = x.ndim == 0 and x2.ndim == 0
    d = 1 if x.ndim <= 1 else x.shape[1]
    x, x2 = torus_points(x, d), torus_points(x2, d)
    offsets = _lattice(d, radius)
    diff = x[:, None, :] - x2[None, :, :]
    val = np.zeros(diff.shape[:2])
    for n in offsets:
        val += matern_euclidean(nu, kappa, 1.0, np.linalg.norm(diff + n, axis=-1))
    norm = matern_euclidean(nu, kappa, 1.0, np.linalg.norm(offsets, axis=1)).sum()
    val = sigma2 * val / norm
    return float(val[0, 0]) if scalar else val


def sphere_gegenbauer_kernel(h: Hyperparameters, x, x2, num_levels: int, d: int | None = None):
    """``sum_{n<N} rho(n) c_{n,d} C_n^{(d-1)/2}(cos d_g(x, x2))`` on ``S^d``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1] - 1 if d is None else d
    es = SphereEigenSystem(d, num_levels)
    w = spectral_weights(h, es)
    return es.weighted_pair_sum(w.rho, x, x2)


def geodesic_distance(es: EigenSystem, X, X2) -> np.ndarray:
    """Geodesic distance in radians: ``2 pi`` times the wrapped coordinate distance on
    circle/torus, arc length on the unit sphere."""
    if isinstance(es, TorusEigenSystem):
        X = es._as_matrix(X)
        X2 = es._as_matrix(X2)
        diff = np.abs(X[:, None, :] - X2[None, :, :])
        diff = np.minimum(diff, 1 - diff)
        return 2 * np.pi * np.linalg.norm(diff, axis=-1)
    if isinstance(es, SphereEigenSystem):
        X, X2 = sphere_points(X, es.dim), sphere_points(X2, es.dim)
        return np.arccos(geodesic_cosine(X, X2))
    raise ValueError(f"unsupported manifold {es.manifold!r} for geodesic distances")


def naive_geodesic_kernel(kappa: float, sigma2: float, es: EigenSystem, x, x2):
    """``sigma2 exp(-d_g^2 / (2 kappa^2))``; not positive semi-definite in general."""
    return sigma2 * np.exp(-geodesic_distance(es, x, x2) ** 2 / (2 * kappa**2))


# ---------------------------------------------------------------------------
# evaluator


class KernelEvaluator:
    """Kernel on a fixed eigensystem with the normalization precomputed.

    Parameters
    ----------
    hyperparameters : Hyperparameters
    eigensystem : EigenSystem
        Supplies the manifold and, for the spectral modes, the levels.
    mode : str
        One of ``spectral``, ``circle_closed_form``, ``torus_periodic_sum``,
        ``sphere_gegenbauer``, ``naive_geodesic``.
    num_levels : int, optional
        Truncation level; all levels of ``eigensystem`` by default.
    radius : int
        Lattice radius of ``torus_periodic_sum``.
    """

    def __init__(self, hyperparameters: Hyperparameters, eigensystem: EigenSystem,
                 mode: str = "spectral", num_levels: int | None = None, radius: int = 10):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.hyperparameters = hyperparameters
        self.eigensystem = eigensystem
        self.mode = mode
        self.radius = radius
        self.num_levels = eigensystem._levels(num_levels)
        es = eigensystem
        if mode in ("circle_closed_form",) and not (isinstance(es, TorusEigenSystem) and es.dim == 1):
            raise ValueError("circle_closed_form needs a circle eigensystem")
        if mode == "circle_closed_form" and hyperparameters.nu not in CLOSED_FORM_NUS:
            raise ValueError(f"unsupported nu={hyperparameters.nu} for circle_closed_form")
        if mode == "torus_periodic_sum" and not isinstance(es, TorusEigenSystem):
            raise ValueError("torus_periodic_sum needs a circle or torus eigensystem")
        if mode == "torus_periodic_sum" and hyperparameters.nu not in CLOSED_FORM_NUS:
            raise ValueError(f"unsupported nu={hyperparameters.nu} for torus_periodic_sum")
        if mode == "sphere_gegenbauer" and not isinstance(es, SphereEigenSystem):
            raise ValueError("sphere_gegenbauer needs a sphere eigensystem")
        if mode == "naive_geodesic" and not isinstance(es, (TorusEigenSystem, SphereEigenSystem)):
            raise ValueError(f"unsupported: no geodesic distance for manifold {es.manifold!r}")
        self.weights = (
            spectral_weights(hyperparameters, es, self.num_levels)
            if mode in ("spectral", "sphere_gegenbauer") else None
        )

    def with_hyperparameters(self, h: Hyperparameters) -> "KernelEvaluator":
        return KernelEvaluator(h, self.eigensystem, self.mode, self.num_levels, self.radius)

    @property
    def rho(self) -> np.ndarray:
        return self.weights.rho

    def __call__(self, X, X2=None) -> np.ndarray:
        """Gram matrix ``K[i, j] = k(X[i], X2[j])`` (``X2 = X`` when omitted)."""
        h, es = self.hyperparameters, self.eigensystem
        if self.mode in ("spectral", "sphere_gegenbauer"):
            return es.weighted_pair_sum(self.weights.rho, X, X2)
        same = X2 is None
        X2 = X if same else X2
        if self.mode == "circle_closed_form":
            K = circle_closed_form(h, X, X2)
        elif self.mode == "torus_periodic_sum":
            Xm, X2m = es._as_matrix(X), es._as_matrix(X2)
            K = torus_periodic_kernel(h.nu, h.kappa, h.sigma2, Xm, X2m, self.radius)
        else:
            K = naive_geodesic_kernel(h.kappa, h.sigma2, es, X, X2)
        return 0.5 * (K + K.T) if same else K

    def diag(self, X) -> np.ndarray:
        """Pointwise variances ``k(x, x)``."""
        if self.mode in ("spectral", "sphere_gegenbauer"):
            return self.eigensystem.weighted_pair_sum_diag(self.weights.rho, X)
        n = len(self.eigensystem.check_points(X))
        return np.full(n, self.hyperparameters.sigma2)

    def __repr__(self):
        return (f"KernelEvaluator({self.hyperparameters}, {self.eigensystem!r}, "
                f"mode={self.mode!r}, num_levels={self.num_levels})")


def kernel_gram(ke: KernelEvaluator, X, X2=None) -> np.ndarray:
    return ke(X, X2)


# ---------------------------------------------------------------------------
# truncation


def truncation_diagnostic(h: Hyperparameters, es: EigenSystem, num_levels: int | None = None) -> dict:
    """Estimate the spectral mass dropped by truncating after ``num_levels`` levels.

    Eigenvalues past the last level are extrapolated with ``lambda ~ c j^{2/d}``
    (``j`` counts eigenfunctions), ``c`` fitted on the top decile of computed
    levels, and the weight formula is integrated over the extrapolated tail.
    For ``nu = inf`` the crude bound ``exp(-kappa^2 lambda_{N-1} / 2) / a_0`` is
    also returned.
    """
    N = es._levels(num_levels)
    if N < 2:
        raise ValueError("truncation diagnostic needs at least 2 levels")
    lam = np.maximum(es.eigenvalues[:N], 0.0)
    mult = np.asarray(es.multiplicities[:N], dtype=float)
    counts = np.cumsum(mult)
    log_a = log_weights(h, lam, es.dim)
    ref = log_a[0]
    computed = float(np.sum(mult * np.exp(log_a - ref)))

    top = max(1, int(math.ceil(0.1 * (N - 1))))
    j, l = counts[N - top:], lam[N - top:]
    p = 2.0 / es.dim
    c = float(np.sum(l * j**p) / np.sum(j ** (2 * p)))

    def tail_density(jj):
        return math.exp(log_weights(h, [c * jj**p], es.dim)[0] - ref)

    J = float(counts[-1])
    tail, _ = quad(tail_density, J, np.inf, limit=200, epsabs=0.0, epsrel=1e-10)
    out = {"tail_fraction": tail / (tail + computed), "weyl_constant": c}
    if math.isinf(h.nu):
        out["gaussian_bound"] = math.exp(-0.5 * h.kappa**2 * lam[-1] - ref)
    return out

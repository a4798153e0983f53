"""Exact GP regression, evidence maximization and Fourier-feature sampling.

Posterior samples use pathwise conditioning: a prior path ``f`` drawn from a
feature expansion is updated as

    f(.) + K_{.x} (K_xx + s2 I)^{-1} (y - f(x) - eps),   eps ~ N(0, s2 I).

Random draws follow a fixed order: per sample, the feature weights
(level-major, member-minor) and then ``eps``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kernels import Hyperparameters, KernelEvaluator, spectral_weights
from .spectral import EigenSystem, MeshPoints, UnsupportedError

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class FactorizationError(np.linalg.LinAlgError):
    pass


class OptimizationError(RuntimeError):
    pass


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _point_rows(X) -> np.ndarray:
    if isinstance(X, MeshPoints):
        return np.column_stack([X.face, X.bary])
    X = np.asarray(X, dtype=float)
    return X.reshape(len(X), -1)


@dataclass
class Dataset:
    points: object
    y: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if len(self.points) != len(self.y):
            raise ValueError("points and y lengths differ")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be nonnegative")

    def __len__(self):
        return len(self.y)


@dataclass
class ExactPosterior:
    data: Dataset
    kernel: KernelEvaluator
    points: object
    L: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def noise_variance(self) -> float:
        return self.data.noise_variance


@dataclass
class Prediction:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None
    clipped: float = 0.0  # largest negative variance set to zero


def _factorize(K: np.ndarray, noise: float):
    scale = float(np.mean(np.diag(K))) + noise
    for level in JITTER_LADDER:
        jitter = level * scale
        try:
            L = scipy.linalg.cholesky(K + (noise + jitter) * np.eye(len(K)), lower=True)
        except np.linalg.LinAlgError:
            continue
        if level:
            logger.info("added jitter %.3e to the kernel matrix", jitter)
        return L, jitter
    raise FactorizationError("kernel matrix numerically indefinite")


def fit(kernel: KernelEvaluator, data: Dataset) -> ExactPosterior:
    """Factorize ``K_xx + noise I`` (with escalating jitter) and solve for ``alpha``."""
    if len(data) < 1:
        raise ValueError("need at least one training point")
    X = kernel.eigensystem.check_points(data.points)
    if data.noise_variance == 0.0:
        rows = _point_rows(X)
        if len(np.unique(rows, axis=0)) < len(rows):
            raise FactorizationError(
                "kernel matrix numerically indefinite: duplicate training points without noise"
            )
    K = kernel(X)
    L, jitter = _factorize(K, data.noise_variance)
    alpha = scipy.linalg.cho_solve((L, True), data.y)
    return ExactPosterior(data, kernel, X, L, alpha, jitter)


def predict(post: ExactPosterior, Xstar, full_cov: bool = False) -> Prediction:
    Ksx = post.kernel(Xstar, post.points)
    mean = Ksx @ post.alpha
    V = scipy.linalg.solve_triangular(post.L, Ksx.T, lower=True)
    if full_cov:
        cov = post.kernel(Xstar) - V.T @ V
        cov = 0.5 * (cov + cov.T)
        var = np.diag(cov).copy()
    else:
        cov = None
        var = post.kernel.diag(Xstar) - np.sum(V * V, axis=0)
    clipped = float(max(0.0, -var.min())) if len(var) else 0.0
    var = np.maximum(var, 0.0)
    if cov is not None:
        np.fill_diagonal(cov, var)
    return Prediction(mean, var, cov, clipped)


def log_marginal_likelihood(h: Hyperparameters, es: EigenSystem, data: Dataset,
                            num_levels: int | None = None, mode: str = "spectral") -> float:
    """``-1/2 y^T alpha - sum log L_ii - n/2 log 2 pi``."""
    post = fit(KernelEvaluator(h, es, mode=mode, num_levels=num_levels), data)
    return _evidence(post)


def _evidence(post: ExactPosterior) -> float:
    n = len(post.data)
    return float(
        -0.5 * post.data.y @ post.alpha - np.sum(np.log(np.diag(post.L))) - 0.5 * n * math.log(2 * math.pi)
    )


# ---------------------------------------------------------------------------
# hyperparameter optimization

PARAMETERS = ("sigma2", "kappa", "noise_variance")


@dataclass
class OptimizationResult:
    hyperparameters: Hyperparameters
    noise_variance: float
    log_evidence: float
    initial_log_evidence: float
    iterations: int
    gradient_evaluations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _unpack(theta, free, init: Hyperparameters, noise: float):
    vals = {"sigma2": init.sigma2, "kappa": init.kappa, "noise_variance": noise}
    for name, t in zip(free, theta):
        vals[name] = math.exp(t)
    return init.replace(sigma2=vals["sigma2"], kappa=vals["kappa"]), vals["noise_variance"]


def finite_difference_gradient(fun, theta, step: float = 1e-5) -> np.ndarray:
    """Central differences with absolute step ``step`` in log-parameter space."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * step)
    return g


def optimize_hyperparameters(
    es: EigenSystem,
    data: Dataset,
    init: Hyperparameters,
    fixed=("noise_variance",),
    steps: int = 200,
    learning_rate: float | None = None,
    num_levels: int | None = None,
    grad_tol: float = 1e-6,
    max_step: float = 0.25,
) -> OptimizationResult:
    """Maximize the log evidence over ``log sigma2``, ``log kappa``, ``log noise``.

    ``nu`` stays fixed. Plain gradient ascent with central finite-difference
    gradients; every step starts at ``learning_rate`` (default ``1 / n``) and
    is halved until the evidence improves. Steps longer than ``max_step`` (in
    log space, infinity norm) are shortened first, which keeps large early
    gradients from jumping across basins. Returns the best point seen.
    """
    fixed = set(fixed)
    unknown = fixed - set(PARAMETERS)
    if unknown:
        raise ValueError(f"unknown parameter names {sorted(unknown)}")
    free = [p for p in PARAMETERS if p not in fixed]
    noise0 = data.noise_variance
    if "noise_variance" in free and noise0 <= 0:
        raise ValueError("noise_variance must be positive to be optimized in log space")

    def evidence(theta) -> float:
        h, noise = _unpack(theta, free, init, noise0)
        try:
            val = log_marginal_likelihood(h, es, Dataset(data.points, data.y, noise), num_levels)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError, OverflowError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf

    theta = np.log([{"sigma2": init.sigma2, "kappa": init.kappa, "noise_variance": noise0}[p] for p in free])
    current = log_marginal_likelihood(init, es, data, num_levels)
    initial = current
    history = [(init, noise0, current)]
    if not free:
        return OptimizationResult(init, noise0, current, current, 0, 0, True, history)

    lr = learning_rate if learning_rate is not None else 1.0 / len(data)
    converged = False
    n_grad = 0
    it = 0
    for it in range(1, steps + 1):
        g = finite_difference_gradient(evidence, theta)
        n_grad += 1
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite evidence gradient at {dict(zip(free, np.exp(theta)))}")
        if np.max(np.abs(g)) < grad_tol:
            converged = True
            break
        step = min(lr, max_step / np.max(np.abs(g)))
        for _ in range(60):
            cand = theta + step * g
            val = evidence(cand)
            if val > current:
                theta, current = cand, val
                break
            step *= 0.5
        else:
            # no ascent at any scale: the gradient is numerical noise
            converged = True
            break
        history.append((*_unpack(theta, free, init, noise0), current))
    h, noise = _unpack(theta, free, init, noise0)
    return OptimizationResult(h, noise, current, initial, it, n_grad, converged, history)


# ---------------------------------------------------------------------------
# Fourier features


class FeatureSample:
    """One prior path ``x -> sum_j coefficients[j] f_j(x)`` over the members of
    the first ``num_levels`` levels.

    ``coefficients`` may also be a ``(M, S)`` matrix holding ``S`` paths.
    """

    def __init__(self, eigensystem: EigenSystem, num_levels: int, coefficients: np.ndarray,
                 weights: np.ndarray | None = None, levels: np.ndarray | None = None):
        self.eigensystem = eigensystem
        self.num_levels = num_levels
        self.coefficients = coefficients
        self.weights = weights
        self.levels = levels

    def __call__(self, X) -> np.ndarray:
        return self.eigensystem.phi(X, self.num_levels) @ self.coefficients


class _FeaturePrior:
    def __init__(self, h: Hyperparameters, es: EigenSystem, num_levels=None):
        if not es.has_members:
            raise UnsupportedError(
                f"unsupported: {es!r} has no per-member eigenfunctions for feature sampling"
            )
        self.hyperparameters = h
        self.eigensystem = es
        self.num_levels = es._levels(num_levels)
        self.weights = spectral_weights(h, es, self.num_levels)
        self.member_levels = es.member_levels(self.num_levels)
        self.num_members = len(self.member_levels)

    def draw(self, seed=None) -> FeatureSample:
        rng = _as_rng(seed)
        return FeatureSample(self.eigensystem, self.num_levels, self.draw_coefficients(rng))

    def draw_many(self, num_samples: int, seed=None) -> FeatureSample:
        rng = _as_rng(seed)
        C = np.column_stack([self.draw_coefficients(rng) for _ in range(num_samples)])
        return FeatureSample(self.eigensystem, self.num_levels, C.reshape(self.num_members, num_samples))


class DeterministicFeaturePrior(_FeaturePrior):
    """Truncated expansion ``sum_n sqrt(rho(n)) sum_k w_{n,k} f_{n,k}``."""

    def draw_coefficients(self, rng) -> np.ndarray:
        w = rng.standard_normal(self.num_members)
        return np.sqrt(self.weights.rho[self.member_levels]) * w


class RandomFeaturePrior(_FeaturePrior):
    """Monte-Carlo expansion over ``num_features`` sampled levels.

    Levels are drawn with probability ``d_n rho(n) / (sigma2 vol)``; each sampled
    level contributes all its members with fresh standard normal weights,
    scaled by ``sqrt(sigma2 vol / (num_features d_n))`` so the expected
    covariance is the truncated kernel.
    """

    def __init__(self, h, es, num_features: int, num_levels=None):
        super().__init__(h, es, num_levels)
        if num_features < 1:
            raise ValueError("num_features must be >= 1")
        self.num_features = int(num_features)
        mass = self.weights.multiplicities * self.weights.rho
        self.total_mass = float(mass.sum())
        self.level_probabilities = mass / self.total_mass
        self._offsets = np.concatenate([[0], np.cumsum(self.weights.multiplicities)])

    def draw_coefficients(self, rng) -> np.ndarray:
        levels = rng.choice(self.num_levels, size=self.num_features, p=self.level_probabilities)
        mult = self.weights.multiplicities
        d = mult[levels]
        w = rng.standard_normal(int(d.sum()))
        # member index of every drawn weight, features in draw order
        starts = np.repeat(np.cumsum(d) - d, d)
        members = np.repeat(self._offsets[levels], d) + np.arange(len(w)) - starts
        scale = np.repeat(np.sqrt(self.total_mass / (self.num_features * d)), d)
        coef = np.zeros(self.num_members)
        np.add.at(coef, members, scale * w)
        return coef


def _sample(prior: _FeaturePrior, seed, Xstar, num_samples):
    if num_samples is None:
        return prior.draw(seed)(Xstar)
    return prior.draw_many(num_samples, seed)(Xstar)


def sample_prior_deterministic(h, es, seed, Xstar, num_levels=None, num_samples=None) -> np.ndarray:
    """Prior path(s) at ``Xstar``: shape ``(n,)``, or ``(n, num_samples)``."""
    return _sample(DeterministicFeaturePrior(h, es, num_levels), seed, Xstar, num_samples)


def sample_prior_random_features(h, es, num_features, seed, Xstar, num_levels=None,
                                 num_samples=None) -> np.ndarray:
    return _sample(RandomFeaturePrior(h, es, num_features, num_levels), seed, Xstar, num_samples)


def sample_posterior_pathwise(post: ExactPosterior, prior: _FeaturePrior, seed, Xstar,
                              num_samples: int | None = None) -> np.ndarray:
    """Posterior path(s) at ``Xstar`` by pathwise conditioning of prior draws.

    ``prior`` must share the posterior kernel's eigensystem; for the result
    to be exact in distribution it should also share its truncation and
    hyperparameters.
    """
    if prior.eigensystem is not post.kernel.eigensystem:
        raise ValueError("prior sampler and posterior use different eigensystems")
    rng = _as_rng(seed)
    S = 1 if num_samples is None else num_samples
    n = len(post.data)
    noise_sd = math.sqrt(post.noise_variance)
    coefs, eps = [], []
    for _ in range(S):
        coefs.append(prior.draw_coefficients(rng))
        eps.append(noise_sd * rng.standard_normal(n) if noise_sd > 0 else np.zeros(n))
    path = FeatureSample(prior.eigensystem, prior.num_levels, np.column_stack(coefs))
    f_star = path(Xstar)
    f_x = path(post.points)
    resid = post.data.y[:, None] - f_x - np.column_stack(eps)
    update = post.kernel(Xstar, post.points) @ scipy.linalg.cho_solve((post.L, True), resid)
    out = f_star + update
    return out[:, 0] if num_samples is None else out

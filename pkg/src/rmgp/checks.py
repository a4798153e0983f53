"""Desk-scale invariant suite run by ``rmgp check``.

Each check returns a :class:`Check` holding the measured value, the threshold
it is compared against and whether it passed. Sizes are fixed so that the
whole suite finishes in well under a minute.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import gp
from .kernels import (
    Hyperparameters,
    KernelEvaluator,
    circle_closed_form,
    naive_geodesic_kernel,
    spectral_weights,
)
from .mesh import (
    assemble_cotangent_stiffness,
    assemble_lumped_mass,
    icosphere,
    mesh_eigen_to_eigensystem,
    mesh_eigenpairs,
)
from .spectral import (
    MeshPoints,
    addition_constant,
    circle_eigensystem,
    gegenbauer,
    geodesic_cosine,
    sphere_eigensystem,
    spherical_harmonics,
    torus_eigensystem,
)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<34} value={self.value:.3e}  threshold={self.threshold:.1e}{extra}"


def _below(name, value, threshold, detail=""):
    return Check(name, float(value), threshold, bool(value <= threshold), detail)


def _unit_vectors(rng, n, d=2):
    v = rng.standard_normal((n, d + 1))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _min_eig_ratio(K):
    w = np.linalg.eigvalsh(K)
    return w[0] / w[-1]


def check_circle_closed_forms():
    r = np.linspace(0.0, 1.0, 50)
    worst = []
    es = circle_eigensystem(5000)
    for nu, tol in ((0.5, 1e-3), (1.5, 1e-6)):
        err = 0.0
        for kappa in (0.2, 0.5, 1.0):
            h = Hyperparameters(1.0, kappa, nu)
            ref = circle_closed_form(h, np.zeros(1), r)[0]
            got = KernelEvaluator(h, es)(np.zeros(1), r)[0]
            err = max(err, np.max(np.abs(got - ref) / np.abs(ref)))
        worst.append(_below(f"circle closed form nu={nu}", err, tol))
    es = circle_eigensystem(200)
    err = 0.0
    for kappa in (0.2, 0.5, 1.0):
        h = Hyperparameters(1.0, kappa, math.inf)
        ref = circle_closed_form(h, np.zeros(1), r)[0]
        err = max(err, np.max(np.abs(KernelEvaluator(h, es)(np.zeros(1), r)[0] - ref)))
    worst.append(_below("circle closed form nu=inf", err, 1e-10))
    return worst


def check_torus_equivalence(seed=0):
    rng = np.random.default_rng(seed)
    out = []
    h = Hyperparameters(1.0, 0.25, 1.5)
    for d, es, tol in ((2, torus_eigensystem(2, 40), 1e-4), (1, circle_eigensystem(2000), 1e-8)):
        x, x2 = rng.random((100, d)), rng.random((100, d))
        if d == 1:
            x, x2 = x[:, 0], x2[:, 0]
        spec = np.array([KernelEvaluator(h, es)(x[i:i + 1], x2[i:i + 1])[0, 0] for i in range(100)])
        ke = KernelEvaluator(h, es, mode="torus_periodic_sum")
        per = np.array([ke(x[i:i + 1], x2[i:i + 1])[0, 0] for i in range(100)])
        name = "torus T^2 spectral vs periodic" if d == 2 else "circle S^1 spectral vs periodic"
        out.append(_below(name, np.max(np.abs(spec - per)), tol))
    return out


def check_sphere_addition(seed=0):
    rng = np.random.default_rng(seed)
    X, X2 = _unit_vectors(rng, 200), _unit_vectors(rng, 200)
    t = np.sum(X * X2, axis=1)
    err = 0.0
    for n in range(11):
        lhs = np.sum(spherical_harmonics(n, X) * spherical_harmonics(n, X2), axis=1)
        rhs = addition_constant(n, 2) * gegenbauer(n, 0.5, t)
        err = max(err, np.max(np.abs(lhs - rhs)))
    return [_below("sphere addition formula n<=10", err, 1e-8)]


def _cluster_targets():
    return np.repeat([2.0, 6.0, 12.0, 20.0], [3, 5, 7, 9])[:16]


def check_mesh_spectrum():
    out = []
    mesh = icosphere(4)
    S, M = assemble_cotangent_stiffness(mesh), assemble_lumped_mass(mesh)
    out.append(_below("mesh stiffness row sums", np.max(np.abs(np.asarray(S.sum(axis=1)).ravel())), 1e-12))
    mes = mesh_eigenpairs(mesh, 17)
    rel = np.abs(mes.eigenvalues[1:] - _cluster_targets()) / _cluster_targets()
    out.append(_below("icosphere(4) spectrum vs n(n+1)", rel.max(), 0.02))
    G = mes.eigenvectors.T @ (M[:, None] * mes.eigenvectors)
    out.append(_below("mesh mass-orthonormality", np.max(np.abs(G - np.eye(len(G)))), 1e-8))
    out.append(_below("mesh eigen backward error", mes.residuals.max(), 1e-8))
    return out, mes, mesh


def check_psd_and_normalization(mesh_parts, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    h = Hyperparameters(1.3, 0.3, 1.5)
    cases = [
        ("circle", circle_eigensystem(400), rng.random(100)),
        ("torus T^2", torus_eigensystem(2, 20), rng.random((100, 2))),
        ("sphere S^2", sphere_eigensystem(2, 25), _unit_vectors(rng, 100)),
    ]
    mes, mesh = mesh_parts
    mes_es = mesh_eigen_to_eigensystem(mes, mesh)
    faces = rng.integers(0, mesh.num_faces, 100)
    bary = rng.dirichlet(np.ones(3), 100)
    cases.append(("icosphere mesh", mes_es, MeshPoints(faces, bary)))
    worst_psd, worst_norm = 0.0, 0.0
    for name, es, X in cases:
        K = KernelEvaluator(h, es)(X)
        worst_psd = min(worst_psd, _min_eig_ratio(K))
        w = spectral_weights(h, es)
        total = np.sum(w.multiplicities * w.rho)
        worst_norm = max(worst_norm, abs(total / (h.sigma2 * es.volume) - 1))
    # mass-weighted vertex average of the mesh variance
    V = mes_es.vertex_points(np.arange(mesh.num_vertices))
    var = KernelEvaluator(h, mes_es).diag(V)
    worst_norm = max(worst_norm, abs(np.sum(mes.mass * var) / mes.volume / h.sigma2 - 1))
    out.append(_below("spectral Gram PSD (-min/max eig)", max(0.0, -worst_psd), 1e-8))
    out.append(_below("average variance equals sigma2", worst_norm, 1e-6))
    return out


def check_naive_no_go():
    x = np.arange(100) / 100
    es = circle_eigensystem(2)
    ratios = []
    kappas = np.geomspace(0.1, 10.0, 20)
    for kappa in kappas:
        ratios.append(_min_eig_ratio(naive_geodesic_kernel(kappa, 1.0, es, x, x)))
    ratios = np.array(ratios)
    bad = kappas[ratios < -1e-8]
    detail = f"first indefinite kappa={bad[0]:.4g}" if len(bad) else "no indefinite kappa"
    # passes when some Gram is indefinite: value is the most negative ratio
    lowest = float(ratios.min())
    return [Check("naive geodesic Gram indefinite", lowest, -1e-8, lowest < -1e-8, detail)]


def _circle_posterior(seed=0):
    rng = np.random.default_rng(seed)
    h = Hyperparameters(1.0, 0.2, 1.5)
    es = circle_eigensystem(200)
    x = np.sort(rng.random(10))
    y = np.sin(2 * np.pi * x) + 0.01 * rng.standard_normal(10)
    post = gp.fit(KernelEvaluator(h, es), gp.Dataset(x, y, 1e-4))
    return h, es, post


def check_pathwise(seed=0):
    h, es, post = _circle_posterior(seed)
    xs = np.linspace(0, 1, 20, endpoint=False) + 0.013
    S = gp.sample_posterior_pathwise(post, gp.DeterministicFeaturePrior(h, es), seed, xs, 4000)
    pred = gp.predict(post, xs, full_cov=True)
    bound = 4 * math.sqrt(pred.variance.max() / 4000)
    mean_err = np.max(np.abs(S.mean(axis=1) - pred.mean))
    cov_err = np.linalg.norm(np.cov(S) - pred.covariance) / np.linalg.norm(pred.covariance)
    var_gain = np.max(pred.variance - KernelEvaluator(h, es).diag(xs))
    return [
        _below("pathwise mean vs analytic", mean_err, bound),
        _below("pathwise covariance (rel Frobenius)", cov_err, 0.10),
        _below("posterior variance <= prior", var_gain, 1e-8),
    ]


def check_feature_prior(seed=0):
    h = Hyperparameters(1.0, 0.2, 1.5)
    es = circle_eigensystem(100)
    xs = np.linspace(0, 1, 20, endpoint=False)
    K = KernelEvaluator(h, es)(xs)
    D = gp.sample_prior_deterministic(h, es, seed, xs, num_samples=4000)
    R = gp.sample_prior_random_features(h, es, 5000, seed, xs[:10], num_samples=4000)
    Kr = K[:10, :10]
    return [
        _below("deterministic features covariance", np.linalg.norm(np.cov(D) - K) / np.linalg.norm(K), 0.10),
        _below("random features covariance", np.linalg.norm(np.cov(R) - Kr) / np.linalg.norm(Kr), 0.15),
    ]


def check_gradient_consistency(seed=0):
    h, es, post = _circle_posterior(seed)
    data = post.data

    def evidence(theta):
        hh = h.replace(sigma2=math.exp(theta[0]), kappa=math.exp(theta[1]))
        return gp.log_marginal_likelihood(hh, es, data)

    theta = np.log([0.7, 0.25])
    g1 = gp.finite_difference_gradient(evidence, theta, 1e-5)
    g2 = gp.finite_difference_gradient(evidence, theta, 1e-6)
    return [_below("evidence gradient stencil agreement", np.max(np.abs(g1 - g2)) / np.max(np.abs(g1)), 1e-3)]


SUITES = (
    check_circle_closed_forms,
    check_torus_equivalence,
    check_sphere_addition,
    check_naive_no_go,
    check_pathwise,
    check_feature_prior,
    check_gradient_consistency,
)


def run_checks(report=print) -> list[Check]:
    """Run every suite, calling ``report`` with each result line."""
    results = []

    def emit(checks, t0):
        dt = (time.perf_counter() - t0) / max(len(checks), 1)
        for c in checks:
            c.seconds = dt
            results.append(c)
            if report is not None:
                report(c.line())

    t0 = time.perf_counter()
    mesh_checks, mes, mesh = check_mesh_spectrum()
    emit(mesh_checks, t0)
    t0 = time.perf_counter()
    emit(check_psd_and_normalization((mes, mesh)), t0)
    for suite in SUITES:
        t0 = time.perf_counter()
        emit(suite(), t0)
    return results

import math

import numpy as np
import pytest
import scipy.special as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from rmgp.kernels import (
    Hyperparameters,
    KernelEvaluator,
    circle_closed_form,
    jacobi_theta3,
    kernel_gram,
    matern_euclidean,
    naive_geodesic_kernel,
    parse_nu,
    sphere_gegenbauer_kernel,
    spectral_weights,
    torus_periodic_kernel,
    truncation_diagnostic,
)
from rmgp.mesh import icosphere, mesh_eigen_to_eigensystem, mesh_eigenpairs
from rmgp.spectral import MeshPoints, circle_eigensystem, sphere_eigensystem, spherical_harmonics, torus_eigensystem

INF = math.inf


def unit_vectors(rng, n, d=2):
    v = rng.standard_normal((n, d + 1))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fourier_circle_kernel(nu, kappa, r, terms=200_000):
    """Direct normalized cosine series on the unit circle, written out independently."""
    n = np.arange(1, terms)
    lam = 4 * math.pi**2 * n**2
    if math.isinf(nu):
        a = np.exp(-kappa**2 * lam / 2)
        a0 = 1.0
    else:
        a = (2 * nu / kappa**2 + lam) ** (-nu - 0.5)
        a0 = (2 * nu / kappa**2) ** (-nu - 0.5)
    r = np.atleast_1d(r)
    num = a0 + 2 * np.cos(2 * math.pi * np.outer(r, n)) @ a
    return num / (a0 + 2 * a.sum())


hyper = st.builds(
    Hyperparameters,
    st.floats(0.1, 10.0),
    st.floats(0.05, 2.0),
    st.sampled_from([0.5, 1.0, 1.5, 2.5, 3.7, INF]),
)


# --- hyperparameters --------------------------------------------------------


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        Hyperparameters(0.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        Hyperparameters(1.0, -1.0, 1.5)
    with pytest.raises(ValueError):
        Hyperparameters(1.0, 1.0, 0.0)
    assert parse_nu("inf") == INF and parse_nu(1.5) == 1.5
    assert Hyperparameters(1, 1, 1.5).replace(kappa=2).kappa == 2


# --- spectral weights -------------------------------------------------------


def test_weights_gaussian_zero_level():
    w = spectral_weights(Hyperparameters(1, 0.7, INF), circle_eigensystem(5))
    assert w.a[0] == 1.0


def test_weights_circle_half():
    w = spectral_weights(Hyperparameters(1, 1.0, 0.5), circle_eigensystem(6))
    n = np.arange(6)
    np.testing.assert_allclose(w.a, 1 / (1 + 4 * math.pi**2 * n**2), rtol=1e-14)


def test_weights_circle_normalization_direct_sum():
    es = circle_eigensystem(2000)
    h = Hyperparameters(2.0, 0.5, 1.5)
    w = spectral_weights(h, es)
    n = np.arange(2000)
    a = (2 * 1.5 / 0.5**2 + 4 * math.pi**2 * n**2) ** -2.0
    mult = np.where(n == 0, 1, 2)
    C = np.sum(mult * a)
    np.testing.assert_allclose(w.rho, h.sigma2 * a / C, rtol=1e-12)
    assert np.sum(mult * w.rho) == pytest.approx(h.sigma2, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(hyper, st.sampled_from(["circle", "torus", "s2", "s3"]))
def test_normalization_identity(h, which):
    es = {
        "circle": circle_eigensystem(300),
        "torus": torus_eigensystem(2, 12),
        "s2": sphere_eigensystem(2, 40),
        "s3": sphere_eigensystem(3, 20),
    }[which]
    w = spectral_weights(h, es)
    assert np.sum(w.multiplicities * w.rho) == pytest.approx(h.sigma2 * es.volume, rel=1e-10)
    assert np.all(np.diff(w.a) <= 0)


# --- closed forms -----------------------------------------------------------


def test_circle_half_cosh_values():
    h = Hyperparameters(1.0, 0.5, 0.5)
    assert circle_closed_form(h, 0.0, 0.25) == pytest.approx(math.cosh(-0.5) / math.cosh(1.0), rel=1e-14)
    assert circle_closed_form(h, 0.0, 0.5) == pytest.approx(0.64805, abs=1e-5)
    assert circle_closed_form(h, 0.3, 0.3) == pytest.approx(1.0)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, INF])
@pytest.mark.parametrize("kappa", [0.1, 0.3, 1.0])
def test_circle_closed_forms_match_fourier_series(nu, kappa):
    r = np.linspace(0, 1, 21)
    ref = fourier_circle_kernel(nu, kappa, r)
    got = circle_closed_form(Hyperparameters(1.0, kappa, nu), np.zeros(1), r)[0]
    tol = 1e-4 if nu == 0.5 else 1e-12  # the nu=1/2 series converges like 1/n
    np.testing.assert_allclose(got, ref, rtol=tol, atol=tol)


def test_circle_gaussian_vs_spectral_200_levels():
    h = Hyperparameters(1.0, 0.2, INF)
    spec = KernelEvaluator(h, circle_eigensystem(200))(np.array([0.0]), np.array([0.25]))[0, 0]
    assert spec == pytest.approx(circle_closed_form(h, 0.0, 0.25), abs=1e-10)


def test_jacobi_theta_against_product_form():
    q, z = 0.3, 0.7
    n = np.arange(1, 200)
    prod = np.prod((1 - q ** (2 * n)) * (1 + 2 * q ** (2 * n - 1) * math.cos(2 * z) + q ** (4 * n - 2)))
    assert jacobi_theta3(z, q) == pytest.approx(prod, rel=1e-14)


def test_closed_form_rejects_other_nu():
    with pytest.raises(ValueError):
        circle_closed_form(Hyperparameters(1, 1, 2.0), 0.0, 0.1)


def test_matern_euclidean_values():
    assert matern_euclidean(0.5, 1.0, 2.0, 1.0) == pytest.approx(2 * math.exp(-1))
    assert matern_euclidean(INF, 1.0, 1.0, math.sqrt(2)) == pytest.approx(math.exp(-1))
    r = 0.7
    assert matern_euclidean(1.5, 0.5, 1.0, r) == pytest.approx((1 + math.sqrt(3) * r / 0.5) * math.exp(-math.sqrt(3) * r / 0.5))
    for nu in (0.5, 1.5, 2.5, INF):
        assert matern_euclidean(nu, 0.3, 1.7, 0.0) == pytest.approx(1.7)
    # agrees with the Bessel form at nu = 5/2
    nu, k = 2.5, 0.8
    z = math.sqrt(2 * nu) * r / k
    bessel = 2 ** (1 - nu) / math.gamma(nu) * z**nu * sps.kv(nu, z)
    assert matern_euclidean(nu, k, 1.0, r) == pytest.approx(bessel, rel=1e-12)
    with pytest.raises(ValueError):
        matern_euclidean(2.0, 1.0, 1.0, 0.5)


def test_periodic_sum_on_circle_matches_cosh():
    h = Hyperparameters(1.0, 0.5, 0.5)
    assert torus_periodic_kernel(0.5, 0.5, 1.0, 0.0, 0.25, radius=30) == pytest.approx(
        circle_closed_form(h, 0.0, 0.25), abs=1e-10)
    assert torus_periodic_kernel(1.5, 0.3, 2.0, [[0.2, 0.4]], [[0.2, 0.4]])[0, 0] == pytest.approx(2.0)


def test_torus_equivalence_t2():
    rng = np.random.default_rng(0)
    h = Hyperparameters(1.0, 0.25, 1.5)
    es = torus_eigensystem(2, 40)
    X, X2 = rng.random((30, 2)), rng.random((30, 2))
    spec = KernelEvaluator(h, es)(X, X2)
    per = KernelEvaluator(h, es, mode="torus_periodic_sum")(X, X2)
    assert np.max(np.abs(spec - per)) < 1e-4


def test_sphere_gegenbauer_matches_harmonic_double_sum():
    h = Hyperparameters(1.0, 1.0, INF)
    x = np.array([[1.0, 0, 0]])
    x2 = np.array([[0, 1.0, 0]])
    es = sphere_eigensystem(2, 30)
    rho = spectral_weights(h, es).rho
    ref = sum(rho[n] * np.sum(spherical_harmonics(n, x) * spherical_harmonics(n, x2)) for n in range(30))
    assert sphere_gegenbauer_kernel(h, x, x2, 30)[0, 0] == pytest.approx(ref, abs=1e-8)
    gg = KernelEvaluator(h, es, mode="sphere_gegenbauer")(x, x2)[0, 0]
    assert gg == pytest.approx(ref, abs=1e-8)


def test_sphere_variance_and_monotone_decay():
    h = Hyperparameters(1.5, 0.5, INF)
    es = sphere_eigensystem(2, 40)
    ke = KernelEvaluator(h, es)
    theta = np.linspace(0, math.pi, 60)
    X = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=1)
    k = ke(np.array([[0, 0, 1.0]]), X)[0]
    assert k[0] == pytest.approx(1.5, rel=1e-12)
    assert np.all(np.diff(k) <= 1e-12)
    np.testing.assert_allclose(ke.diag(X), 1.5, rtol=1e-12)


def test_antipodal_sphere_kernel_flattens_with_kappa():
    es = sphere_eigensystem(2, 30)
    x, x2 = np.array([[0, 0, 1.0]]), np.array([[0, 0, -1.0]])
    vals = [KernelEvaluator(Hyperparameters(1, k, INF), es)(x, x2)[0, 0] for k in (0.3, 0.6, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] == pytest.approx(1.0, abs=1e-6)


# --- naive geodesic ----------------------------------------------------------


def test_naive_kernel_basic():
    es = circle_eigensystem(2)
    x = np.arange(100) / 100
    assert naive_geodesic_kernel(0.5, 2.0, es, np.array([0.3]), np.array([0.3]))[0, 0] == 2.0
    # neighbours are 2 pi / 100 radians apart
    K = naive_geodesic_kernel(0.01, 1.0, es, x, x)
    np.testing.assert_allclose(K, np.eye(100), atol=1e-8)
    assert np.linalg.eigvalsh(K)[0] > 0


def test_naive_kernel_indefinite_for_some_kappa():
    es = circle_eigensystem(2)
    x = np.arange(100) / 100
    ratios = []
    for kappa in np.geomspace(0.1, 10, 20):
        w = np.linalg.eigvalsh(naive_geodesic_kernel(kappa, 1.0, es, x, x))
        ratios.append(w[0] / w[-1])
    assert min(ratios) < -1e-8


def test_naive_mode_unsupported_on_mesh():
    mesh = icosphere(1)
    es = mesh_eigen_to_eigensystem(mesh_eigenpairs(mesh, 5), mesh)
    with pytest.raises(ValueError, match="unsupported"):
        KernelEvaluator(Hyperparameters(1, 1, 1.5), es, mode="naive_geodesic")


# --- evaluator invariants ----------------------------------------------------


def test_circle_k_0_quarter_spectral():
    ke = KernelEvaluator(Hyperparameters(1.0, 0.5, 0.5), circle_eigensystem(5000))
    assert ke(np.array([0.0]), np.array([0.25]))[0, 0] == pytest.approx(0.73079, abs=5e-5)


@settings(max_examples=20, deadline=None)
@given(hyper)
def test_average_variance_on_circle_grid(h):
    es = circle_eigensystem(400)
    x = np.arange(512) / 512
    assert np.mean(KernelEvaluator(h, es).diag(x)) == pytest.approx(h.sigma2, rel=1e-6)


@pytest.fixture(scope="module")
def mesh_es():
    mesh = icosphere(3)
    return mesh_eigen_to_eigensystem(mesh_eigenpairs(mesh, 40), mesh)


def test_mesh_mass_weighted_average_variance(mesh_es):
    h = Hyperparameters(0.8, 0.4, 1.5)
    V = mesh_es.vertex_points(np.arange(mesh_es.mesh.num_vertices))
    var = KernelEvaluator(h, mesh_es).diag(V)
    assert np.sum(mesh_es.pairs.mass * var) / mesh_es.volume == pytest.approx(0.8, rel=1e-6)


@pytest.mark.parametrize("mode", ["spectral", "circle_closed_form", "torus_periodic_sum"])
def test_circle_modes_psd_symmetric_stationary(mode):
    rng = np.random.default_rng(1)
    h = Hyperparameters(1.0, 0.2, 1.5)
    ke = KernelEvaluator(h, circle_eigensystem(500), mode=mode)
    x = rng.random(100)
    K = ke(x)
    assert np.array_equal(K, K.T)
    w = np.linalg.eigvalsh(K)
    assert w[0] >= -1e-8 * w[-1]
    shift = 0.137
    np.testing.assert_allclose(ke(x[:10], x[10:20]), ke((x[:10] + shift) % 1, (x[10:20] + shift) % 1), atol=1e-12)


def test_psd_on_other_manifolds(mesh_es):
    rng = np.random.default_rng(2)
    h = Hyperparameters(1.0, 0.3, 2.5)
    cases = [
        (torus_eigensystem(2, 15), rng.random((100, 2))),
        (sphere_eigensystem(2, 25), unit_vectors(rng, 100)),
        (mesh_es, MeshPoints(rng.integers(0, mesh_es.mesh.num_faces, 100), rng.dirichlet(np.ones(3), 100))),
    ]
    for es, X in cases:
        w = np.linalg.eigvalsh(kernel_gram(KernelEvaluator(h, es), X))
        assert w[0] >= -1e-8 * w[-1]


def test_sphere_kernel_depends_only_on_inner_product():
    rng = np.random.default_rng(3)
    ke = KernelEvaluator(Hyperparameters(1, 0.4, 1.5), sphere_eigensystem(2, 30))
    X, X2 = unit_vectors(rng, 5), unit_vectors(rng, 5)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    np.testing.assert_allclose(ke(X, X2), ke(X @ Q, X2 @ Q), atol=1e-12)


def test_gaussian_circle_kernel_monotone_in_kappa():
    es = circle_eigensystem(300)
    vals = [KernelEvaluator(Hyperparameters(1, k, INF), es)(np.array([0.1]), np.array([0.45]))[0, 0]
            for k in np.linspace(0.05, 2, 40)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_hyperparameter_change_rebuilds_weights():
    es = circle_eigensystem(50)
    ke = KernelEvaluator(Hyperparameters(1, 0.2, 1.5), es)
    ke2 = ke.with_hyperparameters(Hyperparameters(3, 0.2, 1.5))
    np.testing.assert_allclose(ke2.rho, 3 * ke.rho)


def test_mode_validation():
    with pytest.raises(ValueError):
        KernelEvaluator(Hyperparameters(1, 1, 1.5), sphere_eigensystem(2, 4), mode="circle_closed_form")
    with pytest.raises(ValueError):
        KernelEvaluator(Hyperparameters(1, 1, 1.5), circle_eigensystem(4), mode="nope")


# --- truncation diagnostic ---------------------------------------------------


def exact_tail_fraction(nu, kappa, N, total=2_000_000):
    n = np.arange(total)
    lam = 4 * math.pi**2 * n**2
    a = (2 * nu / kappa**2 + lam) ** (-nu - 0.5) * np.where(n == 0, 1, 2)
    return a[N:].sum() / a.sum()


def test_truncation_gaussian_negligible():
    d = truncation_diagnostic(Hyperparameters(1, 1.0, INF), circle_eigensystem(100))
    assert d["tail_fraction"] < 1e-15
    assert d["gaussian_bound"] < 1e-15


@pytest.mark.parametrize("N", [50, 100, 200])
def test_truncation_tracks_exact_tail(N):
    d = truncation_diagnostic(Hyperparameters(1, 0.5, 0.5), circle_eigensystem(N))
    exact = exact_tail_fraction(0.5, 0.5, N)
    assert d["tail_fraction"] == pytest.approx(exact, rel=0.1)


def test_truncation_halves_when_doubling():
    f = [truncation_diagnostic(Hyperparameters(1, 0.5, 0.5), circle_eigensystem(N))["tail_fraction"]
         for N in (100, 200, 400)]
    for a, b in zip(f, f[1:]):
        assert 0.4 < b / a < 0.6


def test_truncation_monotone_in_nu():
    es = sphere_eigensystem(2, 20)
    f = [truncation_diagnostic(Hyperparameters(1, 0.5, nu), es)["tail_fraction"] for nu in (0.5, 1.0, 1.5, 2.5, 5.0, INF)]
    assert np.all(np.diff(f) <= 0)

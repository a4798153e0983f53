"""Laplace-Beltrami eigensystems of analytic manifolds.

Points are plain numpy arrays:

* circle: shape ``(n,)`` (or ``(n, 1)``), coordinates in ``[0, 1)`` identified
  with the angle ``2 pi x``;
* torus ``T^d``: shape ``(n, d)``, every coordinate in ``[0, 1)``;
* sphere ``S^d``: shape ``(n, d + 1)``, unit vectors;
* mesh: :class:`MeshPoints` (face index plus barycentric coordinates).

Every eigensystem groups eigenfunctions into *levels* of equal eigenvalue.
Level ``n`` carries the eigenvalue ``lambda_n`` and the multiplicity ``d_n``;
its members are evaluated by :meth:`EigenSystem.level_phi` and the
pair-sum ``sum_k f_{n,k}(x) f_{n,k}(x')`` by :meth:`EigenSystem.pair_sum`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

# inner products outside [-1 - tol, 1 + tol] are an input error, inside are clamped
_CLAMP_TOL = 1e-12


class UnsupportedError(NotImplementedError):
    """Operation not available for this eigensystem or manifold."""


# ---------------------------------------------------------------------------
# points


def circle_points(x) -> np.ndarray:
    """Canonical circle coordinates, reduced modulo 1."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    x = np.atleast_1d(x)
    if x.ndim != 1:
        raise ValueError(f"circle points must have shape (n,), got {x.shape}")
    return np.mod(x, 1.0)


def torus_points(x, d: int) -> np.ndarray:
    """Canonical ``T^d`` coordinates of shape ``(n, d)``, reduced modulo 1."""
    x = np.asarray(x, dtype=float)
    if d == 1 and x.ndim <= 1:
        x = np.atleast_1d(x)[:, None]
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"torus T^{d} points must have shape (n, {d}), got {x.shape}")
    return np.mod(x, 1.0)


def sphere_points(v, d: int | None = None) -> np.ndarray:
    """Unit vectors of shape ``(n, d + 1)``; rows are renormalized, zero rows rejected."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if d is not None and v.shape[1] != d + 1:
        raise ValueError(f"S^{d} points must have shape (n, {d + 1}), got {v.shape}")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise ValueError("sphere points must be nonzero finite vectors")
    return v / norms[:, None]


@dataclass(frozen=True)
class MeshPoints:
    """Points on a triangle mesh given by face index and barycentric coordinates."""

    face: np.ndarray
    bary: np.ndarray

    def __post_init__(self):
        face = np.atleast_1d(np.asarray(self.face, dtype=np.int64))
        bary = np.atleast_2d(np.asarray(self.bary, dtype=float))
        if bary.shape != (face.shape[0], 3):
            raise ValueError("bary must have shape (n, 3) matching face")
        if np.any(bary < -1e-12) or np.any(bary > 1 + 1e-12):
            raise ValueError("barycentric coordinates must lie in [0, 1]")
        if np.any(np.abs(bary.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("barycentric coordinates must sum to 1")
        object.__setattr__(self, "face", face)
        object.__setattr__(self, "bary", np.clip(bary, 0.0, 1.0))

    def __len__(self):
        return self.face.shape[0]

    @classmethod
    def at_vertices(cls, faces: np.ndarray, vertices) -> "MeshPoints":
        """Points sitting exactly on the given vertex indices."""
        faces = np.asarray(faces)
        vertices = np.atleast_1d(np.asarray(vertices, dtype=np.int64))
        n_vert = faces.max() + 1
        if np.any(vertices < 0) or np.any(vertices >= n_vert):
            raise ValueError("vertex index out of range")
        # first occurrence of each vertex in the flattened face list
        first = np.full(n_vert, -1, dtype=np.int64)
        uniq, idx = np.unique(faces.ravel(), return_index=True)
        first[uniq] = idx
        slot = first[vertices]
        if np.any(slot < 0):
            raise ValueError("vertex not referenced by any face")
        bary = np.zeros((len(vertices), 3))
        bary[np.arange(len(vertices)), slot % 3] = 1.0
        return cls(slot // 3, bary)

    def concat(self, other: "MeshPoints") -> "MeshPoints":
        return MeshPoints(
            np.concatenate([self.face, other.face]),
            np.concatenate([self.bary, other.bary]),
        )


def num_points(X) -> int:
    return len(X)


# ---------------------------------------------------------------------------
# special functions


def gegenbauer_at_one(n, alpha: float):
    """``C_n^{(alpha)}(1) = Gamma(n + 2 alpha) / (Gamma(2 alpha) Gamma(n + 1))``."""
    n = np.asarray(n, dtype=float)
    return np.exp(gammaln(n + 2 * alpha) - gammaln(2 * alpha) - gammaln(n + 1))


def gegenbauer_table(num: int, alpha: float, t) -> np.ndarray:
    """Gegenbauer polynomials ``C_0 .. C_{num-1}`` at ``t``.

    Returns an array of shape ``(num,) + t.shape``. Uses the three-term
    recurrence; entries with ``|t| == 1`` are replaced by the closed form.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1 + _CLAMP_TOL):
        raise ValueError("Gegenbauer argument must lie in [-1, 1]")
    t = np.clip(t, -1.0, 1.0)
    out = np.empty((num,) + t.shape)
    if num == 0:
        return out
    out[0] = 1.0
    if num > 1:
        out[1] = 2 * alpha * t
    for n in range(2, num):
        out[n] = (2 * t * (n + alpha - 1) * out[n - 1] - (n + 2 * alpha - 2) * out[n - 2]) / n
    edge = np.abs(t) == 1.0
    if np.any(edge):
        at_one = gegenbauer_at_one(np.arange(num), alpha)
        sign = np.where(t[edge] > 0, 1.0, -1.0)
        out[:, edge] = at_one[:, None] * sign[None, :] ** np.arange(num)[:, None]
    return out


def gegenbauer(n: int, alpha: float, t):
    """Gegenbauer polynomial ``C_n^{(alpha)}(t)``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    val = gegenbauer_table(n + 1, alpha, t)[n]
    return float(val) if val.ndim == 0 else val


def _normalized_legendre(lmax: int, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Orthonormalized associated Legendre values ``P[l, m]`` for ``l, m <= lmax``.

    Scaled so that ``P[l, m](cos theta) * e^{i m phi}`` has unit norm on
    ``S^2`` (no Condon-Shortley phase). ``s = sin theta >= 0``.
    """
    P = np.zeros((lmax + 1, lmax + 1) + t.shape)
    P[0, 0] = 1.0 / np.sqrt(4 * np.pi)
    for m in range(1, lmax + 1):
        P[m, m] = np.sqrt((2 * m + 1) / (2 * m)) * s * P[m - 1, m - 1]
    for m in range(0, lmax):
        P[m + 1, m] = np.sqrt(2 * m + 3) * t * P[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l, m] = a * (t * P[l - 1, m] - b * P[l - 2, m])
    return P


def spherical_harmonics_upto(num_levels: int, v) -> np.ndarray:
    """Real orthonormal spherical harmonics of degrees ``0 .. num_levels-1`` on ``S^2``.

    Columns are level-major; within degree ``n`` the ``2n + 1`` members are
    ordered ``m = 0``, then ``cos(m phi)``, ``sin(m phi)`` for ``m = 1 .. n``.
    """
    v = sphere_points(v, 2)
    x, y, z = v.T
    t = np.clip(z, -1.0, 1.0)
    s = np.hypot(x, y)
    phi = np.arctan2(y, x)
    lmax = num_levels - 1
    P = _normalized_legendre(lmax, t, s)
    cols = []
    root2 = np.sqrt(2.0)
    for n in range(num_levels):
        cols.append(P[n, 0])
        for m in range(1, n + 1):
            cols.append(root2 * P[n, m] * np.cos(m * phi))
            cols.append(root2 * P[n, m] * np.sin(m * phi))
    return np.stack(cols, axis=1)


def spherical_harmonics(n: int, v) -> np.ndarray:
    """The ``2n + 1`` real spherical harmonics of degree ``n``, shape ``(npts, 2n+1)``."""
    return spherical_harmonics_upto(n + 1, v)[:, n * n:]


def real_spherical_harmonic(n: int, k: int, v):
    """``k``-th (1-based) member of the degree-``n`` real orthonormal basis at ``v``."""
    if not 1 <= k <= 2 * n + 1:
        raise ValueError(f"member index k must be in 1..{2 * n + 1}")
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(np.atleast_2d(v), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("v must be a unit vector")
    vals = spherical_harmonics(n, v)[:, k - 1]
    return float(vals[0]) if v.ndim == 1 else vals


# ---------------------------------------------------------------------------
# eigensystems


class EigenSystem:
    """Ordered Laplace-Beltrami eigenlevels with eigenfunction evaluation.

    Subclasses set ``dim``, ``volume``, ``eigenvalues`` and ``multiplicities``
    and implement :meth:`check_points`, :meth:`level_phi` (or :meth:`phi`)
    and :meth:`pair_sum`.
    """

    manifold: str = "abstract"
    dim: int
    volume: float
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    has_members: bool = True

    @property
    def num_levels(self) -> int:
        return len(self.eigenvalues)

    def _levels(self, num_levels):
        if num_levels is None:
            return self.num_levels
        if not 1 <= num_levels <= self.num_levels:
            raise ValueError(f"num_levels must be in 1..{self.num_levels}")
        return int(num_levels)

    def check_points(self, X):
        raise NotImplementedError

    def member_levels(self, num_levels=None) -> np.ndarray:
        """Level index of every member, level-major order."""
        N = self._levels(num_levels)
        return np.repeat(np.arange(N), self.multiplicities[:N])

    def level_phi(self, n: int, X) -> np.ndarray:
        """Members of level ``n`` at ``X``, shape ``(len(X), d_n)``."""
        offsets = np.concatenate([[0], np.cumsum(self.multiplicities)])
        return self.phi(X, n + 1)[:, offsets[n]:offsets[n + 1]]

    def phi(self, X, num_levels=None) -> np.ndarray:
        """All members of the first ``num_levels`` levels, shape ``(len(X), M)``."""
        N = self._levels(num_levels)
        X = self.check_points(X)
        return np.concatenate([self.level_phi(n, X) for n in range(N)], axis=1)

    def pair_sum(self, n: int, X, X2) -> np.ndarray:
        """``sum_k f_{n,k}(x) f_{n,k}(x')`` as a ``(len(X), len(X2))`` matrix."""
        return self.level_phi(n, X) @ self.level_phi(n, X2).T

    def weighted_pair_sum(self, weights, X, X2=None) -> np.ndarray:
        """``sum_n weights[n] * pair_sum(n, X, X2)`` over ``len(weights)`` levels."""
        weights = np.asarray(weights, dtype=float)
        N = len(weights)
        X = self.check_points(X)
        F = self.phi(X, N)
        w = weights[self.member_levels(N)]
        if X2 is None:
            K = (F * w) @ F.T
            return 0.5 * (K + K.T)
        F2 = self.phi(self.check_points(X2), N)
        return (F * w) @ F2.T

    def weighted_pair_sum_diag(self, weights, X) -> np.ndarray:
        weights = np.asarray(weights, dtype=float)
        N = len(weights)
        F = self.phi(self.check_points(X), N)
        return (F * F) @ weights[self.member_levels(N)]

    def __repr__(self):
        return (
            f"{type(self).__name__}(manifold={self.manifold!r}, dim={self.dim}, "
            f"volume={self.volume:.6g}, num_levels={self.num_levels})"
        )


class TorusEigenSystem(EigenSystem):
    """Flat torus ``T^d = R^d / Z^d`` truncated to frequencies ``||tau||_inf <= max_freq``.

    Members of a level are ``sqrt(2) cos(2 pi tau.x)``, ``sqrt(2) sin(2 pi tau.x)``
    for each representative ``tau`` of a ``+-tau`` pair (first nonzero entry
    positive), in lexicographic order of ``tau``; the zero level is the constant 1.
    """

    def __init__(self, d: int, max_freq: int):
        if d < 1:
            raise ValueError("d must be >= 1")
        if max_freq < 0:
            raise ValueError("max_freq must be >= 0")
        self.dim = int(d)
        self.max_freq = int(max_freq)
        self.manifold = "circle" if d == 1 else "torus"
        self.volume = 1.0

        rng = range(-max_freq, max_freq + 1)
        reps = []
        for tau in itertools.product(rng, repeat=d):
            nz = [c for c in tau if c != 0]
            if nz and nz[0] > 0:
                reps.append(tau)
        reps = np.array(reps, dtype=np.int64).reshape(-1, d)
        sq = (reps**2).sum(axis=1)
        order = np.lexsort(tuple(reps[:, ::-1].T) + (sq,))
        reps, sq = reps[order], sq[order]
        levels_sq, counts = np.unique(sq, return_counts=True)

        self.level_sq_norms = np.concatenate([[0], levels_sq]).astype(np.int64)
        self.eigenvalues = 4 * np.pi**2 * self.level_sq_norms.astype(float)
        self.multiplicities = np.concatenate([[1], 2 * counts]).astype(np.int64)
        self.frequencies = reps
        # representative row range per level (level 0 has none)
        self._rep_offsets = np.concatenate([[0, 0], np.cumsum(counts)])

    def check_points(self, X):
        if self.dim == 1:
            return circle_points(X)
        return torus_points(X, self.dim)

    def _as_matrix(self, X):
        X = self.check_points(X)
        return X[:, None] if X.ndim == 1 else X

    def level_frequencies(self, n: int) -> np.ndarray:
        return self.frequencies[self._rep_offsets[n]:self._rep_offsets[n + 1]]

    def level_phi(self, n, X):
        X = self._as_matrix(X)
        if n == 0:
            return np.ones((len(X), 1))
        arg = 2 * np.pi * X @ self.level_frequencies(n).T
        out = np.empty((len(X), 2 * arg.shape[1]))
        out[:, 0::2] = np.sqrt(2) * np.cos(arg)
        out[:, 1::2] = np.sqrt(2) * np.sin(arg)
        return out

    def phi(self, X, num_levels=None):
        N = self._levels(num_levels)
        X = self._as_matrix(X)
        reps = self.frequencies[: self._rep_offsets[N]]
        arg = 2 * np.pi * X @ reps.T
        out = np.empty((len(X), 1 + 2 * len(reps)))
        out[:, 0] = 1.0
        out[:, 1::2] = np.sqrt(2) * np.cos(arg)
        out[:, 2::2] = np.sqrt(2) * np.sin(arg)
        return out

    def pair_sum(self, n, X, X2):
        X, X2 = self._as_matrix(X), self._as_matrix(X2)
        if n == 0:
            return np.ones((len(X), len(X2)))
        diff = X[:, None, :] - X2[None, :, :]
        arg = 2 * np.pi * diff @ self.level_frequencies(n).T
        return 2 * np.cos(arg).sum(axis=-1)


def circle_eigensystem(num_levels: int) -> TorusEigenSystem:
    """Circle of unit circumference with levels ``0 .. num_levels-1``.

    Level ``n >= 1`` has eigenvalue ``4 pi^2 n^2`` and members
    ``sqrt(2) cos(2 pi n x)``, ``sqrt(2) sin(2 pi n x)``.
    """
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    return TorusEigenSystem(1, num_levels - 1)


def torus_eigensystem(d: int, max_freq: int) -> TorusEigenSystem:
    if d < 1 or max_freq < 1:
        raise ValueError("need d >= 1 and max_freq >= 1")
    return TorusEigenSystem(d, max_freq)


def sphere_volume(d: int) -> float:
    """Surface volume of the unit ``S^d``: ``2 pi^{(d+1)/2} / Gamma((d+1)/2)``."""
    return float(2 * np.pi ** ((d + 1) / 2) / np.exp(gammaln((d + 1) / 2)))


def sphere_multiplicity(n, d: int):
    """Dimension of the degree-``n`` spherical harmonics on ``S^d``."""
    n = np.asarray(n, dtype=float)
    return np.rint(
        (2 * n + d - 1) * np.exp(gammaln(n + d - 1) - gammaln(d) - gammaln(n + 1))
    ).astype(np.int64)


def addition_constant(n, d: int):
    """``c_{n,d} = d_n Gamma((d+1)/2) / (2 pi^{(d+1)/2} C_n^{((d-1)/2)}(1))``."""
    return sphere_multiplicity(n, d) / (sphere_volume(d) * gegenbauer_at_one(n, (d - 1) / 2))


def geodesic_cosine(X, X2) -> np.ndarray:
    """Clamped inner products ``cos d_g`` between unit vectors."""
    G = X @ X2.T
    if np.any(np.abs(G) > 1 + 1e-8):
        raise ValueError("points are not unit vectors")
    return np.clip(G, -1.0, 1.0)


class SphereEigenSystem(EigenSystem):
    """Unit sphere ``S^d`` (``d >= 2``) with degrees ``0 .. num_levels-1``.

    Pair-sums use the addition formula for any ``d``; per-member
    eigenfunctions are available on ``S^2`` only.
    """

    manifold = "sphere"

    def __init__(self, d: int, num_levels: int):
        if d < 2:
            raise ValueError("sphere eigensystem requires d >= 2")
        if num_levels < 1:
            raise ValueError("num_levels must be >= 1")
        self.dim = int(d)
        self.alpha = (d - 1) / 2
        self.volume = sphere_volume(d)
        n = np.arange(num_levels)
        self.eigenvalues = (n * (n + d - 1)).astype(float)
        self.multiplicities = sphere_multiplicity(n, d)
        self.addition_constants = addition_constant(n, d)
        self.has_members = d == 2

    def check_points(self, X):
        return sphere_points(X, self.dim)

    def _require_members(self):
        if self.dim != 2:
            raise UnsupportedError("unsupported: per-member eigenfunctions only for S^2")

    def level_phi(self, n, X):
        self._require_members()
        return spherical_harmonics(n, self.check_points(X))

    def phi(self, X, num_levels=None):
        self._require_members()
        return spherical_harmonics_upto(self._levels(num_levels), self.check_points(X))

    def pair_sum(self, n, X, X2):
        t = geodesic_cosine(self.check_points(X), self.check_points(X2))
        return self.addition_constants[n] * gegenbauer_table(n + 1, self.alpha, t)[n]

    def weighted_pair_sum(self, weights, X, X2=None):
        weights = np.asarray(weights, dtype=float)
        X = self.check_points(X)
        X2 = X if X2 is None else self.check_points(X2)
        t = geodesic_cosine(X, X2)
        C = gegenbauer_table(len(weights), self.alpha, t)
        coef = weights * self.addition_constants[: len(weights)]
        return np.tensordot(coef, C, axes=1)

    def weighted_pair_sum_diag(self, weights, X):
        weights = np.asarray(weights, dtype=float)
        X = self.check_points(X)
        n = np.arange(len(weights))
        # psum(n, x, x) = d_n / vol on a homogeneous space
        value = np.sum(weights * self.multiplicities[n]) / self.volume
        return np.full(len(X), value)


def sphere_eigensystem(d: int, num_levels: int) -> SphereEigenSystem:
    return SphereEigenSystem(d, num_levels)

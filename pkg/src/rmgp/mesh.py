"""Triangle meshes and their piecewise-linear Laplace-Beltrami spectrum.

Stiffness uses the cotangent formula, mass is lumped (one third of the
incident face areas per vertex), and the smallest eigenpairs of
``S f = lambda M f`` come from :func:`rmgp.lanczos.smallest_eigenpairs`.
"""

from __future__ import annotations

import os
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .lanczos import backward_errors, smallest_eigenpairs
from .spectral import EigenSystem, MeshPoints


class MeshError(ValueError):
    """Base class for mesh input problems."""


class MeshParseError(MeshError):
    pass


class MeshValidationError(MeshError):
    pass


class CacheError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshValidationError("vertices must have shape (K, 3)")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
            raise MeshValidationError("faces must have shape (F, 3) with F >= 1")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshValidationError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def edges(self):
        """Unique undirected edges and the number of faces sharing each."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def components(self):
        K = self.num_vertices
        e = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(K, K))
        return connected_components(adj, directed=False)

    def is_closed(self) -> bool:
        _, counts = self.edges()
        return bool(np.all(counts == 2))

    def validate(self, keep_largest_component: bool = False) -> "TriangleMesh":
        """Check the mesh invariants; returns the (possibly reduced) mesh.

        Raises :class:`MeshValidationError` on degenerate faces, non-manifold
        edges or (unless ``keep_largest_component``) multiple components.
        Boundary edges only warn: they act as natural boundary conditions.
        """
        bbox = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        min_area = 1e-12 * float(bbox @ bbox)
        areas = self.face_areas()
        if np.any(areas <= min_area):
            bad = int(np.argmin(areas))
            raise MeshValidationError(f"degenerate face {bad} (area {areas[bad]:.3e})")
        _, counts = self.edges()
        if np.any(counts > 2):
            raise MeshValidationError(
                f"non-manifold mesh: {int(np.sum(counts > 2))} edges shared by more than 2 faces"
            )
        n_comp, labels = self.components()
        if n_comp > 1:
            if not keep_largest_component:
                raise MeshValidationError(
                    f"mesh has {n_comp} connected components (isolated vertices count)"
                )
            sizes = np.bincount(labels[self.faces[:, 0]], minlength=n_comp)
            keep = int(np.argmax(sizes))
            return self._restrict(labels == keep).validate()
        if np.any(counts == 1):
            warnings.warn(
                f"mesh has {int(np.sum(counts == 1))} boundary edges; "
                "Neumann boundary conditions are implied",
                stacklevel=2,
            )
        return self

    def _restrict(self, vmask: np.ndarray) -> "TriangleMesh":
        fmask = vmask[self.faces].all(axis=1)
        new_index = np.cumsum(vmask) - 1
        return TriangleMesh(self.vertices[vmask], new_index[self.faces[fmask]])


# ---------------------------------------------------------------------------
# file formats


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _parse_off(text: str):
    lines = _data_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError("empty OFF file") from None
    tokens = header.split()
    if tokens[0] != "OFF":
        raise MeshParseError(f"line {lineno}: expected OFF header, got {tokens[0]!r}")
    tokens = tokens[1:]
    if not tokens:
        try:
            lineno, counts = next(lines)
        except StopIteration:
            raise MeshParseError("missing counts line") from None
        tokens = counts.split()
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError):
        raise MeshParseError(f"line {lineno}: bad counts line") from None
    verts, faces = [], []
    for _ in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshParseError("unexpected end of file in vertex list") from None
        parts = line.split()
        try:
            verts.append([float(p) for p in parts[:3]])
        except ValueError:
            raise MeshParseError(f"line {lineno}: bad vertex") from None
        if len(parts) < 3:
            raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
    for _ in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshParseError("unexpected end of file in face list") from None
        parts = line.split()
        try:
            arity = int(parts[0])
            idx = [int(p) for p in parts[1:1 + arity]]
        except ValueError:
            raise MeshParseError(f"line {lineno}: bad face") from None
        if arity != 3:
            raise MeshParseError(f"line {lineno}: face arity {arity} != 3")
        if len(idx) != 3:
            raise MeshParseError(f"line {lineno}: face lists fewer than 3 indices")
        faces.append(idx)
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_obj(text: str):
    verts, faces = [], []
    for lineno, line in _data_lines(text):
        parts = line.split()
        if parts[0] == "v":
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MeshParseError(f"line {lineno}: bad vertex") from None
            if len(verts[-1]) != 3:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            try:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError:
                raise MeshParseError(f"line {lineno}: bad face") from None
            if len(idx) < 3:
                raise MeshParseError(f"line {lineno}: face arity {len(idx)} < 3")
            # 1-based, negative indices count from the end
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(path, format: str | None = None, keep_largest_component: bool = False) -> TriangleMesh:
    """Read and validate an OFF or OBJ triangle mesh.

    OFF faces must be triangles; OBJ polygons are fan-triangulated.
    """
    path = os.fspath(path)
    fmt = (format or os.path.splitext(path)[1].lstrip(".")).lower()
    if fmt not in ("off", "obj"):
        raise MeshParseError(f"unknown mesh format {fmt!r} (expected off or obj)")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    v, f = _parse_off(text) if fmt == "off" else _parse_obj(text)
    if len(f) == 0:
        raise MeshParseError("mesh has no faces")
    return TriangleMesh(v, f).validate(keep_largest_component)


def write_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"OFF\n{mesh.num_vertices} {mesh.num_faces} 0\n")
        for x in mesh.vertices:
            fh.write(f"{x[0]:.17g} {x[1]:.17g} {x[2]:.17g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x in mesh.vertices:
            fh.write(f"v {x[0]:.17g} {x[1]:.17g} {x[2]:.17g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def write_ply(mesh: TriangleMesh, path, scalars: dict[str, np.ndarray]) -> None:
    """ASCII PLY with one float property per entry of ``scalars`` on each vertex."""
    names = list(scalars)
    cols = [np.asarray(scalars[k], dtype=float) for k in names]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.num_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        for k in names:
            fh.write(f"property double {k}\n")
        fh.write(f"element face {mesh.num_faces}\nproperty list uchar int vertex_indices\nend_header\n")
        for i, x in enumerate(mesh.vertices):
            vals = [f"{c:.17g}" for c in x] + [f"{c[i]:.17g}" for c in cols]
            fh.write(" ".join(vals) + "\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


# ---------------------------------------------------------------------------
# mesh generators


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron projected on the sphere; ``10 * 4**s + 2`` vertices."""
    phi = (1 + 5**0.5) / 2
    v = np.array(
        [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = (len(v) + inv.reshape(-1, 3))
        a, b, c = f.T
        ab, bc, ca = m.T
        f = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
        ])
        v = np.vstack([v, mid])
    return TriangleMesh(radius * v, f)


def grid_mesh(n: int, size: float = 1.0) -> TriangleMesh:
    """Flat ``size x size`` square split into ``2 n^2`` triangles (open boundary)."""
    xs = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(v, f)


def torus_mesh(n_major: int, n_minor: int, major_radius: float = 1.0,
               minor_radius: float = 0.35) -> TriangleMesh:
    """Closed donut surface in R^3 with ``2 n_major n_minor`` triangles."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    ring = major_radius + minor_radius * np.cos(W)
    v = np.column_stack([
        (ring * np.cos(U)).ravel(), (ring * np.sin(U)).ravel(), (minor_radius * np.sin(W)).ravel()
    ])
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i2, j2 = (i + 1) % n_major, (j + 1) % n_minor
    a, b = (i * n_minor + j).ravel(), (i2 * n_minor + j).ravel()
    c, d = (i2 * n_minor + j2).ravel(), (i * n_minor + j2).ravel()
    f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(v, f)


# ---------------------------------------------------------------------------
# FEM assembly


def assemble_cotangent_stiffness(mesh: TriangleMesh) -> sp.csr_matrix:
    """Piecewise-linear stiffness: ``S_ij = -1/2 sum cot(opposite angles)``, ``S_ii = -sum_j S_ij``."""
    v = mesh.vertices[mesh.faces]
    K = mesh.num_vertices
    rows, cols, vals = [], [], []
    for corner in range(3):
        j, k = (corner + 1) % 3, (corner + 2) % 3
        e1 = v[:, j] - v[:, corner]
        e2 = v[:, k] - v[:, corner]
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.einsum("ij,ij->i", e1, e2) / np.linalg.norm(np.cross(e1, e2), axis=1)
        if not np.all(np.isfinite(cot)):
            raise FloatingPointError("cotangent overflow: degenerate face in mesh")
        rows += [mesh.faces[:, j], mesh.faces[:, k]]
        cols += [mesh.faces[:, k], mesh.faces[:, j]]
        vals += [-0.5 * cot, -0.5 * cot]
    off = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(K, K)
    ).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def assemble_lumped_mass(mesh: TriangleMesh) -> np.ndarray:
    """Diagonal mass ``M_ii = (1/3) sum of incident face areas``."""
    areas = mesh.face_areas()
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(areas / 3, 3), minlength=mesh.num_vertices)


# ---------------------------------------------------------------------------
# eigenpairs


@dataclass
class MeshEigenSystem:
    """Discrete eigenpairs ``S f_j = lambda_j M f_j`` with ``F.T M F = I``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass: np.ndarray
    dim: int = 2
    residuals: np.ndarray | None = field(default=None, compare=False)
    converged: bool = field(default=True, compare=False)

    @property
    def volume(self) -> float:
        return float(self.mass.sum())

    @property
    def num_vertices(self) -> int:
        return len(self.mass)

    @property
    def num_eigenpairs(self) -> int:
        return len(self.eigenvalues)


def solve_smallest_eigenpairs(S, mass, num: int, tol: float = 1e-8, **kwargs) -> MeshEigenSystem:
    res = smallest_eigenpairs(S, mass, num, tol=tol, **kwargs)
    return MeshEigenSystem(res.eigenvalues, res.eigenvectors, np.asarray(mass, dtype=float),
                           residuals=res.residuals, converged=res.converged)


def mesh_eigenpairs(mesh: TriangleMesh, num: int, tol: float = 1e-8, **kwargs) -> MeshEigenSystem:
    """Assemble and solve in one go."""
    S = assemble_cotangent_stiffness(mesh)
    M = assemble_lumped_mass(mesh)
    return solve_smallest_eigenpairs(S, M, num, tol=tol, **kwargs)


def eigen_residuals(mesh: TriangleMesh, mes: MeshEigenSystem) -> np.ndarray:
    return backward_errors(assemble_cotangent_stiffness(mesh), mes.mass, mes.eigenvalues, mes.eigenvectors)


class MeshEigenBasis(EigenSystem):
    """Mesh eigenpairs as an :class:`EigenSystem`; every eigenpair is its own level."""

    manifold = "mesh"

    def __init__(self, mes: MeshEigenSystem, mesh: TriangleMesh):
        if mes.num_vertices != mesh.num_vertices:
            raise ValueError("eigenvectors do not match the mesh vertex count")
        self.mesh = mesh
        self.pairs = mes
        self.dim = mes.dim
        self.volume = mes.volume
        # the zero mode may come out at -1e-15
        self.eigenvalues = np.maximum(np.asarray(mes.eigenvalues, dtype=float), 0.0)
        self.multiplicities = np.ones(len(self.eigenvalues), dtype=np.int64)

    def vertex_points(self, vertices) -> MeshPoints:
        return MeshPoints.at_vertices(self.mesh.faces, vertices)

    def check_points(self, X):
        if not isinstance(X, MeshPoints):
            raise TypeError("mesh eigensystems take MeshPoints")
        if np.any(X.face < 0) or np.any(X.face >= self.mesh.num_faces):
            raise IndexError("mesh point face index out of range")
        return X

    def phi(self, X, num_levels=None):
        N = self._levels(num_levels)
        X = self.check_points(X)
        corners = self.mesh.faces[X.face]
        F = self.pairs.eigenvectors[:, :N]
        return np.einsum("pc,pcn->pn", X.bary, F[corners])

    def level_phi(self, n, X):
        return self.phi(X, n + 1)[:, n:n + 1]


def mesh_eigen_to_eigensystem(mes: MeshEigenSystem, mesh: TriangleMesh) -> MeshEigenBasis:
    return MeshEigenBasis(mes, mesh)


# ---------------------------------------------------------------------------
# binary cache

_MAGIC = b"RMGP"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


def cache_write(mes: MeshEigenSystem, path) -> None:
    """Little-endian binary: header, eigenvalues, mass, column-major eigenvectors, CRC32."""
    lam = np.ascontiguousarray(mes.eigenvalues, dtype="<f8")
    mass = np.ascontiguousarray(mes.mass, dtype="<f8")
    vec = np.asarray(mes.eigenvectors, dtype="<f8")
    K, N = vec.shape
    if lam.shape != (N,) or mass.shape != (K,):
        raise ValueError("inconsistent eigensystem shapes")
    payload = b"".join([
        _HEADER.pack(_MAGIC, _VERSION, mes.dim, K, N, mes.volume),
        lam.tobytes(), mass.tobytes(), vec.tobytes(order="F"),
    ])
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def cache_read(path) -> MeshEigenSystem:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise CacheError("not a cache file")
    if len(blob) < _HEADER.size + 4:
        raise CacheError("truncated cache file")
    _, version, d, K, N, vol = _HEADER.unpack_from(blob)
    if version != _VERSION:
        raise CacheError(f"unsupported version {version}")
    expected = _HEADER.size + 8 * (N + K + K * N) + 4
    if len(blob) != expected:
        raise CacheError(f"truncated cache file ({len(blob)} of {expected} bytes)")
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if zlib.crc32(blob[: expected - 4]) != crc:
        raise CacheError("checksum failure")
    off = _HEADER.size
    lam = np.frombuffer(blob, "<f8", N, off).astype(float)
    off += 8 * N
    mass = np.frombuffer(blob, "<f8", K, off).astype(float)
    off += 8 * K
    vec = np.frombuffer(blob, "<f8", K * N, off).reshape((K, N), order="F").astype(float)
    mes = MeshEigenSystem(lam, vec, mass, dim=d)
    if not np.isclose(mes.volume, vol, rtol=1e-12, atol=0):
        raise CacheError("volume field does not match mass entries")
    return mes

"""P1 finite elements on a structured triangulation of the unit square.

Vertices are numbered row-major, ``index = j * (m + 1) + i`` for the vertex
at ``(i / m, j / m)``. Each grid cell is split along its bottom-left to
top-right diagonal into two counterclockwise triangles.

Nodal coefficient vectors are plain ``numpy`` arrays of length ``N``; every
norm is the L2(D) norm induced by the mass matrix.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "StructuredMesh",
    "DiscreteSpace",
    "OperatorMatrix",
    "SolverError",
    "SingularMatrixError",
    "ConvergenceError",
    "build_mesh",
    "build_space",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_operator",
    "solve_linear",
    "solve_adjoint",
    "l2_inner",
    "l2_norm",
    "interpolate",
    "prolongate",
    "write_field_csv",
    "save_checkpoint",
    "load_checkpoint",
]


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class StructuredMesh:
    m: int
    vertices: np.ndarray
    triangles: np.ndarray
    dirichlet: np.ndarray  # boolean mask over vertices
    dirichlet_side: str = "left"

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def build_mesh(m: int, dirichlet: str = "left") -> StructuredMesh:
    """Structured mesh with ``m`` subdivisions per side.

    ``dirichlet="left"`` tags the closed side ``x = 0`` (corners included);
    ``dirichlet="all"`` tags the whole boundary.
    """
    m = int(m)
    if m < 1:
        raise ValueError(f"number of subdivisions must be >= 1, got {m}")
    if dirichlet not in ("left", "all"):
        raise ValueError(f"unknown Dirichlet side {dirichlet!r}")
    s = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * (m + 1) + i
    v10 = v00 + 1
    v01 = v00 + (m + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * m * m, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    ix = np.tile(np.arange(m + 1), m + 1)
    iy = np.repeat(np.arange(m + 1), m + 1)
    if dirichlet == "left":
        mask = ix == 0
    else:
        mask = (ix == 0) | (ix == m) | (iy == 0) | (iy == m)
    for arr in (vertices, triangles, mask):
        arr.setflags(write=False)
    return StructuredMesh(m, vertices, triangles, mask, dirichlet)


def _element_geometry(mesh: StructuredMesh):
    p = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    # gradients of barycentric coordinates, (T, 3, 2)
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return p, area, grads


def _scatter(mesh: StructuredMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    N = mesh.num_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()


_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: StructuredMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix, ``M_ij = int phi_i phi_j``."""
    _, area, _ = _element_geometry(mesh)
    local = area[:, None, None] * _LOCAL_MASS[None]
    return _scatter(mesh, local)


def assemble_stiffness(mesh: StructuredMesh, diffusivity=1.0) -> sp.csr_matrix:
    """``K_ij = int a grad phi_j . grad phi_i`` with ``a`` constant per element.

    ``diffusivity`` is a scalar or a callable of points ``(k, 2) -> (k,)``
    evaluated at the element centroids.
    """
    p, area, grads = _element_geometry(mesh)
    if callable(diffusivity):
        a = np.asarray(diffusivity(p.mean(axis=1)), dtype=float)
    else:
        a = np.full(area.shape, float(diffusivity))
    local = (a * area)[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    return _scatter(mesh, local)


def assemble_advection(mesh: StructuredMesh, velocity: Callable) -> sp.csr_matrix:
    """``C_ij = int (V . grad phi_j) phi_i`` by the edge-midpoint rule.

    The midpoint rule is exact for quadratics, hence for affine velocities.
    """
    p, area, grads = _element_geometry(mesh)
    mids = np.stack([0.5 * (p[:, 0] + p[:, 1]),
                     0.5 * (p[:, 1] + p[:, 2]),
                     0.5 * (p[:, 2] + p[:, 0])], axis=1)  # (T, 3, 2)
    T = mids.shape[0]
    V = np.asarray(velocity(mids.reshape(-1, 2)), dtype=float).reshape(T, 3, 2)
    # basis values at the three midpoints: phi_i(mid_q)
    phi = np.array([[0.5, 0.0, 0.5],
                    [0.5, 0.5, 0.0],
                    [0.0, 0.5, 0.5]])  # [i, q]
    Vg = np.einsum("tqk,tjk->tqj", V, grads)  # V(mid_q) . grad phi_j
    local = (area / 3.0)[:, None, None] * np.einsum("iq,tqj->tij", phi, Vg)
    return _scatter(mesh, local)


@dataclass(frozen=True)
class DiscreteSpace:
    """P1 space on a structured mesh, with its mass matrix."""

    mesh: StructuredMesh
    mass: sp.csr_matrix

    @property
    def N(self) -> int:
        return self.mesh.num_vertices

    @property
    def dirichlet(self) -> np.ndarray:
        return self.mesh.dirichlet

    @property
    def free(self) -> np.ndarray:
        return ~self.mesh.dirichlet

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant of ``func`` evaluated on all vertices."""
        return np.asarray(func(self.mesh.vertices), dtype=float).reshape(self.N)


def build_space(m: int, dirichlet: str = "left") -> DiscreteSpace:
    mesh = build_mesh(m, dirichlet)
    return DiscreteSpace(mesh, assemble_mass(mesh))


def l2_inner(space: DiscreteSpace, u, v) -> float:
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[0] != space.N or v.shape[0] != space.N:
        raise ValueError(f"vectors of length {u.shape[0]} and {v.shape[0]} "
                         f"do not match the space dimension {space.N}")
    return float(u @ (space.mass @ v))


def l2_norm(space: DiscreteSpace, u) -> float:
    return float(np.sqrt(max(l2_inner(space, u, u), 0.0)))


@dataclass
class OperatorMatrix:
    """Assembled operator for one parameter sample, Dirichlet rows/columns
    eliminated symmetrically (unit diagonal).

    ``raw`` keeps the matrix before elimination; ``matrix`` is the one solved.
    The LU factorization is computed on first use and shared by primal and
    adjoint solves.
    """

    raw: sp.csr_matrix
    matrix: sp.csc_matrix
    dirichlet: np.ndarray
    method: str = "lu"
    _factor: object = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    def factor(self):
        with self._lock:
            if self._factor is None:
                try:
                    self._factor = spla.splu(self.matrix)
                except RuntimeError as exc:
                    raise SingularMatrixError(str(exc)) from exc
            return self._factor

    def factor_nbytes(self) -> int:
        f = self._factor
        if f is None:
            return 0
        return 12 * (f.L.nnz + f.U.nnz)

    def drop_factor(self):
        with self._lock:
            self._factor = None


def eliminate_dirichlet(A: sp.spmatrix, dirichlet: np.ndarray) -> sp.csc_matrix:
    free = (~dirichlet).astype(float)
    D = sp.diags(free)
    return (D @ A @ D + sp.diags(dirichlet.astype(float))).tocsc()


def assemble_operator(space: DiscreteSpace, diffusivity, velocity: Callable | None = None,
                      method: str = "lu") -> OperatorMatrix:
    """Operator of ``int eps grad y . grad v + (V . grad y) v`` on the space.

    Homogeneous Dirichlet conditions are imposed on the tagged vertices;
    the rest of the boundary carries the natural (do-nothing) condition.
    """
    if not callable(diffusivity) and not float(diffusivity) > 0:
        raise ValueError(f"diffusivity must be positive, got {diffusivity}")
    A = assemble_stiffness(space.mesh, diffusivity)
    if velocity is not None:
        A = A + assemble_advection(space.mesh, velocity)
    A = A.tocsr()
    return OperatorMatrix(A, eliminate_dirichlet(A, space.dirichlet), space.dirichlet, method)


def _iterative_solve(A, b, transpose, rtol=1e-13, maxiter=2000):
    mat = A.T.tocsc() if transpose else A
    ilu = spla.spilu(mat, drop_tol=1e-6, fill_factor=20)
    prec = spla.LinearOperator(mat.shape, ilu.solve)
    x, info = spla.gmres(mat, b, rtol=rtol, atol=0.0, restart=100, maxiter=maxiter, M=prec)
    res = np.linalg.norm(mat @ x - b) / max(np.linalg.norm(b), 1e-300)
    if info != 0 or res > 1e-12:
        raise ConvergenceError("GMRES did not converge", res)
    return x


def _solve(A: OperatorMatrix, rhs, transpose: bool) -> np.ndarray:
    b = np.array(rhs, dtype=float, copy=True)
    if b.shape != (A.N,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({A.N},)")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    b[A.dirichlet] = 0.0
    if A.method == "lu":
        x = A.factor().solve(b, trans="T" if transpose else "N")
    elif A.method == "gmres":
        x = _iterative_solve(A.matrix, b, transpose)
    else:
        raise ValueError(f"unknown solver {A.method!r}")
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("solution is not finite")
    x[A.dirichlet] = 0.0
    return x


def solve_linear(A: OperatorMatrix, rhs) -> np.ndarray:
    """Solve ``A y = rhs`` on the free dofs; Dirichlet entries are zero."""
    return _solve(A, rhs, transpose=False)


def solve_adjoint(A: OperatorMatrix, rhs) -> np.ndarray:
    """Solve ``A^T p = rhs`` reusing the primal factorization."""
    return _solve(A, rhs, transpose=True)


def locate(mesh: StructuredMesh, points: np.ndarray):
    """Triangle index and barycentric coordinates of each point."""
    m = mesh.m
    pts = np.asarray(points, dtype=float)
    sx = np.clip(pts[:, 0] * m, 0.0, m)
    sy = np.clip(pts[:, 1] * m, 0.0, m)
    i = np.minimum(np.floor(sx).astype(np.int64), m - 1)
    j = np.minimum(np.floor(sy).astype(np.int64), m - 1)
    fx = sx - i
    fy = sy - j
    upper = fy > fx
    tri = 2 * (j * m + i) + upper
    # lower triangle (v00, v10, v11): lambda = (1 - fx, fx - fy, fy)
    # upper triangle (v00, v11, v01): lambda = (1 - fy, fx, fy - fx)
    lam = np.where(upper[:, None],
                   np.column_stack([1 - fy, fx, fy - fx]),
                   np.column_stack([1 - fx, fx - fy, fy]))
    return tri, lam


def interpolate(mesh: StructuredMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 function with nodal ``values`` at arbitrary points."""
    tri, lam = locate(mesh, points)
    return np.einsum("kv,kv->k", np.asarray(values)[mesh.triangles[tri]], lam)


def prolongate(coarse: DiscreteSpace, values: np.ndarray, fine: DiscreteSpace) -> np.ndarray:
    """Nodal interpolant on ``fine`` of a P1 function on ``coarse``.

    Exact when ``fine.mesh.m`` is a multiple of ``coarse.mesh.m``.
    """
    return interpolate(coarse.mesh, values, fine.mesh.vertices)


def write_field_csv(path, space: DiscreteSpace, values) -> None:
    """One line per vertex: ``x,y,value``."""
    data = np.column_stack([space.mesh.vertices, np.asarray(values, dtype=float)])
    np.savetxt(path, data, delimiter=",", header="x,y,value", comments="", fmt="%.17g")


def save_checkpoint(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """JSON header line followed by a little-endian float64 payload.

    The header records the name, shape and byte offset of each array.
    """
    layout = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        layout.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    doc = dict(header)
    doc["arrays"] = layout
    doc["dtype"] = "<f8"
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(doc).encode("utf-8") + b"\n")
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header.pop("arrays"):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(float)
    header.pop("dtype", None)
    return header, arrays

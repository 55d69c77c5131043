"""Box-domain grids, the discrete Dirichlet Laplacian and its analytic eigenmodes.

Fields live on interior grid points only and are stored as arrays of shape
``grid.shape``; the homogeneous Dirichlet boundary is implicit (every value
outside the interior is zero).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

__all__ = [
    "Grid",
    "EigenMode",
    "LinearSolveError",
    "build_grid",
    "laplacian_apply",
    "laplacian_matrix",
    "solve_shifted",
    "eigenmode",
    "inner",
    "norm_l2",
]


class LinearSolveError(RuntimeError):
    """Raised when an iterative linear solve stops short of its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh of interior points on ``[0, extent_1] x ... x [0, extent_d]``."""

    dim: int
    extent: tuple[float, ...]
    n: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / (k + 1) for L, k in zip(self.extent, self.n))

    @property
    def cell_volume(self) -> float:
        return float(math.prod(self.h))

    @property
    def size(self) -> int:
        return int(math.prod(self.n))

    @property
    def measure(self) -> float:
        """Lebesgue measure of the box."""
        return float(math.prod(self.extent))

    def axes(self) -> list[np.ndarray]:
        """Interior node coordinates along each axis."""
        return [np.arange(1, k + 1) * hk for k, hk in zip(self.n, self.h)]

    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def point(self, index) -> tuple[float, ...]:
        """Physical coordinates of the interior node at ``index``."""
        index = np.atleast_1d(index)
        return tuple(float((int(i) + 1) * hk) for i, hk in zip(index, self.h))

    @cached_property
    def _lap_diag(self) -> float:
        return sum(2.0 / hk**2 for hk in self.h)


def build_grid(dim: int, extent, n) -> Grid:
    """Build a :class:`Grid`; ``extent`` and ``n`` may be scalars or per-axis sequences."""
    if dim not in (1, 2):
        raise ValueError(f"unsupported dimension {dim!r}; only 1 and 2 are implemented")
    ext = tuple(float(v) for v in np.broadcast_to(np.asarray(extent, dtype=float), (dim,)))
    nn = tuple(int(v) for v in np.broadcast_to(np.asarray(n), (dim,)))
    if any(k < 3 for k in nn):
        raise ValueError(f"need at least 3 interior points per axis, got n={nn}")
    if any(not (L > 0.0) or not math.isfinite(L) for L in ext):
        raise ValueError(f"extent must be positive, got {ext}")
    return Grid(dim=dim, extent=ext, n=nn)


def _check_field(grid: Grid, field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=float)
    if field.shape != grid.shape:
        raise ValueError(f"field shape {field.shape} does not match grid shape {grid.shape}")
    return field


def laplacian_apply(grid: Grid, field: np.ndarray) -> np.ndarray:
    """Second-order centred Laplacian with homogeneous Dirichlet data."""
    u = _check_field(grid, field)
    out = np.empty_like(u)
    out[...] = -grid._lap_diag * u
    for axis, hk in enumerate(grid.h):
        inv = 1.0 / hk**2
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        out[lo] += inv * u[hi]
        out[hi] += inv * u[lo]
    return out


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of :func:`laplacian_apply` in C (row-major) ordering."""
    mats = []
    for k, hk in zip(grid.n, grid.h):
        mats.append(sp.diags([np.ones(k - 1), -2.0 * np.ones(k), np.ones(k - 1)], [-1, 0, 1]) / hk**2)
    if grid.dim == 1:
        return sp.csr_matrix(mats[0])
    n1, n2 = grid.n
    return sp.csr_matrix(sp.kron(mats[0], sp.identity(n2)) + sp.kron(sp.identity(n1), mats[1]))


def inner(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """Cell-volume weighted L2 inner product."""
    return float(grid.cell_volume * np.vdot(u, v))


def norm_l2(grid: Grid, u: np.ndarray) -> float:
    return math.sqrt(grid.cell_volume * float(np.vdot(u, u)))


def _pcg(grid, alpha, diag, rhs, tol, max_iter):
    # Jacobi-preconditioned conjugate gradients on (D - alpha*Lap) u = rhs.
    def apply(u):
        return diag * u - alpha * laplacian_apply(grid, u)

    minv = 1.0 / (diag + alpha * grid._lap_diag)
    bnorm = float(np.linalg.norm(rhs))
    u = np.zeros_like(rhs)
    if bnorm == 0.0:
        return u
    r = rhs.copy()
    z = minv * r
    p = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(1, max_iter + 1):
        q = apply(p)
        a = rz / float(np.vdot(p, q))
        u += a * p
        r -= a * q
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol * bnorm:
            # recurrence drift guard: confirm on the true residual
            true = float(np.linalg.norm(rhs - apply(u)))
            if true <= tol * bnorm:
                return u
            r = rhs - apply(u)
        z = minv * r
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(rhs - apply(u))) / bnorm
    raise LinearSolveError(
        f"conjugate gradients did not reach rtol={tol:g} in {max_iter} iterations "
        f"(relative residual {res:.3e})",
        residual=res,
        iterations=max_iter,
    )


def _direct(grid, alpha, diag, rhs):
    if grid.dim == 1:
        (h,) = grid.h
        d = diag + 2.0 * alpha / h**2
        e = np.full(grid.n[0] - 1, -alpha / h**2)
        _, _, x, info = lapack.dptsv(d, e, rhs.reshape(-1, 1))
        if info != 0:
            raise LinearSolveError(f"tridiagonal factorisation failed (info={info})")
        return x.reshape(grid.shape)
    A = sp.diags(diag.ravel()) - alpha * laplacian_matrix(grid)
    return spla.spsolve(sp.csc_matrix(A), rhs.ravel()).reshape(grid.shape)


def solve_shifted(
    grid: Grid,
    alpha: float,
    diag,
    rhs: np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int | None = None,
    method: str = "cg",
) -> np.ndarray:
    """Solve ``(D - alpha * Lap_h) u = rhs`` for a positive diagonal ``D``.

    Parameters
    ----------
    grid : Grid
    alpha : float
        Non-negative multiple of the Laplacian.
    diag : float or array
        Diagonal entries of ``D``; every entry must be strictly positive.
    rhs : array of shape ``grid.shape``
    tol : float
        Relative residual target for the iterative method.
    max_iter : int, optional
        Iteration cap for ``method="cg"``; defaults to ``10 * grid.size``.
    method : {"cg", "direct"}
        ``"cg"`` runs Jacobi-preconditioned conjugate gradients. ``"direct"``
        factorises the matrix (tridiagonal LAPACK in 1-D, sparse LU in 2-D)
        and is what the time steppers use.

    Raises
    ------
    ValueError
        On negative ``alpha``, non-positive diagonal or shape mismatch.
    LinearSolveError
        If conjugate gradients exhausts ``max_iter``; carries the residual.
    """
    rhs = _check_field(grid, rhs)
    if not alpha >= 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha!r}")
    diag = np.broadcast_to(np.asarray(diag, dtype=float), grid.shape)
    if not np.all(diag > 0.0):
        raise ValueError("diagonal must be strictly positive")
    if alpha == 0.0:
        return rhs / diag
    if method == "direct":
        return _direct(grid, alpha, np.ascontiguousarray(diag), rhs)
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    if max_iter is None:
        max_iter = 10 * grid.size
    return _pcg(grid, alpha, diag, rhs, tol, max_iter)


@dataclass(frozen=True)
class EigenMode:
    k: tuple[int, ...]
    lambda_k: float
    e_k: np.ndarray


def eigenmode(grid: Grid, k) -> EigenMode:
    """Analytic Dirichlet eigenmode ``prod_i sin(k_i pi x_i / L_i)``, L2-normalised on the grid."""
    kk = tuple(int(v) for v in np.atleast_1d(k))
    if len(kk) != grid.dim:
        raise ValueError(f"mode index {kk} has wrong length for a {grid.dim}-D grid")
    if any(ki < 1 or ki > ni for ki, ni in zip(kk, grid.n)):
        raise ValueError(f"invalid mode index {kk}: need 1 <= k_i <= n_i = {grid.n}")
    field = np.ones(grid.shape)
    for axis, (ki, x, L) in enumerate(zip(kk, grid.axes(), grid.extent)):
        s = np.sin(ki * math.pi * x / L)
        shape = [1] * grid.dim
        shape[axis] = -1
        field = field * s.reshape(shape)
    field /= norm_l2(grid, field)
    lam = sum((ki * math.pi / L) ** 2 for ki, L in zip(kk, grid.extent))
    return EigenMode(k=kk, lambda_k=float(lam), e_k=field)

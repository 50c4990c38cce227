"""P1 finite elements on the fine grid and implicit-Euler time stepping.

Each fine rectangle is cut along its SW-NE diagonal into a lower triangle
(SW, SE, NE) and an upper triangle (SW, NE, NW).  Coefficients are constant
per cell (or per triangle), so all element integrals are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError
from .grid import TwoScaleMesh

log = logging.getLogger(__name__)

# local corner offsets (di, dj) of the two triangles of a cell
_TRIANGLES = (((0, 0), (1, 0), (1, 1)), ((0, 0), (1, 1), (0, 1)))
_P1_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

DIRECT_SOLVE_LIMIT = 250_000


@dataclass(frozen=True)
class PermeabilityField:
    """Strictly positive cell-wise constant coefficient, stored as (ny, nx)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ConfigError(f"permeability must be a 2-D (ny, nx) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ConfigError("permeability values must be finite and strictly positive")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def kmin(self) -> float:
        return float(self.values.min())

    @property
    def kmax(self) -> float:
        return float(self.values.max())

    def scaled(self, c: float) -> "PermeabilityField":
        return PermeabilityField(self.values * c)

    @classmethod
    def constant(cls, mesh: TwoScaleMesh, value: float = 1.0) -> "PermeabilityField":
        return cls(np.full((mesh.ny, mesh.nx), float(value)))


def _as_kappa(kappa) -> np.ndarray:
    if isinstance(kappa, PermeabilityField):
        return kappa.values
    arr = np.asarray(kappa, dtype=float)
    if np.any(arr <= 0):
        raise ConfigError("nonpositive permeability value")
    return arr


# element-level building blocks ----------------------------------------------


@lru_cache(maxsize=64)
def _connectivity(nx: int, ny: int) -> np.ndarray:
    """(ny, nx, 2, 3) global node numbers of every triangle."""
    j, i = np.mgrid[0:ny, 0:nx]
    conn = np.empty((ny, nx, 2, 3), dtype=np.int64)
    for t, tri in enumerate(_TRIANGLES):
        for k, (di, dj) in enumerate(tri):
            conn[:, :, t, k] = (j + dj) * (nx + 1) + (i + di)
    conn.setflags(write=False)
    return conn


@lru_cache(maxsize=64)
def _gradients(hx: float, hy: float) -> np.ndarray:
    """(2, 3, 2) gradients of the three P1 shape functions on each triangle type."""
    out = np.empty((2, 3, 2))
    for t, tri in enumerate(_TRIANGLES):
        xy = np.array([[di * hx, dj * hy] for di, dj in tri])
        # rows of inv([[1, x, y]]) give the coefficient vectors of the shape functions
        T = np.column_stack([np.ones(3), xy])
        coef = np.linalg.inv(T)
        out[t] = coef[1:].T
    out.setflags(write=False)
    return out


def _triangle_weights(weight, nx: int, ny: int) -> np.ndarray:
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        return np.full((ny, nx, 2), float(w))
    if w.shape == (ny, nx):
        return np.repeat(w[:, :, None], 2, axis=2)
    if w.shape == (ny, nx, 2):
        return w
    if w.size == nx * ny:
        return np.repeat(w.reshape(ny, nx)[:, :, None], 2, axis=2)
    raise ConfigError(f"coefficient shape {w.shape} does not match a {nx}x{ny} cell grid")


def _scatter(nx: int, ny: int, local: np.ndarray) -> sp.csr_matrix:
    """Sum (ny, nx, 2, 3, 3) element matrices into a global CSR matrix."""
    conn = _connectivity(nx, ny)
    rows = np.broadcast_to(conn[..., :, None], local.shape).ravel()
    cols = np.broadcast_to(conn[..., None, :], local.shape).ravel()
    n = (nx + 1) * (ny + 1)
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(nx: int, ny: int, hx: float, hy: float, weight) -> sp.csr_matrix:
    """Boundary-inclusive P1 matrix of  int w grad(phi_a) . grad(phi_b)  on an nx x ny grid."""
    w = _triangle_weights(weight, nx, ny)
    G = _gradients(float(hx), float(hy))
    ref = np.einsum("tad,tbd->tab", G, G) * (0.5 * hx * hy)
    return _scatter(nx, ny, w[..., None, None] * ref[None, None])


def mass_matrix(nx: int, ny: int, hx: float, hy: float, weight=1.0) -> sp.csr_matrix:
    """Boundary-inclusive P1 matrix of  int w phi_a phi_b."""
    w = _triangle_weights(weight, nx, ny)
    ref = _P1_MASS * (0.5 * hx * hy)
    return _scatter(nx, ny, w[..., None, None] * ref[None, None, None])


def p1_gradients(nx: int, ny: int, hx: float, hy: float, nodal: np.ndarray) -> np.ndarray:
    """(ny, nx, 2, 2) constant gradient of a nodal P1 function on every triangle."""
    conn = _connectivity(nx, ny)
    G = _gradients(float(hx), float(hy))
    vals = np.asarray(nodal)[conn]  # (ny, nx, 2, 3)
    return np.einsum("yxta,tad->yxtd", vals, G)


# global operators ------------------------------------------------------------


def restrict(mesh: TwoScaleMesh, K: sp.spmatrix) -> sp.csr_matrix:
    idx = mesh.interior_nodes
    return K[idx][:, idx].tocsr()


def assemble_stiffness_full(mesh: TwoScaleMesh, kappa) -> sp.csr_matrix:
    k = _as_kappa(kappa)
    return stiffness_matrix(mesh.nx, mesh.ny, mesh.hx, mesh.hy, k)


def assemble_stiffness(mesh: TwoScaleMesh, kappa) -> sp.csr_matrix:
    """Stiffness matrix A over the interior fine dofs (Dirichlet rows/cols removed)."""
    return restrict(mesh, assemble_stiffness_full(mesh, kappa))


def assemble_mass_full(mesh: TwoScaleMesh) -> sp.csr_matrix:
    return mass_matrix(mesh.nx, mesh.ny, mesh.hx, mesh.hy)


def assemble_mass(mesh: TwoScaleMesh) -> sp.csr_matrix:
    return restrict(mesh, assemble_mass_full(mesh))


def energy_factor(mesh: TwoScaleMesh, kappa) -> sp.csr_matrix:
    """Sparse B with A = B^T B: rows are sqrt(kappa * area) weighted triangle gradients."""
    k = _triangle_weights(_as_kappa(kappa), mesh.nx, mesh.ny)
    conn = _connectivity(mesh.nx, mesh.ny)
    G = _gradients(mesh.hx, mesh.hy)
    scale = np.sqrt(k * 0.5 * mesh.hx * mesh.hy)  # (ny, nx, 2)
    n_tri = mesh.nx * mesh.ny * 2
    # entry (tri, d) x node_a = scale * G[t, a, d]
    vals = scale[..., None, None] * G[None, None]  # (ny, nx, 2, 3, 2)
    rows = (np.arange(n_tri).reshape(mesh.ny, mesh.nx, 2)[..., None, None] * 2
            + np.arange(2)[None, None, None, None, :])
    rows = np.broadcast_to(rows, vals.shape)
    cols = np.broadcast_to(conn[..., :, None], vals.shape)
    B = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(2 * n_tri, mesh.n_nodes)).tocsc()
    return B[:, mesh.interior_nodes].tocsr()


def energy_norm(A, v) -> float | np.ndarray:
    """sqrt(v^T A v); rows of a 2-D ``v`` are treated as separate vectors."""
    v = np.asarray(v)
    if v.ndim == 1:
        return float(np.sqrt(max(v @ (A @ v), 0.0)))
    return np.sqrt(np.maximum(np.einsum("ij,ij->i", v, (A @ v.T).T), 0.0))


def l2_norm(M, v) -> float | np.ndarray:
    return energy_norm(M, v)


# time stepping ---------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigError(f"need at least one time step, got {self.n_steps}")

    @classmethod
    def from_final_time(cls, dt: float, T: float) -> "TimeGrid":
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
            raise ConfigError(f"final time T={T} is not an integer multiple of dt={dt}")
        return cls(float(dt), n)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class Trajectory:
    """Coefficient vectors c^0..c^{N_t} over the interior fine dofs (rows)."""

    timegrid: TimeGrid
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.states.shape[0] != self.timegrid.n_steps + 1:
            raise ValueError("trajectory length does not match its time grid")

    @property
    def times(self) -> np.ndarray:
        return self.timegrid.times

    def __len__(self) -> int:
        return self.states.shape[0]


SourceFn = Union[float, Callable[[float, np.ndarray, np.ndarray], np.ndarray]]
InitialFn = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class Forcing:
    """Source f(t, x, y) and initial state g(x, y); numbers mean constants.

    Functionals are formed from nodal interpolants, F = M_full I_h f restricted to
    the interior dofs, which is exact for constant data.
    """

    f: SourceFn = 1.0
    g: InitialFn = 0.0

    def _nodal_f(self, mesh: TwoScaleMesh, t: float) -> np.ndarray:
        if callable(self.f):
            x, y = mesh.node_coords.T
            return np.broadcast_to(np.asarray(self.f(t, x, y), dtype=float), (mesh.n_nodes,))
        return np.full(mesh.n_nodes, float(self.f))

    def load(self, mesh: TwoScaleMesh, t: float) -> np.ndarray:
        return (_mass_full_cached(mesh) @ self._nodal_f(mesh, t))[mesh.interior_nodes]

    def loads(self, mesh: TwoScaleMesh, timegrid: TimeGrid) -> np.ndarray:
        """(n_steps + 1, m) load vectors at every t_n; row 0 is F at t = 0."""
        if not callable(self.f):
            row = self.load(mesh, 0.0)
            return np.broadcast_to(row, (timegrid.n_steps + 1, mesh.m))
        return np.stack([self.load(mesh, t) for t in timegrid.times])

    def initial_rhs(self, mesh: TwoScaleMesh) -> np.ndarray:
        """G with G_i = <g, gamma_i>."""
        if callable(self.g):
            x, y = mesh.node_coords.T
            gn = np.broadcast_to(np.asarray(self.g(x, y), dtype=float), (mesh.n_nodes,))
        else:
            if float(self.g) == 0.0:
                return np.zeros(mesh.m)
            gn = np.full(mesh.n_nodes, float(self.g))
        return (_mass_full_cached(mesh) @ gn)[mesh.interior_nodes]


@lru_cache(maxsize=16)
def _mass_full_cached(mesh: TwoScaleMesh) -> sp.csr_matrix:
    return assemble_mass_full(mesh)


class SparseSPDSolver:
    """Factor-once solver for a sparse SPD matrix; CG above ``direct_limit`` dofs."""

    def __init__(self, K: sp.spmatrix, direct_limit: int = DIRECT_SOLVE_LIMIT, rtol: float = 1e-10,
                 maxiter: int | None = None):
        self.K = sp.csc_matrix(K)
        self.n = self.K.shape[0]
        self.rtol = rtol
        self.maxiter = maxiter or 10 * self.n
        self.direct = self.n <= direct_limit
        if self.direct:
            try:
                self._lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise NumericalError(f"sparse factorization failed: {exc}") from exc
        else:
            d = self.K.diagonal()
            self._prec = spla.LinearOperator(self.K.shape, matvec=lambda x: x / d)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.direct:
            return self._lu.solve(np.asarray(b, dtype=float))
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        x, info = spla.cg(self.K, b, rtol=self.rtol, atol=0.0, maxiter=self.maxiter,
                          M=self._prec, callback=count)
        if info != 0:
            res = np.linalg.norm(self.K @ x - b) / max(np.linalg.norm(b), 1e-300)
            raise NumericalError(f"CG did not converge after {iters} iterations "
                                 f"(relative residual {res:.3e})")
        return x


def solve_fine_trajectory(A, M, loads: np.ndarray, G: np.ndarray, timegrid: TimeGrid,
                          direct_limit: int = DIRECT_SOLVE_LIMIT, rtol: float = 1e-10) -> Trajectory:
    """Implicit Euler: (M + dt A) c^n = M c^{n-1} + dt F^n, with M c^0 = G."""
    dt = timegrid.dt
    m = A.shape[0]
    loads = np.asarray(loads)
    states = np.empty((timegrid.n_steps + 1, m))
    if np.any(G):
        states[0] = SparseSPDSolver(M, direct_limit, rtol).solve(G)
    else:
        states[0] = 0.0
    step = SparseSPDSolver(M + dt * A, direct_limit, rtol)
    for n in range(1, timegrid.n_steps + 1):
        states[n] = step.solve(M @ states[n - 1] + dt * loads[n])
    return Trajectory(timegrid, states)


def estimate_poincare_Q(A, M, tol: float = 1e-8, maxiter: int = 20_000) -> float:
    """Q = 1 / lambda_min of A v = lambda M v, by inverse iteration."""
    solver = SparseSPDSolver(A)
    v = np.ones(A.shape[0])
    v /= np.sqrt(v @ (M @ v))
    lam_prev = np.inf
    delta_prev = None
    for it in range(maxiter):
        w = solver.solve(M @ v)
        v = w / np.sqrt(w @ (M @ w))
        lam = float(v @ (A @ v))
        delta = abs(lam_prev - lam)
        if np.isfinite(delta):
            # geometric tail estimate of the remaining eigenvalue error
            rho = min(delta / delta_prev, 0.999) if delta_prev else 0.5
            if delta * rho / (1.0 - rho) <= tol * lam:
                log.debug("inverse iteration converged in %d steps, lambda_min=%.12g", it + 1, lam)
                return 1.0 / lam
            delta_prev = delta
        lam_prev = lam
    raise NumericalError(f"inverse iteration for the Poincare constant did not converge in {maxiter} steps")

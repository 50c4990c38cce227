"""Offline multiscale space: local snapshots, partition of unity, spectral basis.

All local constructions live on the fine-cell window of a coarse
neighborhood D_i and are expressed in its local row-major node numbering;
``to_dofs`` maps them back to global interior-dof vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import (
    PermeabilityField,
    TimeGrid,
    Trajectory,
    _as_kappa,
    mass_matrix,
    p1_gradients,
    stiffness_matrix,
)
from .errors import ConfigError, NumericalError
from .grid import CoarseNeighborhood, TwoScaleMesh


def _harmonic_extension(K, interior: np.ndarray, boundary: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Solve K_II u_I = -K_IB data column-wise; returns full local nodal values."""
    K = K.tocsc()
    n = K.shape[0]
    data = np.atleast_2d(np.asarray(data, dtype=float).T).T
    out = np.zeros((n, data.shape[1]))
    out[boundary] = data
    if len(interior):
        KII = K[interior][:, interior].tocsc()
        rhs = -(K[interior][:, boundary] @ data)
        try:
            lu = spla.splu(KII)
        except RuntimeError as exc:
            raise NumericalError(f"singular local system: {exc}") from exc
        out[interior] = lu.solve(np.asarray(rhs))
    return out


def to_dofs(mesh: TwoScaleMesh, nodes: np.ndarray, local: np.ndarray) -> np.ndarray:
    """Scatter local nodal values (rows = local nodes) into interior-dof vectors."""
    local = np.asarray(local)
    dof = mesh.dof_of_node[nodes]
    keep = dof >= 0
    out = np.zeros((mesh.m,) + local.shape[1:])
    out[dof[keep]] = local[keep]
    return out


# snapshots -------------------------------------------------------------------


@dataclass(frozen=True)
class LocalSnapshotSpace:
    """Discrete kappa-harmonic extensions of nodal delta data on the boundary of D_i.

    ``values[:, j]`` is the snapshot for the j-th boundary node (in the order of
    ``neighborhood.boundary_local``), given at every local node of D_i.
    """

    neighborhood: CoarseNeighborhood
    values: np.ndarray = field(repr=False)
    stiffness: object = field(repr=False)  # local boundary-inclusive kappa stiffness

    @property
    def index(self) -> int:
        return self.neighborhood.index

    @property
    def L(self) -> int:
        return self.values.shape[1]


def _local_kappa(mesh: TwoScaleMesh, kappa: np.ndarray, nb: CoarseNeighborhood) -> np.ndarray:
    return mesh.cell_window(kappa, nb.i0, nb.i1, nb.j0, nb.j1)


def compute_snapshots(mesh: TwoScaleMesh, kappa, i: int) -> LocalSnapshotSpace:
    k = _as_kappa(kappa)
    nb = mesh.neighborhood(i)
    wx, wy = nb.shape
    K = stiffness_matrix(wx, wy, mesh.hx, mesh.hy, _local_kappa(mesh, k, nb))
    values = _harmonic_extension(K, nb.interior_local, nb.boundary_local, np.eye(nb.L))
    return LocalSnapshotSpace(nb, values, K)


# partition of unity ----------------------------------------------------------


def _hat_on_element_boundary(mesh: TwoScaleMesh, corner: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear hat of one corner (0=SW, 1=SE, 2=NW, 3=NE) sampled on a coarse element.

    Returns (perimeter local nodes, interior local nodes, hat values on the perimeter).
    """
    wx, wy = mesh.cx + 1, mesh.cy + 1
    jj, ii = np.divmod(np.arange(wx * wy), wx)
    xi, eta = ii / mesh.cx, jj / mesh.cy
    a, b = corner % 2, corner // 2
    hat = (xi if a else 1.0 - xi) * (eta if b else 1.0 - eta)
    edge = (ii == 0) | (ii == wx - 1) | (jj == 0) | (jj == wy - 1)
    return np.flatnonzero(edge), np.flatnonzero(~edge), hat[edge]


def _element_pou(mesh: TwoScaleMesh, k: np.ndarray, e: int) -> np.ndarray:
    """(local nodes of element e, 4) harmonic liftings of the four corner hats."""
    EJ, EI = divmod(e, mesh.NX)
    i0, j0 = EI * mesh.cx, EJ * mesh.cy
    K = stiffness_matrix(mesh.cx, mesh.cy, mesh.hx, mesh.hy,
                         mesh.cell_window(k, i0, i0 + mesh.cx, j0, j0 + mesh.cy))
    bnd, inner, _ = _hat_on_element_boundary(mesh, 0)
    data = np.column_stack([_hat_on_element_boundary(mesh, c)[2] for c in range(4)])
    return _harmonic_extension(K, inner, bnd, data)


@dataclass(frozen=True)
class PartitionOfUnity:
    """chi_i for every interior coarse node, stored on the local nodes of D_i."""

    mesh: TwoScaleMesh
    local: tuple[np.ndarray, ...] = field(repr=False)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.local[i]

    def __len__(self) -> int:
        return len(self.local)

    def global_vector(self, i: int) -> np.ndarray:
        """chi_i at every fine node (zero outside D_i)."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.mesh.neighborhood(i).nodes] = self.local[i]
        return out

    @cached_property
    def gradient_energy(self) -> np.ndarray:
        """(ny, nx, 2) per-triangle values of sum_i |grad chi_i|^2."""
        mesh = self.mesh
        acc = np.zeros((mesh.ny, mesh.nx, 2))
        for i, chi in enumerate(self.local):
            nb = mesh.neighborhood(i)
            wx, wy = nb.shape
            g = p1_gradients(wx, wy, mesh.hx, mesh.hy, chi)
            acc[nb.j0:nb.j1, nb.i0:nb.i1] += np.sum(g * g, axis=-1)
        return acc


def _place_element_pieces(mesh: TwoScaleMesh, i: int, pieces: dict[int, np.ndarray]) -> np.ndarray:
    I, J = mesh.coarse_node(i)
    nb = mesh.neighborhood(i)
    wx = nb.shape[0] + 1
    chi = np.zeros(len(nb.nodes))
    ejj, eii = np.divmod(np.arange((mesh.cx + 1) * (mesh.cy + 1)), mesh.cx + 1)
    for e in nb.elements:
        EJ, EI = divmod(e, mesh.NX)
        corner = (I - EI) + 2 * (J - EJ)  # position of x_i within element e
        oi, oj = (EI - (I - 1)) * mesh.cx, (EJ - (J - 1)) * mesh.cy
        chi[(ejj + oj) * wx + (eii + oi)] = pieces[e][:, corner]
    return chi


def compute_pou(mesh: TwoScaleMesh, kappa, i: int) -> np.ndarray:
    """chi_i as a fine-node vector over the whole grid."""
    k = _as_kappa(kappa)
    nb = mesh.neighborhood(i)
    pieces = {e: _element_pou(mesh, k, e) for e in nb.elements}
    out = np.zeros(mesh.n_nodes)
    out[nb.nodes] = _place_element_pieces(mesh, i, pieces)
    return out


def partition_of_unity(mesh: TwoScaleMesh, kappa) -> PartitionOfUnity:
    k = _as_kappa(kappa)
    pieces = {e: _element_pou(mesh, k, e) for e in range(mesh.n_elements)}
    return PartitionOfUnity(mesh, tuple(_place_element_pieces(mesh, i, pieces) for i in range(mesh.n_in)))


def kappa_hat(mesh: TwoScaleMesh, kappa, pou: PartitionOfUnity) -> np.ndarray:
    """Per-triangle spectral weight kappa * H^2 * sum_i |grad chi_i|^2."""
    k = _as_kappa(kappa)
    return k[:, :, None] * mesh.H ** 2 * pou.gradient_energy


# spectral selection ----------------------------------------------------------


@dataclass(frozen=True)
class LocalSpectralBasis:
    index: int
    eigenvalues: np.ndarray          # all L_i, ascending
    eigenvectors: np.ndarray = field(repr=False)  # snapshot coordinates, kappa_hat-orthonormal
    functions: np.ndarray = field(repr=False)     # (local nodes, l_i): chi_i * (Psi w_j)
    S_a: np.ndarray = field(repr=False)
    S_hat: np.ndarray = field(repr=False)


def _range_restricted_eigh(S_a: np.ndarray, S_hat: np.ndarray, rtol: float = 1e-12):
    """Generalized eigenpairs of (S_a, S_hat) on the range of S_hat.

    Directions with zero kappa-hat mass (e.g. a snapshot living only on a domain
    corner triangle, where every chi vanishes) carry an infinite eigenvalue and
    are dropped; the returned vectors are S_hat-orthonormal.
    """
    d, U = np.linalg.eigh(S_hat)
    keep = d > rtol * d.max()
    if keep.all():
        try:
            return sla.eigh(S_a, S_hat)
        except np.linalg.LinAlgError:
            pass
    T = U[:, keep] / np.sqrt(d[keep])
    lam, Y = np.linalg.eigh(T.T @ S_a @ T)
    W = T @ Y
    # the congruence loses a few digits of S_hat-orthonormality; restore it
    G = W.T @ S_hat @ W
    Lc = np.linalg.cholesky(0.5 * (G + G.T))
    return lam, sla.solve_triangular(Lc, W.T, lower=True).T


def _fix_signs(W: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(W), axis=0)
    s = np.sign(W[idx, np.arange(W.shape[1])])
    s[s == 0] = 1.0
    return W * s


def spectral_select(mesh: TwoScaleMesh, snapshots: LocalSnapshotSpace, khat: np.ndarray,
                    chi_local: np.ndarray, l: int) -> LocalSpectralBasis:
    """Solve S_a w = lambda S_hat w in snapshot coordinates and keep the first ``l`` modes."""
    L = snapshots.L
    if not 1 <= l <= L:
        raise ConfigError(f"neighborhood {snapshots.index}: requested {l} basis functions, "
                          f"but only {L} snapshots are available")
    nb = snapshots.neighborhood
    wx, wy = nb.shape
    Psi = snapshots.values
    Mhat = mass_matrix(wx, wy, mesh.hx, mesh.hy, mesh.cell_window(khat, nb.i0, nb.i1, nb.j0, nb.j1))
    S_a = Psi.T @ (snapshots.stiffness @ Psi)
    S_hat = Psi.T @ (Mhat @ Psi)
    S_a = 0.5 * (S_a + S_a.T)
    S_hat = 0.5 * (S_hat + S_hat.T)
    lam, W = _range_restricted_eigh(S_a, S_hat)
    if len(lam) < l:
        raise NumericalError(f"neighborhood {nb.index}: kappa-hat mass matrix has rank {len(lam)} < {l}")
    lam = np.maximum(lam, 0.0)
    W = _fix_signs(W)
    funcs = chi_local[:, None] * (Psi @ W[:, :l])
    return LocalSpectralBasis(nb.index, lam, W, funcs, S_a, S_hat)


# multiscale space ------------------------------------------------------------


@dataclass(frozen=True)
class ReducedSpace:
    """Basis stored as interior-dof coefficient columns.

    ``owners[k]`` is the neighborhood supporting column k (-1 when global) and
    ``kinds[k]`` tags it as 'spectral', 'residual' or 'pod'.
    """

    basis: np.ndarray = field(repr=False)
    owners: np.ndarray = field(repr=False)
    kinds: tuple[str, ...] = field(repr=False)
    counts: tuple[int, ...] = ()
    eigenvalues: tuple[np.ndarray, ...] = field(default=(), repr=False)
    Lambda: float = float("nan")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def n_spectral(self) -> int:
        return sum(k == "spectral" for k in self.kinds)

    @property
    def n_residual(self) -> int:
        return sum(k == "residual" for k in self.kinds)

    def append(self, columns: np.ndarray, owners, kind: str = "residual") -> "ReducedSpace":
        columns = np.asarray(columns).reshape(self.basis.shape[0], -1)
        owners = np.atleast_1d(np.asarray(owners, dtype=np.int64))
        return replace(self,
                       basis=np.hstack([self.basis, columns]),
                       owners=np.concatenate([self.owners, owners]),
                       kinds=self.kinds + (kind,) * columns.shape[1])

    @classmethod
    def identity(cls, m: int) -> "ReducedSpace":
        return cls(np.eye(m), np.full(m, -1), ("fine",) * m)


def _normalize_counts(mesh: TwoScaleMesh, counts) -> list[int]:
    if np.isscalar(counts):
        return [int(counts)] * mesh.n_in
    counts = [int(c) for c in counts]
    if len(counts) != mesh.n_in:
        raise ConfigError(f"expected {mesh.n_in} per-neighborhood counts, got {len(counts)}")
    return counts


def assemble_multiscale_space(mesh: TwoScaleMesh, kappa, counts, A=None) -> ReducedSpace:
    """Offline stage 1: concatenate chi_i * phi_j^(i), j < l_i, over all neighborhoods."""
    k = _as_kappa(kappa)
    counts = _normalize_counts(mesh, counts)
    pou = partition_of_unity(mesh, k)
    khat = kappa_hat(mesh, k, pou)
    cols, owners, eigs = [], [], []
    Lambda = np.inf
    for i, l in enumerate(counts):
        snaps = compute_snapshots(mesh, k, i)
        sb = spectral_select(mesh, snaps, khat, pou[i], l)
        nodes = snaps.neighborhood.nodes
        cols.append(to_dofs(mesh, nodes, sb.functions))
        owners += [i] * l
        eigs.append(sb.eigenvalues)
        if l < len(sb.eigenvalues):
            Lambda = min(Lambda, sb.eigenvalues[l])
    V = np.hstack(cols)
    space = ReducedSpace(V, np.asarray(owners), ("spectral",) * V.shape[1], tuple(counts), tuple(eigs),
                         float(Lambda))
    if A is not None:
        check_gram(space, A)
    return space


def check_gram(space: ReducedSpace, A) -> None:
    """Raise if V^T A V is not positive definite, naming the first offending neighborhood."""
    V = space.basis
    if _gram_definite(V, A):
        return
    for i in np.unique(space.owners):
        if not _gram_definite(V[:, space.owners == i], A):
            raise NumericalError(f"rank-deficient multiscale basis in neighborhood {i}")
    raise NumericalError("rank-deficient multiscale basis (dependence across neighborhoods)")


def _gram_definite(V: np.ndarray, A, rtol: float = 1e-12) -> bool:
    """Cholesky of the diagonally scaled Gram matrix with a pivot floor."""
    G = V.T @ (A @ V)
    d = np.sqrt(np.diag(G))
    if np.any(d <= 0):
        return False
    Gn = G / np.outer(d, d)
    try:
        Lc = sla.cholesky(0.5 * (Gn + Gn.T), lower=True)
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(Lc)) ** 2 > rtol)


# reduced Galerkin time stepping ----------------------------------------------


class ReducedStepper:
    """Dense Galerkin projection of the implicit-Euler step onto span(V)."""

    def __init__(self, V: np.ndarray, A, M, dt: float):
        self.V = np.asarray(V)
        self.dt = dt
        AV = A @ self.V
        MV = M @ self.V
        self.M = M
        Ar = self.V.T @ AV
        Mr = self.V.T @ MV
        self.Ar = 0.5 * (Ar + Ar.T)
        self.Mr = 0.5 * (Mr + Mr.T)
        try:
            self._step = sla.cho_factor(self.Mr + dt * self.Ar)
            self._mass = sla.cho_factor(self.Mr)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"reduced system factorization failed (dim {self.V.shape[1]}): {exc}") from exc

    def initial(self, G: np.ndarray) -> np.ndarray:
        if not np.any(G):
            return np.zeros(self.V.shape[1])
        return sla.cho_solve(self._mass, self.V.T @ G)

    def step_reduced(self, U_prev: np.ndarray, VtF: np.ndarray) -> np.ndarray:
        # inputs are finite by construction; skipping the check matters for small systems
        return sla.cho_solve(self._step, self.Mr @ U_prev + self.dt * VtF, check_finite=False)

    def step_from_fine(self, u_prev: np.ndarray, F: np.ndarray) -> np.ndarray:
        """One step with an arbitrary fine previous state; returns reduced coefficients."""
        rhs = self.V.T @ (self.M @ u_prev) + self.dt * (self.V.T @ F)
        return sla.cho_solve(self._step, rhs)

    def run(self, loads: np.ndarray, G: np.ndarray, timegrid: TimeGrid) -> tuple[Trajectory, np.ndarray]:
        n = timegrid.n_steps
        U = np.empty((n + 1, self.V.shape[1]))
        U[0] = self.initial(G)
        VtF = np.asarray(loads) @ self.V
        for s in range(1, n + 1):
            U[s] = self.step_reduced(U[s - 1], VtF[s])
        return Trajectory(timegrid, U @ self.V.T), U


def solve_reduced_trajectory(V: np.ndarray, A, M, loads: np.ndarray, G: np.ndarray,
                             timegrid: TimeGrid) -> Trajectory:
    return ReducedStepper(V, A, M, timegrid.dt).run(loads, G, timegrid)[0]


def solve_coarse_trajectory(space: ReducedSpace, A, M, loads: np.ndarray, G: np.ndarray,
                            timegrid: TimeGrid) -> Trajectory:
    """GMsFEM solution of the implicit-Euler system, projected back to fine dofs."""
    return solve_reduced_trajectory(space.basis, A, M, loads, G, timegrid)


__all__ = [
    "LocalSnapshotSpace", "PartitionOfUnity", "LocalSpectralBasis", "ReducedSpace", "ReducedStepper",
    "compute_snapshots", "compute_pou", "partition_of_unity", "kappa_hat", "spectral_select",
    "assemble_multiscale_space", "check_gram", "solve_coarse_trajectory", "solve_reduced_trajectory",
    "to_dofs", "PermeabilityField",
]

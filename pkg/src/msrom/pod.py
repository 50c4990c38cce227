"""Global solution snapshots and POD in the energy inner product.

The eigenproblem (Y1 Y1^T A + Q^2 Y2 Y2^T A) phi = lambda phi is solved by the
method of snapshots: with Z = [Y1 | Q Y2] its nonzero spectrum is that of
Z^T A Z.  Using the factor A = B^T B, the singular values s of B Z give
lambda = s^2 with relative accuracy even deep in the tail.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .assembly import TimeGrid, Trajectory
from .errors import ConfigError, NumericalError
from .gmsfem import ReducedStepper
from .randfield import write_raster

RANK_RTOL = 1e-12


@dataclass(frozen=True)
class SnapshotBank:
    """Y1 holds states c^j (j >= 1) and Y2 the quotients (c^j - c^{j-1}) / dt, as columns."""

    Y1: np.ndarray = field(repr=False)
    Y2: np.ndarray = field(repr=False)
    dt: float
    Q: float
    n_per_trajectory: int
    sample_ids: tuple = ()

    @property
    def n_columns(self) -> int:
        return self.Y1.shape[1]

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([self.Y1, self.Q * self.Y2])


def build_snapshot_bank(trajectories: Sequence[Trajectory], dt: float, Q: float,
                        sample_ids: Sequence | None = None) -> SnapshotBank:
    if not trajectories:
        raise ConfigError("snapshot bank needs at least one trajectory")
    tg = trajectories[0].timegrid
    for tr in trajectories:
        if tr.timegrid != tg or abs(tg.dt - dt) > 1e-15 * dt:
            raise ConfigError("all trajectories in a snapshot bank must share one time grid")
    Y1 = np.hstack([tr.states[1:].T for tr in trajectories])
    Y2 = np.hstack([np.diff(tr.states, axis=0).T / dt for tr in trajectories])
    ids = tuple(sample_ids) if sample_ids is not None else tuple(range(len(trajectories)))
    return SnapshotBank(Y1, Y2, float(dt), float(Q), tg.n_steps, ids)


@dataclass(frozen=True)
class PODSpace:
    basis: np.ndarray = field(repr=False)   # (m, l), A-orthonormal columns
    eigenvalues: np.ndarray                 # full spectrum, descending
    Q: float = float("nan")

    @property
    def l(self) -> int:
        return self.basis.shape[1]

    @property
    def rank(self) -> int:
        lam = self.eigenvalues
        return int(np.sum(lam > RANK_RTOL * lam[0])) if len(lam) and lam[0] > 0 else 0

    def tail(self, l: int | None = None) -> float:
        """sum_{p > l} lambda_p."""
        l = self.l if l is None else l
        return float(self.eigenvalues[l:].sum())

    def truncate(self, l: int) -> "PODSpace":
        if l > self.l:
            raise ConfigError(f"cannot truncate a POD space of size {self.l} to {l}")
        return PODSpace(self.basis[:, :l], self.eigenvalues, self.Q)

    def export(self, path, mesh) -> None:
        """Write the basis as raster records over the interior-node grid plus a JSON sidecar."""
        path = Path(path)
        shape = (mesh.ny - 1, mesh.nx - 1)
        write_raster(path, [c.reshape(shape) for c in self.basis.T])
        meta = {"schema": "msrom-pod v1", "l": self.l, "Q": self.Q,
                "eigenvalues": [float(v) for v in self.eigenvalues],
                "record_shape": [mesh.nx - 1, mesh.ny - 1]}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def compute_pod(bank: SnapshotBank, A, l: int, energy_factor=None) -> PODSpace:
    """Top-``l`` A-orthonormal POD modes of the bank.

    ``energy_factor`` is B with A = B^T B (see assembly.energy_factor); without
    it the small Gram matrix Z^T A Z is eigendecomposed instead.
    """
    Z = bank.Z
    if energy_factor is not None:
        _, s, Wt = sla.svd(np.asarray(energy_factor @ Z), full_matrices=False, lapack_driver="gesdd")
        lam = s ** 2
        W = Wt.T
    else:
        Gm = Z.T @ (A @ Z)
        lam, W = np.linalg.eigh(0.5 * (Gm + Gm.T))
        lam, W = np.maximum(lam[::-1], 0.0), W[:, ::-1]
    if l < 1:
        raise ConfigError(f"POD size must be >= 1, got {l}")
    rank = int(np.sum(lam > RANK_RTOL * lam[0])) if lam.size and lam[0] > 0 else 0
    if l > rank:
        raise NumericalError(f"requested {l} POD modes but the snapshot bank has numerical rank {rank}")
    Psi = Z @ (W[:, :l] / np.sqrt(lam[:l]))
    # re-orthonormalize in A to clean rounding (modes are already A-orthonormal in exact arithmetic)
    Gp = Psi.T @ (A @ Psi)
    Lc = np.linalg.cholesky(0.5 * (Gp + Gp.T))
    Psi = sla.solve_triangular(Lc, Psi.T, lower=True).T
    idx = np.argmax(np.abs(Psi), axis=0)
    Psi = Psi * np.sign(Psi[idx, np.arange(l)])
    return PODSpace(Psi, lam, bank.Q)


def pod_project(pod: PODSpace, A, y: np.ndarray) -> np.ndarray:
    """A-orthogonal projection S^l y = sum_i A(y, psi_i) psi_i (columns of a 2-D y)."""
    return pod.basis @ (pod.basis.T @ (A @ y))


def pod_error(bank: SnapshotBank, pod: PODSpace, A, l: int | None = None) -> float:
    """sum_j ||y1_j - S y1_j||_A^2 + Q^2 sum_j ||y2_j - S y2_j||_A^2."""
    P = pod if l is None else pod.truncate(l)
    Z = bank.Z
    R = Z - pod_project(P, A, Z)
    return float(np.einsum("ij,ij->", R, A @ R))


def solve_pod_trajectory(pod: PODSpace, A, M, loads: np.ndarray, G: np.ndarray,
                         timegrid: TimeGrid) -> Trajectory:
    """Galerkin solve in span(psi_1..psi_l) with the sample's own stiffness A."""
    return ReducedStepper(pod.basis, A, M, timegrid.dt).run(loads, G, timegrid)[0]

"""Residual-driven basis functions and the adaptive offline enrichment loops.

The local residual of the implicit-Euler step at level n,

    R_i(v) = <u^{n-1}/dt + f^n, v> - A(u^n, v) - <u^n/dt, v>,   v in V_i,

is represented on V_i = interior fine dofs of D_i by its Riesz representative
beta (A beta = r on D_i), so ||R_i|| = ||beta||_A.  The global indicator is
||R||^2 = sum_i ||R_i||^2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import TimeGrid, Trajectory
from .errors import ConfigError, NumericalError
from .gmsfem import ReducedSpace, ReducedStepper
from .grid import TwoScaleMesh

log = logging.getLogger(__name__)

STRATEGIES = ("reset", "accumulate")


@dataclass(frozen=True)
class EnrichmentConfig:
    theta: float = 1.0
    tol: float = 1e-10
    max_levels: int = 3
    strategy: str = "reset"
    steps: tuple[int, ...] = (1,)
    non_overlap: bool = False

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.tol > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tol}")
        if self.max_levels < 0:
            raise ConfigError(f"max_levels must be >= 0, got {self.max_levels}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown enrichment strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if any(int(s) < 1 for s in self.steps):
            raise ConfigError(f"enrichment steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class ResidualReport:
    step: int
    level: int
    local_norms: np.ndarray = field(repr=False)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.local_norms ** 2)))


def residual_vector(A, M, u: np.ndarray, u_prev: np.ndarray, F: np.ndarray, dt: float) -> np.ndarray:
    """Dof vector r with R(gamma_j) = r_j for the step u_prev -> u."""
    return M @ (u_prev - u) / dt + F - A @ u


class LocalResidualSolver:
    """Cached sparse factorizations of A restricted to the interior dofs of each D_i."""

    def __init__(self, mesh: TwoScaleMesh, A):
        self.mesh = mesh
        self.A = A.tocsr()
        self._dofs: dict[int, np.ndarray] = {}
        self._lu: dict[int, object] = {}

    def dofs(self, i: int) -> np.ndarray:
        if i not in self._dofs:
            nb = self.mesh.neighborhood(i)
            self._dofs[i] = self.mesh.dof_of_node[nb.interior_nodes]
        return self._dofs[i]

    def _factor(self, i: int):
        if i not in self._lu:
            d = self.dofs(i)
            try:
                self._lu[i] = spla.splu(self.A[d][:, d].tocsc())
            except RuntimeError as exc:
                raise NumericalError(f"local residual solve failed in neighborhood {i}: {exc}") from exc
        return self._lu[i]

    def beta(self, i: int, r: np.ndarray) -> tuple[np.ndarray, float]:
        """Riesz representative of R_i, as a global dof vector, and ||beta||_A."""
        d = self.dofs(i)
        rl = r[d]
        b = self._factor(i).solve(rl)
        out = np.zeros(self.mesh.m)
        out[d] = b
        return out, float(np.sqrt(max(rl @ b, 0.0)))

    def local_norms(self, r: np.ndarray) -> np.ndarray:
        return np.array([self.beta(i, r)[1] for i in range(self.mesh.n_in)])


def local_residual_basis(mesh: TwoScaleMesh, A, M, u: np.ndarray, u_prev: np.ndarray, F: np.ndarray,
                         dt: float, i: int) -> tuple[np.ndarray, float]:
    """beta in V_i with A(beta, v) = R_i(v) for all v in V_i, and its energy norm."""
    r = residual_vector(A, M, u, u_prev, F, dt)
    return LocalResidualSolver(mesh, A).beta(i, r)


def _overlaps(mesh: TwoScaleMesh, i: int, j: int) -> bool:
    (I1, J1), (I2, J2) = mesh.coarse_node(i), mesh.coarse_node(j)
    return abs(I1 - I2) <= 1 and abs(J1 - J2) <= 1


def select_neighborhoods(local_norms, theta: float, mesh: TwoScaleMesh | None = None,
                         non_overlap: bool = False) -> list[int]:
    """Shortest prefix of neighborhoods (largest ||R_i||^2 first) reaching theta^2 ||R||^2."""
    r2 = np.asarray(local_norms, dtype=float) ** 2
    if theta <= 0 or r2.sum() == 0:
        return []
    order = np.lexsort((np.arange(len(r2)), -r2))
    order = order[r2[order] > 0]
    if theta >= 1:
        chosen = order
    else:
        csum = np.cumsum(r2[order])
        k = int(np.searchsorted(csum, theta ** 2 * r2.sum() * (1 - 1e-12))) + 1
        chosen = order[:k]
    chosen = [int(i) for i in chosen]
    if non_overlap:
        if mesh is None:
            raise ValueError("non-overlap filtering needs the mesh")
        kept: list[int] = []
        for i in chosen:
            if not any(_overlaps(mesh, i, j) for j in kept):
                kept.append(i)
        chosen = kept
    return chosen


@dataclass
class StepEnrichment:
    """What happened at one enrichment time step."""

    step: int
    reports: list[ResidualReport]
    added: list[list[int]]  # neighborhoods enriched at each level

    @property
    def levels(self) -> int:
        return len(self.added)

    @property
    def residual_norms(self) -> list[float]:
        return [r.norm for r in self.reports]


def enrich_timestep(space: ReducedSpace, A, M, u_prev: np.ndarray, F: np.ndarray, dt: float,
                    config: EnrichmentConfig, local: LocalResidualSolver, step: int = 1,
                    max_levels: int | None = None) -> tuple[ReducedSpace, np.ndarray, StepEnrichment]:
    """Solve -> estimate -> select -> add beta, until ||R|| <= tol or the level cap.

    Returns the enriched space, the step solution in it (fine dofs) and a trace.
    """
    cap = config.max_levels if max_levels is None else max_levels
    mesh = local.mesh
    trace = StepEnrichment(step, [], [])
    while True:
        V = space.basis
        u = V @ ReducedStepper(V, A, M, dt).step_from_fine(u_prev, F)
        r = residual_vector(A, M, u, u_prev, F, dt)
        betas = [local.beta(i, r) for i in range(mesh.n_in)]
        norms = np.array([b[1] for b in betas])
        report = ResidualReport(step, trace.levels, norms)
        trace.reports.append(report)
        if report.norm <= config.tol or trace.levels >= cap:
            break
        chosen = select_neighborhoods(norms, config.theta, mesh, config.non_overlap)
        # drop numerically null representatives so the Gram matrix stays definite
        floor = 1e-10 * max(norms.max(), 1e-300)
        chosen = [i for i in chosen if norms[i] > floor]
        if not chosen:
            break
        cols = np.column_stack([betas[i][0] / norms[i] for i in chosen])
        space = space.append(cols, chosen, "residual")
        trace.added.append(chosen)
    if report.norm > config.tol and cap > 0:
        log.warning("step %d: level cap %d reached with ||R|| = %.3e > tau = %.3e",
                 step, cap, report.norm, config.tol)
    return space, u, trace


@dataclass
class EnrichmentResult:
    space: ReducedSpace
    trajectory: Trajectory
    trace: list[StepEnrichment]

    @property
    def added(self) -> int:
        return self.space.n_residual


def run_enrichment(mesh: TwoScaleMesh, stage1: ReducedSpace, A, M, loads: np.ndarray, G: np.ndarray,
                   timegrid: TimeGrid, config: EnrichmentConfig, stop_after_last: bool = False) -> EnrichmentResult:
    """March the coarse system in time, enriching at ``config.steps``.

    ``reset`` restarts every enrichment step from ``stage1``; ``accumulate``
    starts from the space reached at the previous step.  The returned space is
    the one in use after the final enrichment step.
    """
    local = LocalResidualSolver(mesh, A)
    space = stage1
    steps = sorted({int(s) for s in config.steps if int(s) <= timegrid.n_steps})
    last = steps[-1] if steps else 0
    n_end = last if stop_after_last else timegrid.n_steps
    stepper = ReducedStepper(space.basis, A, M, timegrid.dt)
    states = np.zeros((timegrid.n_steps + 1, mesh.m))
    states[0] = space.basis @ stepper.initial(G)
    trace: list[StepEnrichment] = []
    for n in range(1, n_end + 1):
        if n in steps:
            base = stage1 if config.strategy == "reset" else space
            space, states[n], st = enrich_timestep(base, A, M, states[n - 1], loads[n], timegrid.dt,
                                                   config, local, step=n)
            trace.append(st)
            stepper = ReducedStepper(space.basis, A, M, timegrid.dt)
        else:
            states[n] = space.basis @ stepper.step_from_fine(states[n - 1], loads[n])
    return EnrichmentResult(space, Trajectory(timegrid, states), trace)

"""Two-scale structured mesh: fine rectangular grid nested in a coarse partition.

Fine nodes are numbered row-major, ``node = j * (nx + 1) + i`` for column ``i``
and row ``j``; fine cells likewise, ``cell = j * nx + i``.  Interior coarse
nodes and coarse elements follow the same convention on the coarse lattice.
Neighborhood and coarse-node indices are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class CoarseNeighborhood:
    """Union D_i of the coarse elements sharing interior coarse node ``index``.

    Node index arrays hold global fine-node numbers in local row-major order
    (``nodes``) or in perimeter / interior subsets of it.
    """

    index: int
    elements: tuple[int, ...]
    # fine-cell window [i0, i1) x [j0, j1)
    i0: int
    i1: int
    j0: int
    j1: int
    nodes: np.ndarray = field(repr=False)
    boundary_local: np.ndarray = field(repr=False)
    interior_local: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        """(cells along x, cells along y)."""
        return self.i1 - self.i0, self.j1 - self.j0

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.nodes[self.boundary_local]

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior_local]

    @property
    def L(self) -> int:
        """Number of fine nodes on the neighborhood boundary."""
        return len(self.boundary_local)


@dataclass(frozen=True)
class TwoScaleMesh:
    lx: float
    ly: float
    nx: int
    ny: int
    NX: int
    NY: int

    def __post_init__(self):
        for name in ("nx", "ny", "NX", "NY"):
            if int(getattr(self, name)) < 2:
                raise ConfigError(f"{name} must be >= 2, got {getattr(self, name)}")
        if self.nx % self.NX:
            raise ConfigError(f"nx={self.nx} is not divisible by NX={self.NX}")
        if self.ny % self.NY:
            raise ConfigError(f"ny={self.ny} is not divisible by NY={self.NY}")
        if not (self.lx > 0 and self.ly > 0):
            raise ConfigError(f"domain extents must be positive, got ({self.lx}, {self.ly})")

    # fine grid -------------------------------------------------------------

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @cached_property
    def node_coords(self) -> np.ndarray:
        """(n_nodes, 2) array of fine-node coordinates."""
        x = np.linspace(0.0, self.lx, self.nx + 1)
        y = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_centers(self) -> np.ndarray:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        """Global numbers of fine nodes off the Dirichlet boundary (the dofs)."""
        J, I = np.mgrid[1:self.ny, 1:self.nx]
        return (J * (self.nx + 1) + I).ravel()

    @property
    def m(self) -> int:
        """Number of interior fine dofs."""
        return (self.nx - 1) * (self.ny - 1)

    @cached_property
    def dof_of_node(self) -> np.ndarray:
        """Map fine node -> dof index, -1 on the Dirichlet boundary."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        out[self.interior_nodes] = np.arange(self.m)
        return out

    # coarse grid -----------------------------------------------------------

    @property
    def cx(self) -> int:
        """Fine cells per coarse element along x."""
        return self.nx // self.NX

    @property
    def cy(self) -> int:
        return self.ny // self.NY

    @property
    def Hx(self) -> float:
        return self.lx / self.NX

    @property
    def Hy(self) -> float:
        return self.ly / self.NY

    @property
    def H(self) -> float:
        return max(self.Hx, self.Hy)

    @property
    def n_elements(self) -> int:
        return self.NX * self.NY

    @property
    def n_in(self) -> int:
        return (self.NX - 1) * (self.NY - 1)

    @cached_property
    def element_of_cell(self) -> np.ndarray:
        j, i = np.divmod(np.arange(self.n_cells), self.nx)
        return (j // self.cy) * self.NX + i // self.cx

    def cells_of_element(self, e: int) -> np.ndarray:
        EJ, EI = divmod(e, self.NX)
        j, i = np.mgrid[EJ * self.cy:(EJ + 1) * self.cy, EI * self.cx:(EI + 1) * self.cx]
        return (j * self.nx + i).ravel()

    def coarse_node(self, i: int) -> tuple[int, int]:
        """Lattice position (I, J) of interior coarse node ``i``."""
        if not 0 <= i < self.n_in:
            raise IndexError(f"coarse node index {i} out of range [0, {self.n_in})")
        J, I = divmod(i, self.NX - 1)
        return I + 1, J + 1

    def coarse_node_index(self, I: int, J: int) -> int | None:
        """Inverse of :meth:`coarse_node`; None for boundary lattice points."""
        if 1 <= I < self.NX and 1 <= J < self.NY:
            return (J - 1) * (self.NX - 1) + (I - 1)
        return None

    def coarse_node_xy(self, i: int) -> tuple[float, float]:
        I, J = self.coarse_node(i)
        return I * self.Hx, J * self.Hy

    def element_corners(self, e: int) -> list[int | None]:
        """Interior coarse node indices at the SW, SE, NW, NE corners of element e."""
        EJ, EI = divmod(e, self.NX)
        return [self.coarse_node_index(EI + a, EJ + b) for b in (0, 1) for a in (0, 1)]

    def fully_interior_elements(self) -> list[int]:
        return [e for e in range(self.n_elements) if None not in self.element_corners(e)]

    def neighborhood(self, i: int) -> CoarseNeighborhood:
        return _neighborhood(self, i)

    @cached_property
    def neighborhoods(self) -> tuple[CoarseNeighborhood, ...]:
        return tuple(_neighborhood(self, i) for i in range(self.n_in))

    def window_nodes(self, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """Global node numbers of the fine-cell window, local row-major order."""
        J, I = np.mgrid[j0:j1 + 1, i0:i1 + 1]
        return (J * (self.nx + 1) + I).ravel()

    def cell_window(self, values: np.ndarray, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """Slice a cell array (flat, (ny, nx) or (ny, nx, k)) to a fine-cell window."""
        arr = np.asarray(values)
        if arr.shape[:2] != (self.ny, self.nx):
            arr = arr.reshape((self.ny, self.nx) + arr.shape[1:])
        return arr[j0:j1, i0:i1]


def _neighborhood(mesh: TwoScaleMesh, i: int) -> CoarseNeighborhood:
    I, J = mesh.coarse_node(i)
    i0, i1 = (I - 1) * mesh.cx, (I + 1) * mesh.cx
    j0, j1 = (J - 1) * mesh.cy, (J + 1) * mesh.cy
    nodes = mesh.window_nodes(i0, i1, j0, j1)
    wx, wy = i1 - i0 + 1, j1 - j0 + 1
    jj, ii = np.divmod(np.arange(wx * wy), wx)
    on_edge = (ii == 0) | (ii == wx - 1) | (jj == 0) | (jj == wy - 1)
    elements = tuple((J + b) * mesh.NX + (I + a) for b in (-1, 0) for a in (-1, 0))
    return CoarseNeighborhood(
        index=i,
        elements=elements,
        i0=i0, i1=i1, j0=j0, j1=j1,
        nodes=nodes,
        boundary_local=np.flatnonzero(on_edge),
        interior_local=np.flatnonzero(~on_edge),
    )


def build_two_scale_mesh(domain, nx: int, ny: int, NX: int, NY: int) -> TwoScaleMesh:
    """Build the nested fine/coarse mesh on ``domain = (lx, ly)``."""
    lx, ly = domain
    return TwoScaleMesh(float(lx), float(ly), int(nx), int(ny), int(NX), int(NY))


def neighborhood_of(mesh: TwoScaleMesh, i: int) -> CoarseNeighborhood:
    return mesh.neighborhood(i)

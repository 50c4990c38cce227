import numpy as np
import pytest

from msrom.assembly import PermeabilityField
from msrom.grid import build_two_scale_mesh
from msrom.randfield import synth_high_contrast


def dense_p1_oracle(mesh, kappa):
    """Independent element-by-element assembly of full stiffness and mass (dense)."""
    n = mesh.n_nodes
    K = np.zeros((n, n))
    Mm = np.zeros((n, n))
    xy = mesh.node_coords
    for j in range(mesh.ny):
        for i in range(mesh.nx):
            sw = j * (mesh.nx + 1) + i
            se, nw, ne = sw + 1, sw + mesh.nx + 1, sw + mesh.nx + 2
            for tri in ((sw, se, ne), (sw, ne, nw)):
                P = xy[list(tri)]
                T = np.column_stack([np.ones(3), P])
                C = np.linalg.inv(T)          # columns: coefficients of each hat
                grads = C[1:].T               # (3, 2)
                area = 0.5 * abs(np.linalg.det(T))
                Ke = kappa[j, i] * area * grads @ grads.T
                Me = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
                for a in range(3):
                    for b in range(3):
                        K[tri[a], tri[b]] += Ke[a, b]
                        Mm[tri[a], tri[b]] += Me[a, b]
    return K, Mm


@pytest.fixture(scope="session")
def desk_mesh():
    return build_two_scale_mesh((1.0, 1.0), 20, 20, 4, 4)


@pytest.fixture(scope="session")
def desk_kappa(desk_mesh):
    return synth_high_contrast(desk_mesh, 1e4, seed=3)


@pytest.fixture(scope="session")
def checkerboard4():
    mesh = build_two_scale_mesh((1.0, 1.0), 4, 4, 2, 2)
    jj, ii = np.mgrid[0:4, 0:4]
    return mesh, PermeabilityField(np.where((ii + jj) % 2 == 0, 1.0, 1e4))


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

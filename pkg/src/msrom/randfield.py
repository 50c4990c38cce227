"""Log-permeability random fields: truncated KL expansion, raster I/O, synthetic fields.

The covariance of Y = log(kappa) is

    C(x, z) = sigma2 * exp(-(x1 - z1)^2 / eta1^2 - (x2 - z2)^2 / eta2^2),

discretized by Nystrom collocation at cell centers with cell-area weights.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter

from .assembly import PermeabilityField
from .errors import ConfigError
from .grid import TwoScaleMesh

log = logging.getLogger(__name__)

RASTER_MAGIC = "msrom-field"
RASTER_VERSION = "v1"
DENSE_KLE_CELLS = 3600
AUX_KLE_GRID = (60, 60)
MAX_DENSE_KLE = 12_000


@dataclass(frozen=True)
class CovarianceSpec:
    sigma2: float = 1.0
    eta1: float = 0.1
    eta2: float = 0.1

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ConfigError(f"correlation lengths must be positive, got ({self.eta1}, {self.eta2})")

    def __call__(self, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """Covariance matrix between point sets X (n, 2) and Z (k, 2)."""
        d1 = (X[:, None, 0] - Z[None, :, 0]) / self.eta1
        d2 = (X[:, None, 1] - Z[None, :, 1]) / self.eta2
        return self.sigma2 * np.exp(-d1 * d1 - d2 * d2)


@dataclass(frozen=True)
class KLEModel:
    """Truncated KL model of log-permeability on the fine cells.

    ``modes`` are (N, ny, nx) fine-cell values; ``kle_modes`` are the same modes
    on the grid where the eigenproblem was solved, orthonormal under
    ``kle_weights``.
    """

    mean_log: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)
    spec: CovarianceSpec
    kle_shape: tuple[int, int]
    kle_modes: np.ndarray = field(repr=False)
    kle_weights: np.ndarray = field(repr=False)
    spectrum: np.ndarray = field(repr=False)  # every discrete eigenvalue, descending

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def mean_field(self) -> PermeabilityField:
        return PermeabilityField(np.exp(self.mean_log))

    def log_field(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.n_modes,):
            raise ConfigError(f"expected {self.n_modes} KLE coefficients, got shape {xi.shape}")
        return self.mean_log + np.tensordot(xi * np.sqrt(self.eigenvalues), self.modes, axes=1)

    def covariance(self) -> np.ndarray:
        """Truncated covariance sum_i lambda_i f_i f_i^T between fine cells."""
        F = self.modes.reshape(self.n_modes, -1)
        return (F.T * self.eigenvalues) @ F

    def save(self, path) -> None:
        np.savez(path, mean_log=self.mean_log, eigenvalues=self.eigenvalues, modes=self.modes,
                 spec=np.array([self.spec.sigma2, self.spec.eta1, self.spec.eta2]),
                 kle_shape=np.array(self.kle_shape), kle_modes=self.kle_modes,
                 kle_weights=self.kle_weights, spectrum=self.spectrum)

    @classmethod
    def load(cls, path) -> "KLEModel":
        with np.load(path) as d:
            s = d["spec"]
            return cls(d["mean_log"], d["eigenvalues"], d["modes"], CovarianceSpec(*map(float, s)),
                       tuple(int(v) for v in d["kle_shape"]), d["kle_modes"], d["kle_weights"],
                       d["spectrum"])


@dataclass(frozen=True)
class SampleDraw:
    xi: np.ndarray
    seed: int
    index: int = 0


def _centers(lx: float, ly: float, kx: int, ky: int):
    x = (np.arange(kx) + 0.5) * lx / kx
    y = (np.arange(ky) + 0.5) * ly / ky
    return x, y


def build_kle(mesh: TwoScaleMesh, mean_log, spec: CovarianceSpec, n_modes: int | None = None,
              energy: float = 0.95, max_modes: int = 100, kle_grid: tuple[int, int] | None = None,
              dense_limit: int = MAX_DENSE_KLE) -> KLEModel:
    """Nystrom KLE on the fine cells (or an auxiliary grid), truncated by count or energy."""
    mean_log = np.broadcast_to(np.asarray(mean_log, dtype=float), (mesh.ny, mesh.nx)).copy()
    if kle_grid is None:
        kle_grid = (mesh.nx, mesh.ny) if mesh.n_cells <= DENSE_KLE_CELLS else AUX_KLE_GRID
    kx, ky = (int(v) for v in kle_grid)
    n = kx * ky
    if n > dense_limit:
        raise ConfigError(f"KLE grid {kx}x{ky} has {n} cells, above the dense limit {dense_limit}; "
                          "use a coarser kle_grid")
    x, y = _centers(mesh.lx, mesh.ly, kx, ky)
    X, Yc = np.meshgrid(x, y)
    pts = np.column_stack([X.ravel(), Yc.ravel()])
    w = np.full(n, mesh.lx * mesh.ly / n)
    sw = np.sqrt(w)
    C = spec(pts, pts)
    lam, U = np.linalg.eigh(sw[:, None] * C * sw[None, :])
    lam, U = np.maximum(lam[::-1], 0.0), U[:, ::-1]
    total = lam.sum()
    if n_modes is not None:
        N = int(n_modes)
    elif total > 0:
        N = int(np.searchsorted(np.cumsum(lam) / total, energy * (1 - 1e-12)) + 1)
    else:
        N = 1
    N = max(1, min(N, max_modes, n))
    kle_modes = (U[:, :N] / sw[:, None]).T
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(kle_modes), axis=1)
    kle_modes *= np.sign(kle_modes[np.arange(N), idx])[:, None]
    if (kx, ky) == (mesh.nx, mesh.ny):
        modes = kle_modes.reshape(N, ky, kx)
    else:
        modes = np.stack([_interpolate(mode.reshape(ky, kx), x, y, mesh) for mode in kle_modes])
    return KLEModel(mean_log, lam[:N].copy(), modes, spec, (kx, ky), kle_modes, w, lam)


def _interpolate(values: np.ndarray, x: np.ndarray, y: np.ndarray, mesh: TwoScaleMesh) -> np.ndarray:
    interp = RegularGridInterpolator((y, x), values, method="linear", bounds_error=False, fill_value=None)
    c = mesh.cell_centers
    return interp(np.column_stack([c[:, 1], c[:, 0]])).reshape(mesh.ny, mesh.nx)


def draw_coefficients(kle: KLEModel, seed: int, index: int = 0) -> SampleDraw:
    """Standard normal KLE coefficients from the stream (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))
    return SampleDraw(rng.standard_normal(kle.n_modes), int(seed), int(index))


def sample_field(kle: KLEModel, draw: SampleDraw | np.ndarray) -> PermeabilityField:
    xi = draw.xi if isinstance(draw, SampleDraw) else draw
    return PermeabilityField(np.exp(kle.log_field(xi)))


# raster I/O --------------------------------------------------------------------


def write_raster(path, values: np.ndarray) -> None:
    """Write one or more (ny, nx) records in the binary raster container."""
    arrays = [values] if np.ndim(values) == 2 else list(values)
    with open(path, "wb") as fh:
        for arr in arrays:
            arr = np.asarray(arr, dtype="<f8")
            ny, nx = arr.shape
            fh.write(f"{RASTER_MAGIC} {RASTER_VERSION} {nx} {ny}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_raster_records(path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0:
            raise ConfigError(f"{path}: truncated raster header")
        parts = data[pos:end].decode("ascii", errors="replace").split()
        if len(parts) != 4 or parts[0] != RASTER_MAGIC or parts[1] != RASTER_VERSION:
            raise ConfigError(f"{path}: not a '{RASTER_MAGIC} {RASTER_VERSION}' raster")
        nx, ny = int(parts[2]), int(parts[3])
        nbytes = 8 * nx * ny
        body = data[end + 1:end + 1 + nbytes]
        if len(body) != nbytes:
            raise ConfigError(f"{path}: expected {nx * ny} values, file is truncated")
        out.append(np.frombuffer(body, dtype="<f8").reshape(ny, nx).astype(float))
        pos = end + 1 + nbytes
    if not out:
        raise ConfigError(f"{path}: empty raster")
    return out


def _read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: CSV raster rows must all have the same length")
    return np.array(rows)


def ingest_raster(path, shape: tuple[int, int] | None = None) -> PermeabilityField:
    """Read a binary raster or CSV (ny rows of nx values, row j = cells at height j).

    ``shape`` is the expected (nx, ny).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(RASTER_MAGIC))
    if head == RASTER_MAGIC.encode():
        values = read_raster_records(path)[0]
    else:
        values = _read_csv(path)
    if shape is not None and values.shape != (shape[1], shape[0]):
        raise ConfigError(f"{path}: raster is {values.shape[1]}x{values.shape[0]}, "
                          f"fine grid is {shape[0]}x{shape[1]}")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ConfigError(f"{path}: raster values must be finite and positive")
    return PermeabilityField(values)


# synthetic fields --------------------------------------------------------------


def synth_high_contrast(mesh: TwoScaleMesh, contrast: float = 1e4, seed: int = 0,
                        n_channels: int | None = None, n_inclusions: int | None = None) -> PermeabilityField:
    """Background 1 with meandering high-permeability channels and inclusions of value ``contrast``."""
    if contrast < 1:
        raise ConfigError(f"contrast must be >= 1, got {contrast}")
    rng = np.random.default_rng(seed)
    nx, ny = mesh.nx, mesh.ny
    k = np.ones((ny, nx))
    n_channels = max(1, ny // 20) if n_channels is None else n_channels
    n_inclusions = max(1, (nx * ny) // 400) if n_inclusions is None else n_inclusions
    width = max(1, ny // 50)
    cols = np.arange(nx)
    for _ in range(n_channels):
        y0 = rng.uniform(0.15, 0.85) * ny
        amp = rng.uniform(0.02, 0.1) * ny
        freq = rng.uniform(0.5, 2.0) * 2 * np.pi / nx
        phase = rng.uniform(0, 2 * np.pi)
        centre = np.clip(np.round(y0 + amp * np.sin(freq * cols + phase)).astype(int), 0, ny - 1)
        for dj in range(width):
            k[np.clip(centre + dj, 0, ny - 1), cols] = contrast
    size = max(1, min(nx, ny) // 25)
    for _ in range(n_inclusions):
        i0 = rng.integers(0, max(1, nx - size))
        j0 = rng.integers(0, max(1, ny - size))
        k[j0:j0 + size, i0:i0 + size] = contrast
    return PermeabilityField(k)


def synth_lognormal(mesh: TwoScaleMesh, contrast: float = 1e4, seed: int = 0,
                    smoothing: float = 1.5) -> PermeabilityField:
    """Smoothed Gaussian log-field rescaled so that max/min equals ``contrast``."""
    rng = np.random.default_rng(seed)
    g = gaussian_filter(rng.standard_normal((mesh.ny, mesh.nx)), smoothing, mode="wrap")
    g = (g - g.min()) / (g.max() - g.min())
    k = np.exp(g * np.log(contrast))
    k = k / k.min()
    k[np.unravel_index(np.argmax(k), k.shape)] = contrast
    return PermeabilityField(k)

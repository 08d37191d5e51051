"""Gaussian random fields on the unit square via Karhunen-Loeve expansion.

The covariance is a separable squared-exponential kernel with per-axis length
scales. Fields are synthesized as modes @ xi with xi standard normal, where
the mode matrix carries sqrt(eigenvalue) scaling, so the retained covariance
is modes @ modes.T.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import MAX_EIG_SIZE, sym_eig
from .rng import Rng


@dataclass(frozen=True)
class GrfConfig:
    grid: tuple
    length_scales: tuple
    variance: float = 1.0
    energy: float = 0.99
    seed: int = 0

    def __post_init__(self):
        nx, ny = self.grid
        if nx < 2 or ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.grid}")
        if nx * ny > MAX_EIG_SIZE:
            raise ValueError(
                f"grid {self.grid} has {nx * ny} points, above the {MAX_EIG_SIZE} covariance cap"
            )
        lx, ly = self.length_scales
        if lx <= 0 or ly <= 0:
            raise ValueError(f"length scales must be positive, got {self.length_scales}")
        if self.variance < 0:
            raise ValueError(f"variance must be non-negative, got {self.variance}")
        if not 0.0 < self.energy <= 1.0:
            raise ValueError(f"energy fraction must lie in (0, 1], got {self.energy}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class KleBasis:
    config: GrfConfig
    points: np.ndarray  # (n_points, 2) cell centers, row-major over (x, y)
    eigenvalues: np.ndarray  # retained, descending
    modes: np.ndarray  # (n_points, n_modes), scaled by sqrt(eigenvalue)
    total_energy: float

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def energy_captured(self) -> float:
        return float(self.eigenvalues.sum() / self.total_energy) if self.total_energy else 1.0


def grid_points(grid) -> np.ndarray:
    """Cell-center coordinates on the unit square, row-major over (x, y)."""
    nx, ny = grid
    x = (np.arange(nx) + 0.5) / nx
    y = (np.arange(ny) + 0.5) / ny
    xx, yy = np.meshgrid(x, y, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def se_kernel(points: np.ndarray, length_scales, variance: float) -> np.ndarray:
    """Separable squared-exponential covariance between point sets."""
    lx, ly = length_scales
    dx = points[:, None, 0] - points[None, :, 0]
    dy = points[:, None, 1] - points[None, :, 1]
    return variance * np.exp(-(dx**2) / (2.0 * lx**2) - (dy**2) / (2.0 * ly**2))


def build_kle(config: GrfConfig) -> KleBasis:
    """Eigendecompose the covariance and retain the leading energy fraction."""
    pts = grid_points(config.grid)
    if config.variance == 0.0:
        return KleBasis(config, pts, np.zeros(0), np.zeros((pts.shape[0], 0)), 0.0)
    cov = se_kernel(pts, config.length_scales, config.variance)
    eig = sym_eig(cov)
    lam = eig.eigenvalues
    if np.any(lam < -1e-12 * max(1.0, lam[0])):
        raise ValueError(f"covariance produced a significantly negative eigenvalue {lam.min():.3e}")
    clipped = np.maximum(lam, 0.0)
    total = clipped.sum()
    cum = np.cumsum(clipped)
    m = int(np.searchsorted(cum, config.energy * total, side="left")) + 1
    m = min(m, lam.size)
    retained = clipped[:m]
    modes = eig.eigenvectors[:, :m] * np.sqrt(retained)
    return KleBasis(config, pts, retained, modes, float(total))


def sample_field(basis: KleBasis, seed_or_rng) -> np.ndarray:
    """One zero-mean field (nx, ny) from standard-normal mode coefficients."""
    rng = seed_or_rng if isinstance(seed_or_rng, Rng) else Rng(int(seed_or_rng))
    if basis.n_modes == 0:
        return np.zeros(basis.config.grid)
    xi = rng.normal(basis.n_modes)
    return (basis.modes @ xi).reshape(basis.config.grid)


def sample_fields(basis: KleBasis, n: int, seed: int | None = None) -> np.ndarray:
    """n independent fields; sample i always comes from substream i of seed.

    The per-index substreams make the result independent of evaluation order.
    """
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    base = basis.config.seed if seed is None else seed
    nx, ny = basis.config.grid
    out = np.empty((n, nx, ny))
    if basis.n_modes == 0:
        out[:] = 0.0
        return out
    for i in range(n):
        xi = Rng(base, stream=i).normal(basis.n_modes)
        out[i] = (basis.modes @ xi).reshape(nx, ny)
    return out

"""Symmetric eigensolving, truncated SVD, 2-D FFT, and quadrature.

Numerics are delegated to numpy behind fixed contracts: descending
eigenvalues with deterministic eigenvector signs, Gram-route truncated SVD,
unnormalized forward / 1/M inverse FFT on power-of-two grids, and mapped
Gauss-Legendre quadrature.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

MAX_EIG_SIZE = 4096
_SYM_TOL = 1e-12


class SymEigResult(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns aligned with eigenvalues


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def sym_eig(a: np.ndarray) -> SymEigResult:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending.

    Eigenvector signs are normalized (largest-magnitude component positive)
    so repeated runs produce identical output.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eig expects a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > MAX_EIG_SIZE:
        raise ValueError(f"matrix size {n} exceeds the supported maximum {MAX_EIG_SIZE}")
    asym = float(np.max(np.abs(a - a.T))) if n else 0.0
    if asym > _SYM_TOL:
        raise ValueError(f"matrix is not symmetric: max asymmetry {asym:.3e} exceeds {_SYM_TOL:.0e}")
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    anchors = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[anchors, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return SymEigResult(w, v * signs)


def truncated_svd(x: np.ndarray, k: int) -> SvdResult:
    """Best rank-k factors of a real matrix via the smaller Gram matrix.

    Returns u (n, k), s (k,) descending, vt (k, m). Raises when k exceeds
    the numerical rank since the missing factor columns would be undefined.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"truncated_svd expects a matrix, got shape {x.shape}")
    n, m = x.shape
    if not 1 <= k <= min(n, m):
        raise ValueError(f"rank k={k} outside valid range [1, {min(n, m)}] for shape {x.shape}")
    if m <= n:
        gram = x.T @ x
        eig = sym_eig((gram + gram.T) / 2.0)
        lam = np.maximum(eig.eigenvalues[:k], 0.0)
        v = eig.eigenvectors[:, :k]
        s = np.sqrt(lam)
        _check_rank(s, k, x.shape)
        u = (x @ v) / s
        return SvdResult(u, s, v.T)
    gram = x @ x.T
    eig = sym_eig((gram + gram.T) / 2.0)
    lam = np.maximum(eig.eigenvalues[:k], 0.0)
    u = eig.eigenvectors[:, :k]
    s = np.sqrt(lam)
    _check_rank(s, k, x.shape)
    vt = (x.T @ u).T / s[:, None]
    return SvdResult(u, s, vt)


def _check_rank(s: np.ndarray, k: int, shape):
    tol = max(shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    if s.size and s[-1] <= tol:
        rank = int(np.sum(s > tol))
        raise ValueError(f"requested rank {k} exceeds numerical rank {rank} of the {shape} matrix")


def _check_pow2_axes(shape):
    for n in shape[-2:]:
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"fft2 requires power-of-two extents >= 2, got trailing dims {shape[-2:]}")


def fft2(a: np.ndarray, direction: str = "forward") -> np.ndarray:
    """2-D DFT over the trailing two axes.

    Forward kernel exp(-2*pi*i*<x, k>) with no normalization; inverse carries
    the 1/M factor. Extents must be powers of two.
    """
    a = np.asarray(a)
    if a.ndim < 2:
        raise ValueError(f"fft2 expects at least 2 dimensions, got shape {a.shape}")
    _check_pow2_axes(a.shape)
    if direction == "forward":
        return np.fft.fft2(a)
    if direction == "inverse":
        return np.fft.ifft2(a)
    raise ValueError(f"direction must be 'forward' or 'inverse', got '{direction}'")


def gauss_legendre(f: Callable, a: float, b: float, n: int) -> float:
    """Integrate a vectorized callable over [a, b] with n Gauss-Legendre nodes."""
    if not a < b:
        raise ValueError(f"integration interval is empty: [{a}, {b}]")
    if not 2 <= n <= 64:
        raise ValueError(f"node count {n} outside supported range [2, 64]")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    vals = np.asarray(f(mid + half * nodes), dtype=np.float64)
    return float(half * np.sum(weights * vals))

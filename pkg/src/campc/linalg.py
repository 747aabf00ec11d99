"""Dense linear-algebra kernels: Cholesky, SPD solves, spectral norms.

Everything here is deterministic and pure; inputs are never modified.
Matrices are plain float64 ndarrays in row-major layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NotPositiveDefinite,
    NotSymmetric,
    ZeroRow,
)

SYMMETRY_RTOL = 1e-10
PIVOT_RTOL = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000

# Fixed restart vector seed so reruns are bit-identical.
_RESTART_SEED = 0x5EED


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array, rejecting NaN/Inf entries."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if m.size and not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float array."""
    v = np.asarray(a, dtype=float).reshape(-1)
    if v.size and not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T equal to the factored matrix."""

    lower: np.ndarray
    dim: int

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(m) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix as L @ L.T.

    Raises NotSymmetric if max|M - M.T| exceeds 1e-10 * max|entry|, and
    NotPositiveDefinite if any pivot falls at or below
    1e-12 * max diagonal entry.
    """
    m = as_matrix(m, "M")
    n, cols = m.shape
    if n != cols:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {m.shape}")
    if n == 0:
        raise DimensionMismatch("cholesky needs a nonempty matrix")
    scale = np.abs(m).max()
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise NotSymmetric("matrix is not symmetric to tolerance")

    pivot_floor = PIVOT_RTOL * m.diagonal().max()
    lower = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - lower[j, :j] @ lower[j, :j]
        if d <= pivot_floor:
            raise NotPositiveDefinite(f"pivot {d:.3e} at column {j}")
        lower[j, j] = np.sqrt(d)
        if j + 1 < n:
            lower[j + 1 :, j] = (m[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    lower.setflags(write=False)
    return CholeskyFactor(lower=lower, dim=n)


def solve_spd(fact: CholeskyFactor, rhs) -> np.ndarray:
    """Solve M @ X = rhs given the Cholesky factor of M.

    Forward substitution with L, back substitution with L.T. Accepts a
    vector or a matrix right-hand side and preserves its shape.
    """
    r = np.asarray(rhs, dtype=float)
    vector_input = r.ndim == 1
    if vector_input:
        r = r[:, None]
    if r.ndim != 2 or r.shape[0] != fact.dim:
        raise DimensionMismatch(
            f"rhs has {r.shape[0] if r.ndim else 0} rows, factor dimension is {fact.dim}"
        )
    y = solve_triangular(fact.lower, r, lower=True)
    x = solve_triangular(fact.lower.T, y, lower=False)
    return x[:, 0] if vector_input else x


def _power_iterate(gram: np.ndarray, v0: np.ndarray, tol: float, max_iter: int):
    """Run power iteration on a PSD matrix from v0.

    Returns (largest-eigenvalue estimate, converged flag). Convergence is
    judged on the change of the Rayleigh quotient across genuine iterate
    updates, backed by an eigen-residual check so a slowly drifting
    quotient cannot pass as converged. A collapse of the iterate into the
    null space reports non-convergence so the caller can restart.
    """
    v = v0 / np.linalg.norm(v0)
    w = gram @ v
    lam = float(v @ w)
    for _ in range(max_iter):
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v sits exactly in the null space; dominant direction lost.
            return 0.0, False
        v = w / norm_w
        w = gram @ v
        lam_new = float(v @ w)
        drift_ok = abs(lam_new - lam) <= tol * max(abs(lam_new), np.finfo(float).tiny)
        lam = lam_new
        if drift_ok:
            resid = np.linalg.norm(w - lam * v)
            if resid <= np.sqrt(tol) * max(abs(lam), np.finfo(float).tiny):
                return lam, True
    return lam, False


def spectral_norm(m, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Largest singular value via power iteration on the smaller Gram matrix.

    For an a x b matrix the iteration runs on M @ M.T when a <= b and on
    M.T @ M otherwise, so per-step cost scales with min(a, b)^2. The start
    vector is the normalized all-ones vector; a fixed pseudo-random restart
    is attempted when the iteration stagnates or provably misses the
    dominant eigenvalue (estimate below the mean eigenvalue).
    """
    m = as_matrix(m, "M")
    if m.size == 0:
        raise DimensionMismatch("spectral_norm needs a nonempty matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    a, b = m.shape
    gram = m @ m.T if a <= b else m.T @ m
    gram = 0.5 * (gram + gram.T)
    k = gram.shape[0]
    if not np.any(gram):
        return 0.0

    mean_eig = float(np.trace(gram)) / k
    lam, ok = _power_iterate(gram, np.ones(k), tol, max_iter)
    if not ok or lam < mean_eig * (1.0 - 1e-9):
        rng = np.random.default_rng(_RESTART_SEED)
        lam2, ok2 = _power_iterate(gram, rng.standard_normal(k), tol, max_iter)
        if ok2:
            lam = max(lam, lam2) if ok else lam2
        elif not ok:
            raise NoConvergence(f"power iteration did not converge in {max_iter} iterations")
    return float(np.sqrt(max(lam, 0.0)))


def min_row_gram(g, hfact: CholeskyFactor) -> float:
    """Smallest value of G_j @ inv(H) @ G_j.T over the rows of G.

    Strictly positive for nonzero rows since inv(H) is positive definite.
    Raises ZeroRow when some row of G is identically zero (the quotient it
    feeds would be unbounded).
    """
    g = as_matrix(g, "G")
    if g.shape[0] == 0:
        raise DimensionMismatch("G needs at least one row")
    if g.shape[1] != hfact.dim:
        raise DimensionMismatch(f"G has {g.shape[1]} columns, factor dimension is {hfact.dim}")
    zero_rows = np.flatnonzero(~g.any(axis=1))
    if zero_rows.size:
        raise ZeroRow(f"rows {zero_rows.tolist()} of G are identically zero")
    x = solve_spd(hfact, g.T)
    vals = np.einsum("ij,ji->i", g, x)
    return float(vals.min())

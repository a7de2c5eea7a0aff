"""Dense symmetric linear algebra for small covariance systems.

Factorizations go through LAPACK (numpy/scipy). Spectra for condition numbers
come from a cyclic Jacobi iteration that applies all rotations of one
round-robin round at once, which keeps the Python overhead at O(n) per sweep.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_symmetric(a) -> np.ndarray:
    """Return a float64 symmetric copy of ``a`` built from its upper triangle."""
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(a) -> CholeskyFactor:
    """Lower Cholesky factor of a symmetric matrix.

    Raises
    ------
    NotPositiveDefinite
        If a non-positive pivot is met. Callers are expected to escalate
        the nugget rather than regularize here.
    """
    a = as_symmetric(a)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(lower) > 0) or not np.all(np.isfinite(lower)):
        raise NotPositiveDefinite("factor has a non-positive pivot")
    return CholeskyFactor(lower)


def chol_solve(f: CholeskyFactor, b) -> np.ndarray:
    """Solve ``A x = b`` given the Cholesky factor of ``A``.

    ``b`` may be a vector or a matrix whose rows match ``f.n``.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, factor has {f.n}")
    y = solve_triangular(f.lower, b, lower=True, check_finite=False)
    return solve_triangular(f.lower.T, y, lower=False, check_finite=False)


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # circle method; m is even, every unordered pair appears exactly once
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array(players[: m // 2])
        q = np.array(players[m // 2 :][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigenvalues(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    m = n + (n % 2)
    if m != n:
        # pad with an isolated dummy row; it never couples to the others
        padded = np.zeros((m, m))
        padded[:n, :n] = a
        a = padded
    rounds = _round_robin(m)
    fro = np.linalg.norm(a)
    target = tol * fro
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= target:
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            # rotations below this threshold cannot move any eigenvalue in
            # double precision; skipping them also keeps denormals out
            active = np.abs(apq) > 1e-18 * np.sqrt(np.abs(app * aqq))
            tau = np.where(active, (aqq - app) / np.where(active, 2.0 * apq, 1.0), 0.0)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp = a[p, :]
            rq = a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp = a[:, p]
            cq = a[:, q]
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
    return np.sort(np.diag(a)[:n])


def symmetric_eigenvalues(a, method: str = "jacobi") -> np.ndarray:
    if method == "jacobi":
        return jacobi_eigenvalues(a)
    if method == "lapack":
        return np.linalg.eigvalsh(as_symmetric(a))
    raise ValueError(f"unknown eigenvalue method {method!r}")


def kappa_from_spectrum(lam_min: float, lam_max: float) -> float:
    if lam_min <= 0.0:
        return float("inf")
    return float(lam_max / lam_min)


def condition_number(a, method: str = "jacobi") -> float:
    """Spectral condition number ``lambda_max / lambda_min``.

    Indefinite or singular input returns ``inf`` instead of raising.
    """
    lam = symmetric_eigenvalues(a, method)
    return kappa_from_spectrum(lam[0], lam[-1])

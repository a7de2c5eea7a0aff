"""Reference solutions used to score trained models.

* viscous Burgers: Cole-Hopf transform evaluated by Gauss-Hermite quadrature
* Eikonal: log transform to a linear screened Poisson problem, 5-point FD
* inviscid Burgers: conservative two-step Lax-Wendroff (Richtmyer)
* elliptic and Helmholtz: the manufactured closed forms
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .errors import CflViolation, InvalidViscosity, SolveFailed, WrongProblem

HERMITE_NODES = 100
EIKONAL_GRID = 512
LW_NODES = 2001
LW_CFL = 0.4
LW_TIMES = 500


@dataclass
class ReferenceGrid:
    """Values on a tensor grid with bilinear (or linear, in 1-D) interpolation."""

    axes: tuple
    values: np.ndarray
    names: tuple = ("x", "y")

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        self.values = np.asarray(self.values, dtype=np.float64)
        for a in self.axes:
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be strictly increasing with at least two nodes")
        if self.values.shape != tuple(a.size for a in self.axes):
            raise ValueError(f"values shape {self.values.shape} does not match axes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo = [a[0] for a in self.axes]
        hi = [a[-1] for a in self.axes]
        return self._interp(np.clip(pts, lo, hi))


# --- viscous Burgers ---------------------------------------------------------

@lru_cache(maxsize=8)
def _hermite(n: int):
    with np.errstate(all="ignore"):
        z, w = np.polynomial.hermite.hermgauss(n)
    # numpy's recurrence overflows past ~370 nodes
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w))):
        raise ValueError(f"Gauss-Hermite rule with {n} nodes is not representable; use fewer nodes")
    return z, w


def burgers_reference(x, t, nu: float, n_nodes: int = HERMITE_NODES):
    """Cole-Hopf solution of ``u_t + u u_x = nu u_xx`` with ``u(x, 0) = -sin(pi x)``.

    ``x`` and ``t`` broadcast against each other. With ``eta = 2 sqrt(nu t) z``
    both integrals become Gauss-Hermite sums; the exponent is shifted by its
    maximum before exponentiation.
    """
    if not nu > 0:
        raise InvalidViscosity("Cole-Hopf needs nu > 0; use lax_wendroff_reference for nu = 0")
    x, t = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    scalar = x.ndim == 0
    x = x.reshape(-1)
    t = t.reshape(-1)
    out = -np.sin(np.pi * x)
    live = t > 0
    if np.any(live):
        z, w = _hermite(n_nodes)
        xs = x[live, None]
        eta = 2.0 * np.sqrt(nu * t[live, None]) * z[None, :]
        arg = np.pi * (xs - eta)
        expo = -np.cos(arg) / (2.0 * np.pi * nu)
        expo -= expo.max(axis=1, keepdims=True)
        g = w[None, :] * np.exp(expo)
        out[live] = -np.sum(np.sin(arg) * g, axis=1) / np.sum(g, axis=1)
    return float(out[0]) if scalar else out


# --- Eikonal ------------------------------------------------------------------

def _laplacian_1d(m: int) -> sp.csr_matrix:
    return sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="csr")


@lru_cache(maxsize=4)
def eikonal_reference(epsilon: float, grid_n: int = EIKONAL_GRID) -> ReferenceGrid:
    """Regularized Eikonal solution on the unit square.

    Solves ``g - eps^2 lap g = 0`` with ``g = 1`` on the boundary by the
    5-point stencil on ``grid_n`` intervals per axis, then ``u = -eps log g``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    n = int(grid_n)
    h = 1.0 / n
    m = n - 1
    c = epsilon**2 / h**2
    L1 = _laplacian_1d(m)
    I1 = sp.identity(m, format="csr")
    A = (sp.identity(m * m) - c * (sp.kron(I1, L1) + sp.kron(L1, I1))).tocsc()
    # boundary g = 1 enters every interior node next to an edge
    rhs = np.zeros((m, m))
    rhs[0, :] += c
    rhs[-1, :] += c
    rhs[:, 0] += c
    rhs[:, -1] += c
    try:
        g_int = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0).solve(rhs.ravel())
    except RuntimeError as exc:  # singular factor
        raise SolveFailed(str(exc)) from None
    if not np.all(np.isfinite(g_int)) or np.any(g_int <= 0):
        raise SolveFailed("transformed Eikonal solve produced non-positive g")
    g = np.ones((n + 1, n + 1))
    g[1:-1, 1:-1] = g_int.reshape(m, m)
    u = -epsilon * np.log(g)
    u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = 0.0
    axis = np.arange(n + 1) / n
    return ReferenceGrid((axis, axis), u, ("x", "y"))


# --- inviscid Burgers -----------------------------------------------------------

def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _lw_step(u, lam, limiter: bool):
    f = 0.5 * u * u
    # Richtmyer predictor at the half nodes, then conservative corrector
    uh = 0.5 * (u[1:] + u[:-1]) - 0.5 * lam * (f[1:] - f[:-1])
    flux = 0.5 * uh * uh
    if limiter:
        a = np.maximum(np.abs(u[1:]), np.abs(u[:-1]))
        low = 0.5 * (f[1:] + f[:-1]) - 0.5 * a * (u[1:] - u[:-1])
        du = u[1:] - u[:-1]
        # smoothness ratio from the neighbouring jumps
        left = np.concatenate([[du[0]], du[:-1]])
        right = np.concatenate([du[1:], [du[-1]]])
        safe = np.where(du == 0, 1.0, du)
        r = np.where(du == 0, 1.0, _minmod(left, right) / safe)
        phi = np.clip(r, 0.0, 1.0)
        flux = low + phi * (flux - low)
    un = u.copy()
    un[1:-1] = u[1:-1] - lam * (flux[1:] - flux[:-1])
    un[0] = un[-1] = 0.0
    return un


@lru_cache(maxsize=4)
def lax_wendroff_reference(grid_nx: int = LW_NODES, cfl: float = LW_CFL, n_times: int = LW_TIMES,
                           limiter: bool = False) -> ReferenceGrid:
    """Inviscid Burgers on ``[-1, 1] x [0, 1]``, ``u(x, 0) = -sin(pi x)``, zero ends.

    The grid is symmetric about ``x = 0`` so the odd symmetry of the exact
    solution is kept to the last bit. Output is stored at ``n_times + 1``
    equispaced times.
    """
    if not 0.0 < cfl < 1.0:
        raise CflViolation(f"cfl must lie in (0, 1), got {cfl}")
    if grid_nx < 200:
        raise ValueError("grid_nx must be at least 200")
    half = (int(grid_nx) - 1) // 2
    i = np.arange(1, half + 1)
    xp = i / half
    x = np.concatenate([-xp[::-1], [0.0], xp])
    dx = 1.0 / half
    up = -np.sin(np.pi * xp)
    u = np.concatenate([-up[::-1], [0.0], up])
    u[0] = u[-1] = 0.0
    dt_out = 1.0 / n_times
    # max |u| never exceeds the initial 1 by much; keep a margin
    n_sub = int(np.ceil(dt_out / (cfl * dx / 1.0)))
    dt = dt_out / n_sub
    lam = dt / dx
    values = np.empty((x.size, n_times + 1))
    values[:, 0] = u
    for k in range(1, n_times + 1):
        for _ in range(n_sub):
            if np.max(np.abs(u)) * lam >= 1.0:
                raise CflViolation("solution growth pushed the Courant number above 1")
            u = _lw_step(u, lam, limiter)
        values[:, k] = u
    times = np.arange(n_times + 1) / n_times
    return ReferenceGrid((x, times), values, ("x", "t"))


# --- analytic -----------------------------------------------------------------

def analytic_reference(problem, x):
    if problem.name not in ("elliptic", "helmholtz"):
        raise WrongProblem(f"{problem.name} has no closed-form solution")
    x = np.asarray(x, dtype=np.float64)
    val = problem.exact(np.atleast_2d(x))
    return float(val[0]) if x.ndim == 1 else val


def reference_function(problem):
    """Callable mapping ``(N, d)`` points to reference values ``(N, q)``, or ``None``."""
    name = problem.name
    if name == "burgers":
        nu = problem.params["nu"]
        return lambda p: burgers_reference(p[:, 0], p[:, 1], nu)[:, None]
    if name == "inviscid-burgers":
        grid = lax_wendroff_reference()
        return lambda p: grid(p)[:, None]
    if name == "eikonal":
        grid = eikonal_reference(problem.params["epsilon"])
        return lambda p: grid(p)[:, None]
    if name in ("elliptic", "helmholtz"):
        return lambda p: problem.exact(p)[:, None]
    return None

"""Gaussian-kernel corrective residuals.

A :class:`CoResField` predicts

    eta(x) = m(x; theta) + w(x)^T r,    w(x) = C^{-1} c(X, x),   r = u - m(X; theta)

per output variable. ``C`` and ``w`` depend only on the boundary inputs and
the frozen kernel, so weight jets for a fixed point set are computed once and
reused; only ``r`` moves with ``theta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linalg
from .autodiff import JetBundle, MeanNetwork, forward_tape, n_channels
from .errors import DimensionMismatch, NotPositiveDefinite, NuggetExhausted, StaleResidualCache

NUGGET_LADDER = (0.0,) + tuple(10.0**k for k in range(-8, -1))
TAGS = ("BC", "IC", "OBS")


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel ``sigma2 * exp(-sum phi_k dx_k^2) + delta * [x == x']``.

    ``omega`` holds one exponent per input dimension, ``phi = 10**omega``.
    """

    omega: tuple[float, ...]
    sigma2: float = 1.0
    delta: float = 0.0
    kappa_max: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in np.atleast_1d(self.omega)))
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if not self.kappa_max > 1:
            raise ValueError("kappa_max must exceed 1")

    @classmethod
    def uniform(cls, d: int, omega: float = 2.0, **kw) -> "KernelConfig":
        return cls(omega=(float(omega),) * d, **kw)

    @property
    def d(self) -> int:
        return len(self.omega)

    @property
    def phi(self) -> np.ndarray:
        return 10.0 ** np.asarray(self.omega)

    def with_delta(self, delta: float) -> "KernelConfig":
        return replace(self, delta=float(delta))


@dataclass
class BoundaryDataset:
    """Labelled samples of one output variable.

    ``tags`` marks each row as boundary condition, initial condition or an
    interior observation; all three are handled identically by the kernel.
    """

    X: np.ndarray
    u: np.ndarray
    tags: np.ndarray
    output: str = "u"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        tags = np.asarray(self.tags, dtype=object).reshape(-1)
        if tags.size == 1 and self.u.size > 1:
            tags = np.repeat(tags, self.u.size)
        self.tags = tags
        n = self.X.shape[0]
        if n < 1:
            raise ValueError("dataset needs at least one row")
        if self.u.shape != (n,) or self.tags.shape != (n,):
            raise DimensionMismatch(f"X has {n} rows, u has {self.u.size}, tags {self.tags.size}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.u))):
            raise ValueError("dataset has non-finite entries")
        bad = set(self.tags) - set(TAGS)
        if bad:
            raise ValueError(f"unknown tags {sorted(bad)}; expected one of {TAGS}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def has_duplicates(self) -> bool:
        return np.unique(self.X, axis=0).shape[0] < self.n

    def merge(self, other: "BoundaryDataset") -> "BoundaryDataset":
        if other.output != self.output:
            raise ValueError(f"cannot merge outputs {self.output!r} and {other.output!r}")
        return BoundaryDataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.u, other.u]),
            np.concatenate([self.tags, other.tags]),
            self.output,
        )

    def with_values(self, u) -> "BoundaryDataset":
        return BoundaryDataset(self.X.copy(), u, self.tags.copy(), self.output)


def _check_dim(d: int, cfg: KernelConfig) -> None:
    if d != cfg.d:
        raise DimensionMismatch(f"points have dimension {d}, kernel has {cfg.d} length scales")


def gaussian_kernel(x, x2, cfg: KernelConfig) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape:
        raise DimensionMismatch(f"point shapes differ: {x.shape} vs {x2.shape}")
    _check_dim(x.size, cfg)
    diff = x - x2
    val = cfg.sigma2 * np.exp(-np.sum(cfg.phi * diff * diff))
    if np.array_equal(x, x2):
        val += cfg.delta
    return float(val)


def cross_kernel(A: np.ndarray, B: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Kernel matrix ``c(A_i, B_j)`` without the nugget indicator."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    _check_dim(A.shape[1], cfg)
    _check_dim(B.shape[1], cfg)
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for k, p in enumerate(cfg.phi):
        diff = A[:, k, None] - B[None, :, k]
        d2 += p * diff * diff
    return cfg.sigma2 * np.exp(-d2)


def build_covariance(X, cfg: KernelConfig) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = cross_kernel(X, X, cfg)
    C = 0.5 * (C + C.T)
    C[np.diag_indices_from(C)] = cfg.sigma2 + cfg.delta
    return C


@dataclass(frozen=True)
class KernelBlock:
    """Calibrated kernel for one output: factor of ``C`` and its certified kappa."""

    config: KernelConfig
    data: BoundaryDataset
    chol: linalg.CholeskyFactor
    kappa: float

    @property
    def delta(self) -> float:
        return self.config.delta

    @property
    def output(self) -> str:
        return self.data.output

    @property
    def n(self) -> int:
        return self.data.n


def calibrate_nugget(data, cfg: KernelConfig, eig_method: str = "jacobi") -> KernelBlock:
    """Smallest ladder nugget for which ``C`` factors with ``kappa <= kappa_max``.

    ``data`` is a :class:`BoundaryDataset` or a bare ``(n, d)`` input array.
    The spectrum of the nugget-free matrix is computed once; adding
    ``delta * I`` shifts every eigenvalue by ``delta``.
    """
    if not isinstance(data, BoundaryDataset):
        X = np.atleast_2d(np.asarray(data, dtype=np.float64))
        data = BoundaryDataset(X, np.zeros(X.shape[0]), "BC")
    C0 = build_covariance(data.X, cfg.with_delta(0.0))
    lam = linalg.symmetric_eigenvalues(C0, eig_method)
    lam_min, lam_max = float(lam[0]), float(lam[-1])
    for delta in NUGGET_LADDER:
        kappa = linalg.kappa_from_spectrum(lam_min + delta, lam_max + delta)
        if not kappa <= cfg.kappa_max:
            continue
        C = C0.copy()
        C[np.diag_indices_from(C)] += delta
        try:
            chol = linalg.cholesky(C)
        except NotPositiveDefinite:
            continue
        return KernelBlock(cfg.with_delta(delta), data, chol, kappa)
    raise NuggetExhausted(
        f"no nugget up to {NUGGET_LADDER[-1]:g} brings kappa below {cfg.kappa_max:g} "
        f"(lambda range {lam_min:.3e} .. {lam_max:.3e}, n={data.n})"
    )


def kernel_jets(X: np.ndarray, points: np.ndarray, cfg: KernelConfig, order: int = 2) -> np.ndarray:
    """Jets of ``c(X_i, x*)`` in ``x*`` for a batch, layout ``(N, C, n)``.

    Channel layout matches :mod:`nncores.autodiff`.
    """
    points = np.atleast_2d(points)
    N, d = points.shape
    _check_dim(d, cfg)
    phi = cfg.phi
    diff = points[:, None, :] - X[None, :, :]  # (N, n, d)
    c = cfg.sigma2 * np.exp(-np.einsum("ijk,k->ij", diff * diff, phi))
    out = np.empty((N, n_channels(d, order), X.shape[0]))
    out[:, 0] = c
    if order >= 1:
        g = -2.0 * phi * diff  # d log c / dx*_k
        out[:, 1 : 1 + d] = np.moveaxis(g * c[:, :, None], 2, 1)
    if order >= 2:
        for k in range(d):
            for l in range(d):
                h = g[:, :, k] * g[:, :, l]
                if k == l:
                    h = h - 2.0 * phi[k]
                out[:, 1 + d + k * d + l] = h * c
    return out


def kernel_vector_jet(block: KernelBlock, xstar, order: int = 2) -> JetBundle:
    """Jets of the kernel vector at one point; output axis indexes training rows."""
    xstar = np.asarray(xstar, dtype=np.float64).reshape(1, -1)
    ch = kernel_jets(block.data.X, xstar, block.config, order)
    jets = JetBundle.from_channels(ch, xstar.shape[1], order)
    return JetBundle(
        jets.value[0],
        None if jets.grad is None else jets.grad[0],
        None if jets.hess is None else jets.hess[0],
    )


def weight_jets(block: KernelBlock, points, order: int = 2) -> np.ndarray:
    """``C^{-1} c(X, x*)`` and its input derivatives, ``(N, C, n)``."""
    kj = kernel_jets(block.data.X, points, block.config, order)
    N, C, n = kj.shape
    rhs = kj.reshape(N * C, n).T
    return linalg.chol_solve(block.chol, rhs).T.reshape(N, C, n)


@dataclass
class CoResField:
    """Network mean plus kernel-weighted residual correction, one block per output."""

    mean: MeanNetwork
    blocks: list[KernelBlock]
    theta_version: int = 0
    _residuals: list | None = field(default=None, repr=False)
    _cache_version: int = field(default=-1, repr=False)

    def __post_init__(self):
        if len(self.blocks) != self.mean.q:
            raise DimensionMismatch(f"{len(self.blocks)} kernel blocks for a network with {self.mean.q} outputs")
        for b in self.blocks:
            if b.data.d != self.mean.d:
                raise DimensionMismatch(f"block {b.output!r} has input dimension {b.data.d}, network {self.mean.d}")

    @property
    def outputs(self) -> list[str]:
        return [b.output for b in self.blocks]

    @property
    def d(self) -> int:
        return self.mean.d

    def set_theta(self, theta) -> None:
        self.mean = self.mean.with_theta(theta)
        self.theta_version += 1

    @property
    def fresh(self) -> bool:
        return self._residuals is not None and self._cache_version == self.theta_version

    def boundary_points(self) -> tuple[np.ndarray, list[slice]]:
        """All block inputs stacked, with the row slice of each block."""
        slices, pos = [], 0
        for b in self.blocks:
            slices.append(slice(pos, pos + b.n))
            pos += b.n
        return np.vstack([b.data.X for b in self.blocks]), slices

    def residual_refresh(self) -> list[np.ndarray]:
        Xall, slices = self.boundary_points()
        m, _ = forward_tape(self.mean, Xall, order=0)
        self._residuals = [b.data.u - m[sl, 0, o] for o, (b, sl) in enumerate(zip(self.blocks, slices))]
        self._cache_version = self.theta_version
        return self._residuals

    @property
    def residuals(self) -> list[np.ndarray]:
        if not self.fresh:
            raise StaleResidualCache(
                f"residuals computed for theta version {self._cache_version}, current is {self.theta_version}"
            )
        return self._residuals

    def weight_jets(self, points, order: int = 2) -> list[np.ndarray]:
        return [weight_jets(b, points, order) for b in self.blocks]

    def correction(self, wjets: Sequence[np.ndarray]) -> np.ndarray:
        """Channel stack ``(N, C, q)`` of ``w^T r`` from precomputed weight jets."""
        r = self.residuals
        return np.stack([wj @ ro for wj, ro in zip(wjets, r)], axis=-1)

    def posterior_channels(self, points, order: int = 2, wjets=None) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if wjets is None:
            wjets = self.weight_jets(points, order)
        corr = self.correction(wjets)
        m, _ = forward_tape(self.mean, points, order)
        return m + corr

    def posterior_jet(self, xstar, order: int = 2) -> JetBundle:
        x = np.asarray(xstar, dtype=np.float64)
        single = x.ndim == 1
        ch = self.posterior_channels(x.reshape(-1, self.d), order)
        jets = JetBundle.from_channels(ch, self.d, order)
        if single:
            return JetBundle(
                jets.value[0],
                None if jets.grad is None else jets.grad[0],
                None if jets.hess is None else jets.hess[0],
            )
        return jets

    def predict(self, points) -> np.ndarray:
        """Values of every output at ``points``, ``(N, q)``; evaluated in chunks."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((points.shape[0], self.mean.q))
        for s in range(0, points.shape[0], 4096):
            out[s : s + 4096] = self.posterior_channels(points[s : s + 4096], 0)[:, 0, :]
        return out

    def predict_mean_only(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m, _ = forward_tape(self.mean, points, 0)
        return m[:, 0, :]

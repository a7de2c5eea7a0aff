"""Fused per-layer tanh jet kernels.

Both functions operate on channel stacks ``(N, C, w)`` (see ``autodiff``).
The numba versions are used when numba imports; the numpy versions are the
reference implementation and the fallback.
"""
from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def tanh_forward_numpy(z: np.ndarray, d: int, order: int):
    n = z.shape[0]
    s = np.tanh(z[:, 0, :])
    s1 = 1.0 - s * s
    h = np.empty_like(z)
    h[:, 0, :] = s
    if order >= 1:
        jz = z[:, 1 : 1 + d, :]
        h[:, 1 : 1 + d, :] = s1[:, None, :] * jz
    if order >= 2:
        s2 = -2.0 * s * s1
        hz = z[:, 1 + d :, :].reshape(n, d, d, -1)
        hh = s2[:, None, None, :] * jz[:, :, None, :] * jz[:, None, :, :] + s1[:, None, None, :] * hz
        h[:, 1 + d :, :] = hh.reshape(n, d * d, -1)
    return h, s


def tanh_adjoint_numpy(ga: np.ndarray, z: np.ndarray, s: np.ndarray, d: int, order: int) -> np.ndarray:
    n = ga.shape[0]
    s1 = 1.0 - s * s
    gz = np.empty_like(ga)
    gv = ga[:, 0, :]
    if order == 0:
        gz[:, 0, :] = gv * s1
        return gz
    s2 = -2.0 * s * s1
    jz = z[:, 1 : 1 + d, :]
    gj = ga[:, 1 : 1 + d, :]
    g_s1 = (gj * jz).sum(axis=1)
    gz[:, 1 : 1 + d, :] = s1[:, None, :] * gj
    if order == 1:
        gz[:, 0, :] = gv * s1 + g_s1 * s2
        return gz
    s3 = -2.0 * s1 * s1 + 4.0 * s * s * s1
    gh = ga[:, 1 + d :, :].reshape(n, d, d, -1)
    hz = z[:, 1 + d :, :].reshape(n, d, d, -1)
    g_s1 = g_s1 + (gh * hz).sum(axis=(1, 2))
    ghj = (gh * jz[:, None, :, :]).sum(axis=2)
    g_s2 = (ghj * jz).sum(axis=1)
    ghs_j = ghj + (gh * jz[:, :, None, :]).sum(axis=1)
    gz[:, 1 : 1 + d, :] += s2[:, None, :] * ghs_j
    gz[:, 1 + d :, :] = (s1[:, None, None, :] * gh).reshape(n, d * d, -1)
    gz[:, 0, :] = gv * s1 + g_s1 * s2 + g_s2 * s3
    return gz


if numba is not None:

    # loops run over units innermost (the contiguous axis); per element the
    # arithmetic is the same as in the numpy versions
    @numba.njit(cache=True, fastmath=False)
    def _tanh_forward_nb(z, d, order):
        n, c, w = z.shape
        h = np.empty_like(z)
        s_out = np.empty((n, w))
        s1 = np.empty(w)
        for i in range(n):
            for u in range(w):
                s = np.tanh(z[i, 0, u])
                s_out[i, u] = s
                s1[u] = 1.0 - s * s
                h[i, 0, u] = s
            if order >= 1:
                for k in range(d):
                    for u in range(w):
                        h[i, 1 + k, u] = s1[u] * z[i, 1 + k, u]
            if order >= 2:
                for k in range(d):
                    for l in range(d):
                        idx = 1 + d + k * d + l
                        for u in range(w):
                            s2 = -2.0 * s_out[i, u] * s1[u]
                            h[i, idx, u] = s2 * z[i, 1 + k, u] * z[i, 1 + l, u] + s1[u] * z[i, idx, u]
        return h, s_out

    @numba.njit(cache=True, fastmath=False)
    def _tanh_adjoint_nb(ga, z, s_arr, d, order):
        n, c, w = ga.shape
        gz = np.empty_like(ga)
        s1 = np.empty(w)
        s2 = np.empty(w)
        g1 = np.empty(w)
        g2 = np.empty(w)
        acc = np.empty(w)
        for i in range(n):
            for u in range(w):
                s = s_arr[i, u]
                s1[u] = 1.0 - s * s
                s2[u] = -2.0 * s * s1[u]
            if order == 0:
                for u in range(w):
                    gz[i, 0, u] = ga[i, 0, u] * s1[u]
                continue
            for u in range(w):
                g1[u] = 0.0
            for k in range(d):
                for u in range(w):
                    g1[u] += ga[i, 1 + k, u] * z[i, 1 + k, u]
                    gz[i, 1 + k, u] = s1[u] * ga[i, 1 + k, u]
            if order == 1:
                for u in range(w):
                    gz[i, 0, u] = ga[i, 0, u] * s1[u] + g1[u] * s2[u]
                continue
            for u in range(w):
                g2[u] = 0.0
            for k in range(d):
                for u in range(w):
                    acc[u] = 0.0
                for l in range(d):
                    idx = 1 + d + k * d + l
                    idt = 1 + d + l * d + k
                    for u in range(w):
                        ghkl = ga[i, idx, u]
                        g1[u] += ghkl * z[i, idx, u]
                        g2[u] += ghkl * z[i, 1 + k, u] * z[i, 1 + l, u]
                        acc[u] += (ghkl + ga[i, idt, u]) * z[i, 1 + l, u]
                        gz[i, idx, u] = s1[u] * ghkl
                for u in range(w):
                    gz[i, 1 + k, u] += s2[u] * acc[u]
            for u in range(w):
                s = s_arr[i, u]
                s3 = -2.0 * s1[u] * s1[u] + 4.0 * s * s * s1[u]
                gz[i, 0, u] = ga[i, 0, u] * s1[u] + g1[u] * s2[u] + g2[u] * s3
        return gz

    def tanh_forward(z, d, order):
        return _tanh_forward_nb(np.ascontiguousarray(z), d, order)

    def tanh_adjoint(ga, z, s, d, order):
        return _tanh_adjoint_nb(np.ascontiguousarray(ga), np.ascontiguousarray(z), np.ascontiguousarray(s), d, order)

else:  # pragma: no cover
    tanh_forward = tanh_forward_numpy
    tanh_adjoint = tanh_adjoint_numpy

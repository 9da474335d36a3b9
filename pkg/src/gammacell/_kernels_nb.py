"""Numba-jitted kernels, the default backend for the hot inner loops.

Mirrors ``_kernels_np`` function for function. Kernels are nopython and
nogil so multistart solves and experiment fan-out can overlap in threads.
"""

import numpy as np
from numba import njit

BACKEND = "numba"

_JIT = dict(cache=True, nogil=True, fastmath=False)


def sym(G):
    return 0.5 * (G + np.swapaxes(G, -1, -2))


@njit(**_JIT)
def pnorm_energy(G, a, p):
    E = G.shape[0]
    n = G.shape[1]
    out = np.empty(E)
    for e in range(E):
        s = 0.0
        for i in range(n):
            for j in range(n):
                s += G[e, i, j] * G[e, i, j]
        if p == 2.0:
            out[e] = a[e] * s
        else:
            out[e] = a[e] * s ** (0.5 * p)
    return out


@njit(**_JIT)
def pnorm_grad(G, a, p):
    E = G.shape[0]
    n = G.shape[1]
    out = np.empty_like(G)
    for e in range(E):
        if p == 2.0:
            c = 2.0 * a[e]
        else:
            s = 0.0
            for i in range(n):
                for j in range(n):
                    s += G[e, i, j] * G[e, i, j]
            c = p * a[e] * s ** (0.5 * p - 1.0) if s > 0.0 else 0.0
        for i in range(n):
            for j in range(n):
                out[e, i, j] = c * G[e, i, j]
    return out


@njit(**_JIT)
def _det(A):
    n = A.shape[0]
    if n == 1:
        return A[0, 0]
    if n == 2:
        return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@njit(**_JIT)
def _well_residual(Gl, M, D):
    """Fill D = Gl - R* M for the nearest rotation R*; return |D|^2.

    Zero-signal projections fall back to R* = I (documented tie-break).
    """
    n = Gl.shape[0]
    if n == 1:
        d = Gl[0, 0] - M[0, 0]
        D[0, 0] = d
        return d * d
    if n == 2:
        # B = Gl M^T, SO(2) maximizer in closed form
        b11 = Gl[0, 0] * M[0, 0] + Gl[0, 1] * M[0, 1]
        b12 = Gl[0, 0] * M[1, 0] + Gl[0, 1] * M[1, 1]
        b21 = Gl[1, 0] * M[0, 0] + Gl[1, 1] * M[0, 1]
        b22 = Gl[1, 0] * M[1, 0] + Gl[1, 1] * M[1, 1]
        c = b11 + b22
        s = b21 - b12
        r = np.sqrt(c * c + s * s)
        if r > 0.0:
            cs = c / r
            sn = s / r
        else:
            cs = 1.0
            sn = 0.0
        d2 = 0.0
        for i in range(2):
            for j in range(2):
                if i == 0:
                    rm = cs * M[0, j] - sn * M[1, j]
                else:
                    rm = sn * M[0, j] + cs * M[1, j]
                d = Gl[i, j] - rm
                D[i, j] = d
                d2 += d * d
        return d2
    # n == 3: SVD-based projection
    B = Gl @ M.T
    U, S, Vt = np.linalg.svd(B)
    sgn = _det(U) * _det(Vt)
    if sgn < 0.0:
        for i in range(3):
            U[i, 2] = -U[i, 2]
    R = U @ Vt
    RM = R @ M
    d2 = 0.0
    for i in range(3):
        for j in range(3):
            d = Gl[i, j] - RM[i, j]
            D[i, j] = d
            d2 += d * d
    return d2


@njit(**_JIT)
def wells_energy(G, a, p, W):
    E = G.shape[0]
    n = G.shape[1]
    m = W.shape[0]
    out = np.empty(E)
    D = np.empty((n, n))
    for e in range(E):
        best = np.inf
        for i in range(m):
            d2 = _well_residual(G[e], W[i], D)
            if d2 < best:
                best = d2
        if p == 2.0:
            out[e] = a[e] * best
        else:
            out[e] = a[e] * best ** (0.5 * p)
    return out


@njit(**_JIT)
def wells_grad(G, a, p, W):
    E = G.shape[0]
    n = G.shape[1]
    m = W.shape[0]
    out = np.empty_like(G)
    D = np.empty((n, n))
    Dbest = np.empty((n, n))
    for e in range(E):
        best = np.inf
        for i in range(m):
            d2 = _well_residual(G[e], W[i], D)
            if d2 < best:
                best = d2
                for r in range(n):
                    for c in range(n):
                        Dbest[r, c] = D[r, c]
        if p == 2.0:
            coef = 2.0 * a[e]
        else:
            coef = p * a[e] * best ** (0.5 * p - 1.0) if best > 0.0 else 0.0
        for r in range(n):
            for c in range(n):
                out[e, r, c] = coef * Dbest[r, c]
    return out


@njit(**_JIT)
def symwells_energy(G, a, p, W):
    E = G.shape[0]
    n = G.shape[1]
    m = W.shape[0]
    out = np.empty(E)
    for e in range(E):
        best = np.inf
        for i in range(m):
            d2 = 0.0
            for r in range(n):
                for c in range(n):
                    d = 0.5 * (G[e, r, c] + G[e, c, r]) - W[i, r, c]
                    d2 += d * d
            if d2 < best:
                best = d2
        if p == 2.0:
            out[e] = a[e] * best
        else:
            out[e] = a[e] * best ** (0.5 * p)
    return out


@njit(**_JIT)
def symwells_grad(G, a, p, W):
    E = G.shape[0]
    n = G.shape[1]
    m = W.shape[0]
    out = np.empty_like(G)
    Dbest = np.empty((n, n))
    for e in range(E):
        best = np.inf
        for i in range(m):
            d2 = 0.0
            for r in range(n):
                for c in range(n):
                    d = 0.5 * (G[e, r, c] + G[e, c, r]) - W[i, r, c]
                    d2 += d * d
            if d2 < best:
                best = d2
                for r in range(n):
                    for c in range(n):
                        Dbest[r, c] = 0.5 * (G[e, r, c] + G[e, c, r]) - W[i, r, c]
        if p == 2.0:
            coef = 2.0 * a[e]
        else:
            coef = p * a[e] * best ** (0.5 * p - 1.0) if best > 0.0 else 0.0
        for r in range(n):
            for c in range(n):
                out[e, r, c] = coef * Dbest[r, c]
    return out


@njit(**_JIT)
def gather_gradients(values, elems, gradN):
    E = elems.shape[0]
    nv = elems.shape[1]
    n = values.shape[1]
    G = np.zeros((E, n, n))
    for e in range(E):
        for v in range(nv):
            node = elems[e, v]
            for i in range(n):
                vi = values[node, i]
                for j in range(n):
                    G[e, i, j] += vi * gradN[e, v, j]
    return G


@njit(**_JIT)
def scatter_gradients(dF, elems, gradN, w, nnodes):
    E = elems.shape[0]
    nv = elems.shape[1]
    n = dF.shape[1]
    out = np.zeros((nnodes, n))
    for e in range(E):
        we = w[e]
        for v in range(nv):
            node = elems[e, v]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += dF[e, i, j] * gradN[e, v, j]
                out[node, i] += we * acc
    return out

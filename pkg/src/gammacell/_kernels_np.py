"""Pure-numpy implementations of the hot evaluation and assembly kernels.

This is the fallback path, selected by ``gammacell._kernels`` when numba is
unavailable or ``GAMMACELL_DISABLE_NUMBA`` is set. The arithmetic mirrors the
jitted path operation for operation so the two backends agree to rounding.

Shapes used throughout:
    G      (E, n, n)   matrix arguments, one per element / sample
    a      (E,)        phase coefficients
    W      (m, n, n)   well matrices (targets of the distance terms)
    values (N, n)      nodal displacement vectors
    elems  (E, n+1)    node indices per simplex
    gradN  (E, n+1, n) constant shape-function gradients per simplex
"""

import numpy as np

BACKEND = "numpy"


def sym(G):
    return 0.5 * (G + np.swapaxes(G, -1, -2))


# ---------------------------------------------------------------------------
# p-norm density: a(x) |G|^p
# ---------------------------------------------------------------------------

def pnorm_energy(G, a, p):
    s = np.einsum("eij,eij->e", G, G)
    if p == 2.0:
        return a * s
    return a * s ** (0.5 * p)


def pnorm_grad(G, a, p):
    if p == 2.0:
        return (2.0 * a)[:, None, None] * G
    s = np.einsum("eij,eij->e", G, G)
    w = np.where(s > 0.0, s ** (0.5 * p - 1.0), 0.0)
    return (p * a * w)[:, None, None] * G


# ---------------------------------------------------------------------------
# rotation projection and SO(n)-well densities: a(x) min_i dist^p(G, SO(n) M_i)
# ---------------------------------------------------------------------------

def so_project(B):
    """Nearest proper rotation: argmax_{R in SO(n)} <B, R>, batched.

    Degenerate inputs (zero signal) project to the identity, which is the
    documented tie-break.
    """
    n = B.shape[-1]
    E = B.shape[0]
    if n == 1:
        return np.ones_like(B)
    if n == 2:
        c = B[:, 0, 0] + B[:, 1, 1]
        s = B[:, 1, 0] - B[:, 0, 1]
        r = np.sqrt(c * c + s * s)
        ok = r > 0.0
        cs = np.where(ok, c / np.where(ok, r, 1.0), 1.0)
        sn = np.where(ok, s / np.where(ok, r, 1.0), 0.0)
        R = np.empty_like(B)
        R[:, 0, 0] = cs
        R[:, 0, 1] = -sn
        R[:, 1, 0] = sn
        R[:, 1, 1] = cs
        return R
    U, _, Vt = np.linalg.svd(B)
    d = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    d = np.where(d == 0.0, 1.0, d)
    U = U.copy()
    U[:, :, -1] *= d[:, None]
    return U @ Vt


def _wells_d2(G, W):
    """Squared distance to each SO(n) M_i orbit; returns (min d2, argmin).

    Ties keep the first well (argmin semantics), matching the documented
    subgradient tie-break.
    """
    m = W.shape[0]
    E = G.shape[0]
    d2s = np.empty((m, E))
    for i in range(m):
        RM = so_project(G @ W[i].T) @ W[i]
        D = G - RM
        d2s[i] = np.einsum("eij,eij->e", D, D)
    idx = np.argmin(d2s, axis=0)
    best = d2s[idx, np.arange(E)]
    return best, idx


def wells_energy(G, a, p, W):
    d2, _ = _wells_d2(G, W)
    if p == 2.0:
        return a * d2
    return a * d2 ** (0.5 * p)


def wells_grad(G, a, p, W):
    d2, idx = _wells_d2(G, W)
    dF = np.zeros_like(G)
    for i in range(W.shape[0]):
        sel = idx == i
        if not np.any(sel):
            continue
        Gs = G[sel]
        RM = so_project(Gs @ W[i].T) @ W[i]
        dF[sel] = Gs - RM
    if p == 2.0:
        coef = 2.0 * a
    else:
        coef = np.where(d2 > 0.0, p * a * d2 ** (0.5 * p - 1.0), 0.0)
    return coef[:, None, None] * dF


# ---------------------------------------------------------------------------
# symmetric-well densities: a(x) min_i |sym(G) - U_i|^p
# ---------------------------------------------------------------------------

def _symwells_d2(G, W):
    S = sym(G)
    m = W.shape[0]
    E = G.shape[0]
    d2s = np.empty((m, E))
    for i in range(m):
        D = S - W[i]
        d2s[i] = np.einsum("eij,eij->e", D, D)
    idx = np.argmin(d2s, axis=0)
    best = d2s[idx, np.arange(E)]
    return best, idx, S


def symwells_energy(G, a, p, W):
    d2, _, _ = _symwells_d2(G, W)
    if p == 2.0:
        return a * d2
    return a * d2 ** (0.5 * p)


def symwells_grad(G, a, p, W):
    d2, idx, S = _symwells_d2(G, W)
    dF = S - W[idx]
    if p == 2.0:
        coef = 2.0 * a
    else:
        coef = np.where(d2 > 0.0, p * a * d2 ** (0.5 * p - 1.0), 0.0)
    return coef[:, None, None] * dF


# ---------------------------------------------------------------------------
# P1 assembly
# ---------------------------------------------------------------------------

def gather_gradients(values, elems, gradN):
    """Per-element gradient of the interpolant: G[e,i,j] = sum_v u[v,i] dN[v,j]."""
    V = values[elems]
    return np.einsum("evi,evj->eij", V, gradN)


def scatter_gradients(dF, elems, gradN, w, nnodes):
    """Chain rule back to the nodes: out[v,i] += w_e dF[e,i,j] dN[e,v,j]."""
    n = dF.shape[1]
    contrib = np.einsum("e,eij,evj->evi", w, dF, gradN)
    out = np.zeros((nnodes, n))
    np.add.at(out, elems, contrib)
    return out

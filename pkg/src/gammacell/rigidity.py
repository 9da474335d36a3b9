"""Empirical constants for Korn, geometric rigidity and Garding inequalities.

Every constant reported here is one-sided: discrete maximization over a
finite-element space can only under-estimate a supremum, so estimates are
stamped as lower bounds of the true constants. Nothing in this module proves
an inequality; failures in the diagnostic checks carry concrete witnesses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from . import density as dens
from .density import DensitySpec, dist_SO
from .envelope import qc_cell
from .grid import Field, Grid, make_energy_functions
from .minimize import SolveOptions, minimize_flat


@dataclass
class ConstantEstimate:
    value: float
    kind: str                      # korn | korn-nonlinear | rigidity
    grid_meta: dict
    certified_side: str = "lower bound of true constant"
    method: str = "gradient-ascent"
    samples: list = field(default_factory=list)


@dataclass
class GardingEstimate:
    alpha: float
    gamma: float
    violations: int
    worst_value: float
    worst_field: Optional[Field]
    n_fields: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


# ---------------------------------------------------------------------------
# quadratic/p-form helpers over a grid (cell averages, barycenter quadrature)
# ---------------------------------------------------------------------------

def _avg_weights(grid: Grid) -> np.ndarray:
    return grid.volumes / grid.volume


def grad_pnorm(grid: Grid, values: np.ndarray, p: float, symmetrized: bool):
    """(avg |D u|^p, nodal gradient) with D the full or symmetrized gradient."""
    w = _avg_weights(grid)
    G = K.gather_gradients(values, grid.elements, grid.grad_shape)
    if symmetrized:
        G = K.sym(G)
    ones = np.ones(grid.n_elements)
    val = float(np.sum(w * K.pnorm_energy(G, ones, p)))
    dF = K.pnorm_grad(G, ones, p)
    if symmetrized:
        dF = K.sym(dF)
    g = K.scatter_gradients(dF, grid.elements, grid.grad_shape, w, grid.n_nodes)
    return val, g


def value_pnorm(grid: Grid, values: np.ndarray, p: float):
    """(avg |u|^p, nodal gradient) by barycenter quadrature of the interpolant."""
    w = _avg_weights(grid)
    ub = values[grid.elements].mean(axis=1)          # (E, n) barycenter values
    s = np.einsum("ei,ei->e", ub, ub)
    if p == 2.0:
        e = s
        coef = 2.0 * np.ones_like(s)
    else:
        e = s ** (0.5 * p)
        coef = np.where(s > 0.0, p * s ** (0.5 * p - 1.0), 0.0)
    val = float(np.sum(w * e))
    contrib = (w * coef)[:, None, None] * ub[:, None, :] / grid.elements.shape[1]
    contrib = np.broadcast_to(contrib, (grid.n_elements,
                                        grid.elements.shape[1], grid.n))
    g = np.zeros((grid.n_nodes, grid.n))
    np.add.at(g, grid.elements, contrib)
    return val, g


# ---------------------------------------------------------------------------
# Korn constant
# ---------------------------------------------------------------------------

def _korn_quotient_fns(grid: Grid, p: float):
    def norms(values):
        A, gA = grad_pnorm(grid, values, p, symmetrized=False)
        S, gS = grad_pnorm(grid, values, p, symmetrized=True)
        M, gM = value_pnorm(grid, values, p)
        return (A, S, M), (gA, gS, gM)

    def quotient(values):
        (A, S, M), _ = norms(values)
        den = S ** (1.0 / p) + M ** (1.0 / p)
        return (A ** (1.0 / p)) / den if den > 0.0 else 0.0

    return norms, quotient


def _skew_fields(grid: Grid) -> list:
    """Rigid-rotation candidates u = W x, the classical near-maximizers."""
    out = []
    n = grid.n
    for i in range(n):
        for j in range(i + 1, n):
            W = np.zeros((n, n))
            W[i, j], W[j, i] = -1.0, 1.0
            out.append(grid.nodes @ W.T)
    return out


def korn_constant(grid: Grid, p: float = 2.0, n_starts: int = 6,
                  seed: int = 0, max_iter: int = 400) -> ConstantEstimate:
    """Best discrete quotient |grad u| / (|e(u)| + |u|) in L^p over the grid.

    For p = 2 the quotient is maximized by gradient ascent (L-BFGS on the
    negative log quotient) over all nodal values, boundary included. Starts:
    rigid-rotation fields, seeded random fields, and for even res the
    prolonged maximizer of the half-resolution grid, which makes the
    estimate nondecreasing under refinement (nested spaces). Other p fall
    back to random search over the same starts and are flagged. Degenerate
    all-zero starts are rejected.
    """
    from .grid import build_grid, prolong  # local import, avoids a cycle

    meta = {"n": grid.n, "k": grid.k, "res": grid.res}
    norms, quotient = _korn_quotient_fns(grid, p)

    starts = _skew_fields(grid)
    for i in range(n_starts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 41, i]))
        v = rng.standard_normal((grid.n_nodes, grid.n))
        if float(np.max(np.abs(v))) >= 1e-12:
            starts.append(v)
    if grid.res % 2 == 0 and grid.res >= 8:
        coarse = korn_constant(build_grid(grid.n, grid.k, grid.res // 2),
                               p=p, n_starts=n_starts, seed=seed,
                               max_iter=max_iter)
        if coarse.samples:
            starts.append(prolong(coarse.samples[0], grid).values)
    if not starts:
        raise ValueError("all starts degenerate")

    if p != 2.0:
        qs = [quotient(v) for v in starts]
        i = int(np.argmax(qs))
        return ConstantEstimate(value=qs[i], kind="korn", grid_meta=meta,
                                method="random-search",
                                samples=[Field(grid, starts[i])])

    eps = 1e-300

    def objective(x):
        values = x.reshape(grid.n_nodes, grid.n)
        (A, S, M), _ = norms(values)
        return -0.5 * np.log(A + eps) + np.log(np.sqrt(S + eps) + np.sqrt(M + eps))

    def objective_grad(x):
        values = x.reshape(grid.n_nodes, grid.n)
        (A, S, M), (gA, gS, gM) = norms(values)
        sS, sM = np.sqrt(S + eps), np.sqrt(M + eps)
        g = (-0.5 / (A + eps)) * gA \
            + (0.5 / (sS * (sS + sM) + eps)) * gS \
            + (0.5 / (sM * (sS + sM) + eps)) * gM
        return g.ravel()

    opts = SolveOptions(max_iter=max_iter, g_tol=1e-11, f_tol=1e-15, seed=seed)
    best, best_values = 0.0, None
    for v in starts:
        q0 = quotient(v)
        x, _, _, _, _ = minimize_flat(objective, objective_grad,
                                      v.ravel() / max(1.0, np.max(np.abs(v))),
                                      opts)
        vals = x.reshape(grid.n_nodes, grid.n)
        q = max(q0, quotient(vals))
        if q > best:
            best, best_values = q, vals if quotient(vals) >= q0 else v
    return ConstantEstimate(value=best, kind="korn", grid_meta=meta,
                            samples=[Field(grid, best_values)])


# ---------------------------------------------------------------------------
# geometric rigidity ratio
# ---------------------------------------------------------------------------

def _best_rotation_p(G: np.ndarray, w: np.ndarray, p: float, n: int) -> np.ndarray:
    """Constant rotation minimizing the L^p misfit (sum_T w_T |G_T - R|^p)."""
    if n == 1:
        return np.array([[1.0]])
    if p == 2.0:
        Gbar = np.einsum("e,eij->ij", w, G) / float(np.sum(w))
        return _polar_rotation(Gbar)
    if n == 2:
        def misfit(theta):
            R = np.array([[np.cos(theta), -np.sin(theta)],
                          [np.sin(theta), np.cos(theta)]])
            D = G - R
            return float(np.sum(w * np.einsum("eij,eij->e", D, D) ** (0.5 * p)))
        thetas = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        vals = [misfit(t) for t in thetas]
        t0 = thetas[int(np.argmin(vals))]
        span = 2.0 * np.pi / 64
        for _ in range(40):  # ternary refinement
            lo, hi = t0 - span, t0 + span
            m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
            if misfit(m1) < misfit(m2):
                t0, span = (lo + m2) / 2, (m2 - lo) / 2
            else:
                t0, span = (m1 + hi) / 2, (hi - m1) / 2
        return np.array([[np.cos(t0), -np.sin(t0)], [np.sin(t0), np.cos(t0)]])
    # n == 3: axis-angle net plus local pattern refinement
    def misfit_R(R):
        D = G - R
        return float(np.sum(w * np.einsum("eij,eij->e", D, D) ** (0.5 * p)))

    def rot(axis, angle):
        axis = axis / np.linalg.norm(axis)
        Kx = np.array([[0, -axis[2], axis[1]],
                       [axis[2], 0, -axis[0]],
                       [-axis[1], axis[0], 0]])
        return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)

    best_R, best_v = np.eye(3), misfit_R(np.eye(3))
    axes = [np.array(v, dtype=float) for v in
            ((1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1),
             (1, 1, 1), (1, -1, 0), (1, 0, -1), (0, 1, -1))]
    for ax in axes:
        for ang in np.linspace(0.0, np.pi, 13)[1:]:
            for sgn in (1.0, -1.0):
                R = rot(ax, sgn * ang)
                v = misfit_R(R)
                if v < best_v:
                    best_R, best_v = R, v
    stepsize = np.pi / 12
    while stepsize > 1e-6:
        improved = False
        for ax in axes[:3]:
            for sgn in (1.0, -1.0):
                R = rot(ax, sgn * stepsize) @ best_R
                v = misfit_R(R)
                if v < best_v:
                    best_R, best_v = R, v
                    improved = True
        if not improved:
            stepsize *= 0.5
    return best_R


def _polar_rotation(A: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(A)
    d = np.sign(np.linalg.det(U) * np.linalg.det(Vt)) or 1.0
    U = U.copy()
    U[:, -1] *= d
    return U @ Vt


def rigidity_ratio(grid: Grid, fields: Sequence[Field],
                   p: float = 2.0) -> ConstantEstimate:
    """max over samples of |grad u - R*|_p / |dist(grad u, SO(n))|_p.

    R* is the best constant rotation per field (polar factor of the mean
    gradient for p = 2, parameterized search otherwise). Fields with
    vanishing pointwise distance are skipped and recorded with ratio 1.
    """
    if not fields:
        raise ValueError("rigidity_ratio needs at least one sample field")
    w = _avg_weights(grid)
    n = grid.n
    eye = np.eye(n)[None, :, :]
    ones = np.ones(grid.n_elements)
    samples = []
    best = 0.0
    for fld in fields:
        G = K.gather_gradients(fld.values, grid.elements, grid.grad_shape)
        dist2 = K.wells_energy(G, ones, 2.0, eye)
        den = float(np.sum(w * dist2 ** (0.5 * p))) ** (1.0 / p)
        if den <= 1e-14:
            samples.append({"ratio": 1.0, "skipped": True})
            continue
        R = _best_rotation_p(G, w, p, n)
        D = G - R[None, :, :]
        num = float(np.sum(w * np.einsum("eij,eij->e", D, D) ** (0.5 * p))) ** (1.0 / p)
        ratio = num / den
        samples.append({"ratio": ratio, "skipped": False})
        best = max(best, ratio)
    meta = {"n": grid.n, "k": grid.k, "res": grid.res, "p": p}
    return ConstantEstimate(value=best, kind="rigidity", grid_meta=meta,
                            method="per-sample projection", samples=samples)


def two_rotation_field(grid: Grid, theta1: float, theta2: float,
                       transition: float = 0.2) -> Field:
    """Classical worst-case sample: two rotations glued across a band.

    The field stores the deformation y = (1 - lam(x_1)) R1 x + lam(x_1) R2 x,
    so its gradient sits at R1 left of the band, at R2 right of it and passes
    through non-rotation values inside; no single rotation fits both sides,
    which drives the rigidity ratio above 1.
    """
    if grid.n != 2:
        raise ValueError("two_rotation_field is two-dimensional")

    def R(t):
        return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])

    R1, R2 = R(theta1), R(theta2)
    k = float(grid.k)
    x0 = 0.5 * k * (1.0 - transition)
    x1 = 0.5 * k * (1.0 + transition)
    lam = np.clip((grid.nodes[:, 0] - x0) / (x1 - x0), 0.0, 1.0)
    vals = (1.0 - lam)[:, None] * (grid.nodes @ R1.T) \
        + lam[:, None] * (grid.nodes @ R2.T)
    return Field(grid, vals)


# ---------------------------------------------------------------------------
# Zhang lower-bound diagnostic
# ---------------------------------------------------------------------------

@dataclass
class ZhangRow:
    X: np.ndarray
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


@dataclass
class ZhangReport:
    rows: list
    C_est: float
    slack: float

    @property
    def passed(self) -> bool:
        return all(r.margin >= -1e-12 * (1.0 + abs(r.rhs)) for r in self.rows)


def zhang_check(spec: DensitySpec, X_samples: Sequence, C_est: float,
                slack: float = 1.0, res: int = 12,
                opts: Optional[SolveOptions] = None) -> ZhangReport:
    """Margins of qc_cell(X) >= slack C_est^-p dist^p(X, SO(n)).

    Diagnostic only: qc_cell over-estimates the true envelope while C_est
    under-estimates the rigidity constant, so a failure with slack = 1 points
    at discretization artifacts, not at a violation of the bound itself.
    """
    if spec.kind != "single-well" or spec.phases:
        raise ValueError("zhang_check applies to the homogeneous dist^p density")
    rows = []
    for X in X_samples:
        X = np.asarray(X, dtype=float)
        lhs = qc_cell(spec, X, res=res, opts=opts).value
        rhs = slack * C_est ** (-spec.p) * dist_SO(X) ** spec.p
        rows.append(ZhangRow(X=X, lhs=lhs, rhs=rhs))
    return ZhangReport(rows=rows, C_est=C_est, slack=slack)


# ---------------------------------------------------------------------------
# Garding coercivity diagnostic
# ---------------------------------------------------------------------------

def garding_check(spec: DensitySpec, grid: Grid, alpha: float, gamma: float,
                  n_fields: int = 20, seed: int = 0,
                  opts: Optional[SolveOptions] = None) -> GardingEstimate:
    """Sampled check of F(u) >= alpha |grad u|_p^p - gamma |u|_p^p.

    Evaluates the residual on random fields and on an adversarial field
    obtained by descending the residual from the worst random start (all
    nodal values free; the inequality has no boundary conditions). A pass
    means no violation was found, not a proof.
    """
    if alpha <= 0.0 or gamma < 0.0:
        raise ValueError("need alpha > 0 and gamma >= 0")
    p = spec.p
    X0 = np.zeros((grid.n, grid.n))
    energy, egrad = make_energy_functions(grid, spec, X0)

    def residual(values):
        A, _ = grad_pnorm(grid, values, p, symmetrized=False)
        M, _ = value_pnorm(grid, values, p)
        return energy(values) - alpha * A + gamma * M

    def residual_grad(x):
        values = x.reshape(grid.n_nodes, grid.n)
        _, gA = grad_pnorm(grid, values, p, symmetrized=False)
        _, gM = value_pnorm(grid, values, p)
        return (egrad(values) - alpha * gA + gamma * gM).ravel()

    tol = 1e-10
    violations = 0
    worst_value = np.inf
    worst_field = None
    starts = []
    for i in range(n_fields):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 733, i]))
        amp = 10.0 ** rng.uniform(-1.0, 1.0)
        starts.append(rng.uniform(-amp, amp, size=(grid.n_nodes, grid.n)))
    values_and_rs = [(v, residual(v)) for v in starts]
    for v, r in values_and_rs:
        if r < worst_value:
            worst_value, worst_field = r, Field(grid, v)
        if r < -tol:
            violations += 1

    # adversarial descent from the worst random start; the residual may be
    # unbounded below for bad (alpha, gamma), so stop at a clear violation
    sopts = opts or SolveOptions(max_iter=200, g_tol=1e-9, f_tol=1e-13)
    x, r_adv, _, _, _ = minimize_flat(
        lambda x: residual(x.reshape(grid.n_nodes, grid.n)),
        residual_grad, worst_field.values.ravel(), sopts, stop_below=-1e3)
    if r_adv < worst_value:
        worst_value = r_adv
        worst_field = Field(grid, x.reshape(grid.n_nodes, grid.n))
    if r_adv < -tol:
        violations += 1

    return GardingEstimate(alpha=alpha, gamma=gamma, violations=violations,
                           worst_value=worst_value, worst_field=worst_field,
                           n_fields=n_fields + 1)

"""Limited-memory quasi-Newton minimization of nonconvex cell energies.

The densities are only piecewise smooth (multi-well kinks), so the solver is
a plain L-BFGS two-loop with Armijo backtracking and a steepest-descent
restart on non-descent directions; no Hessians. Multistart launches from the
zero field plus deterministic random fields and returns the best iterate,
which is always a valid upper bound of the infimum even when not converged.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Field, Grid

DEFAULT_AMP_SCHEDULE = (0.1, 0.5, 1.0)


class MultistartError(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 1000
    g_tol: float = 1e-8        # sup-norm gradient tolerance
    f_tol: float = 1e-12       # relative decrease stall tolerance
    memory: int = 10
    n_starts: int = 8
    amp: tuple = DEFAULT_AMP_SCHEDULE
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.g_tol <= 0.0 or self.f_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        object.__setattr__(self, "amp", tuple(float(a) for a in self.amp))


@dataclass
class SolveResult:
    value: float
    field: Field
    iterations: int
    converged: bool
    start_index: int = 0
    n_evals: int = 0
    message: str = ""


def stable_seed(*parts) -> int:
    """Platform-stable integer seed from arbitrary string-able parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 40


def _backtrack(energy, x, f, d, gd, n_evals):
    step = 1.0
    for _ in range(MAX_BACKTRACKS):
        x_new = x + step * d
        f_new = energy(x_new)
        n_evals += 1
        if np.isfinite(f_new) and f_new <= f + ARMIJO_C1 * step * gd:
            return x_new, f_new, n_evals
        step *= 0.5
    return None, f, n_evals


def minimize_flat(energy: Callable, gradient: Callable, x0: np.ndarray,
                  opts: SolveOptions, stop_below: Optional[float] = None):
    """Core L-BFGS loop on flat vectors.

    Returns (x, f, iterations, converged, n_evals). Iterates are monotone
    nonincreasing: steps are accepted only under the Armijo condition with
    c1 = 1e-4 and halving; a non-descent direction resets the history to
    steepest descent. ``converged`` means the sup-norm gradient tolerance
    was met; an f_tol stall stops the loop without claiming convergence.
    ``stop_below`` aborts early once the value drops under the given floor
    (used by diagnostics that only need a violation witness).
    """
    x = np.asarray(x0, dtype=float).copy()
    f = energy(x)
    if not np.isfinite(f):
        raise FloatingPointError(f"energy not finite at start: {f}")
    g = gradient(x)
    m = max(0, int(opts.memory))
    s_hist, y_hist, rho_hist = [], [], []
    n_evals = 1
    iterations = 0

    def gnorm():
        return float(np.max(np.abs(g))) if g.size else 0.0

    while iterations < opts.max_iter:
        if gnorm() <= opts.g_tol:
            break

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            alpha = rho * float(s @ q)
            q -= alpha * y
            alphas.append(alpha)
        if y_hist:
            y_last = y_hist[-1]
            gamma = float(s_hist[-1] @ y_last) / max(float(y_last @ y_last), 1e-300)
            q *= gamma
        for (s, y, rho), alpha in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            beta = rho * float(y @ q)
            q += (alpha - beta) * s
        d = -q

        gd = float(g @ d)
        if not np.isfinite(gd) or gd >= 0.0:
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g
            gd = float(g @ d)
            if gd >= 0.0:
                break  # zero gradient, nothing to do

        x_new, f_new, n_evals = _backtrack(energy, x, f, d, gd, n_evals)
        if x_new is None and s_hist:
            # retry once along steepest descent before giving up
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g
            gd = float(g @ d)
            if gd < 0.0:
                x_new, f_new, n_evals = _backtrack(energy, x, f, d, gd, n_evals)
        if x_new is None:
            break

        iterations += 1
        g_new = gradient(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-14 * max(1.0, float(s @ s)):
            s_hist.append(s); y_hist.append(y); rho_hist.append(1.0 / sy)
            if len(s_hist) > m:
                s_hist.pop(0); y_hist.pop(0); rho_hist.pop(0)

        stalled = abs(f - f_new) <= opts.f_tol * (1.0 + abs(f_new))
        x, f, g = x_new, f_new, g_new
        if stop_below is not None and f <= stop_below:
            break
        if stalled:
            break

    converged = gnorm() <= opts.g_tol
    return x, f, iterations, converged, n_evals


def minimize(energy: Callable, gradient: Callable, start: Field,
             opts: SolveOptions) -> SolveResult:
    """Minimize over interior nodal values, holding masked nodes at zero.

    ``energy`` and ``gradient`` act on full (N, n) value arrays; the loop
    itself only moves unmasked degrees of freedom.
    """
    grid = start.grid
    free = ~grid.dirichlet_mask
    shape = start.values.shape

    def pack(values):
        return values[free].ravel().copy()

    def unpack(x):
        values = np.zeros(shape)
        values[free] = x.reshape(-1, grid.n)
        return values

    def e_flat(x):
        return energy(unpack(x))

    def g_flat(x):
        return gradient(unpack(x))[free].ravel()

    x0 = pack(start.values)
    x, f, it, conv, n_evals = minimize_flat(e_flat, g_flat, x0, opts)
    return SolveResult(value=f, field=Field(grid, unpack(x)), iterations=it,
                       converged=conv, n_evals=n_evals)


def multistart(energy: Callable, gradient: Callable, grid: Grid,
               opts: SolveOptions, amp_scale: float = 1.0,
               seed_fields: Sequence[Field] = ()) -> SolveResult:
    """Best of: zero start, (n_starts - 1) random starts, optional seeds.

    Random start i draws per-node values uniform in [-amp_i, amp_i] with
    amp_i cycling through the amplitude schedule times ``amp_scale``, seeded
    deterministically by (seed, start index). The merge is a min-reduction
    by (value, start_index), so the result does not depend on scheduling.
    """
    starts = [Field.zeros(grid)]
    for i in range(1, opts.n_starts):
        amp = opts.amp[(i - 1) % len(opts.amp)] * amp_scale
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed & (2**63 - 1), i]))
        starts.append(Field.random(grid, amp, rng))
    starts.extend(seed_fields)

    best: Optional[SolveResult] = None
    failures = []
    for idx, start in enumerate(starts):
        try:
            res = minimize(energy, gradient, start, opts)
        except FloatingPointError as exc:
            failures.append((idx, str(exc)))
            continue
        res.start_index = idx
        if best is None or (res.value, res.start_index) < (best.value, best.start_index):
            best = res
    if best is None:
        raise MultistartError("all starts failed", failures)
    best.message = f"{len(failures)} failed starts" if failures else ""
    return best

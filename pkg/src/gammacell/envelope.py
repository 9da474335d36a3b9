"""Quasiconvex-envelope estimates: cell bounds, 1D convexification, laminates.

Everything here is a bound, and says so: cell minimization and lamination
upper-bound the quasiconvex envelope (restricted test space / finite nets),
while the 1D lower convex hull of sampled values is exact for the sampled
abscissae. Exact quasiconvex envelopes in dimension >= 2 are out of reach.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import density as dens
from .density import DensitySpec
from .cell import CellJob, cell_energy
from .minimize import SolveOptions


@dataclass
class EnvelopeResult:
    X: np.ndarray
    value: float
    method: str  # qc-cell | convex-1d | laminate
    meta: dict


def _require_homogeneous(spec: DensitySpec):
    if spec.phases:
        raise ValueError("envelope estimates need an x-independent density")


def qc_cell(spec: DensitySpec, X, res: int,
            opts: Optional[SolveOptions] = None,
            cache_dir: Optional[str] = None) -> EnvelopeResult:
    """Upper bound of f^qc(X) by cell minimization on the unit cube."""
    _require_homogeneous(spec)
    opts = opts or SolveOptions()
    r = cell_energy(CellJob(spec=spec, X=X, k=1, res=res, opts=opts),
                    cache_dir=cache_dir)
    return EnvelopeResult(X=r.job.X_array(), value=r.m_value, method="qc-cell",
                          meta={"res": res, "bound": "upper",
                                "converged": r.solve.converged})


@dataclass
class Hull1D:
    """Piecewise-linear lower convex hull; callable by linear interpolation."""

    xs: np.ndarray
    ys: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.xs, self.ys)


def convexify_1d(xs: Sequence[float], ys: Sequence[float]) -> Hull1D:
    """Lower convex hull of sampled (x, y) values by monotone chain.

    The hull never exceeds the samples and is exact for the 1D scalar
    quasiconvex (= convex) envelope of the sampled restriction.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ValueError("need two equally long 1D sample arrays")
    if np.any(np.diff(xs) <= 0.0):
        raise ValueError("abscissae must be strictly increasing")
    hull = []  # indices of hull vertices
    for i in range(xs.size):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = ((xs[i1] - xs[i0]) * (ys[i] - ys[i0])
                     - (ys[i1] - ys[i0]) * (xs[i] - xs[i0]))
            if cross <= 0.0:  # middle point sits on or above the chord
                hull.pop()
            else:
                break
        hull.append(i)
    idx = np.asarray(hull)
    return Hull1D(xs=xs[idx], ys=ys[idx])


# ---------------------------------------------------------------------------
# iterated rank-one lamination on a matrix lattice
# ---------------------------------------------------------------------------

def _directions(n: int) -> list:
    """Integer rank-one matrices a (x) b, deduplicated up to overall sign."""
    if n == 1:
        vecs = [np.array([1])]
    elif n == 2:
        vecs = [np.array(v) for v in
                ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2))]
    else:
        vecs = [np.array(v) for v in
                ((1, 0, 0), (0, 1, 0), (0, 0, 1),
                 (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1),
                 (0, 1, 1), (0, 1, -1))]
    seen = {}
    for a in vecs:
        for b in vecs:
            M = np.outer(a, b)
            flat = M.ravel()
            first = flat[np.nonzero(flat)[0][0]]
            if first < 0:
                M = -M
            seen.setdefault(M.tobytes(), M)
    return list(seen.values())


def _shift_slices(shape, offset):
    """dst/src slice tuples realizing T_src[z + offset] on the overlap."""
    dst, src = [], []
    for size, o in zip(shape, offset):
        o = int(o)
        if abs(o) >= size:
            return None
        if o >= 0:
            dst.append(slice(0, size - o))
            src.append(slice(o, size))
        else:
            dst.append(slice(-o, size))
            src.append(slice(0, size + o))
    return tuple(dst), tuple(src)


def laminate(spec: DensitySpec, X, depth: int,
             direction_net: Optional[list] = None,
             lambda_denominator: int = 8,
             amplitudes: Sequence[int] = (1, 2),
             window: float = 2.0, step: float = 0.25,
             max_table: int = 4_000_000) -> EnvelopeResult:
    """Iterated-lamination upper bound of f^qc(X) on a matrix lattice.

    The lattice is X + step * Z^(n x n) clipped to a box of half-width
    ``window`` per entry. Probes are exact on the lattice: for integer
    vectors a, b, weights i/(i+j) with i + j <= lambda_denominator and
    amplitude s, the split points X + j s step a(x)b and X - i s step a(x)b
    are lattice points, so every table entry is a genuine finite-lamination
    value and the result certifiably upper-bounds the quasiconvex envelope
    at X (probes leaving the window are skipped). Nonincreasing in depth.
    """
    _require_homogeneous(spec)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    n = spec.n
    X = np.asarray(X, dtype=float).reshape(n, n)
    L = int(round(window / step))
    size = 2 * L + 1
    m = n * n
    if size ** m > max_table:
        raise MemoryError(
            f"laminate table would hold {size ** m} entries (cap {max_table})")

    axes = [np.arange(-L, L + 1) * step for _ in range(m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([g.ravel() for g in mesh], axis=-1).reshape(-1, n, n) + X
    a = np.ones(Z.shape[0])
    table = dens.batch_eval(spec, a, np.ascontiguousarray(Z)).reshape((size,) * m)

    dirs = direction_net if direction_net is not None else _directions(n)
    probes = []
    for D in dirs:
        D = np.asarray(D, dtype=int).reshape(n, n)
        for s in amplitudes:
            for i in range(1, lambda_denominator):
                for j in range(1, lambda_denominator + 1 - i):
                    lam = i / (i + j)
                    plus = (j * s * D).ravel()
                    minus = (-i * s * D).ravel()
                    probes.append((lam, plus, minus))

    for _ in range(depth):
        new = table.copy()
        for lam, plus, minus in probes:
            sp = _shift_slices(table.shape, plus)
            sm = _shift_slices(table.shape, minus)
            if sp is None or sm is None:
                continue
            # overlap of both probe windows
            dst = tuple(slice(max(p.start, q.start), min(p.stop, q.stop))
                        for p, q in zip(sp[0], sm[0]))
            if any(s.start >= s.stop for s in dst):
                continue
            srcp = tuple(slice(d.start + int(o), d.stop + int(o))
                         for d, o in zip(dst, plus))
            srcm = tuple(slice(d.start + int(o), d.stop + int(o))
                         for d, o in zip(dst, minus))
            cand = lam * table[srcp] + (1.0 - lam) * table[srcm]
            np.minimum(new[dst], cand, out=new[dst])
        table = new

    center = (L,) * m
    return EnvelopeResult(X=X, value=float(table[center]), method="laminate",
                          meta={"depth": depth, "window": window, "step": step,
                                "bound": "upper", "table": size ** m,
                                "probes": len(probes)})

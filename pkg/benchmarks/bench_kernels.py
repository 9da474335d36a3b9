#!/usr/bin/env python3
"""Benchmark the jitted kernels against the pure-numpy fallback.

Times the hot path of a cell solve (gather gradients, evaluate the density,
scatter the nodal gradient) on a 2D grid for each backend and prints a
speedup table. The same comparison at package level: run any experiment with
GAMMACELL_DISABLE_NUMBA=1 to force the fallback.
"""

import time

import numpy as np

from gammacell import _kernels_np
from gammacell.density import single_well, two_phase_pnorm
from gammacell.grid import build_grid

try:
    from gammacell import _kernels_nb
    BACKENDS = [("numba", _kernels_nb), ("numpy", _kernels_np)]
except ImportError:
    BACKENDS = [("numpy", _kernels_np)]

REPEAT = 20


def bench_backend(impl, grid, spec, values):
    a = spec.coefficients(grid.barycenters)
    w = grid.volumes / grid.volume
    wells = spec.well_matrices() if spec.is_well_kind else None

    def once():
        G = impl.gather_gradients(values, grid.elements, grid.grad_shape)
        if wells is not None:
            e = impl.wells_energy(G, a, spec.p, wells)
            dF = impl.wells_grad(G, a, spec.p, wells)
        else:
            e = impl.pnorm_energy(G, a, spec.p)
            dF = impl.pnorm_grad(G, a, spec.p)
        g = impl.scatter_gradients(dF, grid.elements, grid.grad_shape, w,
                                   grid.n_nodes)
        return float(np.sum(w * e)), g

    val, _ = once()  # warm-up (includes JIT compilation)
    t0 = time.perf_counter()
    for _ in range(REPEAT):
        once()
    return val, (time.perf_counter() - t0) / REPEAT


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("2D single-well res=64", build_grid(2, 1, 64), single_well(2)),
        ("2D two-phase p-norm res=64", build_grid(2, 1, 64),
         two_phase_pnorm(2)),
        ("2D single-well k=4 res=16", build_grid(2, 4, 16), single_well(2)),
    ]
    print(f"{'case':34s} {'backend':8s} {'ms/eval':>10s} {'value':>14s}")
    for name, grid, spec in cases:
        values = rng.standard_normal((grid.n_nodes, grid.n)) * 0.1
        times = {}
        for bname, impl in BACKENDS:
            val, dt = bench_backend(impl, grid, spec, values)
            times[bname] = dt
            print(f"{name:34s} {bname:8s} {dt * 1e3:10.3f} {val:14.8f}")
        if len(times) == 2:
            print(f"{'':34s} speedup {times['numpy'] / times['numba']:8.1f}x")


if __name__ == "__main__":
    main()

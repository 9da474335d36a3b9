"""Backend dispatch for the hot kernels.

The jitted path is the default. Set ``GAMMACELL_DISABLE_NUMBA=1`` (any value
other than ``0``/empty) to force the pure-numpy fallback; the flag is read
once at import time. ``BACKEND`` records which path is live.
"""

import os

_disable = os.environ.get("GAMMACELL_DISABLE_NUMBA", "") not in ("", "0")

if _disable:
    from . import _kernels_np as _impl
else:
    try:
        from . import _kernels_nb as _impl
    except ImportError:
        from . import _kernels_np as _impl

BACKEND = _impl.BACKEND
HAVE_NUMBA = BACKEND == "numba"

sym = _impl.sym
pnorm_energy = _impl.pnorm_energy
pnorm_grad = _impl.pnorm_grad
wells_energy = _impl.wells_energy
wells_grad = _impl.wells_grad
symwells_energy = _impl.symwells_energy
symwells_grad = _impl.symwells_grad
gather_gradients = _impl.gather_gradients
scatter_gradients = _impl.scatter_gradients

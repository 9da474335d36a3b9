"""P1 simplicial discretization of the cube (0, k)^n and energy assembly.

Cells of a uniform lattice (res subdivisions per unit length) are split into
n! Kuhn simplices, so gradients of test fields are constant per element and
the cell energy is evaluated exactly in its matrix argument; quadrature error
enters only through phase interfaces, attributed at element barycenters.
Boundary nodes carry a Dirichlet mask (test space W_0^{1,p}).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from . import density as dens
from .density import DensitySpec

DEFAULT_MAX_NODES = 2_000_000


class GridSizeError(MemoryError):
    pass


@dataclass
class Grid:
    """Immutable simplicial grid; arrays are write-protected after build."""

    n: int
    k: int
    res: int
    nodes: np.ndarray           # (N, n) coordinates
    elements: np.ndarray        # (E, n+1) node indices
    grad_shape: np.ndarray      # (E, n+1, n) constant shape-function gradients
    volumes: np.ndarray         # (E,)
    barycenters: np.ndarray     # (E, n)
    dirichlet_mask: np.ndarray  # (N,) True on the boundary

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def volume(self) -> float:
        return float(self.k) ** self.n


def build_grid(n: int, k: int, res: int,
               max_nodes: int = DEFAULT_MAX_NODES) -> Grid:
    """Kuhn-triangulate (0, k)^n with res subdivisions per unit length.

    Element count is n! (k res)^n. Rejects grids whose node count exceeds
    ``max_nodes``.
    """
    if n not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {n}")
    if k < 1 or int(k) != k:
        raise ValueError(f"cube side must be a positive integer, got {k}")
    if res < 2:
        raise ValueError(f"res must be >= 2, got {res}")
    m = k * res
    n_nodes = (m + 1) ** n
    if n_nodes > max_nodes:
        raise GridSizeError(
            f"grid would have {n_nodes} nodes, exceeding the cap {max_nodes}")

    axis = np.linspace(0.0, float(k), m + 1)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)

    # node index of lattice point (i_1, ..., i_n)
    strides = np.array([(m + 1) ** (n - 1 - ax) for ax in range(n)], dtype=np.int64)

    cells = np.stack(np.meshgrid(*([np.arange(m)] * n), indexing="ij"),
                     axis=-1).reshape(-1, n)
    perms = list(itertools.permutations(range(n)))
    elem_list = []
    for perm in perms:
        verts = np.zeros((cells.shape[0], n + 1), dtype=np.int64)
        corner = cells.copy()
        verts[:, 0] = corner @ strides
        for j, ax in enumerate(perm):
            corner = corner.copy()
            corner[:, ax] += 1
            verts[:, j + 1] = corner @ strides
        elem_list.append(verts)
    elements = np.concatenate(elem_list, axis=0)

    coords = nodes[elements]                       # (E, n+1, n)
    D = coords[:, 1:, :] - coords[:, :1, :]        # rows: x_j - x_0
    # edge matrix columns are x_j - x_0, so rows of its inverse are grad N_j
    Dcols = np.swapaxes(D, 1, 2)
    Dinv = np.linalg.inv(Dcols)
    grad_shape = np.empty((elements.shape[0], n + 1, n))
    grad_shape[:, 1:, :] = Dinv
    grad_shape[:, 0, :] = -np.sum(Dinv, axis=1)
    volumes = np.abs(np.linalg.det(Dcols)) / float(math.factorial(n))
    barycenters = coords.mean(axis=1)

    on_boundary = np.zeros(n_nodes, dtype=bool)
    eps = 1e-12 * k
    for ax in range(n):
        on_boundary |= nodes[:, ax] < eps
        on_boundary |= nodes[:, ax] > k - eps

    for arr in (nodes, elements, grad_shape, volumes, barycenters, on_boundary):
        arr.flags.writeable = False
    return Grid(n=n, k=k, res=res, nodes=nodes, elements=elements,
                grad_shape=grad_shape, volumes=volumes,
                barycenters=barycenters, dirichlet_mask=on_boundary)


@dataclass
class Field:
    """Nodal displacement vectors on a grid.

    Minimizer test functions keep masked (boundary) nodes at zero; fields
    built by ``interpolate`` may carry boundary values for assembly checks.
    """

    grid: Grid
    values: np.ndarray  # (N, n)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes, self.grid.n):
            raise ValueError(f"field shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        self.values = v

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros((grid.n_nodes, grid.n)))

    @classmethod
    def interpolate(cls, grid: Grid, fn: Callable) -> "Field":
        vals = np.array([np.atleast_1d(fn(x)) for x in grid.nodes], dtype=float)
        return cls(grid, vals)

    @classmethod
    def random(cls, grid: Grid, amp: float, rng: np.random.Generator,
               zero_boundary: bool = True) -> "Field":
        vals = rng.uniform(-amp, amp, size=(grid.n_nodes, grid.n))
        if zero_boundary:
            vals[grid.dirichlet_mask] = 0.0
        return cls(grid, vals)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def is_dirichlet(self) -> bool:
        return bool(np.all(self.values[self.grid.dirichlet_mask] == 0.0))


def interpolate_at(fld: Field, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 interpolant at arbitrary points of the cube.

    The containing Kuhn simplex of a point is determined by the descending
    order of its in-cell fractional coordinates; barycentric weights follow
    from successive differences of the sorted fractions.
    """
    g = fld.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = g.k * g.res
    h = float(g.k) / m
    vals = np.zeros((pts.shape[0], g.n))
    stride = np.array([(m + 1) ** (g.n - 1 - ax) for ax in range(g.n)], dtype=np.int64)
    for r, x in enumerate(pts):
        cell = np.minimum((x / h).astype(np.int64), m - 1)
        frac = x / h - cell
        order = np.argsort(-frac, kind="stable")
        ts = frac[order]
        lam = np.empty(g.n + 1)
        lam[0] = 1.0 - ts[0]
        lam[1:-1] = ts[:-1] - ts[1:]
        lam[-1] = ts[-1]
        corner = cell.copy()
        acc = lam[0] * fld.values[int(corner @ stride)]
        for j in range(g.n):
            corner[order[j]] += 1
            acc = acc + lam[j + 1] * fld.values[int(corner @ stride)]
        vals[r] = acc
    return vals


def prolong(fld: Field, fine: Grid) -> Field:
    """Interpolate a field onto a finer grid of the same cube.

    For nested lattices (res dividing fine.res) the interpolant is
    reproduced exactly, so quotients of integral norms are preserved.
    """
    if (fine.n, fine.k) != (fld.grid.n, fld.grid.k):
        raise ValueError("grids cover different cubes")
    return Field(fine, interpolate_at(fld, fine.nodes))


def element_gradient(grid: Grid, fld: Field, element: int) -> np.ndarray:
    """Exact gradient of the P1 interpolant on one simplex."""
    if not (0 <= element < grid.n_elements):
        raise IndexError(f"element {element} out of range")
    nodes = grid.elements[element]
    return np.einsum("vi,vj->ij", fld.values[nodes], grid.grad_shape[element])


def element_gradients(grid: Grid, fld: Field) -> np.ndarray:
    """All per-element gradients, shape (E, n, n)."""
    return K.gather_gradients(fld.values, grid.elements, grid.grad_shape)


# ---------------------------------------------------------------------------
# energy closures
# ---------------------------------------------------------------------------

def make_energy_functions(grid: Grid, spec: DensitySpec, X,
                          symmetrized: bool = False, delta: float = 0.0,
                          penalty: float = 0.0):
    """Build (energy, gradient) callables over nodal value arrays.

    The evaluated integrand per element, with G the test-field gradient:

        delta == 0:  f(x, X + G)                    [raw cell form]
        delta > 0:   delta^-p f(x, I + delta (X + G))  [rescaled form]

    symmetrized replaces the matrix argument by its symmetric part before
    evaluation. penalty adds lam |X + G|^p with the same exponent. Values are
    averages over the cell (weights |T| / k^n).
    """
    X = np.asarray(X, dtype=float).reshape(spec.n, spec.n)
    n = grid.n
    if n != spec.n:
        raise ValueError("grid and density dimension differ")
    a = spec.coefficients(grid.barycenters)
    w = grid.volumes / grid.volume
    xs = grid.barycenters if spec.kind == "custom-sampled" else None
    if delta > 0.0:
        base = np.eye(n) + delta * X
        scale = delta
        pref = delta ** (-spec.p)
    else:
        base = X
        scale = 1.0
        pref = 1.0
    lam = float(penalty)
    ones = np.ones(grid.n_elements)

    def geff(values):
        G = K.gather_gradients(values, grid.elements, grid.grad_shape)
        Z = G + X  # raw argument X + grad(phi), also the penalty argument
        Ge = Z if scale == 1.0 else base + scale * G
        if symmetrized:
            Ge = K.sym(Ge)
        return G, Z, Ge

    def energy(values) -> float:
        _, Z, Ge = geff(values)
        e = dens.batch_eval(spec, a, Ge, xs)
        val = pref * float(np.sum(w * e))
        if lam != 0.0:
            val += lam * float(np.sum(w * K.pnorm_energy(Z, ones, spec.p)))
        return val

    def gradient(values) -> np.ndarray:
        _, Z, Ge = geff(values)
        dF = dens.batch_grad(spec, a, Ge, xs)
        if symmetrized:
            dF = K.sym(dF)  # chain rule through the sym projection
        out = K.scatter_gradients(dF, grid.elements, grid.grad_shape,
                                  pref * scale * w, grid.n_nodes)
        if lam != 0.0:
            dP = K.pnorm_grad(Z, ones, spec.p)
            out = out + K.scatter_gradients(dP, grid.elements, grid.grad_shape,
                                            lam * w, grid.n_nodes)
        return out

    return energy, gradient


def assemble_energy(grid: Grid, spec: DensitySpec, X, fld: Field,
                    symmetrized: bool = False) -> float:
    """Average cell energy k^-n sum_T |T| f(bary_T, X + grad phi|_T).

    Exact quadrature: the integrand is constant per element in its matrix
    argument and phases are piecewise constant (barycenter attribution for
    elements straddling an interface).
    """
    energy, _ = make_energy_functions(grid, spec, X, symmetrized=symmetrized)
    return energy(fld.values)


def assemble_gradient(grid: Grid, spec: DensitySpec, X, fld: Field,
                      symmetrized: bool = False) -> np.ndarray:
    """Exact chain-rule gradient of assemble_energy in the nodal values.

    Masked (boundary) entries are zeroed. Densities without an analytic
    gradient fall back to central finite differences over all free degrees
    of freedom, which is only meant for small grids.
    """
    if dens.has_grad(spec):
        _, gradient = make_energy_functions(grid, spec, X, symmetrized=symmetrized)
        out = gradient(fld.values)
    else:
        energy, _ = make_energy_functions(grid, spec, X, symmetrized=symmetrized)
        out = _fd_gradient(energy, fld.values, grid.dirichlet_mask)
    out[grid.dirichlet_mask] = 0.0
    return out


def _fd_gradient(energy, values, mask, step: float = 1e-6) -> np.ndarray:
    h = step * (1.0 + float(np.max(np.abs(values))))
    out = np.zeros_like(values)
    work = values.copy()
    for node in range(values.shape[0]):
        if mask[node]:
            continue
        for comp in range(values.shape[1]):
            orig = work[node, comp]
            work[node, comp] = orig + h
            ep = energy(work)
            work[node, comp] = orig - h
            em = energy(work)
            work[node, comp] = orig
            out[node, comp] = (ep - em) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# field serialization: little-endian float64 + JSON sidecar
# ---------------------------------------------------------------------------

def field_sidecar(fld: Field) -> dict:
    g = fld.grid
    return {"n": g.n, "k": g.k, "res": g.res, "layout": "node-major"}


def write_field(fld: Field, bin_path, sidecar_path=None) -> dict:
    data = np.ascontiguousarray(fld.values, dtype="<f8")
    with open(bin_path, "wb") as fh:
        fh.write(data.tobytes())
    meta = field_sidecar(fld)
    if sidecar_path is not None:
        with open(sidecar_path, "w") as fh:
            json.dump(meta, fh)
    return meta


def read_field(bin_path, meta: dict, grid: Optional[Grid] = None) -> Field:
    if meta.get("layout") != "node-major":
        raise ValueError(f"unsupported field layout {meta.get('layout')!r}")
    n, k, res = int(meta["n"]), int(meta["k"]), int(meta["res"])
    if grid is None:
        grid = build_grid(n, k, res)
    elif (grid.n, grid.k, grid.res) != (n, k, res):
        raise ValueError("sidecar does not match the supplied grid")
    raw = np.fromfile(bin_path, dtype="<f8")
    return Field(grid, raw.astype(float).reshape(grid.n_nodes, n))

"""Parametric energy-density families and the checks their hypotheses impose.

A density is a function f(x, X) of a point x in the unit periodic cell and a
square matrix X. The shipped families:

``constant-p-norm`` / ``two-phase-p-norm``
    f(x, X) = a(x) |X|^p with a piecewise-constant coefficient.
``single-well``
    f(x, X) = a(x) dist^p(X, SO(n)), vanishing exactly on rotations.
``multi-well``
    f(x, X) = a(x) min_i dist^p(X, SO(n)(I + delta U_i)), the shape-memory
    form with wells separated on scale delta.
``scalar-double-well``
    n = 1, f(x, X) = a(x) min_i |X - w_i|^p with scalar wells (default +1, -1).
``linearized-multi-well``
    f(x, X) = a(x) min_i |X_sym - U_i|^p, depending on X through X_sym only.
``custom-sampled``
    backed by a user callable f(x, X); no analytic gradient unless one is
    supplied, not serializable to config files.

All evaluations are pure; batch entry points feed the kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _kernels as K

KINDS = (
    "constant-p-norm",
    "two-phase-p-norm",
    "single-well",
    "multi-well",
    "linearized-multi-well",
    "scalar-double-well",
    "custom-sampled",
)

# kinds whose evaluation factors through X_sym
LINEAR_KINDS = ("linearized-multi-well",)
# kinds with wells on rotation orbits (evaluated through dist to SO(n) M_i)
WELL_KINDS = ("single-well", "multi-well", "scalar-double-well")
PNORM_KINDS = ("constant-p-norm", "two-phase-p-norm")


class DensityError(ValueError):
    pass


def _as_nested(mat) -> tuple:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DensityError(f"well must be a square matrix, got shape {arr.shape}")
    return tuple(tuple(float(v) for v in row) for row in arr)


@dataclass(frozen=True)
class Phase:
    """One axis-aligned box of the unit cell with coefficient a > 0."""

    box: tuple  # ((lo, hi) per axis)
    a: float

    def __post_init__(self):
        if self.a <= 0.0:
            raise DensityError(f"phase coefficient must be positive, got {self.a}")
        for lo, hi in self.box:
            if not (0.0 <= lo < hi <= 1.0):
                raise DensityError(f"phase box ({lo}, {hi}) not inside the unit cell")


@dataclass(frozen=True)
class DensitySpec:
    """Parametric description of an energy density with growth metadata.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    n : int
        Spatial/matrix dimension, 1, 2 or 3.
    p : float
        Growth exponent, 1 < p < infinity.
    beta : float, optional
        Upper growth constant; derived from the family when omitted.
    c_low, C_low : float, optional
        Non-degeneracy constants for the admissibility report; derived
        defaults when omitted.
    delta : float
        Well-separation scale of the family (0 for families without one).
    wells : tuple
        Symmetric well matrices U_i (or scalar wells for the 1D double well).
    phases : tuple of Phase
        Axis-aligned partition of the unit cell; points not covered by any
        box take coefficient 1. First matching box wins.
    period : float
        Fixed to 1; oscillation is realized by growing the cell size k.
    fn, grad_fn : callable, optional
        Only for ``custom-sampled``: f(x, X) -> float and its X-gradient.
    """

    kind: str
    n: int
    p: float = 2.0
    beta: Optional[float] = None
    c_low: Optional[float] = None
    C_low: Optional[float] = None
    delta: float = 0.0
    wells: tuple = ()
    phases: tuple = ()
    period: float = 1.0
    fn: Optional[Callable] = field(default=None, compare=False)
    grad_fn: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DensityError(f"unknown density kind {self.kind!r}")
        if self.n not in (1, 2, 3):
            raise DensityError(f"dimension must be 1, 2 or 3, got {self.n}")
        if not (1.0 < self.p < math.inf):
            raise DensityError(f"growth exponent must satisfy 1 < p, got {self.p}")
        if self.delta < 0.0:
            raise DensityError("delta must be nonnegative")
        if self.period != 1.0:
            raise DensityError("period is fixed to the unit cell")
        object.__setattr__(self, "wells", tuple(_as_nested(w) for w in self.wells))
        object.__setattr__(
            self,
            "phases",
            tuple(ph if isinstance(ph, Phase) else Phase(**ph) for ph in self.phases),
        )
        for w in self.wells:
            arr = np.asarray(w)
            if arr.shape != (self.n, self.n):
                raise DensityError(
                    f"well shape {arr.shape} does not match dimension {self.n}")
            if not np.allclose(arr, arr.T, atol=1e-12):
                raise DensityError("wells must be symmetric matrices")
        for ph in self.phases:
            if len(ph.box) != self.n:
                raise DensityError("phase box dimension does not match n")
        if self.kind == "two-phase-p-norm" and len(self.phases) != 2:
            raise DensityError("two-phase-p-norm requires exactly two phases")
        if self.kind == "scalar-double-well" and self.n != 1:
            raise DensityError("scalar-double-well is one-dimensional")
        if self.kind == "custom-sampled" and self.fn is None:
            raise DensityError("custom-sampled requires an evaluation callable")
        if self.kind == "multi-well" and not self.wells:
            raise DensityError("multi-well requires at least one well")

    # -- derived structure ---------------------------------------------------

    @property
    def is_linear_kind(self) -> bool:
        return self.kind in LINEAR_KINDS

    @property
    def is_well_kind(self) -> bool:
        return self.kind in WELL_KINDS

    def wells_array(self) -> np.ndarray:
        return np.asarray(self.wells, dtype=float).reshape(-1, self.n, self.n)

    def well_matrices(self) -> np.ndarray:
        """Target matrices M_i of the distance terms, per kind."""
        n = self.n
        if self.kind == "single-well":
            return np.eye(n)[None, :, :]
        if self.kind == "multi-well":
            return np.eye(n)[None, :, :] + self.delta * self.wells_array()
        if self.kind == "scalar-double-well":
            if self.wells:
                return self.wells_array()
            return np.array([[[1.0]], [[-1.0]]])
        raise DensityError(f"{self.kind} has no rotation wells")

    def sym_wells(self) -> np.ndarray:
        if not self.is_linear_kind:
            raise DensityError(f"{self.kind} has no symmetric wells")
        if self.wells:
            return self.wells_array()
        return np.zeros((1, self.n, self.n))

    def coefficient(self, x) -> float:
        """Phase coefficient a(x), x reduced modulo the unit cell."""
        xm = np.asarray(x, dtype=float) % 1.0
        for ph in self.phases:
            inside = True
            for xi, (lo, hi) in zip(xm, ph.box):
                if not (lo <= xi < hi):
                    inside = False
                    break
            if inside:
                return ph.a
        return 1.0

    def coefficients(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized a(x) over rows of xs, shape (E, n) -> (E,)."""
        xm = np.asarray(xs, dtype=float) % 1.0
        out = np.ones(xm.shape[0])
        unset = np.ones(xm.shape[0], dtype=bool)
        for ph in self.phases:
            inside = unset.copy()
            for axis, (lo, hi) in enumerate(ph.box):
                inside &= (xm[:, axis] >= lo) & (xm[:, axis] < hi)
            out[inside] = ph.a
            unset &= ~inside
        return out

    def growth_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        amax = max([ph.a for ph in self.phases], default=1.0)
        amax = max(amax, 1.0)
        if self.kind in PNORM_KINDS:
            return amax
        if self.kind in WELL_KINDS:
            wmax = float(np.max(np.sum(self.well_matrices() ** 2, axis=(1, 2))))
            return amax * 2.0 ** (self.p - 1.0) * max(1.0, wmax ** (0.5 * self.p))
        if self.is_linear_kind:
            wmax = float(np.max(np.sum(self.sym_wells() ** 2, axis=(1, 2))))
            return amax * 2.0 ** (self.p - 1.0) * max(1.0, wmax ** (0.5 * self.p))
        raise DensityError("custom-sampled requires an explicit beta")

    def lower_constants(self) -> tuple[float, float]:
        """(c, C) for the non-degeneracy bound of the admissibility check."""
        amin = min([ph.a for ph in self.phases], default=1.0)
        amin = min(amin, 1.0)
        c = self.c_low if self.c_low is not None else amin * 2.0 ** (1.0 - self.p)
        if self.C_low is not None:
            return c, self.C_low
        if self.kind in WELL_KINDS:
            M = self.well_matrices()
            spread = float(np.max(np.sum((M - np.eye(self.n)) ** 2, axis=(1, 2))))
            return c, max(1.0, spread ** (0.5 * self.p))
        return c, 1.0


# -- constructors -------------------------------------------------------------

def constant_pnorm(n: int, p: float = 2.0, a: float = 1.0) -> DensitySpec:
    phases = () if a == 1.0 else (Phase(box=tuple((0.0, 1.0) for _ in range(n)), a=a),)
    return DensitySpec(kind="constant-p-norm", n=n, p=p, phases=phases)


def layered_phases(n: int, a=(1.0, 4.0), axis: int = 0, split: float = 0.5) -> tuple:
    def box(lo, hi):
        return tuple((lo, hi) if ax == axis else (0.0, 1.0) for ax in range(n))
    return (Phase(box=box(0.0, split), a=a[0]), Phase(box=box(split, 1.0), a=a[1]))


def two_phase_pnorm(n: int, p: float = 2.0, a=(1.0, 4.0), axis: int = 0) -> DensitySpec:
    return DensitySpec(kind="two-phase-p-norm", n=n, p=p,
                       phases=layered_phases(n, a, axis))


def single_well(n: int, p: float = 2.0, phases=()) -> DensitySpec:
    return DensitySpec(kind="single-well", n=n, p=p, phases=phases)


def multi_well(n: int, delta: float, wells, p: float = 2.0, phases=()) -> DensitySpec:
    return DensitySpec(kind="multi-well", n=n, p=p, delta=delta,
                       wells=tuple(wells), phases=phases)


def linearized_multi_well(n: int, wells=(), p: float = 2.0, phases=()) -> DensitySpec:
    return DensitySpec(kind="linearized-multi-well", n=n, p=p,
                       wells=tuple(wells), phases=phases)


def double_well_1d(p: float = 2.0, wells=(1.0, -1.0), phases=()) -> DensitySpec:
    return DensitySpec(kind="scalar-double-well", n=1, p=p,
                       wells=tuple([[w]] for w in wells), phases=phases)


def derive_linearization(spec: DensitySpec) -> DensitySpec:
    """The small-strain limit family of a nonlinear wells family.

    delta^-p W_delta(x, I + delta X) -> a(x) min_i |X_sym - U_i|^p, so the
    single well maps to the zero well and multi-well keeps its wells.
    """
    if spec.kind == "single-well":
        return DensitySpec(kind="linearized-multi-well", n=spec.n, p=spec.p,
                           phases=spec.phases)
    if spec.kind == "multi-well":
        return DensitySpec(kind="linearized-multi-well", n=spec.n, p=spec.p,
                           wells=spec.wells, phases=spec.phases)
    raise DensityError(f"no shipped linearization for kind {spec.kind!r}")


def family_at(spec: DensitySpec, delta: float) -> DensitySpec:
    """The family member W_delta; only multi-well moves its wells with delta."""
    if spec.kind == "multi-well":
        return replace(spec, delta=float(delta))
    return spec


# -- evaluation ----------------------------------------------------------------

def _check_point(spec: DensitySpec, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.n,):
        raise DensityError(f"point shape {x.shape} does not match n={spec.n}")
    if not np.all(np.isfinite(x)):
        raise DensityError("non-finite point")
    return x


def _check_matrix(spec: DensitySpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.shape != (spec.n, spec.n):
        raise DensityError(f"matrix shape {X.shape} does not match n={spec.n}")
    if not np.all(np.isfinite(X)):
        raise DensityError("non-finite matrix argument")
    return X


def batch_eval(spec: DensitySpec, a: np.ndarray, G: np.ndarray,
               xs: Optional[np.ndarray] = None) -> np.ndarray:
    """Evaluate f on a batch of matrices G (E, n, n) with coefficients a (E,).

    ``xs`` (E, n) is only consulted by the custom kind, whose callable needs
    the actual sample points.
    """
    if spec.kind in PNORM_KINDS:
        return K.pnorm_energy(G, a, spec.p)
    if spec.kind in WELL_KINDS:
        return K.wells_energy(G, a, spec.p, spec.well_matrices())
    if spec.is_linear_kind:
        return K.symwells_energy(G, a, spec.p, spec.sym_wells())
    if xs is None:
        raise DensityError("custom-sampled batch evaluation needs sample points")
    out = np.empty(G.shape[0])
    for i in range(G.shape[0]):
        out[i] = spec.fn(xs[i] % 1.0, G[i]) * a[i]
    return out


def batch_grad(spec: DensitySpec, a: np.ndarray, G: np.ndarray,
               xs: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of f with respect to the matrix argument, batched."""
    if spec.kind in PNORM_KINDS:
        return K.pnorm_grad(G, a, spec.p)
    if spec.kind in WELL_KINDS:
        return K.wells_grad(G, a, spec.p, spec.well_matrices())
    if spec.is_linear_kind:
        return K.symwells_grad(G, a, spec.p, spec.sym_wells())
    if spec.grad_fn is None:
        raise DensityError("custom-sampled density has no analytic gradient")
    if xs is None:
        raise DensityError("custom-sampled batch evaluation needs sample points")
    out = np.empty_like(G)
    for i in range(G.shape[0]):
        out[i] = np.asarray(spec.grad_fn(xs[i] % 1.0, G[i])) * a[i]
    return out


def has_grad(spec: DensitySpec) -> bool:
    return spec.kind != "custom-sampled" or spec.grad_fn is not None


def eval(spec: DensitySpec, x, X) -> float:  # noqa: A001 - spec-mandated name
    """Evaluate f(x, X); x is reduced modulo the unit period."""
    x = _check_point(spec, x)
    X = _check_matrix(spec, X)
    a = spec.coefficient(x)
    if spec.kind == "custom-sampled":
        return float(spec.fn(x % 1.0, X)) * a
    return float(batch_eval(spec, np.array([a]), X[None, :, :])[0])


def eval_grad_X(spec: DensitySpec, x, X) -> np.ndarray:
    """df/dX at (x, X); at kinks returns the first-branch subgradient."""
    x = _check_point(spec, x)
    X = _check_matrix(spec, X)
    a = spec.coefficient(x)
    if spec.kind == "custom-sampled" and spec.grad_fn is not None:
        return np.asarray(spec.grad_fn(x % 1.0, X), dtype=float) * a
    return batch_grad(spec, np.array([a]), X[None, :, :])[0].copy()


# -- SO(n) geometry -------------------------------------------------------------

def dist_SO(X) -> float:
    """Frobenius distance of a square matrix to the proper rotations SO(n).

    Computed from the singular values: for det X >= 0 the squared distance is
    sum (sigma_i - 1)^2; for det X < 0 the smallest singular value flips sign
    (distance to the nearest proper rotation).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] > 3:
        raise DensityError(f"dist_SO expects a square matrix of size <= 3, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DensityError("non-finite matrix argument")
    s = np.linalg.svd(X, compute_uv=False)
    if np.linalg.det(X) < 0.0:
        s = s.copy()
        s[-1] = -s[-1]
    return float(np.sqrt(np.sum((s - 1.0) ** 2)))


def polar_correction(X, delta: float) -> np.ndarray:
    """Second-order misfit of the polar factor, q = Y - (I + delta X_sym).

    Y = sqrt((I + delta X)^T (I + delta X)) is the symmetric polar factor;
    |q| <= C min(|delta X|, |delta X|^2) with an empirically fitted C.
    Rejects orientation-reversing I + delta X.
    """
    if delta <= 0.0:
        raise DensityError("delta must be positive")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    A = np.eye(n) + delta * X
    det = np.linalg.det(A)
    if det <= 0.0:
        raise DensityError(
            f"I + delta X must be orientation-preserving, det = {det:.3e}")
    S = A.T @ A
    lam, V = np.linalg.eigh(S)
    Y = (V * np.sqrt(lam)) @ V.T
    return Y - np.eye(n) - delta * 0.5 * (X + X.T)


def linearize(spec: DensitySpec, x, X, delta: Optional[float] = None) -> float:
    """delta^-p W_delta(x, I + delta X), the geometric linearization integrand.

    Uses the family's own delta by default; an explicit delta both rescales
    and moves delta-dependent wells (multi-well).
    """
    d = spec.delta if delta is None else float(delta)
    if d <= 0.0:
        raise DensityError("linearize requires delta > 0")
    fam = family_at(spec, d)
    X = _check_matrix(spec, X)
    return d ** (-spec.p) * eval(fam, x, np.eye(spec.n) + d * X)


# -- equivalence metric ---------------------------------------------------------

def _matrix_net(n: int, R: float, nX: int, sym_only: bool) -> np.ndarray:
    """Uniform per-entry grid on [-R, R]^{n x n} intersected with |X| <= R."""
    axis = np.linspace(-R, R, nX)
    if sym_only:
        m = n * (n + 1) // 2
        grids = np.meshgrid(*([axis] * m), indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=-1)
        X = np.zeros((flat.shape[0], n, n))
        pos = 0
        for i in range(n):
            for j in range(i, n):
                X[:, i, j] = flat[:, pos]
                X[:, j, i] = flat[:, pos]
                pos += 1
    else:
        m = n * n
        grids = np.meshgrid(*([axis] * m), indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=-1)
        X = flat.reshape(-1, n, n)
    keep = np.sqrt(np.einsum("eij,eij->e", X, X)) <= R + 1e-12
    return X[keep]


def _x_grid(n: int, T: float, nx: int) -> np.ndarray:
    per_axis = max(1, int(round(2.0 * T * nx)))
    centers = -T + (np.arange(per_axis) + 0.5) * (2.0 * T / per_axis)
    grids = np.meshgrid(*([centers] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _evaluator(f):
    """Normalize a DensitySpec or a callable f(x, X) to a batch evaluator."""
    if isinstance(f, DensitySpec):
        def ev(x, Xs):
            a = np.full(Xs.shape[0], f.coefficient(x))
            if f.kind == "custom-sampled":
                return np.array([f.fn(x % 1.0, Xi) for Xi in Xs]) * a
            return batch_eval(f, a, Xs)
        return ev
    def ev(x, Xs):
        return np.array([float(f(x, Xi)) for Xi in Xs])
    return ev


def equivalence_metric(f, g, R: float, T: float, nx: int = 4, nX: int = 5,
                       sym_only: bool = False) -> float:
    """Sampled version of the density-equivalence quantity.

    Averages over a uniform x-grid on (-T, T)^n the maximum over a finite net
    of the matrix ball {|X| <= R} (its symmetric slice when ``sym_only``) of
    |f - g|. The net maximum is a lower-biased estimate of the true supremum.
    """
    if R <= 0.0 or T <= 0.0:
        raise DensityError("R and T must be positive")
    if isinstance(f, DensitySpec):
        n = f.n
    elif isinstance(g, DensitySpec):
        n = g.n
    else:
        raise DensityError("at least one argument must be a DensitySpec "
                           "(the dimension is read from it)")
    net = _matrix_net(n, R, nX, sym_only)
    xs = _x_grid(n, T, nx)
    fe = _evaluator(f)
    ge = _evaluator(g)
    total = 0.0
    for x in xs:
        diff = np.abs(fe(x, net) - ge(x, net))
        total += float(np.max(diff))
    return total / xs.shape[0]


# -- admissibility -----------------------------------------------------------------

@dataclass
class CheckResult:
    passed: bool
    worst_violation: float = 0.0
    witness: Optional[tuple] = None  # (x, X, R) of the worst failure


@dataclass
class AdmissibilityReport:
    frame_indifferent: CheckResult
    growth_upper: CheckResult
    nondegeneracy: CheckResult
    samples_used: int

    @property
    def all_passed(self) -> bool:
        return (self.frame_indifferent.passed and self.growth_upper.passed
                and self.nondegeneracy.passed)


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform SO(n): orthonormalized Gaussian matrix, determinant corrected."""
    if n == 1:
        return np.array([[1.0]])
    A = rng.standard_normal((n, n))
    Q, Rr = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(Rr))
    if np.linalg.det(Q) < 0.0:
        Q[:, -1] = -Q[:, -1]
    return Q


def check_admissibility(spec: DensitySpec, n_samples: int = 1000,
                        seed: int = 0) -> AdmissibilityReport:
    """Sample-based test of frame indifference, growth and non-degeneracy.

    Frame indifference: |f(x, RX) - f(x, X)| <= 1e-10 (1 + |f|) for R drawn
    uniformly on SO(n). Growth: f <= beta(|X|^p + 1). Non-degeneracy, by
    family: well kinds f >= c dist^p(X, SO(n)) - C delta_w^p with delta_w the
    actual well spread; linear kinds f >= c |X_sym|^p; p-norm kinds the
    standard growth f >= c |X|^p - C. Failures are reported, never raised.
    """
    if n_samples < 1:
        raise DensityError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    n, p = spec.n, spec.p
    beta = spec.growth_beta()
    c, C = spec.lower_constants()
    fi = CheckResult(passed=True)
    gu = CheckResult(passed=True)
    nd = CheckResult(passed=True)

    if spec.kind in WELL_KINDS:
        M = spec.well_matrices()
        delta_w = max(spec.delta, max(dist_SO(Mi) for Mi in M))
    else:
        delta_w = spec.delta

    for _ in range(n_samples):
        x = rng.random(n)
        scale = 10.0 ** rng.uniform(-1.0, 1.0)
        X = scale * rng.standard_normal((n, n))
        R = random_rotation(n, rng)
        fX = eval(spec, x, X)

        v = abs(eval(spec, x, R @ X) - fX)
        tol = 1e-10 * (1.0 + abs(fX))
        if v > tol and v - tol > fi.worst_violation:
            fi = CheckResult(False, v - tol, (x, X, R))

        normX = float(np.linalg.norm(X))
        g = fX - beta * (normX ** p + 1.0)
        if g > 1e-9 * beta and g > gu.worst_violation:
            gu = CheckResult(False, g, (x, X, R))

        if spec.kind in WELL_KINDS:
            bound = c * dist_SO(X) ** p - C * delta_w ** p
        elif spec.is_linear_kind:
            Xs = 0.5 * (X + X.T)
            bound = c * float(np.linalg.norm(Xs)) ** p
        elif spec.kind in PNORM_KINDS:
            bound = c * normX ** p - C
        else:
            bound = -math.inf
        d = bound - fX
        if d > 1e-9 * (1.0 + abs(bound)) and d > nd.worst_violation:
            nd = CheckResult(False, d, (x, X, R))

    return AdmissibilityReport(frame_indifferent=fi, growth_upper=gu,
                               nondegeneracy=nd, samples_used=n_samples)

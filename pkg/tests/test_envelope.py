"""Envelope bounds: cell estimates, 1D convexification, laminates, ordering."""

import numpy as np
import pytest

import gammacell as gc
from gammacell.envelope import convexify_1d, laminate, qc_cell
from gammacell.minimize import SolveOptions

FAST = SolveOptions(n_starts=4, seed=0)


def rot2(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


class TestQcCell:
    def test_convex_density_unchanged(self):
        X = np.array([[0.7, 0.2], [0.0, -0.3]])
        r = qc_cell(gc.constant_pnorm(2), X, res=6, opts=FAST)
        assert r.value == pytest.approx(float(np.sum(X * X)), abs=1e-8)
        assert r.method == "qc-cell"
        assert r.meta["bound"] == "upper"

    def test_double_well_at_origin(self):
        r = qc_cell(gc.double_well_1d(), [[0.0]], res=128, opts=FAST)
        assert r.value <= 0.05

    def test_dist_density_zero_on_rotations(self):
        r = qc_cell(gc.single_well(2), rot2(np.pi / 2), res=6, opts=FAST)
        assert r.value == 0.0

    def test_resolution_monotonicity(self):
        vals = [qc_cell(gc.double_well_1d(), [[0.5]], res=r, opts=FAST).value
                for r in (16, 32, 64)]
        for a, b in zip(vals, vals[1:]):
            assert b <= a + 1e-8

    def test_rejects_x_dependence(self):
        spec = gc.two_phase_pnorm(1)
        with pytest.raises(ValueError):
            qc_cell(spec, [[1.0]], res=8)


class TestConvexify1D:
    def test_convex_samples_reproduced(self):
        xs = np.linspace(-1.0, 2.0, 61)
        ys = xs ** 2 + 0.5 * xs
        hull = convexify_1d(xs, ys)
        np.testing.assert_allclose(hull(xs), ys, atol=1e-12)

    def test_double_well_common_tangent(self):
        xs = np.arange(-2.0, 2.0 + 1e-12, 0.01)
        ys = np.minimum((xs - 1.0) ** 2, (xs + 1.0) ** 2)
        hull = convexify_1d(xs, ys)
        ref = np.where(np.abs(xs) > 1.0, (np.abs(xs) - 1.0) ** 2, 0.0)
        assert float(np.max(np.abs(hull(xs) - ref))) <= 1e-3
        assert hull(0.0) == pytest.approx(0.0, abs=1e-4)
        assert hull(2.0) == pytest.approx(1.0, abs=1e-12)

    def test_two_points_give_segment(self):
        hull = convexify_1d([0.0, 1.0], [2.0, 4.0])
        assert hull(0.5) == pytest.approx(3.0)

    def test_hull_below_samples_and_convex(self):
        rng = np.random.default_rng(7)
        xs = np.sort(rng.uniform(-3, 3, 200))
        xs += np.arange(200) * 1e-9  # enforce strict monotonicity
        ys = rng.standard_normal(200).cumsum()
        hull = convexify_1d(xs, ys)
        assert np.all(hull(xs) <= ys + 1e-12)
        slopes = np.diff(hull.ys) / np.diff(hull.xs)
        assert np.all(np.diff(slopes) >= -1e-12)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            convexify_1d([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            convexify_1d([1.0], [1.0])


class TestLaminate:
    def test_convex_density_unchanged(self):
        for depth in (1, 2):
            r = laminate(gc.constant_pnorm(1), [[0.5]], depth=depth,
                         window=2.0, step=0.25)
            assert r.value == pytest.approx(0.25, abs=1e-12)

    def test_double_well_exact_split(self):
        r = laminate(gc.double_well_1d(), [[0.0]], depth=1, window=2.5,
                     step=0.125)
        assert r.value == 0.0

    def test_double_well_outside_wells(self):
        r = laminate(gc.double_well_1d(), [[1.5]], depth=2, window=2.5,
                     step=0.125)
        assert r.value == pytest.approx(0.25, abs=1e-12)

    def test_depth_monotonicity(self):
        vals = [laminate(gc.double_well_1d(), [[0.3]], depth=d, window=2.5,
                         step=0.125).value for d in (1, 2, 3)]
        for a, b in zip(vals, vals[1:]):
            assert b <= a + 1e-15

    def test_dist_squared_relaxes_at_zero(self):
        # splits along rank-one directions reach near the rotations
        r = laminate(gc.single_well(2), np.zeros((2, 2)), depth=2,
                     window=2.0, step=0.25)
        f0 = gc.density.eval(gc.single_well(2), [0.0, 0.0], np.zeros((2, 2)))
        assert f0 == pytest.approx(2.0)
        assert r.value == pytest.approx(1.0, abs=1e-12)

    def test_dist_squared_relaxes_at_negative_det(self):
        X = np.diag([-0.5, 1.0])
        r = laminate(gc.single_well(2), X, depth=3, window=2.0, step=0.25)
        f = gc.density.eval(gc.single_well(2), [0.0, 0.0], X)
        assert r.value < f - 0.1

    def test_memory_guard(self):
        with pytest.raises(MemoryError):
            laminate(gc.single_well(3), np.zeros((3, 3)), depth=1,
                     window=2.0, step=0.25)

    def test_depth_validation(self):
        with pytest.raises(ValueError):
            laminate(gc.double_well_1d(), [[0.0]], depth=0)


class TestOrdering:
    def test_1d_scalar_chain(self):
        # convexification <= qc bound <= laminate bound <= f at sample points
        spec = gc.double_well_1d()
        xs = np.arange(-2.0, 2.0 + 1e-12, 0.01)
        ys = np.minimum((xs - 1.0) ** 2, (xs + 1.0) ** 2)
        hull = convexify_1d(xs, ys)
        for X in (-1.5, -0.5, 0.0, 0.75, 1.25):
            h = float(hull(X))
            q = qc_cell(spec, [[X]], res=64, opts=FAST).value
            l = laminate(spec, [[X]], depth=2, window=2.5, step=0.125).value
            f = gc.density.eval(spec, [0.5], [[X]])
            assert h <= q + 0.05
            assert q <= l + 0.05
            assert l <= f + 1e-12

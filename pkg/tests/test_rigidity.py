"""Korn/rigidity constant estimation and the coercivity diagnostics."""

import numpy as np
import pytest

import gammacell as gc
from gammacell.grid import Field, build_grid
from gammacell.minimize import SolveOptions
from gammacell.rigidity import (garding_check, grad_pnorm, korn_constant,
                                rigidity_ratio, two_rotation_field,
                                value_pnorm, zhang_check)


def rot2(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


class TestNormHelpers:
    def test_gradient_of_grad_pnorm(self):
        g = build_grid(2, 1, 4)
        rng = np.random.default_rng(2)
        v = rng.standard_normal((g.n_nodes, 2))
        for sym in (False, True):
            val, grad = grad_pnorm(g, v, 2.0, sym)
            h = 1e-6
            for node, comp in ((3, 0), (7, 1)):
                p = v.copy()
                p[node, comp] += h
                vp, _ = grad_pnorm(g, p, 2.0, sym)
                p[node, comp] -= 2 * h
                vm, _ = grad_pnorm(g, p, 2.0, sym)
                assert grad[node, comp] == pytest.approx((vp - vm) / (2 * h),
                                                         rel=1e-5, abs=1e-9)

    def test_gradient_of_value_pnorm(self):
        g = build_grid(2, 1, 4)
        rng = np.random.default_rng(3)
        v = rng.standard_normal((g.n_nodes, 2))
        val, grad = value_pnorm(g, v, 2.0)
        h = 1e-6
        for node, comp in ((5, 0), (11, 1)):
            p = v.copy()
            p[node, comp] += h
            vp, _ = value_pnorm(g, p, 2.0)
            p[node, comp] -= 2 * h
            vm, _ = value_pnorm(g, p, 2.0)
            assert grad[node, comp] == pytest.approx((vp - vm) / (2 * h),
                                                     rel=1e-5, abs=1e-9)

    def test_rotation_field_norms_match_closed_form(self):
        # u = Wx on the unit square: avg|grad u|^2 = 2 w^2, e(u) = 0,
        # avg|u|^2 = w^2 integral(|x|^2) = 2 w^2 / 3
        g = build_grid(2, 1, 32)
        W = np.array([[0.0, -2.0], [2.0, 0.0]])
        v = g.nodes @ W.T
        A, _ = grad_pnorm(g, v, 2.0, False)
        S, _ = grad_pnorm(g, v, 2.0, True)
        M, _ = value_pnorm(g, v, 2.0)
        assert A == pytest.approx(8.0, rel=1e-12)
        assert S == pytest.approx(0.0, abs=1e-20)
        assert M == pytest.approx(8.0 / 3.0, rel=1e-2)  # quadrature error O(h^2)


class TestKorn:
    def test_rotation_quotient_is_lower_bound(self):
        # the rigid rotation gives |grad u| / |u| = sqrt(3) on the unit square
        g = build_grid(2, 1, 16)
        est = korn_constant(g, n_starts=2, seed=0)
        assert est.value >= np.sqrt(3.0) - 0.01
        assert est.certified_side == "lower bound of true constant"

    def test_stable_under_refinement(self):
        c16 = korn_constant(build_grid(2, 1, 16), n_starts=3, seed=0)
        c32 = korn_constant(build_grid(2, 1, 32), n_starts=3, seed=0)
        assert abs(c32.value - c16.value) / c16.value <= 0.15

    def test_other_p_uses_random_search(self):
        est = korn_constant(build_grid(2, 1, 8), p=3.0, n_starts=3, seed=1)
        assert est.method == "random-search"
        assert est.value > 0.0


class TestRigidityRatio:
    def test_constant_rotation_skipped(self):
        g = build_grid(2, 1, 8)
        fld = Field(g, g.nodes @ rot2(0.7).T)
        est = rigidity_ratio(g, [fld])
        assert est.samples[0]["skipped"]
        assert est.samples[0]["ratio"] == 1.0

    def test_two_rotation_field_exceeds_one(self):
        g = build_grid(2, 1, 16)
        fld = two_rotation_field(g, 0.0, 0.8)
        est = rigidity_ratio(g, [fld])
        assert est.value > 1.0

    def test_ratio_at_least_one_on_nontrivial_fields(self):
        g = build_grid(2, 1, 8)
        rng = np.random.default_rng(4)
        fields = [Field(g, g.nodes + 0.1 * rng.standard_normal((g.n_nodes, 2)))
                  for _ in range(5)]
        est = rigidity_ratio(g, fields)
        for s in est.samples:
            assert s["ratio"] >= 1.0 - 1e-12

    def test_p3_search_matches_p2_on_symmetric_case(self):
        g = build_grid(2, 1, 8)
        fld = two_rotation_field(g, 0.0, 0.6)
        e2 = rigidity_ratio(g, [fld], p=2.0)
        e3 = rigidity_ratio(g, [fld], p=3.0)
        assert e3.value > 1.0
        assert e2.value == pytest.approx(e3.value, rel=0.5)

    def test_harvested_minimizer_sample(self):
        # reuse a cell minimizer as a sample, as the experiments do
        r = gc.cell_energy(gc.CellJob(spec=gc.single_well(2), X=0.2 * np.eye(2),
                                      k=1, res=8,
                                      opts=SolveOptions(n_starts=2)))
        g = r.solve.field.grid
        deformation = Field(g, g.nodes + r.solve.field.values)
        est = rigidity_ratio(g, [deformation])
        assert est.value >= 1.0 - 1e-12


class TestZhang:
    def test_exact_zero_margins_on_rotations(self):
        spec = gc.single_well(2)
        samples = [np.eye(2), rot2(np.pi / 2), rot2(np.pi)]
        rep = zhang_check(spec, samples, C_est=1.5, res=6,
                          opts=SolveOptions(n_starts=2))
        for row in rep.rows:
            assert row.lhs == 0.0
            assert row.rhs == 0.0
        assert rep.passed

    def test_origin_passes_when_c_at_least_one(self):
        spec = gc.single_well(2)
        rep = zhang_check(spec, [np.zeros((2, 2))], C_est=1.5, res=6,
                          opts=SolveOptions(n_starts=2))
        row = rep.rows[0]
        assert row.rhs == pytest.approx(1.5 ** -2 * 2.0)
        assert row.margin >= 0.0

    def test_margin_table_along_diagonal(self):
        spec = gc.single_well(2)
        samples = [np.diag([s, 1.0]) for s in (0.0, 0.5, 1.0, 1.5, 2.0)]
        rep = zhang_check(spec, samples, C_est=1.5, res=6,
                          opts=SolveOptions(n_starts=2))
        assert rep.passed
        assert len(rep.rows) == 5

    def test_requires_homogeneous_single_well(self):
        with pytest.raises(ValueError):
            zhang_check(gc.constant_pnorm(2), [np.eye(2)], C_est=1.0)


class TestGarding:
    def test_pnorm_with_unit_alpha_passes_identically(self):
        spec = gc.constant_pnorm(2)
        est = garding_check(spec, build_grid(2, 1, 6), alpha=1.0, gamma=0.0,
                            n_fields=8, seed=0)
        assert est.passed
        assert est.worst_value == pytest.approx(0.0, abs=1e-12)

    def test_absurd_alpha_fails_with_witness(self):
        spec = gc.constant_pnorm(2)
        est = garding_check(spec, build_grid(2, 1, 6), alpha=40.0, gamma=0.0,
                            n_fields=8, seed=0)
        assert not est.passed
        assert est.worst_value < 0.0
        assert est.worst_field is not None

    def test_single_well_korn_route_candidate(self):
        # W >= dist^2 and the Korn-route constant alpha = c / (2 C^2) with
        # gamma sized accordingly; diagnostic should find no violation at a
        # generous gamma
        spec = gc.single_well(2)
        est = garding_check(spec, build_grid(2, 1, 6), alpha=0.05, gamma=10.0,
                            n_fields=10, seed=1)
        assert est.violations == 0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            garding_check(gc.constant_pnorm(2), build_grid(2, 1, 4),
                          alpha=0.0, gamma=0.0)

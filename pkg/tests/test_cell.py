"""Cell problems: oracle agreement, invariants, the regularized sweep, cache."""

import numpy as np
import pytest

import gammacell as gc
from gammacell.cell import (CellJob, HomEstimate, addition_trick, cell_energy,
                            f_hom_estimate, oracle_1d_homog, v_hom_estimate,
                            w_hom_delta)
from gammacell.minimize import SolveOptions

FAST = SolveOptions(n_starts=4, seed=0)


class TestOracle1D:
    def test_harmonic_mean(self):
        assert oracle_1d_homog([1.0, 4.0], [0.5, 0.5], 2.0, 1.0) == \
            pytest.approx(1.6)

    def test_single_phase(self):
        assert oracle_1d_homog([3.0], [1.0], 2.5, 1.0) == pytest.approx(3.0)

    def test_trivial_coefficients(self):
        assert oracle_1d_homog([1.0, 1.0], [0.3, 0.7], 3.0, 2.0) == \
            pytest.approx(8.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            oracle_1d_homog([1.0, -2.0], [0.5, 0.5], 2.0, 1.0)
        with pytest.raises(ValueError):
            oracle_1d_homog([1.0, 2.0], [0.5, 0.6], 2.0, 1.0)


class TestCellEnergy:
    @pytest.mark.parametrize("k", [1, 2])
    def test_convex_identity(self, k):
        r = cell_energy(CellJob(spec=gc.constant_pnorm(2), X=np.eye(2), k=k,
                                res=6, opts=FAST))
        assert r.m_value == pytest.approx(2.0, abs=1e-8)

    def test_two_phase_harmonic(self):
        spec = gc.two_phase_pnorm(1, a=(1.0, 4.0))
        r = cell_energy(CellJob(spec=spec, X=[[1.0]], k=8, res=64, opts=FAST))
        assert r.m_value == pytest.approx(1.6, rel=0.01)

    def test_double_well_relaxes(self):
        r = cell_energy(CellJob(spec=gc.double_well_1d(), X=[[0.0]], k=1,
                                res=128, opts=FAST))
        assert r.m_value <= 0.05

    def test_upper_bound_invariant(self):
        spec = gc.double_well_1d(phases=gc.density.layered_phases(1, (1.0, 2.0)))
        r = cell_energy(CellJob(spec=spec, X=[[0.4]], k=2, res=32, opts=FAST))
        assert r.m_value <= r.upper_bound + 1e-10

    def test_nonnegative_for_nonnegative_density(self):
        r = cell_energy(CellJob(spec=gc.single_well(2), X=0.3 * np.eye(2),
                                k=1, res=6, opts=FAST))
        assert r.m_value >= 0.0

    def test_translation_consistency(self):
        # shifting the phase map by a full period leaves the value unchanged
        spec = gc.two_phase_pnorm(1, a=(1.0, 4.0))
        r1 = cell_energy(CellJob(spec=spec, X=[[1.0]], k=4, res=16, opts=FAST))
        r2 = cell_energy(CellJob(spec=spec, X=[[1.0]], k=4, res=16, opts=FAST))
        assert r1.m_value == r2.m_value

    def test_job_validation(self):
        with pytest.raises(ValueError):
            CellJob(spec=gc.single_well(2), X=np.eye(2), k=1, res=4,
                    symmetrized=True)
        with pytest.raises(ValueError):
            CellJob(spec=gc.linearized_multi_well(2), X=np.eye(2), k=1, res=4)
        with pytest.raises(ValueError):
            CellJob(spec=gc.linearized_multi_well(2), X=np.eye(2), k=1,
                    res=4, symmetrized=True, delta=0.1)


class TestHomEstimates:
    def test_constant_density_flat_sequence(self):
        est = f_hom_estimate(gc.constant_pnorm(2), np.eye(2), [1, 2], res=4,
                             opts=FAST)
        assert est.monotone_ok
        assert abs(est.values[0] - est.values[1]) <= 1e-8
        assert est.estimate == est.values[-1]

    def test_two_phase_decreases_towards_oracle(self):
        spec = gc.two_phase_pnorm(1, a=(1.0, 4.0))
        est = f_hom_estimate(spec, [[1.0]], [1, 2, 4, 8], res=32, opts=FAST)
        assert est.monotone_ok
        assert est.estimate == pytest.approx(1.6, rel=0.01)

    def test_single_well_zero_on_identity(self):
        # X = I sits on the well, so the zero test field is optimal
        est = f_hom_estimate(gc.single_well(2,
                                            phases=gc.density.layered_phases(2)),
                             np.eye(2), [1, 2], res=4, opts=FAST)
        assert est.values == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_w_hom_zero_at_origin(self):
        # delta form at X = 0: I + delta grad(phi) = I at phi = 0
        est = w_hom_delta(gc.single_well(2,
                                         phases=gc.density.layered_phases(2)),
                          np.zeros((2, 2)), 0.3, [1, 2], res=4, opts=FAST)
        assert est.values == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_w_hom_homogeneous_single_well_linearizes(self):
        X = np.diag([0.3, -0.2])
        est = w_hom_delta(gc.single_well(2), X, 0.1, [1], res=8, opts=FAST)
        assert est.estimate == pytest.approx(float(np.sum(X * X)), rel=0.03)

    def test_v_hom_skew_argument_is_zero(self):
        W = np.array([[0.0, 1.0], [-1.0, 0.0]])
        est = v_hom_estimate(gc.linearized_multi_well(2), W, [1], res=4,
                             opts=FAST)
        assert est.estimate == pytest.approx(0.0, abs=1e-8)

    def test_v_hom_convex_symmetric(self):
        X = np.array([[0.5, 0.2], [0.2, -0.1]])
        est = v_hom_estimate(gc.linearized_multi_well(2), X, [1, 2], res=4,
                             opts=FAST)
        assert est.estimate == pytest.approx(float(np.sum(X * X)), abs=1e-8)

    def test_v_hom_layered_matches_1d_reduction(self):
        # layered linear composite under e1(x)e1 loading: the optimal field
        # depends on x1 only, so the 1D p-harmonic mean is the reference
        spec = gc.linearized_multi_well(2, phases=gc.density.layered_phases(2,
                                                                            (1.0, 4.0)))
        X = np.outer([1.0, 0.0], [1.0, 0.0])
        est = v_hom_estimate(spec, X, [2, 4], res=12, opts=FAST)
        ref = oracle_1d_homog([1.0, 4.0], [0.5, 0.5], 2.0, 1.0)
        assert est.estimate == pytest.approx(ref, rel=0.08)
        assert est.values[1] <= est.values[0] + 1e-10

    def test_tiling_monotonicity_flag(self):
        spec = gc.two_phase_pnorm(1, a=(1.0, 4.0))
        est = f_hom_estimate(spec, [[1.0]], [1, 2, 4], res=16, opts=FAST)
        for prev, cur in zip(est.values, est.values[1:]):
            assert cur <= prev + 10 * FAST.g_tol * (1.0 + abs(prev))

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            f_hom_estimate(gc.constant_pnorm(1), [[1.0]], [2, 2], res=4)
        with pytest.raises(ValueError):
            w_hom_delta(gc.single_well(2), np.eye(2), 0.0, [1, 2], res=4)
        with pytest.raises(ValueError):
            v_hom_estimate(gc.single_well(2), np.eye(2), [1], res=4)


class TestAdditionTrick:
    def test_constant_density_exact_values(self):
        sweep = addition_trick(gc.constant_pnorm(2), np.eye(2),
                               [1.0, 0.1, 0.0], k=1, res=4, opts=FAST)
        vals = [m for _, m, _ in sweep]
        assert vals[0] == pytest.approx(4.0, abs=1e-8)
        assert vals[1] == pytest.approx(2.2, abs=1e-8)
        assert vals[2] == pytest.approx(2.0, abs=1e-8)

    def test_double_well_decreases_to_relaxation(self):
        sweep = addition_trick(gc.double_well_1d(), [[0.0]],
                               [1.0, 0.3, 0.1, 0.03, 0.0], k=1, res=64,
                               opts=FAST)
        vals = [m for _, m, _ in sweep]
        assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
        assert vals[-1] <= 0.05

    def test_final_entry_equals_plain_cell_bitwise(self):
        spec = gc.double_well_1d()
        sweep = addition_trick(spec, [[0.2]], [0.5, 0.0], k=1, res=32,
                               opts=FAST)
        plain = cell_energy(CellJob(spec=spec, X=[[0.2]], k=1, res=32,
                                    opts=FAST))
        assert sweep[-1][1] == plain.m_value

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            addition_trick(gc.double_well_1d(), [[0.0]], [0.1, 1.0, 0.0],
                           k=1, res=16)
        with pytest.raises(ValueError):
            addition_trick(gc.double_well_1d(), [[0.0]], [1.0, 0.1],
                           k=1, res=16)


class TestCache:
    def test_roundtrip_identical_values(self, tmp_path):
        spec = gc.two_phase_pnorm(1, a=(1.0, 4.0))
        job = CellJob(spec=spec, X=[[1.0]], k=2, res=16, opts=FAST)
        r1 = cell_energy(job, cache_dir=str(tmp_path))
        assert not r1.from_cache
        r2 = cell_energy(job, cache_dir=str(tmp_path))
        assert r2.from_cache
        assert r2.m_value == r1.m_value
        assert r2.upper_bound == r1.upper_bound
        np.testing.assert_array_equal(r2.solve.field.values,
                                      r1.solve.field.values)

    def test_fingerprint_distinguishes_jobs(self):
        spec = gc.double_well_1d()
        a = CellJob(spec=spec, X=[[0.0]], k=1, res=16).fingerprint()
        b = CellJob(spec=spec, X=[[0.5]], k=1, res=16).fingerprint()
        c = CellJob(spec=spec, X=[[0.0]], k=1, res=16).fingerprint()
        assert a != b
        assert a == c

    def test_cache_layout(self, tmp_path):
        spec = gc.constant_pnorm(1)
        job = CellJob(spec=spec, X=[[1.0]], k=1, res=8, opts=FAST)
        r = cell_energy(job, cache_dir=str(tmp_path))
        entry = tmp_path / r.fingerprint
        assert sorted(p.name for p in entry.iterdir()) == \
            ["field.bin", "result.json"]

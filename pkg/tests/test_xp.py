"""Experiment harness: sweeps, report round-trips, plots, reproducibility."""

import numpy as np
import pytest

import gammacell as gc
from gammacell.minimize import SolveOptions
from gammacell.xp import (ExperimentPlan, SweepReport, SweepRow, plot,
                          read_report, read_report_csv, rel_err,
                          run_addition, run_commutability, run_diagonal,
                          run_equivalence_profile, run_homog, write_report)

FAST = SolveOptions(n_starts=3, seed=0)


def _one_well_plan(**kw):
    # one shifted well, the family whose linearization misses at order delta
    U = [[0.5, 0.2], [0.2, -0.3]]
    W = gc.multi_well(2, delta=0.1, wells=[U])
    defaults = dict(density=W, deltas=(0.2, 0.1, 0.05), Ts=(1, 2), nx=1,
                    nX=5, opts=FAST)
    defaults.update(kw)
    return ExperimentPlan(**defaults)


def _layered_1d_plan(**kw):
    W = gc.single_well(1, phases=gc.density.layered_phases(1, (1.0, 4.0)))
    defaults = dict(density=W, Xs=([[1.0]],), k_schedule=(1, 2), res=16,
                    deltas=(0.4, 0.2), opts=FAST)
    defaults.update(kw)
    return ExperimentPlan(**defaults)


class TestCommutability:
    def test_exactly_linearizing_family(self):
        # 1D a(x) (X-1)^2 rescales to a(x) X^2 for every delta, so the
        # rel_err profile is at solver-noise level and trivially monotone
        rep = run_commutability(_layered_1d_plan())
        prof = rep.metadata["commutability"]["commute[X0]"]
        assert prof["monotone_ok"]
        assert all(e <= 1e-6 for e in prof["rel_err"])
        assert prof["v_ref"] == pytest.approx(1.6, rel=0.01)

    def test_zero_matrix_both_sides_zero(self):
        rep = run_commutability(_layered_1d_plan(Xs=([[0.0]],)))
        prof = rep.metadata["commutability"]["commute[X0]"]
        assert prof["v_ref"] == pytest.approx(0.0, abs=1e-10)
        assert all(e == pytest.approx(0.0, abs=1e-6) for e in prof["rel_err"])

    def test_single_delta_vacuously_monotone(self):
        rep = run_commutability(_layered_1d_plan(deltas=(0.3,)))
        assert rep.metadata["commutability"]["commute[X0]"]["monotone_ok"]

    def test_rows_carry_both_kinds(self):
        rep = run_commutability(_layered_1d_plan())
        kinds = {r.kind for r in rep.rows}
        assert kinds == {"v_hom", "w_hom_delta"}

    def test_workers_do_not_change_values(self):
        r1 = run_commutability(_layered_1d_plan())
        r2 = run_commutability(_layered_1d_plan(workers=4))
        assert [r.value for r in r1.rows] == [r.value for r in r2.rows]


class TestEquivalence:
    def test_shifted_well_slope(self):
        rep = run_equivalence_profile(_one_well_plan(
            deltas=(0.2, 0.1, 0.05, 0.025)))
        prof = rep.metadata["equivalence"]
        assert prof["monotone_ok"]
        slope = np.polyfit(np.log(rep.metadata["equivalence"]["deltas"]),
                           np.log(prof["t_max"]), 1)[0]
        assert slope >= 0.9

    def test_exactly_consistent_family_is_noise(self):
        # the unshifted well linearizes exactly on symmetric arguments
        W = gc.single_well(2)
        plan = ExperimentPlan(density=W, deltas=(0.2, 0.1), Ts=(1,), nx=1,
                              nX=3, opts=FAST)
        rep = run_equivalence_profile(plan)
        assert all(r.value <= 1e-12 for r in rep.rows)

    def test_small_R_shrinks_metric(self):
        big = run_equivalence_profile(_one_well_plan(R=1.0, deltas=(0.1,)))
        small = run_equivalence_profile(_one_well_plan(R=0.25, deltas=(0.1,)))
        assert small.rows[0].value <= big.rows[0].value

    def test_T_stored_in_k_column(self):
        rep = run_equivalence_profile(_one_well_plan(Ts=(1, 2)))
        assert sorted({r.k for r in rep.rows}) == [1, 2]

    def test_rejects_non_well_family(self):
        plan = ExperimentPlan(density=gc.constant_pnorm(2),
                              linearization=gc.linearized_multi_well(2))
        with pytest.raises(ValueError):
            run_equivalence_profile(plan)


class TestDiagonal:
    def test_converges_to_reference(self):
        rep = run_diagonal(_layered_1d_plan(
            diagonal=((1, 0.4), (2, 0.2), (4, 0.1))))
        prof = rep.metadata["diagonal"]["diagonal[X0]"]
        assert prof["converged_ok"]
        assert prof["final_rel_err"] <= 0.1

    def test_constant_delta_schedule_is_fixed_integrand_sweep(self):
        rep = run_diagonal(_layered_1d_plan(
            diagonal=((1, 0.3), (2, 0.3), (4, 0.3))))
        vals = rep.metadata["diagonal"]["diagonal[X0]"]["values"]
        # fixed delta: the diagonal is exactly the k-sweep of the rescaled
        # integrand
        ref = gc.w_hom_delta(_layered_1d_plan().density, [[1.0]], 0.3,
                             [1, 2, 4], res=16, opts=FAST)
        np.testing.assert_array_equal(vals, ref.values)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            run_diagonal(_layered_1d_plan(diagonal=()))
        with pytest.raises(ValueError):
            run_diagonal(_layered_1d_plan(diagonal=((2, 0.4), (1, 0.2))))
        with pytest.raises(ValueError):
            run_diagonal(_layered_1d_plan(diagonal=((1, 0.2), (2, 0.4))))


class TestAddition:
    def test_lambda_in_delta_column(self):
        plan = ExperimentPlan(density=gc.double_well_1d(), Xs=([[0.0]],),
                              k_schedule=(1,), res=32,
                              lambdas=(1.0, 0.1, 0.0), opts=FAST)
        rep = run_addition(plan)
        assert [r.delta for r in rep.rows] == [1.0, 0.1, 0.0]
        prof = rep.metadata["addition"]["addition[X0]"]
        assert prof["monotone_ok"]


class TestReports:
    def _tiny_report(self):
        rep = SweepReport(metadata={"config_hash": "abc", "seed": 1})
        rep.append(SweepRow(experiment="t", X=(1.0, 0.0, 0.0, 1.0),
                            delta=0.1, k=2, res=8, kind="v_hom",
                            value=1.2345678901234567, converged=True,
                            wall_time_s=0.25, seed=1))
        return rep

    def test_empty_csv_is_header_only(self, tmp_path):
        write_report(SweepReport(), "csv", tmp_path / "empty.csv")
        lines = (tmp_path / "empty.csv").read_text().strip().splitlines()
        assert lines == ["experiment,X,delta,k,res,kind,value,converged,"
                         "wall_time_s,seed"]

    def test_csv_roundtrip_exact(self, tmp_path):
        rep = self._tiny_report()
        write_report(rep, "csv", tmp_path / "r.csv")
        back = read_report_csv(tmp_path / "r.csv")
        assert back.rows[0].value == rep.rows[0].value
        assert back.rows[0].X == rep.rows[0].X
        assert back.rows[0].converged is True

    def test_json_roundtrip_exact(self, tmp_path):
        rep = self._tiny_report()
        write_report(rep, "json", tmp_path / "r.json")
        back = read_report(tmp_path / "r.json")
        assert back.rows[0].value == rep.rows[0].value
        assert back.metadata["config_hash"] == "abc"

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            SweepRow(experiment="t", X=None, delta=0.0, k=1, res=4,
                     kind="bogus", value=0.0, converged=True,
                     wall_time_s=0.0, seed=0)

    def test_rel_err_guard(self):
        assert rel_err(1.0, 0.0) == pytest.approx(1e12)
        assert rel_err(0.0, 0.0) == 0.0


class TestPlots:
    def test_commutability_rel_err_plot(self, tmp_path):
        rep = run_commutability(_layered_1d_plan())
        path = tmp_path / "commute.svg"
        plot(rep, "rel_err", path, logx=True)
        text = path.read_text()
        assert text.startswith("<svg")
        assert "polyline" in text
        assert "rel_err" in text

    def test_row_kind_plot(self, tmp_path):
        rep = run_homog(_layered_1d_plan())
        path = tmp_path / "homog.svg"
        plot(rep, "w_hom_delta", path)
        assert "polyline" in path.read_text()

    def test_empty_plot_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            plot(SweepReport(), "v_hom", tmp_path / "x.svg")


class TestReproducibility:
    def test_rerun_bit_identical(self, tmp_path):
        plan1 = _layered_1d_plan(cache_dir=str(tmp_path / "cache"))
        rep1 = run_commutability(plan1)
        plan2 = _layered_1d_plan(cache_dir=str(tmp_path / "cache"))
        rep2 = run_commutability(plan2)  # second run hits the cache
        plan3 = _layered_1d_plan()
        rep3 = run_commutability(plan3)  # recompute without cache
        v1 = [r.value for r in rep1.rows]
        v2 = [r.value for r in rep2.rows]
        v3 = [r.value for r in rep3.rows]
        assert v1 == v2 == v3

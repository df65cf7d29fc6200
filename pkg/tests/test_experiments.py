"""Replicated experiments: determinism, record shape, df family ledger."""

import numpy as np
import pytest

from lcmcr import (
    FitConfig,
    ValidationError,
    df_family_table,
    run_critique,
    run_scenario1,
)

QUICK = FitConfig(seed=0, num_starts=4, tol=1e-7, max_iter=2000)


@pytest.fixture(scope="module")
def small_scenario1():
    return run_scenario1(3, 20_000, seed=11, fit_config=QUICK)


@pytest.fixture(scope="module")
def small_critique():
    return run_critique(3, 20_000, seed=12, fit_config=QUICK)


class TestDfFamilyTable:
    def test_exact_ledger(self):
        rows = df_family_table()
        assert [r["model"] for r in rows] == [
            "[AX][BX][CX][DX]",
            "[AX][BX][CX][DX][CD]",
            "[AX][BX][CDX]",
            "[ABX][CDX]",
            "[ABCX][DX]",
        ]
        assert all(r["independent_cells"] == 14 for r in rows)
        assert [r["parameter_count"] for r in rows] == [9, 10, 11, 13, 17]
        assert [r["degrees_of_freedom"] for r in rows] == [5, 4, 3, 1, -3]
        assert [r["flag"] for r in rows] == ["ok", "ok", "ok", "ok", "negative"]

    def test_stops_at_first_negative(self):
        assert sum(r["degrees_of_freedom"] < 0 for r in df_family_table()) == 1


class TestScenario1Experiment:
    def test_record_shape(self, small_scenario1):
        report = small_scenario1
        assert report.experiment_id == "scenario1"
        assert len(report.records) == 3
        for rec in report.records:
            assert not rec["fit_failed"]
            assert {"replicate", "sim_seed", "fit_seed", "rel_bias_standard", "rel_bias_target_only"} <= set(rec)
            assert rec["n_observed"] > 0

    def test_bias_definitions(self, small_scenario1):
        for rec in small_scenario1.records:
            truth_all = sum(rec["true_class_sizes"])
            expected = (rec["total_standard"] - truth_all) / truth_all
            assert rec["rel_bias_standard"] == pytest.approx(expected, abs=1e-12)
            expected_t = (rec["total_target_only"] - rec["true_target_size"]) / rec["true_target_size"]
            assert rec["rel_bias_target_only"] == pytest.approx(expected_t, abs=1e-12)

    def test_aggregates_counted(self, small_scenario1):
        agg = small_scenario1.aggregates
        assert agg["replicates"] == 3
        assert agg["fit_failures"] == 0
        assert agg["replicates_used"] + agg["non_converged"] == 3
        assert len(agg["mean_fitted_inclusion_probs"]) == 2
        assert len(agg["mean_fitted_inclusion_probs"][0]) == 4

    def test_same_seed_reproduces_report(self, small_scenario1):
        again = run_scenario1(3, 20_000, seed=11, fit_config=QUICK)
        assert again.to_json_dict() == small_scenario1.to_json_dict()

    def test_threads_do_not_change_report(self, small_scenario1):
        threaded = run_scenario1(3, 20_000, seed=11, fit_config=QUICK, threads=3)
        assert threaded.to_json_dict() == small_scenario1.to_json_dict()

    def test_provenance_has_no_volatile_fields(self, small_scenario1):
        prov = small_scenario1.provenance
        assert "master_seed" in prov
        assert not any("time" in k or "thread" in k for k in prov)

    def test_csv_text(self, small_scenario1):
        text = small_scenario1.records_csv_text()
        lines = text.strip().split("\n")
        assert len(lines) == 4
        header = lines[0].split(",")
        assert header == sorted(header)
        assert "rel_bias_standard" in header

    def test_shared_cd_variant_needs_value(self):
        with pytest.raises(ValidationError):
            run_scenario1(1, 1000, seed=0, variant="shared-cd")
        with pytest.raises(ValidationError):
            run_scenario1(1, 1000, seed=0, variant="nope")
        with pytest.raises(ValidationError):
            run_scenario1(0, 1000, seed=0)

    def test_shared_cd_variant_records_interaction(self):
        report = run_scenario1(
            2, 20_000, seed=13, fit_config=QUICK, variant="shared-cd", cd_value=0.8
        )
        for rec in report.records:
            assert "fitted_cd_interaction" in rec
        fitted = [rec["fitted_cd_interaction"] for rec in report.records]
        assert abs(np.mean(fitted) - 0.8) < 0.3


class TestCritiqueExperiment:
    def test_origin_decomposition_fractions(self, small_critique):
        for rec in small_critique.records:
            if rec["fit_failed"]:
                continue
            fr = rec["origin_decomposition"]["fractions"]
            assert set(fr) == {"overcoverage", "hard_to_reach", "mainstream"}
            assert sum(fr.values()) == pytest.approx(1.0, abs=1e-9)
            masses = rec["origin_decomposition"]["mass_by_true_class"]
            total = rec["origin_decomposition"]["fitted_low_class_mass"]
            assert sum(masses.values()) == pytest.approx(total, rel=1e-9)

    def test_target_bias_is_negative_under_heterogeneity(self, small_critique):
        agg = small_critique.aggregates
        assert agg["median_rel_bias_target_only"] < -0.1
        assert agg["share_low_class_absorbs_both"] in (0.0, 1.0) or 0 <= agg["share_low_class_absorbs_both"] <= 1

    def test_determinism(self, small_critique):
        again = run_critique(3, 20_000, seed=12, fit_config=QUICK)
        assert again.to_json_dict() == small_critique.to_json_dict()

    def test_overrides_flow_into_generator(self):
        report = run_critique(
            1,
            10_000,
            seed=4,
            fit_config=QUICK,
            generating_overrides={"class_weights": (0.0, 0.4, 0.6)},
        )
        rec = report.records[0]
        assert rec["true_class_sizes"][0] == 0
        # with no erroneous records the standard reading is the honest one
        assert abs(rec["rel_bias_standard"]) < 0.05

    def test_rejects_unknown_override(self):
        with pytest.raises(ValidationError):
            run_critique(1, 1000, seed=0, generating_overrides={"banana": 1})

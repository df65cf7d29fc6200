"""Synthetic-data generator: determinism, accounting identities, presets."""

import numpy as np
import pytest

from lcmcr import (
    GeneratingConfig,
    ModelSpec,
    ParameterSet,
    ValidationError,
    class_conditional_table,
    preset_critique,
    preset_scenario1,
    simulate,
    two_by_two_from_margins,
)
from lcmcr.simulate import _largest_remainder


class TestAccounting:
    def test_complete_table_columns_sum_to_class_sizes(self, scenario1_sim):
        np.testing.assert_array_equal(
            scenario1_sim.complete_table.sum(axis=0),
            np.asarray(scenario1_sim.true_class_sizes),
        )

    def test_class_sizes_sum_to_population(self, scenario1_config, scenario1_sim):
        assert sum(scenario1_sim.true_class_sizes) == scenario1_config.population_size

    def test_observed_counts_drop_only_the_zero_cell(self, scenario1_sim):
        rows = scenario1_sim.complete_table.sum(axis=1)
        vec = scenario1_sim.observed_counts.to_vector()
        assert vec[0] == 0
        np.testing.assert_array_equal(vec[1:], rows[1:].astype(float))
        assert scenario1_sim.observed_counts.n == rows.sum() - rows[0]

    def test_true_target_size_counts_target_classes_only(self, scenario1_config, scenario1_sim):
        idx = scenario1_config.target_classes
        assert idx == (1,)
        assert scenario1_sim.true_target_size == scenario1_sim.true_class_sizes[1]

    def test_cell_frequencies_track_generating_distribution(self, scenario1_config, scenario1_sim):
        table = class_conditional_table(scenario1_config.spec, scenario1_config.params, eps=0)
        for x, size in enumerate(scenario1_sim.true_class_sizes):
            observed = scenario1_sim.complete_table[:, x] / size
            np.testing.assert_allclose(observed, table[x], atol=0.01)


class TestDeterminism:
    def test_same_seed_same_output(self):
        cfg = preset_scenario1(5000, seed=42)
        a = simulate(cfg)
        b = simulate(cfg)
        np.testing.assert_array_equal(a.complete_table, b.complete_table)
        assert a.observed_counts.counts == b.observed_counts.counts

    def test_different_seeds_differ(self):
        a = simulate(preset_scenario1(5000, seed=42))
        b = simulate(preset_scenario1(5000, seed=43))
        assert not np.array_equal(a.complete_table, b.complete_table)

    def test_class_streams_are_independent_of_each_other(self):
        # same seed, fixed vs multinomial class sizes: per-class draws only
        # depend on the class's own stream and its size
        cfg = preset_scenario1(5000, seed=42)
        fixed = simulate(cfg, fixed_classes=True)
        assert sum(fixed.true_class_sizes) == 5000
        np.testing.assert_array_equal(
            fixed.complete_table.sum(axis=0), np.asarray(fixed.true_class_sizes)
        )


class TestFixedClassSizes:
    def test_largest_remainder_hand_cases(self):
        assert _largest_remainder(7, np.array([0.5, 0.5])).tolist() == [4, 3]
        assert _largest_remainder(10, np.array([0.4, 0.6])).tolist() == [4, 6]
        assert _largest_remainder(10, np.array([1 / 3, 1 / 3, 1 / 3])).tolist() == [4, 3, 3]

    def test_fixed_sizes_match_rounded_weights(self):
        sim = simulate(preset_scenario1(100_000, seed=7), fixed_classes=True)
        assert sim.true_class_sizes == (40_000, 60_000)


class TestPresets:
    def test_scenario1_structure(self):
        cfg = preset_scenario1(1000, seed=0)
        assert cfg.spec.register_names == ("A", "B", "C", "D")
        assert cfg.spec.num_classes == 2
        assert cfg.class_roles == ("overcoverage", "target")
        np.testing.assert_allclose(cfg.params.class_weights, [0.4, 0.6])
        assert cfg.spec.dependence_terms == ()

    def test_scenario1_with_shared_cd_interaction(self):
        cfg = preset_scenario1(1000, seed=0, cd_interaction=0.7)
        assert cfg.spec.notation() == "[AX][BX][CX][DX][CD]"
        assert cfg.params.shared_interactions[0][0] == pytest.approx(0.7)

    def test_critique_structure(self):
        cfg = preset_critique(1000, seed=0)
        assert cfg.spec.num_classes == 3
        assert cfg.class_roles == ("overcoverage", "target", "target")
        np.testing.assert_allclose(cfg.params.class_weights, [0.2, 0.3, 0.5])

    def test_critique_overrides(self):
        cfg = preset_critique(
            1000, seed=0, class_weights=(0.1, 0.4, 0.5), hard_to_reach_probs=(0.3, 0.3, 0.3, 0.3)
        )
        np.testing.assert_allclose(cfg.params.class_weights, [0.1, 0.4, 0.5])
        np.testing.assert_allclose(cfg.params.inclusion_probs[1], 0.3)


class TestGeneratingConfigValidation:
    def test_rejects_bad_roles(self):
        spec = ModelSpec(("A", "B"), 1)
        params = ParameterSet.independence((1.0,), [[0.5, 0.5]])
        with pytest.raises(ValidationError):
            GeneratingConfig(spec, params, 100, ("bystander",), seed=0)
        with pytest.raises(ValidationError):
            GeneratingConfig(spec, params, 100, ("overcoverage",), seed=0)

    def test_rejects_bad_population_and_seed(self):
        spec = ModelSpec(("A", "B"), 1)
        params = ParameterSet.independence((1.0,), [[0.5, 0.5]])
        with pytest.raises(ValidationError):
            GeneratingConfig(spec, params, 0, ("target",), seed=0)
        with pytest.raises(ValidationError):
            GeneratingConfig(spec, params, 100, ("target",), seed=-1)

    def test_roles_length_must_match_classes(self):
        spec = ModelSpec(("A", "B"), 2)
        params = ParameterSet.independence((0.5, 0.5), [[0.5, 0.5], [0.4, 0.6]])
        with pytest.raises(ValidationError):
            GeneratingConfig(spec, params, 100, ("target",), seed=0)


class TestCompleteCsv:
    def test_only_positive_cells_listed(self):
        sim = simulate(preset_scenario1(200, seed=3))
        text = sim.complete_csv_text()
        lines = text.strip().split("\n")
        assert lines[0] == "profile,class,count"
        total = 0
        for line in lines[1:]:
            profile, cls, count = line.split(",")
            assert len(profile) == 4
            assert int(count) > 0
            total += int(count)
        assert total == 200


class TestTwoByTwoFromMargins:
    def test_unit_odds_ratio_gives_independence(self):
        cells = two_by_two_from_margins(0.3, 0.6, 1.0)
        assert cells[3] == pytest.approx(0.18, abs=1e-12)

    def test_odds_ratio_reproduced(self):
        for pa, pb, orr in [(0.21, 0.29, 2.0), (0.86, 0.83, 0.5), (0.5, 0.5, 7.0)]:
            c = two_by_two_from_margins(pa, pb, orr)
            assert (c[3] * c[0]) / (c[2] * c[1]) == pytest.approx(orr, rel=1e-9)
            assert c[2] + c[3] == pytest.approx(pa, abs=1e-12)
            assert c[1] + c[3] == pytest.approx(pb, abs=1e-12)
            assert np.all(np.asarray(c) > 0)
            assert sum(c) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValidationError):
            two_by_two_from_margins(0.0, 0.5, 2.0)
        with pytest.raises(ValidationError):
            two_by_two_from_margins(0.5, 0.5, 0.0)

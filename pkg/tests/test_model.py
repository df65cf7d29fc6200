"""Model-family unit tests.

Expected values marked as hand oracles were computed independently with
plain product arithmetic before being frozen here.
"""

import json

import numpy as np
import pytest

from lcmcr import (
    CaptureProfile,
    CapacityError,
    DependenceTerm,
    ModelSpec,
    ParameterSet,
    ValidationError,
    cell_probability,
    full_distribution,
    implied_capture_margins,
    miss_probability,
    validate,
    validate_spec,
)
from lcmcr.model import (
    class_conditional_table,
    distribution_array,
    interaction_masks,
    profile_matrix,
    shared_block_table,
)

from conftest import SCENARIO1_TRUE_PROBS, SCENARIO1_TRUE_WEIGHTS


def scenario1_pair():
    spec = ModelSpec(("A", "B", "C", "D"), 2)
    params = ParameterSet.independence(SCENARIO1_TRUE_WEIGHTS, SCENARIO1_TRUE_PROBS)
    return spec, params


class TestProfileEncoding:
    def test_profile_matrix_rows_are_bitstring_values(self):
        bits = profile_matrix(4)
        assert bits.shape == (16, 4)
        assert bits[0].tolist() == [0, 0, 0, 0]
        # index 9 = 1001: first and last registers
        assert bits[9].tolist() == [1, 0, 0, 1]
        assert bits[15].tolist() == [1, 1, 1, 1]

    def test_profile_string_round_trip(self):
        p = CaptureProfile.from_string("0101")
        assert p.bits == (0, 1, 0, 1)
        assert p.index == 5
        assert str(p) == "0101"

    def test_bad_profile_strings(self):
        with pytest.raises(ValidationError):
            CaptureProfile.from_string("01x1")
        with pytest.raises(ValidationError):
            CaptureProfile.from_string("")

    def test_profile_matrix_capacity(self):
        with pytest.raises(CapacityError):
            profile_matrix(21)


class TestCellProbability:
    def test_all_ones_cell_hand_oracle(self):
        # 0.4 * (.25*.20*.21*.29) + 0.6 * (.70*.82*.86*.83) = 0.24705072
        spec, params = scenario1_pair()
        assert cell_probability(spec, params, "1111") == pytest.approx(0.24705072, abs=1e-12)

    def test_all_zero_cell_hand_oracle(self):
        # 0.4 * (.75*.80*.79*.71) + 0.6 * (.30*.18*.14*.17) = 0.13538712
        spec, params = scenario1_pair()
        assert cell_probability(spec, params, "0000") == pytest.approx(0.13538712, abs=1e-12)

    def test_profile_argument_forms_agree(self):
        spec, params = scenario1_pair()
        ref = cell_probability(spec, params, "1010")
        assert cell_probability(spec, params, (1, 0, 1, 0)) == ref
        assert cell_probability(spec, params, CaptureProfile.from_string("1010")) == ref

    def test_profile_length_mismatch(self):
        spec, params = scenario1_pair()
        with pytest.raises(ValidationError):
            cell_probability(spec, params, "101")

    def test_full_distribution_sums_to_one(self):
        spec, params = scenario1_pair()
        dist = full_distribution(spec, params)
        assert len(dist) == 16
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
        assert dist["1111"] == pytest.approx(0.24705072, abs=1e-12)

    def test_miss_probability_matches_zero_cell(self):
        spec, params = scenario1_pair()
        mp = miss_probability(spec, params)
        assert mp.overall == pytest.approx(cell_probability(spec, params, "0000"), abs=1e-14)
        # per-class hand oracles: .75*.80*.79*.71 and .30*.18*.14*.17
        assert mp.per_class[0] == pytest.approx(0.33654, abs=1e-12)
        assert mp.per_class[1] == pytest.approx(0.0012852, abs=1e-12)

    def test_single_profile_path_matches_dense_table(self):
        spec = ModelSpec(
            ("A", "B", "C", "D"),
            2,
            (DependenceTerm(("B", "C"), class_specific=True), ),
        )
        rng = np.random.default_rng(7)
        tables = rng.dirichlet(np.ones(4), size=2)
        params = ParameterSet.for_spec(
            spec, (0.3, 0.7), rng.uniform(0.1, 0.9, (2, 4)), block_tables=(tables,)
        )
        dense = distribution_array(spec, params)
        for idx in range(16):
            profile = format(idx, "04b")
            assert cell_probability(spec, params, profile) == pytest.approx(dense[idx], abs=1e-14)


class TestLatentMixture:
    def test_marginal_association_without_conditional_dependence(self):
        # summing over classes leaves a strong A-B odds ratio even though
        # registers are independent within each class (hand oracle 3.0729)
        spec, params = scenario1_pair()
        dist = full_distribution(spec, params)
        pab = {}
        for a in (0, 1):
            for b in (0, 1):
                pab[a, b] = sum(
                    v for k, v in dist.items() if int(k[0]) == a and int(k[1]) == b
                )
        oratio = pab[1, 1] * pab[0, 0] / (pab[1, 0] * pab[0, 1])
        assert oratio == pytest.approx(3.0729007236, abs=1e-9)
        assert abs(oratio - 1.0) > 0.1

    def test_single_class_restores_independence(self):
        spec = ModelSpec(("A", "B"), 1)
        params = ParameterSet.independence((1.0,), [[0.3, 0.6]])
        dist = full_distribution(spec, params)
        assert dist["11"] == pytest.approx(0.18, abs=1e-12)
        assert dist["10"] == pytest.approx(0.12, abs=1e-12)


class TestSharedBlocks:
    def test_zero_interaction_reduces_to_product(self):
        base = np.array([[0.21, 0.29], [0.86, 0.83]])
        table = shared_block_table(base, np.zeros(1))
        for x, (pc, pd) in enumerate(base):
            expect = [(1 - pc) * (1 - pd), (1 - pc) * pd, pc * (1 - pd), pc * pd]
            np.testing.assert_allclose(table[x], expect, atol=1e-12)

    def test_interaction_sets_equal_odds_ratio_in_every_class(self):
        base = np.array([[0.21, 0.29], [0.86, 0.83]])
        lam = 0.75
        table = shared_block_table(base, np.array([lam]))
        for x in range(2):
            t = table[x]
            assert np.log(t[3] * t[0] / (t[1] * t[2])) == pytest.approx(lam, abs=1e-12)

    def test_rows_normalize(self):
        table = shared_block_table(np.array([[0.2, 0.4, 0.7]]), np.full(4, 0.3))
        np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-12)

    def test_interaction_masks_count(self):
        assert interaction_masks(2) == (3,)
        assert len(interaction_masks(3)) == 4  # 3 pairs + 1 triple
        assert len(interaction_masks(4)) == 11


class TestValidation:
    def test_valid_scenario_has_no_violations(self):
        spec, params = scenario1_pair()
        assert validate(spec, params) == []

    def test_spec_violations(self):
        codes = {v.code for v in validate_spec(ModelSpec(("A",), 0))}
        assert "too-few-registers" in codes
        assert "too-few-classes" in codes

        spec = ModelSpec(("A", "B", "A"), 2)
        assert "duplicate-register" in {v.code for v in validate_spec(spec)}

        spec = ModelSpec(("A", "B", "C"), 2, (DependenceTerm(("A", "Z")),))
        assert "unknown-register" in {v.code for v in validate_spec(spec)}

        spec = ModelSpec(("A", "B", "C"), 2, (DependenceTerm(("A",)),))
        assert "term-too-small" in {v.code for v in validate_spec(spec)}

        spec = ModelSpec(
            ("A", "B", "C"), 2, (DependenceTerm(("A", "B")), DependenceTerm(("B", "C")))
        )
        assert "register-in-multiple-terms" in {v.code for v in validate_spec(spec)}

        spec = ModelSpec(
            ("A", "B", "C"), 2, (DependenceTerm(("A", "B")), DependenceTerm(("A", "B"), True))
        )
        codes = {v.code for v in validate_spec(spec)}
        assert "duplicate-term" in codes or "register-in-multiple-terms" in codes

    def test_weight_violations(self):
        spec = ModelSpec(("A", "B"), 2)
        bad = ParameterSet.independence((0.5, 0.6), [[0.3, 0.4], [0.5, 0.6]])
        assert "weights-not-normalized" in {v.code for v in validate(spec, bad)}
        bad = ParameterSet.independence((0.5,), [[0.3, 0.4], [0.5, 0.6]])
        assert "weights-length-mismatch" in {v.code for v in validate(spec, bad)}

    def test_probability_range_violation(self):
        spec = ModelSpec(("A", "B"), 2)
        bad = ParameterSet.independence((0.5, 0.5), [[1.3, 0.4], [0.5, 0.6]])
        assert "prob-out-of-range" in {v.code for v in validate(spec, bad)}

    def test_block_table_violations(self):
        spec = ModelSpec(("A", "B"), 2, (DependenceTerm(("A", "B"), class_specific=True),))
        good_tables = np.tile([0.1, 0.2, 0.3, 0.4], (2, 1))
        good = ParameterSet.for_spec(spec, (0.5, 0.5), np.zeros((2, 2)), (good_tables,))
        assert validate(spec, good) == []

        unnorm = ParameterSet(
            (0.5, 0.5), good.inclusion_probs, (np.tile([0.1, 0.2, 0.3, 0.5], (2, 1)),)
        )
        assert "block-table-not-normalized" in {v.code for v in validate(spec, unnorm)}

        # margins disagree with the stated inclusion columns
        mismatched = ParameterSet((0.5, 0.5), np.full((2, 2), 0.9), (good_tables,))
        assert "block-margin-mismatch" in {v.code for v in validate(spec, mismatched)}

        missing = ParameterSet((0.5, 0.5), good.inclusion_probs)
        assert "block-tables-count-mismatch" in {v.code for v in validate(spec, missing)}

    def test_shared_interaction_violations(self):
        spec = ModelSpec(("A", "B", "C"), 2, (DependenceTerm(("B", "C")),))
        short = ParameterSet((0.5, 0.5), np.full((2, 3), 0.5), shared_interactions=(np.zeros(2),))
        assert "shared-interactions-length-mismatch" in {v.code for v in validate(spec, short)}
        nonfinite = ParameterSet(
            (0.5, 0.5), np.full((2, 3), 0.5), shared_interactions=(np.array([np.inf]),)
        )
        assert "shared-interaction-not-finite" in {v.code for v in validate(spec, nonfinite)}


class TestNotationAndJson:
    def test_notation_strings(self):
        assert ModelSpec(("A", "B", "C", "D"), 2).notation() == "[AX][BX][CX][DX]"
        assert (
            ModelSpec(("A", "B", "C", "D"), 2, (DependenceTerm(("C", "D")),)).notation()
            == "[AX][BX][CX][DX][CD]"
        )
        assert (
            ModelSpec(("A", "B", "C", "D"), 2, (DependenceTerm(("C", "D"), True),)).notation()
            == "[AX][BX][CDX]"
        )
        assert (
            ModelSpec(
                ("A", "B", "C", "D"), 2,
                (DependenceTerm(("A", "B"), True), DependenceTerm(("C", "D"), True)),
            ).notation()
            == "[ABX][CDX]"
        )

    def test_spec_json_round_trip(self):
        spec = ModelSpec(("A", "B", "C", "D"), 2, (DependenceTerm(("C", "D"), True),))
        blob = json.dumps(spec.to_json_dict())
        assert ModelSpec.from_json_dict(json.loads(blob)) == spec

    def test_spec_from_json_validates(self):
        with pytest.raises(ValidationError):
            ModelSpec.from_json_dict({"registers": ["A"], "classes": 2})
        with pytest.raises(ValidationError):
            ModelSpec.from_json_dict({"classes": 2})

    def test_params_json_round_trip(self, specific_cd_setup):
        spec, params = specific_cd_setup
        blob = json.dumps(params.to_json_dict(spec), sort_keys=True)
        back = ParameterSet.from_json_dict(spec, json.loads(blob))
        np.testing.assert_allclose(back.class_weights, params.class_weights, atol=1e-15)
        np.testing.assert_allclose(back.inclusion_probs, params.inclusion_probs, atol=1e-15)
        np.testing.assert_allclose(back.block_tables[0], params.block_tables[0], atol=1e-15)


class TestImpliedMargins:
    def test_independence_margins_are_inclusion_probs(self):
        spec, params = scenario1_pair()
        np.testing.assert_allclose(
            implied_capture_margins(spec, params), params.inclusion_probs, atol=1e-12
        )

    def test_block_margins_come_from_tables(self, specific_cd_setup):
        spec, params = specific_cd_setup
        margins = implied_capture_margins(spec, params)
        # C margin of the low class was pinned at 0.21 by construction
        assert margins[0, 2] == pytest.approx(0.21, abs=1e-9)
        assert margins[1, 2] == pytest.approx(0.86, abs=1e-9)

    def test_class_conditional_table_margins_agree(self, specific_cd_setup):
        spec, params = specific_cd_setup
        table = class_conditional_table(spec, params)
        bits = profile_matrix(4).astype(float)
        np.testing.assert_allclose(
            table @ bits, implied_capture_margins(spec, params), atol=1e-9
        )

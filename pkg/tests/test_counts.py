"""Counts container and CSV format."""

import numpy as np
import pytest

from lcmcr import CaptureCounts, ValidationError


def test_from_dict_and_totals():
    counts = CaptureCounts.from_dict({"11": 5, "10": 3, "01": 2})
    assert counts.n == 10
    assert counts.num_registers == 2
    assert counts.counts == {"01": 2, "10": 3, "11": 5}


def test_zero_count_rows_dropped():
    counts = CaptureCounts.from_dict({"11": 5, "10": 0})
    assert "10" not in counts.counts


def test_all_zero_profile_rejected():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_dict({"00": 1, "11": 2})
    assert any(v.code == "counts-contains-all-zero" for v in err.value.violations)


def test_negative_count_rejected():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_dict({"11": -1})
    assert any(v.code == "counts-negative" for v in err.value.violations)


def test_empty_rejected():
    with pytest.raises(ValidationError):
        CaptureCounts.from_dict({})
    with pytest.raises(ValidationError):
        CaptureCounts.from_dict({"11": 0})


def test_width_mismatch_rejected():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_dict({"11": 1, "101": 2})
    assert any(v.code == "counts-bad-profile" for v in err.value.violations)


def test_vector_round_trip():
    counts = CaptureCounts.from_dict({"011": 4, "100": 7, "111": 1})
    vec = counts.to_vector()
    assert vec.shape == (8,)
    assert vec[0] == 0.0
    assert vec[int("011", 2)] == 4.0
    back = CaptureCounts.from_vector(vec, 3)
    assert back == counts


def test_csv_round_trip(tmp_path):
    counts = CaptureCounts.from_dict({"0110": 12, "1000": 3, "1111": 9})
    path = tmp_path / "counts.csv"
    counts.write_csv(path)
    text = path.read_text()
    assert text.splitlines()[0] == "profile,count"
    assert CaptureCounts.read_csv(path) == counts


def test_csv_rows_sorted_for_determinism():
    counts = CaptureCounts.from_dict({"1111": 9, "0001": 1, "1000": 3})
    lines = counts.to_csv_text().splitlines()
    assert lines[1:] == ["0001,1", "1000,3", "1111,9"]


def test_csv_bad_header():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_csv_text("pattern,count\n11,3\n")
    assert any(v.code == "counts-bad-header" for v in err.value.violations)


def test_csv_duplicate_profile():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_csv_text("profile,count\n11,3\n11,4\n")
    assert any(v.code == "counts-duplicate-profile" for v in err.value.violations)


def test_csv_non_integer_count():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_csv_text("profile,count\n11,3.5\n")
    assert any(v.code == "counts-bad-count" for v in err.value.violations)


def test_csv_all_zero_row():
    with pytest.raises(ValidationError) as err:
        CaptureCounts.from_csv_text("profile,count\n00,5\n11,1\n")
    assert any(v.code == "counts-contains-all-zero" for v in err.value.violations)


def test_csv_expected_width_enforced():
    with pytest.raises(ValidationError):
        CaptureCounts.from_csv_text("profile,count\n111,2\n", num_registers=4)

"""Tests for the tabular record schema."""

import pytest

from lifeseq.core.schema import (
    EMPLOYEE,
    PENSION,
    SECTOR_CODES,
    SELF_EMPLOYED,
    PersonProfile,
    TabularRecord,
    check_records,
    province_region,
    record_problems,
)


def _employee(**overrides) -> TabularRecord:
    fields = dict(
        person_id=1,
        calendar_year=1995,
        start_month=1,
        duration_months=12,
        labour_status=EMPLOYEE,
        yearly_income=24000.0,
        work_title=1,
        sector=SECTOR_CODES[0],
        firm_size=2,
        work_province=12,
        part_full="FT",
        work_intensity=4.2,
        sick_intensity=0.0,
        maternity_intensity=0.0,
    )
    fields.update(overrides)
    return TabularRecord(**fields)


@pytest.mark.unit
class TestRecordProblems:
    """Test suite for record invariants."""

    def test_valid_employee_record(self):
        assert record_problems(_employee(), sex="F") == []

    def test_event_crossing_year_boundary(self):
        problems = record_problems(_employee(start_month=6, duration_months=8))
        assert any("crosses the year boundary" in p for p in problems)

    def test_out_of_range_year_and_month(self):
        problems = record_problems(_employee(calendar_year=1989, start_month=13))
        assert len(problems) >= 2

    def test_sector_not_permitted_for_self_employed(self):
        record = TabularRecord(1, 1995, 1, 12, SELF_EMPLOYED, 1000.0, sector=SECTOR_CODES[3])
        assert any("sector not permitted" in p for p in record_problems(record))

    def test_intensities_only_for_employees(self):
        record = TabularRecord(1, 2000, 1, 12, PENSION, 1000.0, work_intensity=1.0)
        assert any("work_intensity not permitted" in p for p in record_problems(record))

    def test_maternity_forbidden_for_men(self):
        problems = record_problems(_employee(maternity_intensity=1.0), sex="M")
        assert "maternity_intensity not permitted for male persons" in problems

    def test_unknown_sector_code(self):
        assert any("unknown sector" in p for p in record_problems(_employee(sector="Z99")))

    def test_negative_income(self):
        assert "yearly_income must be non-negative" in record_problems(_employee(yearly_income=-1.0))


@pytest.mark.unit
class TestProfiles:
    """Test suite for person profiles and record checks."""

    def test_invalid_sex_rejected(self):
        with pytest.raises(ValueError, match="sex must be F or M"):
            PersonProfile(3, "X", 1960, 1, 1)

    def test_missing_birth_date(self):
        assert not PersonProfile(3, "F", None, None, 1).has_birth_date

    def test_check_records_names_person(self):
        profile = PersonProfile(42, "M", 1960, 5, 2)
        bad = _employee(person_id=42, maternity_intensity=1.0)
        with pytest.raises(ValueError, match="person 42"):
            check_records(profile, [bad])

    def test_check_records_rejects_foreign_record(self):
        profile = PersonProfile(42, "F", 1960, 5, 2)
        with pytest.raises(ValueError, match="belongs to person 1"):
            check_records(profile, [_employee()])

    def test_profile_round_trip(self):
        profile = PersonProfile(7, "F", 1971, 3, 4)
        assert PersonProfile.from_dict(profile.to_dict()) == profile

    def test_province_region(self):
        assert province_region(1) == "north"
        assert province_region(50) == "centre"
        assert province_region(110) == "foreign"
        with pytest.raises(ValueError):
            province_region(0)

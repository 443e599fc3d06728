"""Administrative record schema: persons, yearly event records and field permissions."""

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional

FIRST_YEAR = 1990
LAST_YEAR = 2015
YEAR_INDEX_ORIGIN = 1989  # year_index = calendar_year - 1989
MIN_BIRTH_YEAR = 1913
MAX_BIRTH_YEAR = 1998
MAX_INTENSITY = 52.0 / 12.0

# Labour statuses
EMPLOYEE = 1
SELF_EMPLOYED = 2
PARASUBORDINATE = 3
ARTIST = 4
ATHLETE = 5
VOUCHER = 6
UNEMPLOYMENT_BENEFIT = 7
MOBILITY_ALLOWANCE = 8
SOCIAL_BENEFIT = 9
PENSION = 10
RENTIER = 11

STATUS_NAMES: Dict[int, str] = {
    EMPLOYEE: "employee",
    SELF_EMPLOYED: "self-employed",
    PARASUBORDINATE: "para-subordinate",
    ARTIST: "artist",
    ATHLETE: "athlete",
    VOUCHER: "voucher",
    UNEMPLOYMENT_BENEFIT: "ordinary unemployment benefit",
    MOBILITY_ALLOWANCE: "mobility allowance",
    SOCIAL_BENEFIT: "other social benefit",
    PENSION: "pension",
    RENTIER: "returns or investment income",
}

WORKING_STATUSES = frozenset({EMPLOYEE, SELF_EMPLOYED, PARASUBORDINATE, ARTIST, ATHLETE, VOUCHER})
DEPENDENT_STATUSES = frozenset({EMPLOYEE, PARASUBORDINATE, ARTIST, ATHLETE, VOUCHER})
NON_LABOUR_STATUSES = frozenset({RENTIER})

N_AREAS = 6
FOREIGN_AREA = 6
N_TITLES = 11
N_FIRM_SIZES = 5
N_PROVINCES = 110
PROVINCE_RANGES: Dict[str, range] = {
    "north": range(1, 48),
    "centre": range(48, 70),
    "south": range(70, 108),
    "foreign": range(108, 111),
}
# 20 sections x 14 divisions
SECTOR_CODES: List[str] = [f"{chr(ord('A') + i // 14)}{i % 14 + 1:02d}" for i in range(280)]
SECTOR_RANK: Dict[str, int] = {code: rank for rank, code in enumerate(SECTOR_CODES, start=1)}
PART_FULL_VALUES = ("PT", "FT")
SEXES = ("F", "M")


@dataclass
class PersonProfile:
    """Time-invariant background of one individual.

    Birth date fields may be missing in raw data; such persons are removed by
    sample selection before encoding.
    """

    person_id: int
    sex: str
    birth_year: Optional[int]
    birth_month: Optional[int]
    birth_area: int

    def __post_init__(self) -> None:
        if self.sex not in SEXES:
            raise ValueError(f"person {self.person_id}: sex must be F or M, got {self.sex!r}")
        if self.birth_month is not None and not 1 <= self.birth_month <= 12:
            raise ValueError(f"person {self.person_id}: birth_month must be in [1, 12]")
        if not 1 <= self.birth_area <= N_AREAS:
            raise ValueError(f"person {self.person_id}: birth_area must be in [1, {N_AREAS}]")

    @property
    def has_birth_date(self) -> bool:
        return self.birth_year is not None and self.birth_month is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PersonProfile":
        return cls(**data)


@dataclass
class TabularRecord:
    """One event row: a single status spell inside one calendar year."""

    person_id: int
    calendar_year: int
    start_month: int
    duration_months: int
    labour_status: int
    yearly_income: float
    work_title: Optional[int] = None
    sector: Optional[str] = None
    firm_size: Optional[int] = None
    work_province: Optional[int] = None
    part_full: Optional[str] = None
    work_intensity: Optional[float] = None
    maternity_intensity: Optional[float] = None
    sick_intensity: Optional[float] = None

    @property
    def end_month(self) -> int:
        return self.start_month + self.duration_months - 1

    @property
    def sort_key(self) -> tuple:
        return (self.calendar_year, self.start_month)

    def to_dict(self) -> dict:
        """Dictionary form with unset optional fields omitted."""
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "TabularRecord":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def record_problems(record: TabularRecord, sex: Optional[str] = None) -> List[str]:
    """List every invariant a record violates.

    Args:
        record: Record to check
        sex: Sex of the person, needed for the maternity permission

    Returns:
        Human-readable problems (empty when the record is valid)
    """
    problems: List[str] = []
    if not FIRST_YEAR <= record.calendar_year <= LAST_YEAR:
        problems.append(f"calendar_year {record.calendar_year} outside {FIRST_YEAR}-{LAST_YEAR}")
    if not 1 <= record.start_month <= 12:
        problems.append(f"start_month {record.start_month} outside 1-12")
    if not 1 <= record.duration_months <= 12:
        problems.append(f"duration_months {record.duration_months} outside 1-12")
    elif record.end_month > 12:
        problems.append(
            f"event starting in month {record.start_month} with duration "
            f"{record.duration_months} crosses the year boundary"
        )
    if record.labour_status not in STATUS_NAMES:
        problems.append(f"unknown labour_status {record.labour_status}")
    if record.yearly_income < 0:
        problems.append("yearly_income must be non-negative")

    status = record.labour_status
    working = status in WORKING_STATUSES
    dependent = status in DEPENDENT_STATUSES
    employee = status == EMPLOYEE

    if record.work_title is not None:
        if not working:
            problems.append(f"work_title not permitted for status {status}")
        elif not 1 <= record.work_title <= N_TITLES:
            problems.append(f"work_title {record.work_title} outside 1-{N_TITLES}")
    if record.work_province is not None:
        if not working:
            problems.append(f"work_province not permitted for status {status}")
        elif not 1 <= record.work_province <= N_PROVINCES:
            problems.append(f"work_province {record.work_province} outside 1-{N_PROVINCES}")
    if record.sector is not None:
        if not dependent:
            problems.append(f"sector not permitted for status {status}")
        elif record.sector not in SECTOR_RANK:
            problems.append(f"unknown sector {record.sector!r}")
    if record.firm_size is not None:
        if not dependent:
            problems.append(f"firm_size not permitted for status {status}")
        elif not 1 <= record.firm_size <= N_FIRM_SIZES:
            problems.append(f"firm_size {record.firm_size} outside 1-{N_FIRM_SIZES}")
    if record.part_full is not None:
        if not employee:
            problems.append(f"part_full not permitted for status {status}")
        elif record.part_full not in PART_FULL_VALUES:
            problems.append(f"part_full must be PT or FT, got {record.part_full!r}")

    for name in ("work_intensity", "sick_intensity", "maternity_intensity"):
        value = getattr(record, name)
        if value is None:
            continue
        if not employee:
            problems.append(f"{name} not permitted for status {status}")
        elif not 0 <= value <= MAX_INTENSITY + 1e-9:
            problems.append(f"{name} {value} outside [0, 52/12]")
    if record.maternity_intensity is not None and sex == "M":
        problems.append("maternity_intensity not permitted for male persons")
    return problems


def check_records(profile: PersonProfile, records: List[TabularRecord]) -> None:
    """Raise if any record of a person violates the schema.

    Raises:
        ValueError: Naming the person id and the first offending record
    """
    for record in records:
        if record.person_id != profile.person_id:
            raise ValueError(
                f"person {profile.person_id}: record belongs to person {record.person_id}"
            )
        problems = record_problems(record, profile.sex)
        if problems:
            raise ValueError(
                f"person {profile.person_id}: invalid record for {record.calendar_year}"
                f"/{record.start_month}: {'; '.join(problems)}"
            )


def province_region(province: int) -> str:
    """Macro region of a province code."""
    for region, codes in PROVINCE_RANGES.items():
        if province in codes:
            return region
    raise ValueError(f"province {province} outside 1-{N_PROVINCES}")

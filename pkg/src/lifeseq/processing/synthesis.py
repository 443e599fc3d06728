"""Schema-faithful synthetic populations with planted causal effects.

Three experiment cohorts carry known effects:

* displaced workers enter a mobility-allowance spell whose length jumps by
  ``mobility_duration_jump`` months when the worker is at least 480 months old;
* mothers lose ``maternity_income_drop`` of earnings in the birth year,
  decaying linearly to zero over ``maternity_decay_years``;
* male retirees born in January retire ``december_retirement_shift`` months
  later than those born in December.

The remaining persons follow generic careers, and a small share of edge
persons each violate one sample-selection criterion.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..core.encoding import Population
from ..core.quantization import DEFAULT_DEFLATOR
from ..core.schema import (
    EMPLOYEE,
    FIRST_YEAR,
    FOREIGN_AREA,
    LAST_YEAR,
    MAX_INTENSITY,
    MOBILITY_ALLOWANCE,
    N_FIRM_SIZES,
    N_TITLES,
    NON_LABOUR_STATUSES,
    PARASUBORDINATE,
    PENSION,
    PROVINCE_RANGES,
    RENTIER,
    SECTOR_CODES,
    SELF_EMPLOYED,
    UNEMPLOYMENT_BENEFIT,
    PersonProfile,
    TabularRecord,
)
from ..models.parameters import PlantedEffects, SynthConfig
from ..utils.file_handling import read_jsonl, validate_input_dir, write_jsonl
from ..utils.logging import get_logger

logger = get_logger("synthesis")

COHORTS = ("displaced", "mother", "retiree", "edge", "general")
SELECTION_CRITERIA = (
    "observed_to_end",
    "participation",
    "birth_date",
    "min_records",
    "entry_age",
    "non_labour_share",
)
RDD_CUTOFF_MONTHS = 480
RECORDS_FILE = "records.jsonl"
PERSONS_FILE = "persons.jsonl"

_AREA_REGIONS = {1: "north", 2: "north", 3: "centre", 4: "south", 5: "south"}
_COMMON_SECTORS = SECTOR_CODES[::7]


def _months(year: int, month: int) -> int:
    """Absolute month count (month is 1-based)."""
    return year * 12 + month - 1


def _year_month(absolute: int) -> Tuple[int, int]:
    return absolute // 12, absolute % 12 + 1


def split_by_year(start_absolute: int, n_months: int) -> List[Tuple[int, int, int]]:
    """Split a spell into (year, start_month, duration) pieces that never cross a year."""
    pieces = []
    cursor = start_absolute
    remaining = n_months
    while remaining > 0:
        year, month = _year_month(cursor)
        duration = min(remaining, 13 - month)
        pieces.append((year, month, duration))
        cursor += duration
        remaining -= duration
    return pieces


@dataclass
class _PersonBuilder:
    """Accumulates one person's records from a private random stream."""

    person_id: int
    sex: str
    birth_year: int
    birth_month: int
    birth_area: int
    rng: np.random.Generator
    effects: PlantedEffects
    deflator: Mapping[int, float]
    records: List[TabularRecord] = field(default_factory=list)
    log_wage: float = 0.0
    wage_origin: int = FIRST_YEAR
    job: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.log_wage = float(self.rng.normal(7.2, 0.35))
        self.new_job()

    def profile(self) -> PersonProfile:
        return PersonProfile(self.person_id, self.sex, self.birth_year, self.birth_month, self.birth_area)

    def new_job(self) -> None:
        region = _AREA_REGIONS.get(self.birth_area)
        if region is None or self.rng.random() < 0.1:
            region = str(self.rng.choice(["north", "centre", "south"]))
        provinces = PROVINCE_RANGES[region]
        self.job = {
            "title": int(self.rng.integers(1, N_TITLES + 1)),
            "province": int(self.rng.integers(provinces.start, provinces.stop)),
            "sector": str(self.rng.choice(_COMMON_SECTORS)),
            "firm_size": int(self.rng.integers(1, N_FIRM_SIZES + 1)),
            "part_full": "PT" if self.rng.random() < 0.15 else "FT",
        }

    def real_monthly_wage(self, year: int, multiplier: float = 1.0) -> float:
        drift = 0.012 * (year - self.wage_origin)
        noise = self.rng.normal(0.0, self.effects.income_noise_sd)
        return float(np.exp(self.log_wage + drift + noise)) * multiplier

    def _nominal(self, real_monthly: float, duration: int, year: int) -> float:
        return round(real_monthly * duration * self.deflator[year], 2)

    def work(
        self,
        year: int,
        start: int,
        duration: int,
        status: int = EMPLOYEE,
        multiplier: float = 1.0,
        maternity: Optional[float] = None,
    ) -> None:
        income = self._nominal(self.real_monthly_wage(year, multiplier), duration, year)
        record = TabularRecord(self.person_id, year, start, duration, status, income)
        if status in (EMPLOYEE, PARASUBORDINATE, SELF_EMPLOYED):
            record.work_title = self.job["title"]
            record.work_province = self.job["province"]
        if status in (EMPLOYEE, PARASUBORDINATE):
            record.sector = self.job["sector"]
            record.firm_size = self.job["firm_size"]
        if status == EMPLOYEE:
            part_time = self.job["part_full"] == "PT"
            record.part_full = self.job["part_full"]
            low, high = (1.8, 3.2) if part_time else (3.9, MAX_INTENSITY)
            record.work_intensity = round(float(self.rng.uniform(low, high)), 4)
            sick = 0.0 if self.rng.random() < 0.85 else float(self.rng.uniform(0.05, 1.2))
            record.sick_intensity = round(sick, 4)
            if self.sex == "F":
                record.maternity_intensity = round(maternity or 0.0, 4)
        self.records.append(record)

    def benefit(self, status: int, year: int, start: int, duration: int, ratio: float) -> None:
        income = self._nominal(self.real_monthly_wage(year, ratio), duration, year)
        self.records.append(TabularRecord(self.person_id, year, start, duration, status, income))

    def career(self, first_year: int, last_year: int, gap_rate: float = 0.03) -> None:
        """Generic career: mostly full-year employment with occasional other spells."""
        for year in range(first_year, last_year + 1):
            if self.rng.random() < 0.08:
                self.new_job()
            draw = self.rng.random()
            if draw < gap_rate:
                continue
            if draw < gap_rate + 0.05:
                self.work(year, 1, 12, status=SELF_EMPLOYED)
            elif draw < gap_rate + 0.08:
                self.work(year, 1, 12, status=PARASUBORDINATE)
            elif draw < gap_rate + 0.12:
                worked = int(self.rng.integers(2, 10))
                unemployed = int(self.rng.integers(1, 13 - worked))
                self.work(year, 1, worked)
                self.benefit(UNEMPLOYMENT_BENEFIT, year, worked + 1, unemployed, 0.6)
                self.new_job()
                rest = 12 - worked - unemployed
                if rest > 0:
                    self.work(year, worked + unemployed + 1, rest)
            elif draw < gap_rate + 0.135:
                self.benefit(RENTIER, year, 1, 12, 0.3)
            else:
                self.work(year, 1, 12)

    def employment_span(self, start_absolute: int, end_absolute: int, **kwargs) -> None:
        """Employee records covering months [start, end] inclusive, split per year."""
        if end_absolute < start_absolute:
            return
        for year, month, duration in split_by_year(start_absolute, end_absolute - start_absolute + 1):
            self.work(year, month, duration, **kwargs)


def _entry_year(builder: _PersonBuilder, rng: np.random.Generator) -> int:
    return max(FIRST_YEAR, builder.birth_year + int(rng.integers(18, 24)))


def _random_area(rng: np.random.Generator) -> int:
    return FOREIGN_AREA if rng.random() < 0.05 else int(rng.integers(1, FOREIGN_AREA))


def _general(person_id, rng, effects, deflator, end_year) -> _PersonBuilder:
    builder = _PersonBuilder(
        person_id,
        "F" if rng.random() < 0.5 else "M",
        int(rng.integers(1952, 1986)),
        int(rng.integers(1, 13)),
        _random_area(rng),
        rng,
        effects,
        deflator,
    )
    builder.career(_entry_year(builder, rng), end_year)
    return builder


def _displaced(person_id, rng, effects, deflator, end_year) -> _PersonBuilder:
    year = int(rng.integers(1992, max(1993, min(2009, end_year - 3))))
    month = int(rng.integers(1, 13))
    age_months = int(rng.integers(330, 631))
    birth_year, birth_month = _year_month(_months(year, month) - age_months)
    builder = _PersonBuilder(
        person_id,
        "F" if rng.random() < 0.5 else "M",
        birth_year,
        birth_month,
        _random_area(rng),
        rng,
        effects,
        deflator,
    )
    entry = _entry_year(builder, rng)
    displaced_at = _months(year, month)
    builder.employment_span(_months(entry, 1), displaced_at - 1)

    jump = effects.mobility_duration_jump if age_months >= RDD_CUTOFF_MONTHS else 0.0
    spell = effects.benefit_base_months + jump + rng.normal(0.0, effects.benefit_noise_sd)
    spell = int(min(max(round(spell), 1), 48))
    for piece_year, piece_month, duration in split_by_year(displaced_at, spell):
        if piece_year > end_year:
            break
        builder.benefit(MOBILITY_ALLOWANCE, piece_year, piece_month, duration, 0.7)

    builder.new_job()
    builder.employment_span(displaced_at + spell, _months(end_year, 12))
    return builder


def _mother(person_id, rng, effects, deflator, end_year) -> _PersonBuilder:
    birth_year = int(rng.integers(1960, 1979))
    builder = _PersonBuilder(
        person_id, "F", birth_year, int(rng.integers(1, 13)), _random_area(rng), rng, effects, deflator
    )
    first_child = int(rng.integers(max(1993, birth_year + 22), min(2005, birth_year + 40) + 1))
    horizon = effects.maternity_decay_years
    entry = min(_entry_year(builder, rng), first_child - 2)
    for year in range(entry, end_year + 1):
        t = year - first_child
        multiplier = 1.0
        if t >= 0:
            multiplier = 1.0 - effects.maternity_income_drop * max(0.0, 1.0 - t / horizon)
        maternity = float(rng.uniform(1.6, 3.2)) if t == 0 else 0.0
        builder.work(year, 1, 12, multiplier=multiplier, maternity=maternity)
    return builder


def _retiree(person_id, rng, effects, deflator, end_year) -> _PersonBuilder:
    birth_month = 1 if rng.random() < 0.5 else 12
    builder = _PersonBuilder(
        person_id, "M", int(rng.integers(1940, 1951)), birth_month, _random_area(rng), rng, effects, deflator
    )
    shift = effects.december_retirement_shift if birth_month == 1 else 0.0
    age_months = effects.retirement_base_age_months + shift + rng.normal(0.0, effects.retirement_noise_sd)
    retire_at = _months(builder.birth_year, birth_month) + int(round(age_months))
    retire_at = max(retire_at, _months(FIRST_YEAR + 3, 1))
    builder.employment_span(_months(FIRST_YEAR, 1), retire_at - 1)
    for year, month, duration in split_by_year(retire_at, _months(end_year, 12) - retire_at + 1):
        builder.benefit(PENSION, year, month, duration, 0.7)
    return builder


def _edge(person_id, rng, effects, deflator, end_year, criterion: int) -> Tuple[PersonProfile, List[TabularRecord]]:
    """A person failing exactly one selection criterion (cycled by person)."""
    name = SELECTION_CRITERIA[criterion % len(SELECTION_CRITERIA)]
    birth_year = {"min_records": 1990, "entry_age": 1985}.get(name, 1960)
    builder = _PersonBuilder(
        person_id, "M", birth_year, int(rng.integers(1, 13)), _random_area(rng), rng, effects, deflator
    )
    if name == "observed_to_end":
        builder.career(FIRST_YEAR, end_year - 5, gap_rate=0.0)
    elif name == "participation":
        for year in range(end_year - 5, end_year + 1):
            builder.work(year, 1, 12)
    elif name == "birth_date":
        builder.career(FIRST_YEAR, end_year, gap_rate=0.0)
    elif name == "min_records":
        for year in range(end_year - 2, end_year + 1):
            builder.work(year, 1, 12)
    elif name == "entry_age":
        builder.career(birth_year + 14, end_year, gap_rate=0.0)
    else:
        for year in range(FIRST_YEAR, end_year + 1):
            builder.benefit(RENTIER, year, 1, 12, 0.5)
    profile = builder.profile()
    if name == "birth_date":
        profile = PersonProfile(person_id, profile.sex, None, None, profile.birth_area)
    return profile, builder.records


def cohort_assignments(n_persons: int, seed: int, config: Optional[SynthConfig] = None) -> List[str]:
    """Cohort label of every person id, in id order."""
    config = config or SynthConfig(n_persons=n_persons, seed=seed)
    counts = {
        "displaced": int(np.floor(config.displaced_share * n_persons)),
        "mother": int(np.floor(config.mother_share * n_persons)),
        "retiree": int(np.floor(config.retiree_share * n_persons)),
        "edge": int(np.floor(config.edge_share * n_persons)),
    }
    labels = [name for name, count in counts.items() for _ in range(count)]
    labels += ["general"] * (n_persons - len(labels))
    order = np.random.default_rng(np.random.SeedSequence([seed, 0])).permutation(n_persons)
    return [labels[i] for i in order]


_BUILDERS = {"displaced": _displaced, "mother": _mother, "retiree": _retiree, "general": _general}


def generate_population(
    n_persons: int,
    effects: PlantedEffects,
    seed: int,
    config: Optional[SynthConfig] = None,
    deflator: Optional[Mapping[int, float]] = None,
) -> Population:
    """Generate a population with planted effects.

    Every person draws from an independent stream spawned from the seed, so
    the output is a pure function of (n_persons, effects, seed, config).

    Args:
        n_persons: Number of persons (>= 1)
        effects: Planted effect magnitudes
        seed: Root seed
        config: Cohort mix and end year (defaults to SynthConfig())
        deflator: Price index by year (defaults to the shipped table)

    Returns:
        List of (PersonProfile, records sorted by year and month)

    Raises:
        ValueError: If n_persons < 1
    """
    if n_persons < 1:
        raise ValueError(f"n_persons must be at least 1, got {n_persons}")
    config = config or SynthConfig(n_persons=n_persons, seed=seed)
    table = dict(DEFAULT_DEFLATOR)
    table.update(deflator or {})
    end_year = min(config.end_year, LAST_YEAR)

    labels = cohort_assignments(n_persons, seed, config)
    streams = np.random.SeedSequence(seed).spawn(n_persons)
    population: Population = []
    edge_index = 0
    for person_id, (label, stream) in enumerate(zip(labels, streams)):
        rng = np.random.default_rng(stream)
        if label == "edge":
            profile, records = _edge(person_id, rng, effects, table, end_year, edge_index)
            edge_index += 1
        else:
            builder = _BUILDERS[label](person_id, rng, effects, table, end_year)
            profile, records = builder.profile(), builder.records
        population.append((profile, sorted(records, key=lambda r: r.sort_key)))
    logger.info(f"Generated {n_persons} persons (seed {seed})")
    return population


def _selection_failures(
    profile: PersonProfile, records: List[TabularRecord], end_year: int
) -> List[str]:
    failures = []
    years = sorted({r.calendar_year for r in records})
    if not years or years[-1] < end_year:
        failures.append("observed_to_end")
    if not profile.has_birth_date:
        failures.append("birth_date")
    else:
        start = max(FIRST_YEAR, profile.birth_year + 30)
        end = min(end_year, profile.birth_year + 85)
        potential = end - start
        if potential > 0:
            effective = sum(1 for y in years if start <= y <= end)
            if effective / potential < 0.5:
                failures.append("participation")
        if years:
            entry_age = years[0] - profile.birth_year
            if not 15 < entry_age < 80:
                failures.append("entry_age")
    if len(records) < 5:
        failures.append("min_records")
    if records:
        non_labour = sum(1 for r in records if r.labour_status in NON_LABOUR_STATUSES)
        if non_labour / len(records) >= 0.9:
            failures.append("non_labour_share")
    return failures


def apply_sample_selection(
    population: Population, end_year: int = LAST_YEAR
) -> Tuple[Population, Dict[str, int]]:
    """Keep persons meeting all six selection criteria.

    Criteria: observed in end_year; observed in at least half of the
    potential participation window (from age 30, within 1990..end_year and
    an 85-year lifespan; potential = end - start years); birth date present;
    at least five records; entry age strictly between 15 and 80; fewer than
    90% non-labour records. Each failing criterion is counted on its own,
    so a person can appear under several.

    Returns:
        (retained population, drop count per criterion)
    """
    counts = {name: 0 for name in SELECTION_CRITERIA}
    kept: Population = []
    for profile, records in population:
        failures = _selection_failures(profile, records, end_year)
        for name in failures:
            counts[name] += 1
        if not failures:
            kept.append((profile, records))
    logger.info(f"Sample selection kept {len(kept)} of {len(population)} persons")
    return kept, counts


def write_population(population: Population, output_dir: str) -> Tuple[Path, Path]:
    """Write records.jsonl and persons.jsonl into output_dir."""
    out = Path(output_dir)
    persons = write_jsonl(str(out / PERSONS_FILE), (profile.to_dict() for profile, _ in population))
    records = write_jsonl(
        str(out / RECORDS_FILE), (r.to_dict() for _, records in population for r in records)
    )
    return records, persons


def read_population(input_dir: str) -> Population:
    """Read a population written by write_population, keeping person order.

    Raises:
        FileNotFoundError: If either file is missing
        ValueError: If a record refers to an unknown person
    """
    directory = validate_input_dir(input_dir, (RECORDS_FILE, PERSONS_FILE))
    profiles = [PersonProfile.from_dict(row) for row in read_jsonl(str(directory / PERSONS_FILE))]
    by_person: Dict[int, List[TabularRecord]] = {p.person_id: [] for p in profiles}
    for row in read_jsonl(str(directory / RECORDS_FILE)):
        record = TabularRecord.from_dict(row)
        if record.person_id not in by_person:
            raise ValueError(f"record refers to unknown person {record.person_id}")
        by_person[record.person_id].append(record)
    return [(p, sorted(by_person[p.person_id], key=lambda r: r.sort_key)) for p in profiles]

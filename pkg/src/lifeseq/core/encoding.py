"""Calendar-grammar encoding of tabular event records into life sequences."""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .quantization import QuantizerState, intensity_level, quantize_income
from .schema import LAST_YEAR, YEAR_INDEX_ORIGIN, PersonProfile, TabularRecord, check_records
from .vocabulary import (
    BOL_ID,
    EOL_ID,
    EOY_ID,
    PAD_ID,
    Vocabulary,
    build_vocabulary_from_tokens,
    token_category,
)

DEFAULT_MAX_LEN = 1560

# Fixed order of attribute tokens between TYPE_x and DUR_x
ATTRIBUTE_ORDER = (
    "income",
    "title",
    "province",
    "sector",
    "firm_size",
    "part_full",
    "intensity_work",
    "intensity_sick",
    "intensity_maternity",
)

Population = List[Tuple[PersonProfile, List[TabularRecord]]]


@dataclass
class LifeSequence:
    """Aligned token, calendar-year, age and position streams of one person."""

    tokens: List[int]
    year_index: List[int]
    age: List[int]
    position: List[int]
    person_id: int = -1

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if not (len(self.year_index) == len(self.age) == len(self.position) == n):
            raise ValueError(
                f"person {self.person_id}: stream lengths differ "
                f"(tokens {n}, year_index {len(self.year_index)}, age {len(self.age)}, "
                f"position {len(self.position)})"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return {
            "person_id": self.person_id,
            "tokens": list(self.tokens),
            "year_index": list(self.year_index),
            "age": list(self.age),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LifeSequence":
        tokens = [int(t) for t in data["tokens"]]
        return cls(
            tokens=tokens,
            year_index=[int(y) for y in data["year_index"]],
            age=[int(a) for a in data["age"]],
            position=list(range(len(tokens))),
            person_id=int(data.get("person_id", -1)),
        )


@dataclass
class ParsedEvent:
    """One MONTH ... DUR block recovered from a token stream."""

    year_number: int  # 1-based count of years from the start of the scan
    month: int
    duration: int
    attributes: Dict[str, str] = field(default_factory=dict)  # category -> token
    year_index: Optional[int] = None

    @property
    def calendar_year(self) -> Optional[int]:
        if self.year_index is None:
            return None
        return YEAR_INDEX_ORIGIN + self.year_index

    @property
    def is_silent(self) -> bool:
        return not self.attributes

    @property
    def status(self) -> Optional[int]:
        token = self.attributes.get("type")
        return int(token.split("_", 1)[1]) if token else None


@dataclass
class ParsedHistory:
    background: List[str]
    events: List[ParsedEvent]
    n_years: int
    complete: bool  # closed by EOL


def background_tokens(profile: PersonProfile) -> List[str]:
    """Area, sex, birth month, birth year."""
    if not profile.has_birth_date:
        raise ValueError(f"person {profile.person_id}: birth date is missing")
    return [
        f"A{profile.birth_area}",
        profile.sex,
        f"MONTH_{profile.birth_month}",
        f"YEAR_{profile.birth_year}",
    ]


def event_tokens(record: TabularRecord, q: QuantizerState) -> List[str]:
    """Token block of one record: MONTH, TYPE, attributes in ATTRIBUTE_ORDER, DUR."""
    tokens = [f"MONTH_{record.start_month}", f"TYPE_{record.labour_status}"]
    tokens.append(
        f"INCOME_{quantize_income(record.yearly_income, record.duration_months, record.calendar_year, q)}"
    )
    if record.work_title is not None:
        tokens.append(f"WRKT_{record.work_title}")
    if record.work_province is not None:
        tokens.append(f"WRKP_{record.work_province}")
    if record.sector is not None:
        tokens.append(f"ATE_{record.sector}")
    if record.firm_size is not None:
        tokens.append(f"FSIZE_{record.firm_size}")
    if record.part_full is not None:
        tokens.append("PART_TIME" if record.part_full == "PT" else "FULL_TIME")
    if record.work_intensity is not None:
        tokens.append(f"WRKINT_{intensity_level(record.work_intensity)}")
    if record.sick_intensity is not None:
        tokens.append(f"SIKINT_{intensity_level(record.sick_intensity)}")
    if record.maternity_intensity is not None:
        tokens.append(f"MATINT_{intensity_level(record.maternity_intensity)}")
    tokens.append(f"DUR_{record.duration_months}")
    return tokens


def individual_tokens(
    profile: PersonProfile,
    records: Sequence[TabularRecord],
    q: QuantizerState,
    end_year: int = LAST_YEAR,
    year_range: Optional[Tuple[int, int]] = None,
) -> Tuple[List[str], List[int], List[int]]:
    """Compile one person's records into token strings with year and age streams.

    Args:
        profile: Person background
        records: The person's records (any order; sorted stably by year and month)
        q: Fitted quantizer
        end_year: Corpus end year; a history reaching it closes with EOL
        year_range: Explicit (first, last) years, needed when there are no records

    Returns:
        (token strings, year_index stream, age stream)

    Raises:
        ValueError: On schema violations, naming the person id
    """
    check_records(profile, list(records))
    header = background_tokens(profile)
    ordered = sorted(records, key=lambda r: r.sort_key)

    if year_range is not None:
        first_year, last_year = year_range
    elif ordered:
        first_year, last_year = ordered[0].calendar_year, ordered[-1].calendar_year
    else:
        raise ValueError(f"person {profile.person_id}: no records and no year range")
    if first_year > last_year:
        raise ValueError(f"person {profile.person_id}: empty year range {first_year}-{last_year}")

    by_year: Dict[int, List[TabularRecord]] = {}
    for record in ordered:
        if not first_year <= record.calendar_year <= last_year:
            raise ValueError(
                f"person {profile.person_id}: record year {record.calendar_year} "
                f"outside {first_year}-{last_year}"
            )
        by_year.setdefault(record.calendar_year, []).append(record)

    tokens = header + ["BOL"]
    years = [0] * len(tokens)
    ages = [0] * len(tokens)
    for year in range(first_year, last_year + 1):
        block: List[str] = []
        year_records = by_year.get(year, [])
        if year_records:
            for record in year_records:
                block.extend(event_tokens(record, q))
        else:
            block.extend(["MONTH_1", "DUR_12"])
        block.append("EOL" if year == last_year and last_year == end_year else "EOY")
        tokens.extend(block)
        years.extend([year - YEAR_INDEX_ORIGIN] * len(block))
        ages.extend([year - profile.birth_year] * len(block))
    return tokens, years, ages


def encode_individual(
    profile: PersonProfile,
    records: Sequence[TabularRecord],
    vocab: Vocabulary,
    q: QuantizerState,
    max_len: int = DEFAULT_MAX_LEN,
    end_year: int = LAST_YEAR,
    year_range: Optional[Tuple[int, int]] = None,
) -> LifeSequence:
    """Encode a person into a LifeSequence, truncating whole years beyond max_len.

    Unseen token strings map to UNK.
    """
    strings, years, ages = individual_tokens(profile, records, q, end_year, year_range)
    seq = LifeSequence(
        tokens=vocab.ids(strings),
        year_index=years,
        age=ages,
        position=list(range(len(strings))),
        person_id=profile.person_id,
    )
    if len(seq) > max_len:
        seq = truncate_whole_years(seq, max_len)
    return seq


def build_vocabulary(population: Population, q: QuantizerState, end_year: int = LAST_YEAR) -> Vocabulary:
    """Build the vocabulary from the training population.

    Raises:
        ValueError: If the population is empty
    """
    if not population:
        raise ValueError("cannot build a vocabulary from an empty population")
    return build_vocabulary_from_tokens(
        individual_tokens(profile, records, q, end_year)[0] for profile, records in population
    )


def encode_population(
    population: Population,
    vocab: Vocabulary,
    q: QuantizerState,
    max_len: int = DEFAULT_MAX_LEN,
    end_year: int = LAST_YEAR,
) -> List[LifeSequence]:
    return [encode_individual(p, r, vocab, q, max_len, end_year) for p, r in population]


def decode_tokens(ids: Iterable[int], vocab: Vocabulary) -> List[str]:
    """Map ids back to token strings.

    Raises:
        ValueError: If an id is outside the vocabulary
    """
    return [vocab.token(int(i)) for i in ids]


def header_length(tokens: Sequence[int]) -> int:
    """Number of tokens up to and including BOL (0 when there is no BOL)."""
    for i, token in enumerate(tokens):
        if token == BOL_ID:
            return i + 1
    return 0


def year_spans(tokens: Sequence[int]) -> Tuple[int, List[Tuple[int, int]]]:
    """Split a token id stream into the header and per-year [start, end) spans.

    A trailing year without EOY/EOL yields a final open span.
    """
    start = header_length(tokens)
    spans: List[Tuple[int, int]] = []
    cursor = start
    for i in range(start, len(tokens)):
        token = tokens[i]
        if token == PAD_ID:
            break
        if token in (EOY_ID, EOL_ID):
            spans.append((cursor, i + 1))
            cursor = i + 1
    end = len(tokens)
    for i in range(cursor, len(tokens)):
        if tokens[i] == PAD_ID:
            end = i
            break
    if cursor < end:
        spans.append((cursor, end))
    return start, spans


def _select(seq: LifeSequence, indices: Sequence[int]) -> LifeSequence:
    return LifeSequence(
        tokens=[seq.tokens[i] for i in indices],
        year_index=[seq.year_index[i] for i in indices],
        age=[seq.age[i] for i in indices],
        position=list(range(len(indices))),
        person_id=seq.person_id,
    )


def truncate_whole_years(seq: LifeSequence, max_len: int) -> LifeSequence:
    """Drop the earliest whole years until the sequence fits max_len.

    Background tokens and BOL are always kept.

    Raises:
        ValueError: If background plus BOL alone exceed max_len
    """
    if len(seq) <= max_len:
        return _select(seq, range(len(seq)))
    header, spans = year_spans(seq.tokens)
    if header > max_len:
        raise ValueError(
            f"person {seq.person_id}: background block of {header} tokens exceeds max_len {max_len}"
        )
    length = len(seq)
    dropped = 0
    while length > max_len and dropped < len(spans):
        start, end = spans[dropped]
        length -= end - start
        dropped += 1
    keep_from = spans[dropped][0] if dropped < len(spans) else len(seq)
    indices = list(range(header)) + list(range(keep_from, len(seq)))
    return _select(seq, indices)


def _event_blocks(
    tokens: Sequence[int], start: int, end: int, months: Set[int], durations: Set[int]
) -> Tuple[List[List[int]], List[int]]:
    """Event blocks (index lists, MONTH through DUR) of one year span and its closing indices."""
    blocks: List[List[int]] = []
    current: List[int] = []
    closing: List[int] = []
    for i in range(start, end):
        token = tokens[i]
        if token in (EOY_ID, EOL_ID):
            closing.append(i)
            continue
        if not current and token not in months:
            # stray token outside a block stays where it is
            blocks.append([i])
            continue
        current.append(i)
        if token in durations:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    return blocks, closing


def _shuffle_same_month(
    blocks: List[List[int]], tokens: Sequence[int], months: Set[int], rng: np.random.Generator
) -> List[List[int]]:
    result: List[List[int]] = []
    i = 0
    while i < len(blocks):
        head = tokens[blocks[i][0]]
        j = i + 1
        if head in months:
            while j < len(blocks) and tokens[blocks[j][0]] == head:
                j += 1
        group = blocks[i:j]
        if len(group) > 1:
            group = [group[k] for k in rng.permutation(len(group))]
        result.extend(group)
        i = j
    return result


def augment(
    seq: LifeSequence,
    vocab: Vocabulary,
    same_month_shuffle: bool = True,
    dropout_rate: float = 0.0,
    seed: int = 0,
) -> LifeSequence:
    """Shuffle same-month events and randomly drop attribute tokens.

    Events starting in the same month of the same year are permuted as whole
    blocks; then every token other than BOL, EOY, EOL, PAD, MONTH, DUR and
    the background block is dropped independently with probability dropout_rate.

    Raises:
        ValueError: If dropout_rate is outside [0, 1)
    """
    if not 0 <= dropout_rate < 1:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    months = set(vocab.ids_in_category("month"))
    durations = set(vocab.ids_in_category("duration"))
    rng = np.random.default_rng(seed)
    header, spans = year_spans(seq.tokens)

    order: List[int] = list(range(header))
    for start, end in spans:
        blocks, closing = _event_blocks(seq.tokens, start, end, months, durations)
        if same_month_shuffle:
            blocks = _shuffle_same_month(blocks, seq.tokens, months, rng)
        for block in blocks:
            order.extend(block)
        order.extend(closing)
    order.extend(range(len(order), len(seq)))  # padding tail

    if dropout_rate > 0:
        structural = {BOL_ID, EOY_ID, EOL_ID, PAD_ID} | months | durations
        kept = []
        for i in order:
            if i < header or seq.tokens[i] in structural or rng.random() >= dropout_rate:
                kept.append(i)
        order = kept
    return _select(seq, order)


def pad_to(seq: LifeSequence, max_len: int, pad_id: int = PAD_ID) -> LifeSequence:
    """Right-pad with PAD tokens carrying the last (year_index, age).

    Raises:
        ValueError: If the sequence is longer than max_len
    """
    if len(seq) > max_len:
        raise ValueError(f"person {seq.person_id}: length {len(seq)} exceeds max_len {max_len}")
    n_pad = max_len - len(seq)
    last_year = seq.year_index[-1] if len(seq) else 0
    last_age = seq.age[-1] if len(seq) else 0
    return LifeSequence(
        tokens=list(seq.tokens) + [pad_id] * n_pad,
        year_index=list(seq.year_index) + [last_year] * n_pad,
        age=list(seq.age) + [last_age] * n_pad,
        position=list(range(max_len)),
        person_id=seq.person_id,
    )


def parse_events(tokens: Sequence[str], year_index: Optional[Sequence[int]] = None) -> ParsedHistory:
    """Parse token strings back into background tokens and event blocks.

    Parsing is lenient: incomplete blocks and stray tokens are skipped, and
    the scan stops at EOL or PAD. n_years counts closed years (EOY or EOL).
    """
    start = 0
    for i, token in enumerate(tokens):
        if token == "BOL":
            start = i + 1
            break
    background = list(tokens[: max(start - 1, 0)])

    events: List[ParsedEvent] = []
    closed_years = 0
    current: Optional[ParsedEvent] = None
    complete = False
    for i in range(start, len(tokens)):
        token = tokens[i]
        if token == "PAD":
            break
        if token in ("EOY", "EOL"):
            current = None
            closed_years += 1
            if token == "EOL":
                complete = True
                break
            continue
        try:
            category = token_category(token)
        except ValueError:
            current = None
            continue
        if category == "month":
            current = ParsedEvent(
                year_number=closed_years + 1,
                month=int(token.split("_", 1)[1]),
                duration=0,
                year_index=year_index[i] if year_index is not None else None,
            )
        elif category == "duration":
            if current is not None:
                current.duration = int(token.split("_", 1)[1])
                events.append(current)
            current = None
        elif current is not None and category not in ("special", "background"):
            current.attributes.setdefault(category, token)
    return ParsedHistory(background=background, events=events, n_years=closed_years, complete=complete)

"""Tests for calendar-grammar encoding."""

from collections import Counter

import pytest

from lifeseq.core.encoding import (
    LifeSequence,
    augment,
    build_vocabulary,
    decode_tokens,
    encode_individual,
    individual_tokens,
    pad_to,
    parse_events,
    truncate_whole_years,
    year_spans,
)
from lifeseq.core.quantization import N_INCOME_BINS, QuantizerState
from lifeseq.core.schema import EMPLOYEE, PARASUBORDINATE, PENSION, SECTOR_CODES, PersonProfile, TabularRecord
from lifeseq.core.vocabulary import PAD_ID, UNK_ID

# boundaries 0, 10, ..., 990: a real monthly income of 195 falls in bin 20
QUANTIZER = QuantizerState(
    tuple(10.0 * k for k in range(N_INCOME_BINS)), {year: 1.0 for year in range(1990, 2016)}
)
PROFILE = PersonProfile(person_id=5, sex="F", birth_year=1942, birth_month=1, birth_area=3)


def _job(year: int, income: float, title: int, province: int, sector: str, **overrides) -> TabularRecord:
    fields = dict(
        person_id=5,
        calendar_year=year,
        start_month=1,
        duration_months=12,
        labour_status=EMPLOYEE,
        yearly_income=income,
        work_title=title,
        sector=sector,
        firm_size=1,
        work_province=province,
        part_full="FT",
        work_intensity=3.0,
        sick_intensity=0.0,
        maternity_intensity=0.0,
    )
    fields.update(overrides)
    return TabularRecord(**fields)


RECORDS = [
    _job(1990, 2340.0, 1, 12, SECTOR_CODES[0]),
    _job(1992, 2580.0, 2, 50, SECTOR_CODES[1]),
]

JOB_1990 = [
    "MONTH_1", "TYPE_1", "INCOME_20", "WRKT_1", "WRKP_12", "ATE_A01", "FSIZE_1",
    "FULL_TIME", "WRKINT_S3", "SIKINT_S0", "MATINT_S0", "DUR_12",
]
JOB_1992 = [
    "MONTH_1", "TYPE_1", "INCOME_22", "WRKT_2", "WRKP_50", "ATE_A02", "FSIZE_1",
    "FULL_TIME", "WRKINT_S3", "SIKINT_S0", "MATINT_S0", "DUR_12",
]
EXPECTED = (
    ["A3", "F", "MONTH_1", "YEAR_1942", "BOL"]
    + JOB_1990 + ["EOY"]
    + ["MONTH_1", "DUR_12", "EOY"]
    + JOB_1992 + ["EOY"]
)


@pytest.fixture
def vocab():
    return build_vocabulary([(PROFILE, RECORDS)], QUANTIZER)


@pytest.mark.unit
class TestIndividualTokens:
    """Test suite for compiling records into token streams."""

    def test_worked_example(self):
        tokens, _, _ = individual_tokens(PROFILE, RECORDS, QUANTIZER)
        assert tokens == EXPECTED

    def test_year_and_age_annotations(self):
        _, years, ages = individual_tokens(PROFILE, RECORDS, QUANTIZER)
        assert years == [0] * 5 + [1] * 13 + [2] * 3 + [3] * 13
        assert ages == [0] * 5 + [48] * 13 + [49] * 3 + [50] * 13

    def test_history_reaching_end_year_closes_with_eol(self):
        tokens, _, _ = individual_tokens(PROFILE, RECORDS, QUANTIZER, end_year=1992)
        assert tokens[-1] == "EOL"
        assert tokens.count("EOY") == 2

    def test_events_in_one_year_follow_month_order(self):
        records = [
            TabularRecord(5, 2001, 6, 7, PENSION, 7000.0),
            _job(2001, 975.0, 1, 12, SECTOR_CODES[0], duration_months=5),
        ]
        tokens, _, _ = individual_tokens(PROFILE, records, QUANTIZER)
        body = tokens[5:]
        assert body[0] == "MONTH_1" and body[body.index("DUR_5") + 1] == "MONTH_6"
        # 7000 over 7 months lies above every boundary
        assert body[-5:] == ["MONTH_6", "TYPE_10", "INCOME_99", "DUR_7", "EOY"]

    def test_missing_birth_date(self):
        profile = PersonProfile(5, "F", None, None, 3)
        with pytest.raises(ValueError, match="birth date"):
            individual_tokens(profile, RECORDS, QUANTIZER)

    def test_invalid_record_names_person(self):
        bad = _job(1990, 100.0, 1, 12, SECTOR_CODES[0], start_month=12, duration_months=2)
        with pytest.raises(ValueError, match="person 5"):
            individual_tokens(PROFILE, [bad], QUANTIZER)

    def test_explicit_year_range_without_records(self):
        tokens, years, _ = individual_tokens(PROFILE, [], QUANTIZER, year_range=(1990, 1991))
        assert tokens[5:] == ["MONTH_1", "DUR_12", "EOY", "MONTH_1", "DUR_12", "EOY"]
        assert years[-1] == 2

    def test_no_records_and_no_range(self):
        with pytest.raises(ValueError, match="no records"):
            individual_tokens(PROFILE, [], QUANTIZER)


@pytest.mark.unit
class TestLifeSequences:
    """Test suite for encoded sequences and their transformations."""

    def test_encode_and_decode(self, vocab):
        seq = encode_individual(PROFILE, RECORDS, vocab, QUANTIZER)
        assert decode_tokens(seq.tokens, vocab) == EXPECTED
        assert seq.position == list(range(len(EXPECTED)))
        assert seq.person_id == 5

    def test_unseen_tokens_become_unk(self, vocab):
        other = [_job(1990, 2340.0, 7, 12, SECTOR_CODES[0])]
        seq = encode_individual(PROFILE, other, vocab, QUANTIZER)
        assert UNK_ID in seq.tokens

    def test_stream_lengths_must_agree(self):
        with pytest.raises(ValueError, match="stream lengths differ"):
            LifeSequence([1, 2], [0], [0, 0], [0, 1])

    def test_year_spans(self, vocab):
        seq = encode_individual(PROFILE, RECORDS, vocab, QUANTIZER)
        header, spans = year_spans(seq.tokens)
        assert header == 5
        assert spans == [(5, 18), (18, 21), (21, 34)]

    def test_truncation_drops_earliest_whole_years(self, vocab):
        seq = encode_individual(PROFILE, RECORDS, vocab, QUANTIZER)
        short = truncate_whole_years(seq, 30)
        strings = decode_tokens(short.tokens, vocab)
        assert len(short) == 21
        assert strings[:5] == EXPECTED[:5]
        assert strings[5:] == EXPECTED[18:]
        assert short.year_index[5] == 2

    def test_encode_truncates_to_max_len(self, vocab):
        seq = encode_individual(PROFILE, RECORDS, vocab, QUANTIZER, max_len=30)
        assert len(seq) == 21

    def test_header_longer_than_max_len(self, vocab):
        seq = encode_individual(PROFILE, RECORDS, vocab, QUANTIZER)
        with pytest.raises(ValueError, match="background block"):
            truncate_whole_years(seq, 4)

    def test_pad_to(self, vocab):
        seq = encode_individual(PROFILE, RECORDS, vocab, QUANTIZER)
        padded = pad_to(seq, 40)
        assert len(padded) == 40
        assert padded.tokens[34:] == [PAD_ID] * 6
        assert padded.year_index[-1] == seq.year_index[-1]
        assert padded.age[-1] == seq.age[-1]
        with pytest.raises(ValueError):
            pad_to(seq, 10)

    def test_padding_ends_year_spans(self, vocab):
        seq = pad_to(encode_individual(PROFILE, RECORDS, vocab, QUANTIZER), 40)
        _, spans = year_spans(seq.tokens)
        assert spans[-1] == (21, 34)


@pytest.mark.unit
class TestAugmentation:
    """Test suite for same-month shuffling and token dropout."""

    @pytest.fixture
    def two_event_year(self):
        records = [
            _job(1995, 2000.0, 1, 12, SECTOR_CODES[0], duration_months=6),
            TabularRecord(5, 1995, 1, 12, PARASUBORDINATE, 500.0, work_title=3, work_province=20,
                          sector=SECTOR_CODES[2], firm_size=4),
        ]
        vocab = build_vocabulary([(PROFILE, records)], QUANTIZER)
        return encode_individual(PROFILE, records, vocab, QUANTIZER), vocab

    def test_shuffle_permutes_whole_blocks(self, two_event_year):
        seq, vocab = two_event_year
        original = decode_tokens(seq.tokens, vocab)
        orders = set()
        for seed in range(20):
            out = augment(seq, vocab, same_month_shuffle=True, seed=seed)
            strings = decode_tokens(out.tokens, vocab)
            assert Counter(strings) == Counter(original)
            assert strings[:5] == original[:5]
            assert strings[-1] == "EOY"
            orders.add(tuple(strings))
        assert len(orders) == 2

    def test_dropout_keeps_structure(self, two_event_year):
        seq, vocab = two_event_year
        out = augment(seq, vocab, same_month_shuffle=False, dropout_rate=0.95, seed=3)
        strings = decode_tokens(out.tokens, vocab)
        original = decode_tokens(seq.tokens, vocab)
        structural = [t for t in original if t.startswith(("MONTH_", "DUR_")) or t in ("BOL", "EOY")]
        assert [t for t in strings if t.startswith(("MONTH_", "DUR_")) or t in ("BOL", "EOY")] == structural
        assert strings[:5] == original[:5]
        assert len(out) < len(seq)

    def test_no_augmentation_is_identity(self, two_event_year):
        seq, vocab = two_event_year
        out = augment(seq, vocab, same_month_shuffle=False, dropout_rate=0.0)
        assert out.tokens == seq.tokens

    def test_invalid_dropout(self, two_event_year):
        seq, vocab = two_event_year
        with pytest.raises(ValueError):
            augment(seq, vocab, dropout_rate=1.0)


@pytest.mark.unit
class TestParseEvents:
    """Test suite for recovering events from token strings."""

    def test_parse_worked_example(self):
        tokens, years, _ = individual_tokens(PROFILE, RECORDS, QUANTIZER)
        history = parse_events(tokens, years)
        assert history.background == ["A3", "F", "MONTH_1", "YEAR_1942"]
        assert history.n_years == 3
        assert not history.complete
        first, silent, third = history.events
        assert first.calendar_year == 1990 and first.status == EMPLOYEE
        assert first.attributes["income"] == "INCOME_20"
        assert first.attributes["intensity_work"] == "WRKINT_S3"
        assert silent.is_silent and silent.status is None and silent.calendar_year == 1991
        assert third.year_number == 3 and third.attributes["sector"] == "ATE_A02"

    def test_parse_stops_at_eol(self):
        tokens = ["BOL", "MONTH_1", "TYPE_10", "DUR_12", "EOL", "MONTH_1", "TYPE_1", "DUR_12"]
        history = parse_events(tokens)
        assert history.complete
        assert len(history.events) == 1

    def test_incomplete_block_skipped(self):
        history = parse_events(["BOL", "MONTH_1", "TYPE_1", "INCOME_3"])
        assert history.events == []

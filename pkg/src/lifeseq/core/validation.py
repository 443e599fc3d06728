"""Structural validation of life sequences against the calendar grammar."""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .encoding import ATTRIBUTE_ORDER
from .vocabulary import token_category

REPEATED_EOY = "repeated_EOY"
EOY_NOT_FOLLOWED_BY_MONTH = "EOY_not_followed_by_month"
DURATION_NOT_FOLLOWED = "duration_not_followed_by_month_or_EOY"
TOKEN_ORDER_VIOLATION = "token_order_violation"
MISSING_DURATION = "missing_duration"
YEAR_NOT_STARTED_BY_MONTH = "year_not_started_by_month"
FAILURE_KINDS = (
    REPEATED_EOY,
    EOY_NOT_FOLLOWED_BY_MONTH,
    DURATION_NOT_FOLLOWED,
    TOKEN_ORDER_VIOLATION,
    MISSING_DURATION,
    YEAR_NOT_STARTED_BY_MONTH,
)

_YEAR_START, _IN_EVENT, _AFTER_DURATION = "year_start", "in_event", "after_duration"
_EVENT_RANK = {"type": 0, **{c: i + 1 for i, c in enumerate(ATTRIBUTE_ORDER)}}


@dataclass
class GrammarVerdict:
    """Outcome of scanning one sequence.

    first_failure_year counts years from the start of the scan (1-based) and
    is None when the sequence is valid over everything scanned.
    """

    first_failure_year: Optional[int] = None
    failure_kind: Optional[str] = None
    failure_position: Optional[int] = None
    years_completed: int = 0

    @property
    def valid(self) -> bool:
        return self.first_failure_year is None


def _category(token: str) -> str:
    try:
        return token_category(token)
    except ValueError:
        return "unknown"


def validate_sequence(tokens: Sequence[str], strict: bool = False) -> GrammarVerdict:
    """Check a token string sequence year by year.

    Scanning starts after BOL when present (otherwise at the first token),
    stops at EOL or PAD, and ignores everything after the first violation.
    A trailing, unfinished year is not a failure. The first year after BOL
    that does not open with a month is reported as year_not_started_by_month;
    without BOL the scan is taken to continue a prefix closed by EOY.

    Args:
        tokens: Token strings
        strict: Also require attribute tokens to follow the fixed intra-event order

    Returns:
        GrammarVerdict
    """
    start = 0
    for i, token in enumerate(tokens):
        if token == "BOL":
            start = i + 1
            break

    year = 1
    state = _YEAR_START
    after_bol = start > 0
    last_rank = -1

    def fail(kind: str, position: int) -> GrammarVerdict:
        return GrammarVerdict(year, kind, position, year - 1)

    for i in range(start, len(tokens)):
        token = tokens[i]
        if token == "PAD":
            break
        category = _category(token)

        if state == _YEAR_START:
            if after_bol and category != "month":
                return fail(YEAR_NOT_STARTED_BY_MONTH, i)
            if token in ("EOY", "EOL"):
                return fail(REPEATED_EOY, i)
            if category != "month":
                return fail(EOY_NOT_FOLLOWED_BY_MONTH, i)
            state, last_rank, after_bol = _IN_EVENT, -1, False
        elif state == _IN_EVENT:
            if category == "duration":
                state = _AFTER_DURATION
            elif category == "month" or token in ("EOY", "EOL"):
                return fail(MISSING_DURATION, i)
            elif category in _EVENT_RANK:
                rank = _EVENT_RANK[category]
                if strict and rank <= last_rank:
                    return fail(TOKEN_ORDER_VIOLATION, i)
                last_rank = rank
            else:
                return fail(TOKEN_ORDER_VIOLATION, i)
        else:
            if category == "month":
                state, last_rank = _IN_EVENT, -1
            elif token == "EOY":
                year += 1
                state = _YEAR_START
            elif token == "EOL":
                return GrammarVerdict(years_completed=year)
            else:
                return fail(DURATION_NOT_FOLLOWED, i)

    return GrammarVerdict(years_completed=year - 1)


@dataclass
class FailureDensity:
    """First-failure-year histogram of a cohort over a horizon."""

    horizon: int
    counts: List[int]
    n_sequences: int
    survival_fraction: float
    survival_curve: List[float] = field(default_factory=list)

    def to_rows(self) -> List[Dict[str, Any]]:
        """Plot-ready rows (year, count, survival)."""
        return [
            {"year": y + 1, "count": self.counts[y], "survival": self.survival_curve[y]}
            for y in range(self.horizon)
        ]


def failure_year_density(verdicts: Iterable[GrammarVerdict], horizon: int = 20) -> FailureDensity:
    """Histogram first-failure years 1..horizon and the fraction surviving the horizon.

    Failures after the horizon count as survivors.

    Raises:
        ValueError: If horizon < 1 or there are no verdicts
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    verdicts = list(verdicts)
    if not verdicts:
        raise ValueError("no verdicts to summarise")
    counts = [0] * horizon
    for verdict in verdicts:
        year = verdict.first_failure_year
        if year is not None and 1 <= year <= horizon:
            counts[year - 1] += 1
    n = len(verdicts)
    curve = []
    failed = 0
    for c in counts:
        failed += c
        curve.append((n - failed) / n)
    return FailureDensity(
        horizon=horizon,
        counts=counts,
        n_sequences=n,
        survival_fraction=curve[-1],
        survival_curve=curve,
    )


def validate_corpus(sequences: Iterable[Sequence[str]], strict: bool = False) -> Dict[str, Any]:
    """Validate many sequences.

    Returns:
        Dictionary containing validation results:
        - valid: bool
        - errors: List of error messages (one per failing sequence)
        - warnings: List of warning messages
        - n_sequences: Number of sequences checked
        - failure_kinds: Count per failure kind
    """
    errors: List[str] = []
    warnings: List[str] = []
    kinds = {kind: 0 for kind in FAILURE_KINDS}
    n = 0
    for index, tokens in enumerate(sequences):
        n += 1
        verdict = validate_sequence(tokens, strict=strict)
        if not verdict.valid:
            kinds[verdict.failure_kind] += 1
            errors.append(
                f"sequence {index}: {verdict.failure_kind} in year {verdict.first_failure_year} "
                f"at token {verdict.failure_position}"
            )
        elif "UNK" in tokens:
            warnings.append(f"sequence {index}: contains UNK tokens")
    if n == 0:
        warnings.append("no sequences to validate")
    return {
        "valid": len(errors) == 0,
        "errors": errors,
        "warnings": warnings,
        "n_sequences": n,
        "failure_kinds": kinds,
    }

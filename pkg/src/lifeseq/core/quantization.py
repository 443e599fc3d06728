"""Income quantile bins and intensity levels."""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .schema import MAX_INTENSITY, TabularRecord

N_INCOME_BINS = 100
INTENSITY_LEVELS = ("S0", "S1", "S2", "S3", "S4+")

# Consumer price index relative to 2015
DEFAULT_DEFLATOR: Dict[int, float] = {
    1990: 0.5340, 1991: 0.5674, 1992: 0.5976, 1993: 0.6245, 1994: 0.6497,
    1995: 0.6835, 1996: 0.7106, 1997: 0.7248, 1998: 0.7378, 1999: 0.7498,
    2000: 0.7689, 2001: 0.7899, 2002: 0.8089, 2003: 0.8309, 2004: 0.8498,
    2005: 0.8667, 2006: 0.8844, 2007: 0.9005, 2008: 0.9312, 2009: 0.9383,
    2010: 0.9524, 2011: 0.9779, 2012: 1.0071, 2013: 1.0193, 2014: 1.0214,
    2015: 1.0000,
}


@dataclass(frozen=True)
class QuantizerState:
    """Fitted income boundaries and the deflator they were fitted with.

    Boundaries are real monthly incomes in 2015 units at quantile levels
    k/100 for k = 0..99.
    """

    boundaries: Tuple[float, ...]
    deflator: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_DEFLATOR))

    def __post_init__(self) -> None:
        if len(self.boundaries) != N_INCOME_BINS:
            raise ValueError(
                f"expected {N_INCOME_BINS} boundaries, got {len(self.boundaries)}"
            )
        b = np.asarray(self.boundaries, dtype=float)
        if not np.all(np.isfinite(b)):
            raise ValueError("boundaries must be finite")
        if np.any(np.diff(b) < 0):
            raise ValueError("boundaries must be non-decreasing")

    def deflate(self, calendar_year: int) -> float:
        try:
            return float(self.deflator[calendar_year])
        except KeyError:
            raise ValueError(f"year {calendar_year} missing from deflator table") from None

    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "deflator": {str(y): v for y, v in sorted(self.deflator.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantizerState":
        return cls(
            boundaries=tuple(float(b) for b in data["boundaries"]),
            deflator={int(y): float(v) for y, v in data["deflator"].items()},
        )


def real_monthly_income(
    yearly_income: float, duration_months: int, calendar_year: int, deflator: Mapping[int, float]
) -> float:
    """Deflated income per month of the event."""
    if duration_months < 1:
        raise ValueError(f"duration_months must be at least 1, got {duration_months}")
    if calendar_year not in deflator:
        raise ValueError(f"year {calendar_year} missing from deflator table")
    return yearly_income / duration_months / deflator[calendar_year]


def fit_quantizer(
    records: Iterable[TabularRecord], deflator: Optional[Mapping[int, float]] = None
) -> QuantizerState:
    """Fit income boundaries on training records.

    Args:
        records: Training-split records
        deflator: Year to price-index table (defaults to DEFAULT_DEFLATOR)

    Returns:
        QuantizerState

    Raises:
        ValueError: If there are no records
    """
    table = dict(DEFAULT_DEFLATOR)
    if deflator:
        table.update(deflator)
    values = np.array(
        [
            real_monthly_income(r.yearly_income, r.duration_months, r.calendar_year, table)
            for r in records
        ],
        dtype=float,
    )
    if values.size == 0:
        raise ValueError("cannot fit income quantiles on an empty record set")
    levels = np.arange(N_INCOME_BINS) / N_INCOME_BINS
    boundaries = np.quantile(values, levels, method="inverted_cdf")
    return QuantizerState(boundaries=tuple(float(b) for b in boundaries), deflator=table)


def income_bin(real_monthly: float, q: QuantizerState) -> int:
    """Number of boundaries strictly below the value, clamped to [0, 99]."""
    count = int(np.searchsorted(np.asarray(q.boundaries), real_monthly, side="left"))
    return min(max(count, 0), N_INCOME_BINS - 1)


def quantize_income(
    yearly_income: float, duration_months: int, calendar_year: int, q: QuantizerState
) -> int:
    """Map a record's income to its quantile bin.

    Args:
        yearly_income: Nominal income earned during the event
        duration_months: Length of the event in months
        calendar_year: Year of the event (selects the deflator)
        q: Fitted quantizer

    Returns:
        Bin index in [0, 99]

    Raises:
        ValueError: If duration is below 1 or the year has no deflator
    """
    real = real_monthly_income(yearly_income, duration_months, calendar_year, q.deflator)
    return income_bin(real, q)


def representative_income(bin_index: int, q: QuantizerState) -> float:
    """Real monthly income standing for a bin (its midpoint; the top bin uses its lower edge)."""
    if not 0 <= bin_index < N_INCOME_BINS:
        raise ValueError(f"income bin {bin_index} outside [0, {N_INCOME_BINS - 1}]")
    if bin_index == N_INCOME_BINS - 1:
        return float(q.boundaries[-1])
    return 0.5 * (q.boundaries[bin_index] + q.boundaries[bin_index + 1])


def intensity_level(intensity: float) -> str:
    """Discretise a weeks-per-month intensity into S0..S4+.

    Levels 1-3 use half-up rounding; anything rounding to 4 or above is S4+.
    """
    if intensity < 0 or not math.isfinite(intensity):
        raise ValueError(f"intensity must be a non-negative number, got {intensity}")
    if intensity == 0:
        return "S0"
    if intensity < 1:
        return "S1"
    level = min(int(math.floor(intensity + 0.5)), 4)
    return INTENSITY_LEVELS[level]


def discretize_intensity(weeks_total: float, months_total: int) -> str:
    """Discretise total weeks over a number of months into an intensity level.

    Raises:
        ValueError: On negative weeks or fewer than one month
    """
    if months_total < 1:
        raise ValueError(f"months_total must be at least 1, got {months_total}")
    if weeks_total < 0:
        raise ValueError(f"weeks_total must be non-negative, got {weeks_total}")
    return intensity_level(min(weeks_total / months_total, MAX_INTENSITY))

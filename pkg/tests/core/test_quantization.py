"""Tests for income quantiles and intensity levels."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifeseq.core.quantization import (
    DEFAULT_DEFLATOR,
    N_INCOME_BINS,
    QuantizerState,
    discretize_intensity,
    fit_quantizer,
    income_bin,
    intensity_level,
    quantize_income,
    real_monthly_income,
    representative_income,
)
from lifeseq.core.schema import PENSION, TabularRecord

STEP_BOUNDARIES = tuple(10.0 * k for k in range(N_INCOME_BINS))


@pytest.fixture
def step_quantizer() -> QuantizerState:
    """Boundaries 0, 10, ..., 990 with a flat deflator."""
    return QuantizerState(STEP_BOUNDARIES, {year: 1.0 for year in range(1990, 2016)})


@pytest.mark.unit
class TestIncomeQuantizer:
    """Test suite for income binning."""

    def test_bin_counts_boundaries_strictly_below(self, step_quantizer):
        assert income_bin(0.0, step_quantizer) == 0
        assert income_bin(195.0, step_quantizer) == 20
        assert income_bin(200.0, step_quantizer) == 20
        assert income_bin(200.5, step_quantizer) == 21

    def test_bins_clamp_to_top(self, step_quantizer):
        assert income_bin(1e9, step_quantizer) == N_INCOME_BINS - 1

    def test_quantize_uses_duration_and_deflator(self, step_quantizer):
        # 2340 over 12 months is 195 a month
        assert quantize_income(2340.0, 12, 1990, step_quantizer) == 20
        assert quantize_income(1170.0, 6, 1990, step_quantizer) == 20

    def test_real_monthly_income(self):
        assert real_monthly_income(1200.0, 12, 2015, {2015: 1.0}) == pytest.approx(100.0)
        assert real_monthly_income(1200.0, 12, 2000, {2000: 0.5}) == pytest.approx(200.0)

    def test_missing_deflator_year(self, step_quantizer):
        with pytest.raises(ValueError, match="missing from deflator"):
            quantize_income(100.0, 1, 1980, step_quantizer)

    def test_zero_duration_rejected(self, step_quantizer):
        with pytest.raises(ValueError):
            quantize_income(100.0, 0, 1995, step_quantizer)

    def test_fit_quantizer_boundaries(self):
        records = [
            TabularRecord(1, 2015, 1, 1, PENSION, float(v)) for v in range(1, 1001)
        ]
        q = fit_quantizer(records)
        assert len(q.boundaries) == N_INCOME_BINS
        assert q.boundaries[0] == pytest.approx(1.0)
        assert all(a <= b for a, b in zip(q.boundaries, q.boundaries[1:]))
        assert income_bin(1.0, q) == 0
        assert income_bin(1000.0, q) == N_INCOME_BINS - 1

    def test_fit_quantizer_empty(self):
        with pytest.raises(ValueError, match="empty record set"):
            fit_quantizer([])

    def test_fit_keeps_default_deflator_years(self):
        q = fit_quantizer([TabularRecord(1, 2015, 1, 12, PENSION, 1200.0)], deflator={2015: 1.0})
        assert set(DEFAULT_DEFLATOR) <= set(q.deflator)

    def test_state_validation(self):
        with pytest.raises(ValueError, match="expected 100 boundaries"):
            QuantizerState((1.0, 2.0))
        with pytest.raises(ValueError, match="non-decreasing"):
            QuantizerState(tuple(reversed(STEP_BOUNDARIES)))

    def test_state_round_trip(self, step_quantizer):
        assert QuantizerState.from_dict(step_quantizer.to_dict()) == step_quantizer

    def test_representative_income(self, step_quantizer):
        assert representative_income(20, step_quantizer) == pytest.approx(205.0)
        assert representative_income(N_INCOME_BINS - 1, step_quantizer) == pytest.approx(990.0)
        with pytest.raises(ValueError):
            representative_income(N_INCOME_BINS, step_quantizer)

    @given(st.floats(0, 2000, allow_nan=False), st.floats(0, 2000, allow_nan=False))
    def test_bin_is_monotone(self, a, b):
        q = QuantizerState(STEP_BOUNDARIES)
        low, high = sorted((a, b))
        assert income_bin(low, q) <= income_bin(high, q)


@pytest.mark.unit
class TestIntensity:
    """Test suite for weeks-per-month intensity levels."""

    @pytest.mark.parametrize(
        "value, level",
        [
            (0.0, "S0"),
            (0.2, "S1"),
            (1.0, "S1"),
            (1.49, "S1"),
            (1.5, "S2"),
            (2.6, "S3"),
            (3.4, "S3"),
            (3.5, "S4+"),
            (52.0 / 12.0, "S4+"),
        ],
    )
    def test_levels(self, value, level):
        assert intensity_level(value) == level

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            intensity_level(-0.1)

    def test_discretize_total_weeks(self):
        assert discretize_intensity(12.0, 12) == "S1"
        assert discretize_intensity(36.0, 12) == "S3"
        # capped at 52 weeks a year
        assert discretize_intensity(1000.0, 12) == "S4+"

    def test_discretize_rejects_empty_window(self):
        with pytest.raises(ValueError):
            discretize_intensity(1.0, 0)

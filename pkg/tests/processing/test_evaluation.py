"""Tests for next-token metrics."""

import math

import pytest
import torch

from lifeseq.core.encoding import year_spans
from lifeseq.core.network import LifeSequenceTransformer
from lifeseq.processing.evaluation import (
    MetricReport,
    accuracy_trend_holds,
    evaluate_known_years,
    macro_scores,
    next_token_metrics,
)
from tests.helpers import ReplayModel


def _report(known_years: int, accuracy: float) -> MetricReport:
    return MetricReport(known_years, accuracy, accuracy, accuracy, accuracy, accuracy, 1.0, 1.0, math.e, 10, 3)


@pytest.mark.unit
class TestMacroScores:
    """Test suite for macro-averaged classification scores."""

    def test_hand_example(self):
        scores = macro_scores([1, 1, 2, 3], [1, 2, 2, 2], n_classes=5)
        assert scores["accuracy"] == pytest.approx(0.5)
        assert scores["recall"] == pytest.approx(0.5)
        assert scores["micro_accuracy"] == pytest.approx(0.5)
        assert scores["precision"] == pytest.approx(4 / 9)
        assert scores["f1"] == pytest.approx(7 / 18)
        assert scores["n_classes"] == 3

    def test_perfect_predictions(self):
        scores = macro_scores([4, 0, 4], [4, 0, 4], n_classes=5)
        assert scores["accuracy"] == scores["precision"] == scores["f1"] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            macro_scores([], [], n_classes=3)


@pytest.mark.unit
class TestNextTokenMetrics:
    """Test suite for teacher-forced and free-running scoring."""

    def test_replay_model_is_perfect(self, encoded_corpus):
        sequences = encoded_corpus["sequences"][:6]
        model = ReplayModel(sequences, len(encoded_corpus["vocab"]))
        report = next_token_metrics(model, sequences, known_years=1, batch_size=4)
        assert report.accuracy == 1.0
        assert report.micro_accuracy == 1.0
        assert report.mean_cross_entropy == pytest.approx(0.0, abs=1e-9)
        assert report.paper_perplexity == pytest.approx(0.0, abs=1e-4)
        assert report.standard_perplexity == pytest.approx(1.0)

    def test_prediction_count_shrinks_with_known_years(self, encoded_corpus):
        sequences = encoded_corpus["sequences"][:4]
        model = ReplayModel(sequences, len(encoded_corpus["vocab"]))
        zero, five = (next_token_metrics(model, sequences, k) for k in (0, 5))
        assert zero.n_predictions == sum(len(s) - year_spans(s.tokens)[0] for s in sequences)
        assert five.n_predictions < zero.n_predictions

    def test_free_running_replay(self, encoded_corpus):
        sequences = encoded_corpus["sequences"][:3]
        model = ReplayModel(sequences, len(encoded_corpus["vocab"]))
        report = next_token_metrics(model, sequences, known_years=2, free_running=True)
        assert report.accuracy == 1.0

    def test_random_model_scores_are_probabilities(self, encoded_corpus, tiny_model_config):
        torch.manual_seed(0)
        model = LifeSequenceTransformer(tiny_model_config)
        reports = evaluate_known_years(model, encoded_corpus["sequences"][:3], levels=(0, 1))
        assert [r.known_years for r in reports] == [0, 1]
        for r in reports:
            assert 0.0 <= r.accuracy <= 1.0
            assert r.standard_perplexity == pytest.approx(math.exp(r.mean_cross_entropy))

    def test_empty_set(self, encoded_corpus):
        model = ReplayModel(encoded_corpus["sequences"][:1], len(encoded_corpus["vocab"]))
        with pytest.raises(ValueError, match="empty"):
            next_token_metrics(model, [], known_years=0)

    def test_nothing_left_to_predict(self, encoded_corpus):
        sequences = encoded_corpus["sequences"][:1]
        model = ReplayModel(sequences, len(encoded_corpus["vocab"]))
        with pytest.raises(ValueError, match="no prediction targets"):
            next_token_metrics(model, sequences, known_years=100)


@pytest.mark.unit
class TestAccuracyTrend:
    """Test suite for the known-years accuracy trend."""

    def test_holds(self):
        reports = [_report(k, a) for k, a in [(0, 0.5), (1, 0.6), (5, 0.6), (10, 0.7)]]
        assert accuracy_trend_holds(reports)

    def test_fails(self):
        reports = [_report(k, a) for k, a in [(0, 0.5), (1, 0.6), (5, 0.55), (10, 0.7)]]
        assert not accuracy_trend_holds(reports)

    def test_order_independent(self):
        reports = [_report(k, a) for k, a in [(10, 0.7), (0, 0.5), (5, 0.6), (1, 0.6)]]
        assert accuracy_trend_holds(reports)

    def test_short_series(self):
        assert accuracy_trend_holds([_report(0, 0.4), _report(1, 0.5)])
        assert not accuracy_trend_holds([_report(0, 0.5), _report(1, 0.4)])

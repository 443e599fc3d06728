"""Next-token metrics conditioned on a number of known years."""

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..core.encoding import LifeSequence, year_spans
from ..core.vocabulary import PAD_ID
from ..models.parameters import GenerationConfig
from ..utils.logging import get_logger
from .generation import generate, prefix_of

logger = get_logger("evaluation")

KNOWN_YEAR_LEVELS = (0, 1, 5, 10)


@dataclass
class MetricReport:
    """Top-1 next-token metrics; macro averages run over classes present in the truth.

    paper_perplexity is the square root of the mean cross-entropy,
    standard_perplexity its exponential.
    """

    known_years: int
    accuracy: float
    micro_accuracy: float
    precision: float
    recall: float
    f1: float
    mean_cross_entropy: float
    paper_perplexity: float
    standard_perplexity: float
    n_predictions: int
    n_classes: int

    def to_dict(self) -> dict:
        return asdict(self)


def macro_scores(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> Dict[str, float]:
    """Macro precision, recall and F1 over classes with at least one true occurrence.

    accuracy is the macro recall; micro_accuracy the plain hit rate.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("no predictions to score")
    support = np.bincount(y_true, minlength=n_classes)
    predicted = np.bincount(y_pred, minlength=n_classes)
    hits = np.bincount(y_true[y_true == y_pred], minlength=n_classes)
    present = support > 0
    recall = hits[present] / support[present]
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted[present] > 0, hits[present] / predicted[present], 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return {
        "accuracy": float(recall.mean()),
        "micro_accuracy": float(hits.sum() / y_true.size),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
        "n_classes": int(present.sum()),
    }


def _context_end(seq: LifeSequence, known_years: int) -> int:
    header, spans = year_spans(seq.tokens)
    known = spans[:known_years]
    return known[-1][1] if known else header


@torch.no_grad()
def next_token_metrics(
    model: torch.nn.Module,
    sequences: Sequence[LifeSequence],
    known_years: int,
    batch_size: int = 16,
    free_running: bool = False,
    vocab_size: int = 0,
) -> MetricReport:
    """Score next-token predictions after the first known_years whole years.

    Teacher-forced by default: every remaining non-pad position is predicted
    from the true history. With free_running, predictions are the greedy
    continuation of the known context compared position by position with
    the truth; the cross-entropy stays teacher-forced.

    Raises:
        ValueError: If there is nothing to evaluate
    """
    if not sequences:
        raise ValueError("empty evaluation set")
    model.eval()
    device = next(model.parameters()).device
    n_classes = vocab_size
    truths: List[np.ndarray] = []
    guesses: List[np.ndarray] = []
    ce_sum, ce_count = 0.0, 0

    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        width = max(len(s) for s in chunk)

        def stream(name: str) -> torch.Tensor:
            rows = [getattr(s, name) + [getattr(s, name)[-1]] * (width - len(s)) for s in chunk]
            return torch.tensor(rows, dtype=torch.long, device=device)

        ids = torch.tensor(
            [s.tokens + [PAD_ID] * (width - len(s)) for s in chunk], dtype=torch.long, device=device
        )
        logits = model(ids, stream("year_index"), stream("age"))
        n_classes = n_classes or logits.shape[-1]
        for row, seq in enumerate(chunk):
            first = max(_context_end(seq, known_years), 1)
            targets = torch.tensor(seq.tokens[first:], dtype=torch.long, device=device)
            keep = targets != PAD_ID
            if not bool(keep.any()):
                continue
            row_logits = logits[row, first - 1 : len(seq) - 1]
            ce = F.cross_entropy(row_logits[keep], targets[keep], reduction="sum")
            ce_sum += float(ce)
            ce_count += int(keep.sum())
            truths.append(targets[keep].cpu().numpy())
            if not free_running:
                guesses.append(row_logits[keep].argmax(dim=-1).cpu().numpy())

    if ce_count == 0:
        raise ValueError(f"no prediction targets after {known_years} known years")
    if free_running:
        # a continuation that stopped early scores PAD for the missing positions
        guesses = [
            np.concatenate([g[: len(t)], np.full(max(len(t) - len(g), 0), PAD_ID, dtype=np.int64)])
            for t, g in zip(truths, _free_running_guesses(model, sequences, known_years, batch_size))
        ]
    scores = macro_scores(np.concatenate(truths), np.concatenate(guesses), n_classes)
    mean_ce = ce_sum / ce_count
    return MetricReport(
        known_years=known_years,
        accuracy=scores["accuracy"],
        micro_accuracy=scores["micro_accuracy"],
        precision=scores["precision"],
        recall=scores["recall"],
        f1=scores["f1"],
        mean_cross_entropy=mean_ce,
        paper_perplexity=math.sqrt(mean_ce),
        standard_perplexity=math.exp(mean_ce),
        n_predictions=ce_count,
        n_classes=scores["n_classes"],
    )


def _free_running_guesses(
    model: torch.nn.Module, sequences: Sequence[LifeSequence], known_years: int, batch_size: int
) -> List[np.ndarray]:
    eligible = [s for s in sequences if len(s) > _context_end(s, known_years)]
    prefixes = [prefix_of(s, known_years) for s in eligible]
    lengths = [len(s) - len(p.sequence) for s, p in zip(eligible, prefixes)]
    cfg = GenerationConfig(
        max_new_tokens=max(lengths), max_years=10_000, sampling="greedy", batch_size=batch_size
    )
    generated = generate(prefixes, model, cfg, seeds=[0] * len(prefixes))
    return [
        np.asarray(g.tokens[len(p.sequence) : len(p.sequence) + n], dtype=np.int64)
        for g, p, n in zip(generated, prefixes, lengths)
    ]


def evaluate_known_years(
    model: torch.nn.Module,
    sequences: Sequence[LifeSequence],
    levels: Sequence[int] = KNOWN_YEAR_LEVELS,
    batch_size: int = 16,
    free_running: bool = False,
) -> List[MetricReport]:
    reports = []
    for level in levels:
        report = next_token_metrics(model, sequences, level, batch_size, free_running)
        logger.info(
            f"known_years={level}: accuracy {report.accuracy:.4f}, F1 {report.f1:.4f}, "
            f"perplexity {report.paper_perplexity:.4f} (sqrt CE) / {report.standard_perplexity:.4f} (exp CE)"
        )
        reports.append(report)
    return reports


def accuracy_trend_holds(reports: Sequence[MetricReport], min_holding: int = 3) -> bool:
    """Whether accuracy is non-decreasing in known_years for at least min_holding adjacent pairs."""
    ordered = sorted(reports, key=lambda r: r.known_years)
    holding = sum(1 for a, b in zip(ordered, ordered[1:]) if b.accuracy >= a.accuracy)
    return holding >= min(min_holding, max(len(ordered) - 1, 0))

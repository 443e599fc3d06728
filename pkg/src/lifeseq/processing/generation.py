"""Conditional generation: whole-year cutoffs, sampling, and Monte Carlo outcomes."""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import torch

from ..core.encoding import LifeSequence, decode_tokens, year_spans
from ..core.network import sequence_tensors
from ..core.validation import GrammarVerdict, validate_sequence
from ..core.vocabulary import BOL_ID, EOL_ID, EOY_ID, PAD_ID, Vocabulary
from ..models.parameters import CutoffSpec, GenerationConfig, derive_seed
from ..utils.logging import get_logger

logger = get_logger("generation")

MATERNITY_ANCHOR_LEVELS = ("MATINT_S2", "MATINT_S3", "MATINT_S4+")
ANCHOR_TOKENS = {
    "first_unemployment": ("TYPE_8",),
    "first_maternity": MATERNITY_ANCHOR_LEVELS,
    "retirement": ("TYPE_10",),
}

# (tokens, year_index) of a whole sequence -> scalar outcome, or None when it never occurs
OutcomeExtractor = Callable[[List[str], List[int]], Optional[float]]


@dataclass
class Prefix:
    """Conditioning history and the (year_index, age) of the first year to generate."""

    sequence: LifeSequence
    start_year_index: int
    start_age: int


def find_anchor_year_index(seq: LifeSequence, anchor_event: str, vocab: Vocabulary) -> Optional[int]:
    """year_index of the first year holding the anchor event, or None."""
    try:
        anchor_ids = {vocab.id(t) for t in ANCHOR_TOKENS[anchor_event] if t in vocab}
    except KeyError:
        raise ValueError(f"unknown anchor event {anchor_event!r}") from None
    _, spans = year_spans(seq.tokens)
    for start, end in spans:
        if any(seq.tokens[i] in anchor_ids for i in range(start, end)):
            return seq.year_index[start]
    return None


def truncate_at_cutoff(seq: LifeSequence, spec: CutoffSpec, vocab: Vocabulary) -> Prefix:
    """Keep the background, BOL and every whole year before anchor_year + offset.

    Raises:
        ValueError: If the anchor is absent or the cutoff precedes the first year
    """
    anchor = find_anchor_year_index(seq, spec.anchor_event, vocab)
    if anchor is None:
        raise ValueError(f"person {seq.person_id}: anchor {spec.anchor_event} not found")
    cutoff = anchor + spec.offset_years
    header, spans = year_spans(seq.tokens)
    first_year = seq.year_index[spans[0][0]]
    if cutoff < first_year:
        raise ValueError(
            f"person {seq.person_id}: cutoff year index {cutoff} precedes first year {first_year}"
        )
    end = header
    for start, stop in spans:
        if seq.year_index[start] >= cutoff:
            break
        end = stop
    kept = range(end)
    prefix = LifeSequence(
        tokens=[seq.tokens[i] for i in kept],
        year_index=[seq.year_index[i] for i in kept],
        age=[seq.age[i] for i in kept],
        position=list(kept),
        person_id=seq.person_id,
    )
    first_age = seq.age[spans[0][0]]
    return Prefix(prefix, cutoff, first_age + (cutoff - first_year))


def prefix_of(seq: LifeSequence, known_years: int) -> Prefix:
    """Prefix holding the first known_years whole years."""
    header, spans = year_spans(seq.tokens)
    if not spans:
        raise ValueError(f"person {seq.person_id}: no years to condition on")
    known = spans[:known_years]
    end = known[-1][1] if known else header
    first_year, first_age = seq.year_index[spans[0][0]], seq.age[spans[0][0]]
    kept = range(end)
    prefix = LifeSequence(
        [seq.tokens[i] for i in kept],
        [seq.year_index[i] for i in kept],
        [seq.age[i] for i in kept],
        list(kept),
        seq.person_id,
    )
    return Prefix(prefix, first_year + len(known), first_age + len(known))


def sample_next(
    logits: torch.Tensor,
    temperature: float = 1.0,
    sampling: str = "categorical",
    generator: Optional[torch.Generator] = None,
) -> int:
    """Pick the next token id from last-position logits with PAD and BOL masked out.

    Raises:
        ValueError: If every candidate is masked
    """
    masked = logits.detach().to(torch.float64).clone()
    masked[PAD_ID] = -math.inf
    masked[BOL_ID] = -math.inf
    if not torch.isfinite(masked).any():
        raise ValueError("all candidate tokens are masked")
    if sampling == "greedy":
        return int(torch.argmax(masked))
    if temperature <= 0:
        raise ValueError("temperature must be positive for categorical sampling")
    probs = torch.softmax(masked / temperature, dim=-1)
    return int(torch.multinomial(probs, 1, generator=generator))


@torch.no_grad()
def step(
    model: torch.nn.Module,
    seq: LifeSequence,
    cfg: GenerationConfig,
    generator: Optional[torch.Generator] = None,
) -> int:
    """Sample the token following seq."""
    model.eval()
    logits = model(*sequence_tensors(seq, next(model.parameters()).device))
    return sample_next(logits[0, -1], cfg.temperature, cfg.sampling, generator)


@dataclass
class _Running:
    tokens: List[int]
    years: List[int]
    ages: List[int]
    year: int
    age: int
    generator: torch.Generator
    person_id: int
    new_tokens: int = 0
    new_years: int = 0
    done: bool = False


@torch.no_grad()
def generate(
    prefixes: Sequence[Prefix],
    model: torch.nn.Module,
    cfg: GenerationConfig,
    seeds: Optional[Sequence[int]] = None,
) -> List[LifeSequence]:
    """Continue every prefix autoregressively, cfg.batch_size sequences at a time.

    Each generated token carries the current (year_index, age); both advance
    by one after an EOY. A sequence stops at EOL, after max_new_tokens
    tokens, after max_years EOY tokens, or at the model's max_len. No
    grammar is enforced while sampling.

    Returns:
        Full sequences (prefix followed by its continuation), in input order
    """
    if seeds is None:
        seeds = [derive_seed(cfg.seed, f"sequence/{i}") for i in range(len(prefixes))]
    if len(seeds) != len(prefixes):
        raise ValueError("one seed is needed per prefix")
    model.eval()
    device = next(model.parameters()).device
    max_len = getattr(model, "max_len", None)
    outputs: List[LifeSequence] = []
    for start in range(0, len(prefixes), cfg.batch_size):
        running = [
            _Running(
                list(p.sequence.tokens),
                list(p.sequence.year_index),
                list(p.sequence.age),
                p.start_year_index,
                p.start_age,
                torch.Generator().manual_seed(int(seed)),
                p.sequence.person_id,
            )
            for p, seed in zip(prefixes[start : start + cfg.batch_size], seeds[start : start + cfg.batch_size])
        ]
        for r in running:
            r.done = _finished(r, cfg, max_len)
        while not all(r.done for r in running):
            active = [r for r in running if not r.done]
            width = max(len(r.tokens) for r in active)

            def padded(rows: List[List[int]]) -> torch.Tensor:
                return torch.tensor(
                    [row + [row[-1] if row else 0] * (width - len(row)) for row in rows],
                    dtype=torch.long,
                    device=device,
                )

            ids = torch.tensor(
                [r.tokens + [PAD_ID] * (width - len(r.tokens)) for r in active], dtype=torch.long, device=device
            )
            logits = model(ids, padded([r.years for r in active]), padded([r.ages for r in active]))
            for row, r in enumerate(active):
                token = sample_next(logits[row, len(r.tokens) - 1], cfg.temperature, cfg.sampling, r.generator)
                r.tokens.append(token)
                r.years.append(r.year)
                r.ages.append(r.age)
                r.new_tokens += 1
                if token == EOY_ID:
                    r.year += 1
                    r.age += 1
                    r.new_years += 1
                r.done = token == EOL_ID or _finished(r, cfg, max_len)
        outputs.extend(
            LifeSequence(r.tokens, r.years, r.ages, list(range(len(r.tokens))), r.person_id) for r in running
        )
        logger.debug(f"Generated continuations {start + 1}-{start + len(running)} of {len(prefixes)}")
    return outputs


def _finished(r: _Running, cfg: GenerationConfig, max_len: Optional[int]) -> bool:
    return (
        r.new_tokens >= cfg.max_new_tokens
        or r.new_years >= cfg.max_years
        or (max_len is not None and len(r.tokens) >= max_len)
    )


def simulate_continuations(
    prefix: Prefix,
    model: torch.nn.Module,
    cfg: GenerationConfig,
    k: Optional[int] = None,
    seed: Optional[int] = None,
) -> List[LifeSequence]:
    """K independent continuations of one prefix with per-simulation seeds."""
    k = cfg.n_simulations if k is None else k
    if k < 1:
        raise ValueError(f"number of simulations must be at least 1, got {k}")
    root = cfg.seed if seed is None else seed
    person = prefix.sequence.person_id
    seeds = [derive_seed(root, f"simulation/{person}/{i}") for i in range(k)]
    return generate([prefix] * k, model, cfg, seeds)


@dataclass
class MonteCarloOutcome:
    """Person-level mean over valid simulations plus how the rest were lost."""

    mean: Optional[float]
    n_valid: int
    n_censored: int
    n_invalid: int
    draws: List[float] = field(default_factory=list)


def valid_continuation(
    full: LifeSequence, prefix: Prefix, vocab: Vocabulary
) -> Tuple[List[str], List[int], GrammarVerdict]:
    """Token strings and year indices of a simulation up to its first grammar failure.

    The prefix is always kept; of the continuation only the years completed
    before the first failing year survive.

    Returns:
        (token strings, year_index stream, grammar verdict of the continuation)
    """
    n_prefix = len(prefix.sequence)
    strings = decode_tokens(full.tokens, vocab)
    verdict = validate_sequence(strings[n_prefix:])
    keep = len(strings)
    if not verdict.valid:
        keep = n_prefix
        years_ok = verdict.first_failure_year - 1
        closed = 0
        for i in range(n_prefix, len(strings)):
            if closed == years_ok:
                break
            if strings[i] in ("EOY", "EOL"):
                closed += 1
            keep = i + 1
    return strings[:keep], list(full.year_index[:keep]), verdict


def continuation_outcome(
    full: LifeSequence, prefix: Prefix, extractor: OutcomeExtractor, vocab: Vocabulary
) -> Tuple[Optional[float], GrammarVerdict]:
    """Extract an outcome from one simulation, ignoring years from the first grammar failure on.

    Returns:
        (outcome or None, grammar verdict of the continuation)
    """
    strings, years, verdict = valid_continuation(full, prefix, vocab)
    return extractor(strings, years), verdict


def monte_carlo_outcomes(
    prefix: Prefix,
    model: torch.nn.Module,
    cfg: GenerationConfig,
    extractor: OutcomeExtractor,
    vocab: Vocabulary,
    k: Optional[int] = None,
    seed: Optional[int] = None,
) -> MonteCarloOutcome:
    """Mean simulated outcome over K continuations.

    Simulations whose outcome is missing count as invalid when their
    continuation broke the grammar first, otherwise as censored; both are
    excluded from the mean.

    Raises:
        ValueError: If K < 1
    """
    simulations = simulate_continuations(prefix, model, cfg, k, seed)
    draws: List[float] = []
    censored = invalid = 0
    for full in simulations:
        outcome, verdict = continuation_outcome(full, prefix, extractor, vocab)
        if outcome is None:
            if verdict.valid:
                censored += 1
            else:
                invalid += 1
        else:
            draws.append(float(outcome))
    mean = math.fsum(draws) / len(draws) if draws else None
    return MonteCarloOutcome(mean, len(draws), censored, invalid, draws)

"""Causal benchmark protocols: cohorts, cutoffs, outcome extraction and result tables.

Real and simulated outcomes are read from token streams by the same
extractors, so a model that replays the truth reproduces the empirical
estimates exactly.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from ..core.encoding import LifeSequence, decode_tokens, parse_events
from ..core.quantization import QuantizerState, representative_income
from ..core.schema import (
    MOBILITY_ALLOWANCE,
    PENSION,
    SECTOR_RANK,
    WORKING_STATUSES,
    YEAR_INDEX_ORIGIN,
)
from ..core.vocabulary import Vocabulary
from ..models.parameters import CutoffSpec, ExperimentConfig, GenerationConfig, derive_seed
from ..utils.file_handling import write_csv
from ..utils.logging import ProgressLogger, get_logger
from .causal import (
    AteResult,
    CausalSample,
    align_matched_controls,
    ate_diff_means,
    counterfactual_income,
    event_study_ols,
    paired_bootstrap,
    penalty_delta,
    propensity_match,
    rdd_window,
    samples_to_frame,
)
from .generation import (
    MATERNITY_ANCHOR_LEVELS,
    OutcomeExtractor,
    monte_carlo_outcomes,
    simulate_continuations,
    truncate_at_cutoff,
    valid_continuation,
)

logger = get_logger("experiments")

TABLE_COLUMNS = [
    "experiment",
    "spec",
    "emp",
    "emp_lo",
    "emp_hi",
    "model",
    "model_lo",
    "model_hi",
    "delta",
    "delta_lo",
    "delta_hi",
    "n",
]
EXPERIMENT_ANCHORS = {
    "pension_1y": "retirement",
    "pension_4y": "retirement",
    "unemployment": "first_unemployment",
    "maternity": "first_maternity",
}

PENSION_BIRTH_YEARS = (1940, 1950)

EarningsExtractor = Callable[[List[str], List[int]], Dict[int, float]]


# -- outcome extraction ------------------------------------------------------


def background_of(tokens: Sequence[str]) -> Dict[str, Optional[int]]:
    """Sex, birth year, birth month and area from the tokens before BOL."""
    info: Dict[str, Optional[int]] = {"sex": None, "birth_year": None, "birth_month": None, "area": None}
    for token in tokens:
        if token == "BOL":
            break
        if token in ("F", "M"):
            info["sex"] = token
        elif token.startswith("YEAR_"):
            info["birth_year"] = int(token[5:])
        elif token.startswith("MONTH_"):
            info["birth_month"] = int(token[6:])
        elif token.startswith("A") and token[1:].isdigit():
            info["area"] = int(token[1:])
    return info


def _absolute_month(calendar_year: int, month: int) -> int:
    return calendar_year * 12 + month - 1


def _birth_month_index(tokens: Sequence[str]) -> Optional[int]:
    info = background_of(tokens)
    if info["birth_year"] is None or info["birth_month"] is None:
        return None
    return _absolute_month(info["birth_year"], info["birth_month"])


def first_spell_months(tokens: List[str], year_index: List[int]) -> Optional[float]:
    """Length of the first mobility-allowance spell, joining contiguous events across years."""
    spell_end = None
    length = 0
    for event in parse_events(tokens, year_index).events:
        if event.status != MOBILITY_ALLOWANCE:
            continue
        start = _absolute_month(event.calendar_year, event.month)
        if spell_end is None:
            spell_end, length = start + event.duration, event.duration
        elif start == spell_end:
            spell_end += event.duration
            length += event.duration
        else:
            break
    return None if spell_end is None else float(length)


def first_event_age_months(status: int) -> OutcomeExtractor:
    """Extractor of the age in months at the first event with the given status."""

    def extract(tokens: List[str], year_index: List[int]) -> Optional[float]:
        born = _birth_month_index(tokens)
        if born is None:
            return None
        for event in parse_events(tokens, year_index).events:
            if event.status == status:
                return float(_absolute_month(event.calendar_year, event.month) - born)
        return None

    return extract


first_pension_age_months = first_event_age_months(PENSION)
displacement_age_months = first_event_age_months(MOBILITY_ALLOWANCE)


def first_maternity_year(tokens: List[str], year_index: List[int]) -> Optional[int]:
    """Calendar year of the first maternity intensity at S2 or above."""
    for event in parse_events(tokens, year_index).events:
        if event.attributes.get("intensity_maternity") in MATERNITY_ANCHOR_LEVELS:
            return event.calendar_year
    return None


def annual_earnings(q: QuantizerState) -> EarningsExtractor:
    """Extractor of real earnings per closed calendar year from income-bin midpoints.

    Years closed without working events earn 0.
    """

    def extract(tokens: List[str], year_index: List[int]) -> Dict[int, float]:
        earnings = {
            YEAR_INDEX_ORIGIN + y: 0.0 for t, y in zip(tokens, year_index) if t in ("EOY", "EOL")
        }
        for event in parse_events(tokens, year_index).events:
            income = event.attributes.get("income")
            year = event.calendar_year
            if event.status not in WORKING_STATUSES or income is None or year not in earnings:
                continue
            earnings[year] += representative_income(int(income.split("_", 1)[1]), q) * event.duration
        return earnings

    return extract


def matching_covariates(tokens: List[str], year_index: List[int]) -> Dict[str, float]:
    """Pre-event covariates: birth year, birth area, first working year, first sector rank."""
    info = background_of(tokens)
    first_work_year, sector_rank = None, 0
    for event in parse_events(tokens, year_index).events:
        if event.status in WORKING_STATUSES and first_work_year is None:
            first_work_year = event.calendar_year
        sector = event.attributes.get("sector")
        if sector is not None:
            sector_rank = SECTOR_RANK.get(sector.split("_", 1)[1], 0)
            break
    return {
        "birth_year": float(info["birth_year"] or 0),
        "birth_area": float(info["area"] or 0),
        "first_work_year": float(first_work_year or 0),
        "first_sector_rank": float(sector_rank),
    }


# -- protocols ---------------------------------------------------------------


@dataclass
class _View:
    seq: LifeSequence
    tokens: List[str]

    @property
    def person_id(self) -> int:
        return self.seq.person_id

    @property
    def years(self) -> List[int]:
        return self.seq.year_index


@dataclass
class ExperimentResult:
    """Table rows, figure data and bookkeeping of one benchmark run."""

    name: str
    table: pd.DataFrame
    figures: Dict[str, pd.DataFrame] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)


def _row(experiment: str, spec: str, emp: AteResult, model: AteResult, delta: AteResult, scale: float = 1.0) -> dict:
    return {
        "experiment": experiment,
        "spec": spec,
        "emp": emp.point * scale,
        "emp_lo": emp.lo * scale,
        "emp_hi": emp.hi * scale,
        "model": model.point * scale,
        "model_lo": model.lo * scale,
        "model_hi": model.hi * scale,
        "delta": delta.point * scale,
        "delta_lo": delta.lo * scale,
        "delta_hi": delta.hi * scale,
        "n": emp.n,
    }


def _empty_row(experiment: str, spec: str, n: int) -> dict:
    row = {c: np.nan for c in TABLE_COLUMNS}
    row.update(experiment=experiment, spec=spec, n=n)
    return row


def _require(n: int, cfg: ExperimentConfig, what: str) -> None:
    if n < cfg.min_cohort:
        raise ValueError(f"{cfg.name}: {what} has {n} persons, below the minimum of {cfg.min_cohort}")


def _scalar_samples(
    views: Sequence[_View],
    cfg: ExperimentConfig,
    vocab: Vocabulary,
    model: torch.nn.Module,
    gen_cfg: GenerationConfig,
    extractor: OutcomeExtractor,
    treatment: Callable[[_View], int],
    running: Callable[[_View], Optional[float]],
    counts: Dict[str, int],
) -> List[CausalSample]:
    cutoff = CutoffSpec(EXPERIMENT_ANCHORS[cfg.name], cfg.resolved_offset)
    sim_seed = derive_seed(cfg.seed, f"{cfg.name}/simulations")
    progress = ProgressLogger(logger, every=max(len(views) // 10, 1))
    progress.start(len(views), f"{cfg.name}: simulating continuations")
    samples = []
    for view in views:
        y_real = extractor(view.tokens, view.years)
        run = running(view)
        if y_real is None or run is None:
            counts["missing_real_outcome"] += 1
            continue
        try:
            prefix = truncate_at_cutoff(view.seq, cutoff, vocab)
        except ValueError as e:
            logger.debug(str(e))
            counts["skipped_cutoff"] += 1
            continue
        mc = monte_carlo_outcomes(prefix, model, gen_cfg, extractor, vocab, seed=sim_seed)
        counts["censored"] += mc.n_censored
        counts["invalid"] += mc.n_invalid
        samples.append(
            CausalSample(
                person_id=view.person_id,
                treated=treatment(view),
                y_real=y_real,
                y_sim=mc.mean,
                running=float(run),
                covariates={"birth_year": float(background_of(view.tokens)["birth_year"] or 0)},
            )
        )
        progress.step()
    progress.complete()
    return samples


def in_pension_cohort(tokens: Sequence[str]) -> bool:
    """Men born in January or December 1940-1950 with an observed pension."""
    info = background_of(tokens)
    first, last = PENSION_BIRTH_YEARS
    return (
        info["sex"] == "M"
        and info["birth_month"] in (1, 12)
        and info["birth_year"] is not None
        and first <= info["birth_year"] <= last
        and f"TYPE_{PENSION}" in tokens
    )


def _pension(views, cfg, vocab, q, model, gen_cfg, counts) -> ExperimentResult:
    cohort = [view for view in views if in_pension_cohort(view.tokens)]
    _require(len(cohort), cfg, "pension cohort")
    samples = _scalar_samples(
        cohort,
        cfg,
        vocab,
        model,
        gen_cfg,
        first_pension_age_months,
        treatment=lambda v: int(background_of(v.tokens)["birth_month"] == 1),
        running=lambda v: 0.0,
        counts=counts,
    )
    _require(len(samples), cfg, "pension sample after truncation")
    frame = samples_to_frame(samples)
    frame["birth_month"] = frame["treated"].map({1: 1, 0: 12})
    emp, mod, delta = paired_bootstrap(
        frame, ate_diff_means, cfg.bootstrap_samples, derive_seed(cfg.seed, f"{cfg.name}/bootstrap")
    )
    table = pd.DataFrame([_row(cfg.name, "jan_vs_dec_months", emp, mod, delta)], columns=TABLE_COLUMNS)
    by_cohort = (
        frame.groupby(["birth_year", "birth_month"])
        .agg(real_age_months=("y_real", "mean"), model_age_months=("y_sim", "mean"), n=("person_id", "size"))
        .reset_index()
    )
    return ExperimentResult(cfg.name, table, {f"{cfg.name}_retirement_age": by_cohort}, counts)


def _unemployment(views, cfg, vocab, q, model, gen_cfg, counts) -> ExperimentResult:
    cohort = [v for v in views if f"TYPE_{MOBILITY_ALLOWANCE}" in v.tokens]
    _require(len(cohort), cfg, "displaced cohort")
    samples = _scalar_samples(
        cohort,
        cfg,
        vocab,
        model,
        gen_cfg,
        first_spell_months,
        treatment=lambda v: int((displacement_age_months(v.tokens, v.years) or 0) >= cfg.running_cutoff),
        running=lambda v: displacement_age_months(v.tokens, v.years),
        counts=counts,
    )
    _require(len(samples), cfg, "displaced sample after truncation")
    frame = samples_to_frame(samples)
    rows = []
    for h in cfg.bandwidths:
        window = rdd_window(frame, h, cfg.running_cutoff)
        seed = derive_seed(cfg.seed, f"{cfg.name}/bootstrap/{h}")
        try:
            emp, mod, delta = paired_bootstrap(window, ate_diff_means, cfg.bootstrap_samples, seed)
        except ValueError as e:
            logger.warning(f"bandwidth ±{h}m: {e}")
            rows.append(_empty_row(cfg.name, f"±{h}m", int(window["y_sim"].notna().sum())))
            continue
        rows.append(_row(cfg.name, f"±{h}m", emp, mod, delta))
    frame["age_years"] = (frame["running"] // 12).astype(int)
    curve = (
        frame.groupby("age_years")
        .agg(real_months=("y_real", "mean"), model_months=("y_sim", "mean"), n=("person_id", "size"))
        .reset_index()
    )
    return ExperimentResult(
        cfg.name, pd.DataFrame(rows, columns=TABLE_COLUMNS), {"unemployment_duration_by_age": curve}, counts
    )


def _panel_rows(
    person_id: int, earnings: Dict[int, float], birth_year: int, event_year: int, window: Tuple[int, int], group: str
) -> List[dict]:
    lo, hi = window
    return [
        {
            "person_id": person_id,
            "year": year,
            "age": year - birth_year,
            "event_time": year - event_year,
            "y": y,
            "group": group,
        }
        for year, y in sorted(earnings.items())
        if lo <= year - event_year <= hi
    ]


def _simulated_control_panel(
    mothers: Sequence[_View],
    event_years: Dict[int, int],
    cfg: ExperimentConfig,
    offset: int,
    vocab: Vocabulary,
    model: torch.nn.Module,
    gen_cfg: GenerationConfig,
    earnings_of: EarningsExtractor,
    counts: Dict[str, int],
    exclude_maternity: bool,
) -> pd.DataFrame:
    """Per mother-year mean earnings over simulations from a cutoff at the given offset."""
    cutoff = CutoffSpec("first_maternity", offset)
    sim_seed = derive_seed(cfg.seed, f"{cfg.name}/simulations/{offset}")
    rows = []
    for view in mothers:
        try:
            prefix = truncate_at_cutoff(view.seq, cutoff, vocab)
        except ValueError:
            counts["skipped_cutoff"] += 1
            continue
        paths = []
        for full in simulate_continuations(prefix, model, gen_cfg, seed=sim_seed):
            tokens, years, verdict = valid_continuation(full, prefix, vocab)
            if not verdict.valid:
                counts["invalid"] += 1
            generated = tokens[len(prefix.sequence) :]
            if exclude_maternity and any(t in MATERNITY_ANCHOR_LEVELS for t in generated):
                counts["with_maternity"] += 1
                continue
            paths.append(earnings_of(tokens, years))
        if not paths:
            continue
        merged = pd.DataFrame(paths).mean(axis=0, skipna=True)
        birth_year = background_of(view.tokens)["birth_year"]
        earnings = {int(year): float(y) for year, y in merged.items() if pd.notna(y)}
        group = "NM" if exclude_maternity else "M"
        rows.extend(_panel_rows(view.person_id, earnings, birth_year, event_years[view.person_id], cfg.event_window, group))
    return pd.DataFrame(rows, columns=["person_id", "year", "age", "event_time", "y", "group"])


def _maternity(views, cfg, vocab, q, model, gen_cfg, counts) -> ExperimentResult:
    earnings_of = annual_earnings(q)
    lo, _ = cfg.event_window
    mothers, non_mothers, event_years = [], [], {}
    for view in views:
        if background_of(view.tokens)["sex"] != "F":
            continue
        year = first_maternity_year(view.tokens, view.years)
        if year is None:
            non_mothers.append(view)
            continue
        # enough years on both sides of the first birth
        observed = [YEAR_INDEX_ORIGIN + y for t, y in zip(view.tokens, view.years) if t in ("EOY", "EOL")]
        if observed and observed[0] <= year + lo and observed[-1] > year:
            mothers.append(view)
            event_years[view.person_id] = year
    _require(len(mothers), cfg, "mother cohort")
    _require(len(non_mothers), cfg, "non-mother pool")

    covariate_rows = []
    for view, treated in [(v, 1) for v in mothers] + [(v, 0) for v in non_mothers]:
        row = {"person_id": view.person_id, "treated": treated}
        row.update(matching_covariates(view.tokens, view.years))
        covariate_rows.append(row)
    pairs = propensity_match(pd.DataFrame(covariate_rows), list(cfg.covariates))
    counts["matched"] = len(pairs)

    mother_rows = []
    for view in mothers:
        birth_year = background_of(view.tokens)["birth_year"]
        mother_rows.extend(
            _panel_rows(
                view.person_id, earnings_of(view.tokens, view.years), birth_year,
                event_years[view.person_id], cfg.event_window, "M",
            )
        )
    mother_panel = pd.DataFrame(mother_rows)

    control_rows = []
    matched_ids = set(pairs["control_id"])
    for view in non_mothers:
        if view.person_id not in matched_ids:
            continue
        birth_year = background_of(view.tokens)["birth_year"]
        for year, y in earnings_of(view.tokens, view.years).items():
            control_rows.append({"person_id": view.person_id, "year": year, "age": year - birth_year, "y": y})
    matched_panel = align_matched_controls(
        pd.DataFrame(control_rows, columns=["person_id", "year", "age", "y"]), pairs, event_years
    )
    matched_panel = matched_panel.loc[matched_panel["event_time"].between(*cfg.event_window)]

    control_offset = min(cfg.maternity_offsets)
    if control_offset >= 0:
        raise ValueError("maternity needs a negative offset for simulated no-maternity controls")
    simulated_panel = _simulated_control_panel(
        mothers, event_years, cfg, control_offset, vocab, model, gen_cfg, earnings_of, counts, True
    )
    simulated_mothers = _simulated_control_panel(
        mothers, event_years, cfg, max(cfg.maternity_offsets), vocab, model, gen_cfg, earnings_of, counts, False
    )

    paths = {}
    for label, panel in (("mothers", mother_panel), ("matched", matched_panel), ("simulated", simulated_panel)):
        result = event_study_ols(panel)
        paths[label] = counterfactual_income(result, panel)[1]

    rows = []
    for a, b in cfg.windows:
        seed = derive_seed(cfg.seed, f"{cfg.name}/bootstrap/{a}-{b}")
        emp, mod, delta = penalty_delta(
            paths["mothers"], paths["matched"], paths["simulated"], (a, b), cfg.bootstrap_samples, seed
        )
        row = _row(cfg.name, f"{a}-{b} years (%)", emp, mod, delta, scale=100.0)
        row["n"] = len(mothers)
        rows.append(row)

    def mean_path(panel: pd.DataFrame, name: str) -> pd.Series:
        return panel.groupby("event_time")["y"].mean().rename(name)

    earnings_paths = pd.concat(
        [
            mean_path(mother_panel, "real_mothers"),
            mean_path(simulated_mothers, "simulated_mothers"),
            mean_path(matched_panel, "matched_controls"),
            mean_path(simulated_panel, "simulated_controls"),
        ],
        axis=1,
    ).rename_axis("event_time").reset_index()
    effects = pd.concat(
        [
            paths[label].set_index("event_time")[["effect", "sigma"]].add_prefix(f"{label}_")
            for label in ("mothers", "matched", "simulated")
        ],
        axis=1,
    ).reset_index()
    return ExperimentResult(
        cfg.name,
        pd.DataFrame(rows, columns=TABLE_COLUMNS),
        {"maternity_earnings_paths": earnings_paths, "maternity_effects": effects},
        counts,
    )


_PROTOCOLS = {
    "pension_1y": _pension,
    "pension_4y": _pension,
    "unemployment": _unemployment,
    "maternity": _maternity,
}


def run_experiment(
    cfg: ExperimentConfig,
    sequences: Sequence[LifeSequence],
    vocab: Vocabulary,
    q: QuantizerState,
    model: torch.nn.Module,
    gen_cfg: GenerationConfig,
) -> ExperimentResult:
    """Run one benchmark end to end on encoded sequences.

    Selects the experiment's cohort, truncates each history at the
    experiment's cutoff, simulates gen_cfg.n_simulations continuations per
    person, extracts real and simulated outcomes, and estimates the
    empirical and model effects with their difference.

    Raises:
        ValueError: If a cohort is smaller than cfg.min_cohort
    """
    views = [_View(seq, decode_tokens(seq.tokens, vocab)) for seq in sequences]
    counts = {
        "candidates": len(views),
        "missing_real_outcome": 0,
        "skipped_cutoff": 0,
        "censored": 0,
        "invalid": 0,
        "with_maternity": 0,
    }
    logger.info(f"Running {cfg.name} on {len(views)} sequences")
    result = _PROTOCOLS[cfg.name](views, cfg, vocab, q, model, gen_cfg, counts)
    logger.info(f"{cfg.name}: {len(result.table)} result rows, counts {result.counts}")
    return result


def write_experiment(result: ExperimentResult, output_dir: str) -> List[Path]:
    """Write the table rows and figure frames of one experiment as CSV files."""
    out = Path(output_dir)
    paths = [write_csv(str(out / f"ate_{result.name}.csv"), result.table, TABLE_COLUMNS)]
    for name, frame in result.figures.items():
        paths.append(write_csv(str(out / f"figure_{name}.csv"), frame))
    return paths

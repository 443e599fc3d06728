"""Treatment-effect estimators: difference in means, RDD windows, paired bootstrap,
event-study regressions, child-penalty normalisation and propensity matching.

Estimators are pure functions over pandas frames. Person-level samples use the
columns ``person_id``, ``treated``, ``y_real``, ``y_sim`` and ``running``;
event panels use ``person_id``, ``year``, ``event_time``, ``age``, ``y`` and
optionally ``group``.
"""

import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import statsmodels.api as sm
from statsmodels.tools.sm_exceptions import ConvergenceWarning, PerfectSeparationError

from ..utils.logging import ProgressLogger, get_logger

logger = get_logger("causal")

REFERENCE_EVENT_TIME = -1
RDD_CUTOFF_MONTHS = 480
RDD_BANDWIDTHS = (12, 48, 96, 144)
CI_PERCENTILES = (2.5, 97.5)
LOGIT_MAXITER = 50
LOGIT_TOL = 1e-8

Estimator = Callable[[pd.DataFrame, str], float]


@dataclass
class CausalSample:
    """One person in a treatment-effect comparison."""

    person_id: int
    treated: int
    y_real: float
    y_sim: Optional[float] = None
    running: float = 0.0
    covariates: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.treated not in (0, 1):
            raise ValueError(f"person {self.person_id}: treatment must be 0 or 1, got {self.treated}")
        if not np.isfinite(self.running):
            raise ValueError(f"person {self.person_id}: running variable must be finite")


def samples_to_frame(samples: Sequence[CausalSample]) -> pd.DataFrame:
    rows = []
    for s in samples:
        row = {
            "person_id": s.person_id,
            "treated": s.treated,
            "y_real": s.y_real,
            "y_sim": np.nan if s.y_sim is None else s.y_sim,
            "running": s.running,
        }
        row.update(s.covariates)
        rows.append(row)
    columns = ["person_id", "treated", "y_real", "y_sim", "running"]
    return pd.DataFrame(rows, columns=None if rows else columns)


@dataclass
class AteResult:
    """Point estimate with a percentile 95% interval."""

    point: float
    lo: float
    hi: float
    n: int
    B: int

    @property
    def contains_point(self) -> bool:
        return self.lo <= self.point <= self.hi

    def to_dict(self) -> dict:
        return asdict(self)


def ate_diff_means(frame: pd.DataFrame, outcome: str = "y_real", treatment: str = "treated") -> float:
    """E[Y | T=1] - E[Y | T=0].

    Raises:
        ValueError: If either group is empty
    """
    treated = frame.loc[frame[treatment] == 1, outcome]
    control = frame.loc[frame[treatment] == 0, outcome]
    if treated.empty or control.empty:
        raise ValueError(
            f"difference in means needs both groups (treated {len(treated)}, control {len(control)})"
        )
    return float(treated.mean() - control.mean())


def rdd_window(
    frame: pd.DataFrame, bandwidth: float, cutoff: float = RDD_CUTOFF_MONTHS, running: str = "running"
) -> pd.DataFrame:
    """Rows with |running - cutoff| <= bandwidth, treatment set to 1[running >= cutoff]."""
    window = frame.loc[(frame[running] - cutoff).abs() <= bandwidth].copy()
    window["treated"] = (window[running] >= cutoff).astype(int)
    return window


def local_ate_rdd(
    frame: pd.DataFrame,
    outcome: str = "y_real",
    cutoff: float = RDD_CUTOFF_MONTHS,
    bandwidth: float = 96,
    running: str = "running",
) -> float:
    """Difference in means above and below the cutoff inside the bandwidth window.

    Raises:
        ValueError: If one side of the window is empty
    """
    window = rdd_window(frame, bandwidth, cutoff, running)
    try:
        return ate_diff_means(window, outcome)
    except ValueError:
        raise ValueError(f"RDD window ±{bandwidth} around {cutoff} has an empty side") from None


def _percentile_result(point: float, draws: np.ndarray, n: int) -> AteResult:
    lo, hi = np.percentile(draws, CI_PERCENTILES)
    return AteResult(float(point), float(lo), float(hi), n, len(draws))


def paired_bootstrap(
    frame: pd.DataFrame,
    estimator: Estimator = ate_diff_means,
    B: int = 1000,
    seed: int = 0,
) -> Tuple[AteResult, AteResult, AteResult]:
    """Resample persons with replacement and re-estimate on real and simulated outcomes.

    Rows without a simulated outcome are dropped first so both arms see the
    same persons. Each resample yields ATE_emp, ATE_model and their difference;
    resamples where the estimator is undefined (an empty group) are skipped.

    Returns:
        (empirical, model, delta) results with percentile intervals

    Raises:
        ValueError: If B < 2, no rows remain, or fewer than two resamples are usable
    """
    if B < 2:
        raise ValueError(f"bootstrap needs at least 2 resamples, got {B}")
    dropped = int(frame["y_sim"].isna().sum())
    data = frame.loc[frame["y_sim"].notna()].reset_index(drop=True)
    if dropped:
        logger.info(f"Dropped {dropped} persons without a simulated outcome")
    if data.empty:
        raise ValueError("no persons with a simulated outcome")

    emp = estimator(data, "y_real")
    model = estimator(data, "y_sim")
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, len(data), size=(B, len(data)))
    draws = []
    skipped = 0
    progress = ProgressLogger(logger, every=max(B // 10, 1))
    progress.start(B, f"paired bootstrap (n={len(data)})")
    for idx in indices:
        sample = data.take(idx)
        try:
            e, m = estimator(sample, "y_real"), estimator(sample, "y_sim")
        except ValueError:
            skipped += 1
            continue
        draws.append((e, m, m - e))
        progress.step()
    progress.complete()
    if len(draws) < 2:
        raise ValueError(f"only {len(draws)} usable bootstrap resamples out of {B}")
    if skipped:
        logger.warning(f"{skipped} of {B} bootstrap resamples had an empty group and were skipped")
    arr = np.asarray(draws)
    n = len(data)
    return (
        _percentile_result(emp, arr[:, 0], n),
        _percentile_result(model, arr[:, 1], n),
        _percentile_result(model - emp, arr[:, 2], n),
    )


@dataclass
class EventStudyResult:
    """Event-time coefficients relative to t = -1, plus the fixed effects."""

    intercept: float
    alpha: Dict[int, float]
    alpha_se: Dict[int, float]
    age_effects: Dict[int, float]
    year_effects: Dict[int, float]
    columns: List[str]
    n_obs: int


def _design_matrix(panel: pd.DataFrame) -> pd.DataFrame:
    blocks = [pd.DataFrame({"const": np.ones(len(panel))}, index=panel.index)]
    event_times = sorted(t for t in panel["event_time"].unique() if t != REFERENCE_EVENT_TIME)
    blocks.append(
        pd.DataFrame(
            {f"et_{t}": (panel["event_time"] == t).astype(float) for t in event_times},
            index=panel.index,
        )
    )
    for name in ("age", "year"):
        levels = sorted(panel[name].unique())[1:]
        blocks.append(
            pd.DataFrame({f"{name}_{v}": (panel[name] == v).astype(float) for v in levels}, index=panel.index)
        )
    return pd.concat(blocks, axis=1)


def collinear_columns(design: pd.DataFrame, tol: float = 1e-10) -> List[str]:
    """Columns left over after a rank-revealing (pivoted QR) decomposition."""
    if design.shape[1] == 0:
        return []
    _, r, pivots = scipy.linalg.qr(design.to_numpy(dtype=float), mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return list(design.columns)
    rank = int(np.sum(diag > tol * diag[0]))
    return [design.columns[i] for i in pivots[rank:]]


def event_study_ols(panel: pd.DataFrame, group: Optional[str] = None) -> EventStudyResult:
    """OLS of outcome on event-time, age and calendar-year indicators with HC1 errors.

    t = -1 is the omitted event time; the lowest age and year are the
    fixed-effect references.

    Raises:
        ValueError: If the panel is empty, lacks t = -1, or is rank deficient
    """
    data = panel if group is None else panel.loc[panel["group"] == group]
    if data.empty:
        raise ValueError(f"empty event panel for group {group!r}")
    if not (data["event_time"] == REFERENCE_EVENT_TIME).any():
        raise ValueError("event panel has no t = -1 reference rows")
    missing_ref = set(data["person_id"]) - set(data.loc[data["event_time"] == REFERENCE_EVENT_TIME, "person_id"])
    if missing_ref:
        logger.warning(f"{len(missing_ref)} persons have no t = -1 row")

    design = _design_matrix(data)
    collinear = collinear_columns(design)
    if collinear or len(data) < design.shape[1]:
        raise ValueError(f"event-study design is rank deficient; collinear columns: {collinear}")

    fit = sm.OLS(data["y"].to_numpy(dtype=float), design).fit(cov_type="HC1")
    params, se = fit.params, fit.bse

    def block(prefix: str, values: pd.Series) -> Dict[int, float]:
        return {int(c[len(prefix) :]): float(values[c]) for c in design.columns if c.startswith(prefix)}

    return EventStudyResult(
        intercept=float(params["const"]),
        alpha=block("et_", params),
        alpha_se=block("et_", se),
        age_effects=block("age_", params),
        year_effects=block("year_", params),
        columns=list(design.columns),
        n_obs=len(data),
    )


def counterfactual_income(
    result: EventStudyResult, panel: pd.DataFrame, group: Optional[str] = None
) -> Tuple[pd.Series, pd.DataFrame]:
    """Counterfactual outcome from the intercept and fixed effects, and normalised event paths.

    Returns:
        (per-row counterfactual, frame with event_time, alpha, se,
        counterfactual_mean, effect and sigma per event time)

    Raises:
        ValueError: If the mean counterfactual at some event time is not positive
    """
    data = panel if group is None else panel.loc[panel["group"] == group]
    y_tilde = (
        result.intercept
        + data["age"].map(lambda a: result.age_effects.get(int(a), 0.0))
        + data["year"].map(lambda y: result.year_effects.get(int(y), 0.0))
    ).rename("y_counterfactual")
    rows = []
    for t, mean_cf in y_tilde.groupby(data["event_time"]).mean().items():
        if mean_cf <= 0:
            raise ValueError(f"mean counterfactual at event time {t} is {mean_cf:.4g}; normalisation undefined")
        alpha = result.alpha.get(int(t), 0.0)
        se = result.alpha_se.get(int(t), 0.0)
        rows.append(
            {
                "event_time": int(t),
                "alpha": alpha,
                "se": se,
                "counterfactual_mean": float(mean_cf),
                "effect": alpha / mean_cf,
                "sigma": se / mean_cf,
            }
        )
    return y_tilde, pd.DataFrame(rows).sort_values("event_time").reset_index(drop=True)


def _window_arrays(paths: pd.DataFrame, window: Tuple[int, int], arm: str) -> Tuple[np.ndarray, np.ndarray]:
    a, b = window
    if a > b:
        raise ValueError(f"invalid window [{a}, {b}]")
    indexed = paths.set_index("event_time")
    wanted = list(range(a, b + 1))
    missing = [t for t in wanted if t not in indexed.index or pd.isna(indexed.at[t, "sigma"])]
    if missing:
        raise ValueError(f"{arm} path lacks effect or sigma for event times {missing}")
    return indexed.loc[wanted, "effect"].to_numpy(float), indexed.loc[wanted, "sigma"].to_numpy(float)


def child_penalty(
    paths_treated: pd.DataFrame,
    paths_control: pd.DataFrame,
    window: Tuple[int, int],
    B: int = 1000,
    seed: int = 0,
) -> AteResult:
    """Mean of P_t(treated) - P_t(control) over event times a..b with a parametric bootstrap CI.

    Each iteration draws every P_t independently from Normal(effect, sigma^2)
    for both arms.
    """
    pm, sm_ = _window_arrays(paths_treated, window, "treated")
    pc, sc = _window_arrays(paths_control, window, "control")
    rng = np.random.default_rng(seed)
    dm = rng.normal(pm, sm_, size=(B, len(pm)))
    dc = rng.normal(pc, sc, size=(B, len(pc)))
    point = float(np.mean(pm - pc))
    return _percentile_result(point, (dm - dc).mean(axis=1), len(pm))


def penalty_delta(
    paths_treated: pd.DataFrame,
    paths_control_emp: pd.DataFrame,
    paths_control_model: pd.DataFrame,
    window: Tuple[int, int],
    B: int = 1000,
    seed: int = 0,
) -> Tuple[AteResult, AteResult, AteResult]:
    """Empirical-control and model-control penalties plus their difference.

    Both penalties reuse the same draws for the treated arm, so the interval
    of the difference reflects only the control arms.
    """
    pm, sm_ = _window_arrays(paths_treated, window, "treated")
    pe, se = _window_arrays(paths_control_emp, window, "empirical control")
    pmod, smod = _window_arrays(paths_control_model, window, "model control")
    rng = np.random.default_rng(seed)
    dm = rng.normal(pm, sm_, size=(B, len(pm)))
    de = rng.normal(pe, se, size=(B, len(pe)))
    dmod = rng.normal(pmod, smod, size=(B, len(pmod)))
    emp_draws = (dm - de).mean(axis=1)
    model_draws = (dm - dmod).mean(axis=1)
    emp, model = float(np.mean(pm - pe)), float(np.mean(pm - pmod))
    n = len(pm)
    return (
        _percentile_result(emp, emp_draws, n),
        _percentile_result(model, model_draws, n),
        _percentile_result(model - emp, model_draws - emp_draws, n),
    )


def propensity_scores(frame: pd.DataFrame, covariates: Sequence[str], treatment: str = "treated") -> pd.Series:
    """Logistic propensity scores fitted by IRLS (binomial GLM).

    Raises:
        ValueError: If the classes are perfectly separated
        RuntimeError: If the fit does not converge within the iteration cap
    """
    X = sm.add_constant(frame[list(covariates)].astype(float), has_constant="add")
    y = frame[treatment].astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            fit = sm.GLM(y, X, family=sm.families.Binomial()).fit(maxiter=LOGIT_MAXITER, tol=LOGIT_TOL)
        except PerfectSeparationError as e:
            raise ValueError(f"empty common support: treatment is perfectly separated ({e})") from e
    scores = pd.Series(np.asarray(fit.fittedvalues, dtype=float), index=frame.index, name="score")
    scores.attrs["converged"] = bool(getattr(fit, "converged", True))
    return scores


def common_support(scores: pd.Series, treated: pd.Series) -> Tuple[float, float]:
    """[max of the group minima, min of the group maxima] of the scores."""
    t, c = scores[treated == 1], scores[treated == 0]
    return max(t.min(), c.min()), min(t.max(), c.max())


def propensity_match(
    frame: pd.DataFrame, covariates: Sequence[str], treatment: str = "treated"
) -> pd.DataFrame:
    """Greedy 1:1 nearest-score matching without replacement on common support.

    Treated persons are matched in person_id order; score ties go to the
    control with the smaller person_id.

    Returns:
        Frame of treated_id, control_id, treated_score, control_score

    Raises:
        ValueError: If a group is empty or the common support is empty
        RuntimeError: If the logistic fit does not converge
    """
    if frame[treatment].nunique() < 2:
        raise ValueError("propensity matching needs both treated and control persons")
    scores = propensity_scores(frame, covariates, treatment)
    if not np.all(np.isfinite(scores)):
        raise ValueError("empty common support: degenerate propensity scores")
    lo, hi = common_support(scores, frame[treatment])
    if lo > hi:
        raise ValueError(f"empty common support: [{lo:.4g}, {hi:.4g}]")
    if not scores.attrs["converged"]:
        raise RuntimeError(f"logistic propensity fit did not converge in {LOGIT_MAXITER} iterations")

    data = frame.assign(score=scores.to_numpy()).sort_values("person_id")
    inside = data["score"].between(lo, hi)
    treated = data.loc[inside & (data[treatment] == 1)]
    controls = data.loc[inside & (data[treatment] == 0)]
    control_ids = controls["person_id"].to_numpy()
    control_scores = controls["score"].to_numpy()
    available = np.ones(len(controls), dtype=bool)

    pairs = []
    for pid, score in zip(treated["person_id"], treated["score"]):
        if not available.any():
            break
        distance = np.where(available, np.abs(control_scores - score), np.inf)
        best = int(np.argmin(distance))
        available[best] = False
        pairs.append(
            {
                "treated_id": int(pid),
                "control_id": int(control_ids[best]),
                "treated_score": float(score),
                "control_score": float(control_scores[best]),
            }
        )
    logger.info(f"Matched {len(pairs)} of {int((frame[treatment] == 1).sum())} treated persons on support [{lo:.4f}, {hi:.4f}]")
    return pd.DataFrame(pairs, columns=["treated_id", "control_id", "treated_score", "control_score"])


def align_matched_controls(
    control_panel: pd.DataFrame, pairs: pd.DataFrame, event_years: Dict[int, int], group: str = "NM"
) -> pd.DataFrame:
    """Give each matched control the event time of its treated partner.

    Args:
        control_panel: Rows person_id, year, age, y for control persons
        pairs: Output of propensity_match
        event_years: Treated person_id -> calendar year of the event
    """
    partner_year = {int(r.control_id): event_years[int(r.treated_id)] for r in pairs.itertuples()}
    rows = control_panel.loc[control_panel["person_id"].isin(partner_year)].copy()
    rows["event_time"] = rows["year"] - rows["person_id"].map(partner_year)
    rows["group"] = group
    return rows.reset_index(drop=True)

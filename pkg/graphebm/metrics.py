"""Evaluation metrics, split summaries and plot-ready exports."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import storage
from .ebm import euler_rollout
from .exceptions import ContractError, DivergenceError, UndefinedMetricError
from .models import (
    CoarseTrajectory,
    EBMConfig,
    EBMParams,
    EvalSummary,
    RegionGraph,
    RunMetrics,
    Zone,
)

logger = logging.getLogger(__name__)

MAPE_FLOOR = 1000.0
# cumulative outflow, in people, that counts as outmigration having started
ONSET_THRESHOLD = 100.0


def _check_shapes(predicted: np.ndarray, observed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ContractError(f"shape mismatch: predicted {predicted.shape}, "
                            f"observed {observed.shape}")
    return predicted, observed


def mape(predicted: np.ndarray, observed: np.ndarray, floor: float = MAPE_FLOOR) -> float:
    """Mean absolute percentage error over entries with ``|observed| >= floor``."""
    if floor < 0:
        raise ContractError(f"floor must be nonnegative, got {floor}")
    predicted, observed = _check_shapes(predicted, observed)
    included = (np.abs(observed) >= floor) & (observed != 0)
    if not included.any():
        raise UndefinedMetricError(f"no observed entry reaches the MAPE floor {floor}")
    errors = np.abs(predicted[included] - observed[included]) / np.abs(observed[included])
    return float(100.0 * errors.mean())


def mae(predicted: np.ndarray, observed: np.ndarray) -> float:
    """Mean absolute error in people."""
    predicted, observed = _check_shapes(predicted, observed)
    return float(np.mean(np.abs(predicted - observed)))


# ------------------------------------------------------------------
# Outmigration analysis
# ------------------------------------------------------------------

def cumulative_outmigration(states: np.ndarray, node: int = Zone.OUTMIGRATED) -> np.ndarray:
    """Total population of the outmigrated node relative to year 0."""
    totals = np.asarray(states, dtype=float)[:, node, :].sum(axis=1)
    return totals - totals[0]


def outmigration_onset(cumulative: np.ndarray,
                       threshold: float = ONSET_THRESHOLD) -> Optional[int]:
    """First year the cumulative outflow exceeds *threshold*, or None."""
    above = np.flatnonzero(np.asarray(cumulative, dtype=float) > threshold)
    return int(above[0]) if above.size else None


# ------------------------------------------------------------------
# Per-run and split evaluation
# ------------------------------------------------------------------

def rollout_run(params: EBMParams, run: CoarseTrajectory, graph: RegionGraph,
                config: EBMConfig) -> np.ndarray:
    """Predicted trajectory of *run* from its observed initial state."""
    return euler_rollout(run.states[0], params, run.exogenous, graph, config,
                         n_steps=run.years)


def evaluate_run(params: EBMParams, run: CoarseTrajectory, graph: RegionGraph,
                 config: EBMConfig, mape_floor: float = MAPE_FLOOR) -> RunMetrics:
    """Metrics of one run.

    A diverged rollout or a run with no observed entry at the MAPE floor is
    flagged on the returned metrics instead of raising, so one bad run never
    aborts a split.
    """
    observed_onset = outmigration_onset(cumulative_outmigration(run.states))
    try:
        predicted = rollout_run(params, run, graph, config)
    except DivergenceError as exc:
        logger.warning("run %d diverged at step %s; excluded from the summary",
                       run.run_id, exc.step)
        return RunMetrics(run.run_id, np.nan, np.nan, diverged=True,
                          onset_observed=observed_onset)
    try:
        run_mape = mape(predicted, run.states, mape_floor)
    except UndefinedMetricError:
        logger.warning("run %d has no observed entry >= %g; MAPE undefined, "
                       "excluded from the summary", run.run_id, mape_floor)
        run_mape = np.nan
    return RunMetrics(
        run_id=run.run_id,
        mape=run_mape,
        mae=mae(predicted, run.states),
        onset_observed=observed_onset,
        onset_predicted=outmigration_onset(cumulative_outmigration(predicted)),
        mape_undefined=bool(np.isnan(run_mape)),
    )


def _evaluate_job(args) -> RunMetrics:
    return evaluate_run(*args)


def evaluate_split(params: EBMParams, split: Sequence[CoarseTrajectory], graph: RegionGraph,
                   config: EBMConfig, name: str = "test", mape_floor: float = MAPE_FLOOR,
                   jobs: int = 1) -> EvalSummary:
    """Roll out every run of *split* and collect per-run metrics.

    Runs whose rollout diverges or whose MAPE is undefined are kept in the
    summary, flagged, and left out of the mean, best and worst.  With
    ``jobs > 1`` runs are evaluated in worker processes; the result order
    is always the split order.
    """
    if not split:
        raise ContractError(f"split {name!r} is empty")
    jobs_args = [(params, run, graph, config, mape_floor) for run in split]
    if jobs > 1 and len(split) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_evaluate_job, jobs_args))
    else:
        runs = [_evaluate_job(a) for a in jobs_args]
    summary = EvalSummary(split=name, runs=runs)
    if summary.diverged_runs:
        logger.warning("%s: %d diverged run(s): %s", name, len(summary.diverged_runs),
                       summary.diverged_runs)
    if summary.undefined_runs:
        logger.warning("%s: MAPE undefined for run(s) %s", name, summary.undefined_runs)
    if summary.valid_runs:
        logger.info("%s: MAPE %.2f%% (best %.2f, worst %.2f), MAE %.1f people",
                    name, summary.mape_mean, summary.mape_best, summary.mape_worst,
                    summary.mae_mean)
    return summary


def select_exemplars(summary: EvalSummary) -> dict[str, int]:
    """Run ids of the worst and best runs by MAPE and by MAE.

    Ties go to the lowest run id.  Diverged runs are never selected.
    """
    valid = sorted(summary.valid_runs, key=lambda r: r.run_id)
    if not valid:
        return {}
    return {
        "worst_mape": max(valid, key=lambda r: (r.mape, -r.run_id)).run_id,
        "best_mape": min(valid, key=lambda r: (r.mape, r.run_id)).run_id,
        "best_mae": min(valid, key=lambda r: (r.mae, r.run_id)).run_id,
        "worst_mae": max(valid, key=lambda r: (r.mae, -r.run_id)).run_id,
    }


def export_series(run: CoarseTrajectory, predicted: np.ndarray, observed: np.ndarray,
                  out_path: Union[str, Path]) -> Path:
    """Write the overlay CSV at *out_path* and ``outmigration_<run>.csv`` beside it."""
    out_path = Path(out_path)
    predicted, observed = _check_shapes(predicted, observed)
    storage.write_overlay(predicted, observed, out_path)
    storage.write_outmigration(
        cumulative_outmigration(observed), cumulative_outmigration(predicted),
        out_path.parent / f"outmigration_{storage.run_tag(run.run_id)}.csv",
    )
    return out_path

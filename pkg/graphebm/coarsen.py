"""Project agent trajectories onto the node-by-income coarse representation."""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence, TypeVar, Union

import numpy as np

from .exceptions import ConfigurationError, ContractError, DomainError
from .models import (
    N_X,
    OUTMIGRATED,
    AgentSnapshot,
    AgentTrajectory,
    AggregationRules,
    CoarseTrajectory,
    Zone,
)

logger = logging.getLogger(__name__)

AGENTS_PER_REPRESENTATIVE = 100
N_ZONES = len(Zone)

T = TypeVar("T")


def classify_zone(d: float, rules: AggregationRules) -> int:
    """Urban if ``d <= d1``, suburban if ``d1 < d <= d2``, rural otherwise."""
    d1, d2 = rules.zone_thresholds
    if d <= d1:
        return Zone.URBAN
    if d <= d2:
        return Zone.SUBURBAN
    return Zone.RURAL


def classify_income(income: float,
                    thresholds: Union[AggregationRules, tuple[float, float]]) -> int:
    """Low if ``I <= I1``, middle if ``I1 < I <= I2``, high otherwise."""
    if isinstance(thresholds, AggregationRules):
        thresholds = thresholds.income_thresholds
    i1, i2 = thresholds
    if income <= i1:
        return 0
    if income <= i2:
        return 1
    return 2


def compute_income_thresholds(incomes: Sequence[float]) -> tuple[float, float]:
    """Empirical tertiles (linear interpolation) of *incomes*."""
    incomes = np.asarray(incomes, dtype=float)
    if incomes.size < 3:
        raise ContractError(f"need at least 3 incomes for tertiles, got {incomes.size}")
    i1, i2 = np.quantile(incomes, [1.0 / 3.0, 2.0 / 3.0])
    if not i1 < i2:
        raise DomainError(f"degenerate income tertiles ({i1}, {i2})")
    return float(i1), float(i2)


def rules_for_run(run: AgentTrajectory, zone_thresholds: tuple[float, float],
                  income_thresholds: Optional[tuple[float, float]] = None) -> AggregationRules:
    """Aggregation rules for one run.

    Without fixed *income_thresholds*, tertiles of the year-0 population
    are computed and frozen for the whole run.
    """
    if income_thresholds is None:
        income_thresholds = compute_income_thresholds(run.agents[0].income)
    return AggregationRules(zone_thresholds=tuple(zone_thresholds),
                            income_thresholds=tuple(income_thresholds))


def _zone_of_block_groups(distance_d: np.ndarray, rules: AggregationRules) -> np.ndarray:
    # searchsorted with side="left" puts boundary values in the lower class
    return np.searchsorted(np.asarray(rules.zone_thresholds), distance_d, side="left")


def _node_and_class(snapshot_location: np.ndarray, snapshot_income: np.ndarray,
                    bg_zone: np.ndarray, rules: AggregationRules) -> tuple[np.ndarray, np.ndarray]:
    housed = snapshot_location != OUTMIGRATED
    node = np.full(snapshot_location.shape, int(Zone.OUTMIGRATED), dtype=int)
    node[housed] = bg_zone[snapshot_location[housed]]
    subpop = np.searchsorted(np.asarray(rules.income_thresholds), snapshot_income, side="left")
    return node, subpop


def aggregate_snapshot(snapshot: AgentSnapshot, distance_d: np.ndarray,
                       rules: AggregationRules,
                       factor: int = AGENTS_PER_REPRESENTATIVE) -> np.ndarray:
    """People per node and income class for one year.

    Parameters
    ----------
    snapshot : AgentSnapshot
        Every agent created so far; outmigrated agents land in node 3.
    distance_d : ndarray
        Normalized distance of each block group.
    factor : int
        Real-world households per representative agent.
    """
    bg_zone = _zone_of_block_groups(np.asarray(distance_d), rules)
    node, subpop = _node_and_class(snapshot.location, snapshot.income, bg_zone, rules)
    counts = np.zeros((N_ZONES, N_X), dtype=float)
    np.add.at(counts, (node, subpop), 1.0)
    return counts * factor


def build_coarse_trajectory(run: AgentTrajectory, rules: AggregationRules,
                            factor: int = AGENTS_PER_REPRESENTATIVE) -> CoarseTrajectory:
    """Coarse states, inmigration ``G`` and capacity ``C`` for one run.

    New agents are attributed to the node they are first housed in, or to
    the outmigrated node when they never find a property.  Capacity of the
    outmigrated node is the summed initial capacity of all other nodes.
    """
    n_times = run.years + 1
    bg_zone = _zone_of_block_groups(run.distance_d, rules)
    states = np.stack([aggregate_snapshot(s, run.distance_d, rules, factor) for s in run.agents])

    growth = np.zeros((n_times, N_ZONES, N_X))
    for t in range(run.years):
        before, after = run.agents[t], run.agents[t + 1]
        new = slice(before.n_agents, after.n_agents)
        node, subpop = _node_and_class(after.location[new], after.income[new], bg_zone, rules)
        np.add.at(growth[t], (node, subpop), float(factor))

    capacity = np.zeros((n_times, N_ZONES))
    for t, blocks in enumerate(run.blocks):
        capacity[t, :Zone.OUTMIGRATED] = np.bincount(
            bg_zone, weights=blocks.supply.astype(float), minlength=Zone.OUTMIGRATED,
        ) * factor
    empty = np.flatnonzero(capacity[0, :Zone.OUTMIGRATED] == 0)
    if empty.size:
        names = ", ".join(Zone(z).name.lower() for z in empty)
        raise DomainError(f"run {run.run_id}: no housing in zone(s) {names}")
    capacity[:, Zone.OUTMIGRATED] = capacity[0, :Zone.OUTMIGRATED].sum()

    return CoarseTrajectory(run_id=run.run_id, states=states, growth=growth, capacity=capacity)


# ------------------------------------------------------------------
# Dataset splits
# ------------------------------------------------------------------

def _round_half_down(x: float) -> int:
    return math.ceil(x - 0.5)


def split_dataset(runs: Sequence[T], fractions: tuple[float, float, float] = (0.5, 0.15, 0.35),
                  seed: int = 0) -> tuple[list[T], list[T], list[T]]:
    """Shuffle *runs* by *seed* and cut them into train, validation and test.

    Train and validation counts are ``fraction * n`` rounded half down;
    the remainder goes to test, so 50 runs split as (25, 7, 18).  At very
    small ``n`` this rule favours test over train: 3 runs split as
    (1, 0, 2), not (2, 0, 1), since 1.5 rounds down like 7.5 does.
    """
    if len(runs) < 3:
        raise ContractError(f"need at least 3 runs to split, got {len(runs)}")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions {fractions} must be three values summing to 1")
    n = len(runs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(_round_half_down(fractions[0] * n), n)
    n_val = min(_round_half_down(fractions[1] * n), n - n_train)
    shuffled = [runs[i] for i in order]
    return (shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])

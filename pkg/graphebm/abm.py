"""Seeded agent-based housing market producing fine-scale trajectories.

Each simulated year runs the same six events in order: inmigration,
random vacancy, search and ranking, matching, developer update and
outmigration of every agent left without a property.  Outmigration is
absorbing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .config import derive_seed
from .models import (
    OUTMIGRATED,
    AgentSnapshot,
    AgentTrajectory,
    BlockGroup,
    BlockSnapshot,
    HouseholdAgent,
    ScenarioParams,
)

logger = logging.getLogger(__name__)

# Scenario ranges (uniform draws)
VACANCY_RANGE = (0.05, 0.20)
POPULATION_GROWTH_RANGE = (0.00, 0.03)
INCOME_PERCENTILE_RANGE = (0.2, 0.8)
BUILDING_GROWTH_RANGE = (0.00, 0.02)
FLOOD_AVOIDER_FRACTION = 0.6

# Household incomes
INCOME_MEDIAN = 31_000.0
INCOME_SIGMA = 0.5
INMIGRANT_PERCENTILE_SPREAD = 0.15
BUDGET_MULTIPLE = 3.0

# Utility weights, summing to 1
W_QUALITY = 0.4
W_PRICE = 0.3
W_DISTANCE = 0.3

MOVER_RATE = 0.05
SEARCH_SIZE = 10
FLOOD_PRONE_SHARE = 0.15
SUPPLY_RANGE = (8, 16)
DEVELOPER_STEP_PERCENT = 5
QUIET_YEARS_FOR_PRICE_CUT = 5


def sample_scenario(master_seed: int, run_index: int) -> ScenarioParams:
    """Draw the randomized exogenous factors of one run.

    Deterministic in ``(master_seed, run_index)``.
    """
    rng = np.random.default_rng(derive_seed(master_seed, "scenario", run_index))
    return ScenarioParams(
        initial_vacancy_rate=float(rng.uniform(*VACANCY_RANGE)),
        population_growth_rate=float(rng.uniform(*POPULATION_GROWTH_RANGE)),
        inmigrant_income_percentile=float(rng.uniform(*INCOME_PERCENTILE_RANGE)),
        building_growth_rate=float(rng.uniform(*BUILDING_GROWTH_RANGE)),
        flood_avoider_fraction=FLOOD_AVOIDER_FRACTION,
        seed=derive_seed(master_seed, "abm", run_index),
    )


def stochastic_round(value: float, rng: np.random.Generator) -> int:
    """Round *value* down or up with probability equal to its fraction."""
    base = math.floor(value)
    return base + int(rng.random() < value - base)


def draw_incomes(rng: np.random.Generator, n: int,
                 percentile: Optional[float] = None) -> np.ndarray:
    """Log-normal household incomes.

    Without *percentile* incomes follow the base distribution; with it,
    each draw sits at a quantile spread uniformly around *percentile*.
    """
    if percentile is None:
        return rng.lognormal(mean=math.log(INCOME_MEDIAN), sigma=INCOME_SIGMA, size=n)
    low = max(0.01, percentile - INMIGRANT_PERCENTILE_SPREAD)
    high = min(0.99, percentile + INMIGRANT_PERCENTILE_SPREAD)
    quantiles = rng.uniform(low, high, size=n)
    return INCOME_MEDIAN * np.exp(INCOME_SIGMA * ndtri(quantiles))


# ------------------------------------------------------------------
# Agent decisions
# ------------------------------------------------------------------

def agent_utility(agent: HouseholdAgent, bg: BlockGroup) -> Optional[float]:
    """Perceived utility of one representative property in *bg*.

    Returns ``None`` when the property is excluded: priced above the
    agent's budget, or flood-prone for an agent that avoids flooding.
    """
    if bg.price > agent.budget:
        return None
    if agent.avoids_flood and bg.flood_prone:
        return None
    return (W_QUALITY * bg.quality
            + W_PRICE * (1.0 - bg.price / agent.budget)
            + W_DISTANCE * (1.0 - bg.distance_d))


def search_candidates(agent: HouseholdAgent, block_groups: Sequence[BlockGroup],
                      vacancies: np.ndarray, rng: np.random.Generator
                      ) -> list[tuple[int, float]]:
    """Up to ten available, affordable properties ranked by utility.

    Block groups are sampled without replacement with weights proportional
    to their vacancy counts.  Returns ``(bg_id, utility)`` pairs, highest
    utility first.
    """
    eligible = []
    utilities = []
    for bg in block_groups:
        if vacancies[bg.id] <= 0:
            continue
        u = agent_utility(agent, bg)
        if u is not None:
            eligible.append(bg.id)
            utilities.append(u)
    if not eligible:
        return []
    weights = vacancies[eligible].astype(float)
    size = min(SEARCH_SIZE, len(eligible))
    picks = rng.choice(len(eligible), size=size, replace=False, p=weights / weights.sum())
    ranked = [(eligible[k], utilities[k]) for k in picks]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


@dataclass
class MatchResult:
    """Outcome of one market clearing."""
    assignments: dict[int, int] = field(default_factory=dict)
    unmatched: list[int] = field(default_factory=list)
    first_choice: Optional[np.ndarray] = None


def match_market(candidates: Sequence[tuple[HouseholdAgent, list[tuple[int, float]]]],
                 availability: np.ndarray) -> MatchResult:
    """Assign vacancies to searching agents.

    All bids are served in one priority order: utility, then income, then
    agent id, each descending.  An agent's own bids are ranked by utility,
    so every agent gets the best listed property still free when its turn
    comes.

    Parameters
    ----------
    candidates : sequence of (agent, ranked bg list)
        Output of :func:`search_candidates` per agent.
    availability : ndarray
        Vacancy count per block group; not modified.
    """
    remaining = np.array(availability, dtype=int)
    first_choice = np.zeros(len(remaining), dtype=int)
    bids = []
    for agent, ranked in candidates:
        if ranked:
            first_choice[ranked[0][0]] += 1
        for bg_id, utility in ranked:
            bids.append((utility, agent.income, agent.id, bg_id))
    bids.sort(key=lambda bid: (-bid[0], -bid[1], -bid[2]))

    result = MatchResult(first_choice=first_choice)
    for _, _, agent_id, bg_id in bids:
        if agent_id in result.assignments or remaining[bg_id] <= 0:
            continue
        result.assignments[agent_id] = bg_id
        remaining[bg_id] -= 1
    result.unmatched = sorted(a.id for a, _ in candidates if a.id not in result.assignments)
    return result


# ------------------------------------------------------------------
# World
# ------------------------------------------------------------------

@dataclass
class World:
    """Mutable state of one ABM run."""
    params: ScenarioParams
    block_groups: list[BlockGroup]
    agents: list[HouseholdAgent]
    year: int = 0
    mover_rate: float = MOVER_RATE
    initial_population: int = 0
    cumulative_created: int = 0
    cumulative_outmigrated: int = 0
    created_this_year: int = 0
    outmigrated_this_year: int = 0
    movers_this_year: int = 0

    @property
    def n_housed(self) -> int:
        return sum(1 for a in self.agents if a.housed)

    def vacancies(self) -> np.ndarray:
        return np.array([bg.vacancies for bg in self.block_groups], dtype=int)

    def snapshot(self) -> tuple[AgentSnapshot, BlockSnapshot]:
        agents = AgentSnapshot(
            year=self.year,
            agent_id=np.array([a.id for a in self.agents], dtype=int),
            income=np.array([a.income for a in self.agents], dtype=float),
            location=np.array([a.location for a in self.agents], dtype=int),
        )
        blocks = BlockSnapshot(
            year=self.year,
            supply=np.array([bg.supply for bg in self.block_groups], dtype=int),
            price=np.array([bg.price for bg in self.block_groups], dtype=float),
            occupied=np.array([bg.occupied for bg in self.block_groups], dtype=int),
        )
        return agents, blocks

    def _new_agent(self, income: float, avoids_flood: bool) -> HouseholdAgent:
        agent = HouseholdAgent(id=len(self.agents), income=float(income),
                               budget=BUDGET_MULTIPLE * float(income),
                               avoids_flood=bool(avoids_flood))
        self.agents.append(agent)
        return agent


def build_world(params: ScenarioParams, n_block_groups: int,
                rng: np.random.Generator, mover_rate: float = MOVER_RATE) -> World:
    """Lay out block groups and place the initial population.

    The ``FLOOD_PRONE_SHARE`` of block groups closest to the business
    district are flood-prone.  Flood avoiders are placed only in dry
    block groups; flood-prone slots that no non-avoider can fill stay
    vacant.
    """
    distance = rng.uniform(0.0, 1.0, n_block_groups)
    quality = rng.uniform(0.0, 1.0, n_block_groups)
    supply = rng.integers(SUPPLY_RANGE[0], SUPPLY_RANGE[1] + 1, n_block_groups)
    flood_prone = np.zeros(n_block_groups, dtype=bool)
    flood_prone[np.argsort(distance, kind="stable")[:round(FLOOD_PRONE_SHARE * n_block_groups)]] = True
    price = 35_000.0 + 85_000.0 * (0.5 * quality + 0.5 * (1.0 - distance))

    block_groups = [
        BlockGroup(id=i, distance_d=float(distance[i]), price=float(price[i]),
                   quality=float(quality[i]), flood_prone=bool(flood_prone[i]),
                   supply=int(supply[i]))
        for i in range(n_block_groups)
    ]
    world = World(params=params, block_groups=block_groups, agents=[], mover_rate=mover_rate)

    occupied = np.floor(supply * (1.0 - params.initial_vacancy_rate) + 0.5).astype(int)
    flood_slots = [bg.id for bg in block_groups if bg.flood_prone for _ in range(occupied[bg.id])]
    dry_slots = [bg.id for bg in block_groups if not bg.flood_prone for _ in range(occupied[bg.id])]
    flood_slots = list(rng.permutation(flood_slots))
    dry_slots = list(rng.permutation(dry_slots))

    n_slots = len(flood_slots) + len(dry_slots)
    incomes = draw_incomes(rng, n_slots)
    avoids = rng.random(n_slots) < params.flood_avoider_fraction
    avoider_idx = np.flatnonzero(avoids)[:len(dry_slots)]
    other_idx = np.flatnonzero(~avoids)
    placements = []
    for k, slot in zip(avoider_idx, dry_slots):
        placements.append((k, slot))
    open_slots = dry_slots[len(avoider_idx):] + flood_slots
    for k, slot in zip(other_idx, open_slots):
        placements.append((k, slot))
    placements.sort()

    for k, slot in placements:
        agent = world._new_agent(incomes[k], avoids[k])
        agent.location = int(slot)
        block_groups[slot].occupied += 1
    world.initial_population = len(world.agents)
    return world


# ------------------------------------------------------------------
# Yearly dynamics
# ------------------------------------------------------------------

def developer_update(world: World, demand: np.ndarray, rng: np.random.Generator) -> World:
    """Adjust supply and price from this year's demand tallies.

    Block groups whose demand exceeded supply grow supply (rounded up) and
    price by 5%.  Five consecutive years without excess demand cut the
    price by 5% and restart the count.  Exogenous building growth is then
    added to every block group.
    """
    for bg in world.block_groups:
        if demand[bg.id] > bg.supply:
            bg.supply = -(-bg.supply * (100 + DEVELOPER_STEP_PERCENT) // 100)
            bg.price *= 1.0 + DEVELOPER_STEP_PERCENT / 100.0
            bg.quiet_years = 0
        else:
            bg.quiet_years += 1
            if bg.quiet_years >= QUIET_YEARS_FOR_PRICE_CUT:
                bg.price *= 1.0 - DEVELOPER_STEP_PERCENT / 100.0
                bg.quiet_years = 0
    rate = world.params.building_growth_rate
    if rate > 0:
        for bg in world.block_groups:
            bg.supply += stochastic_round(bg.supply * rate, rng)
    return world


def step_year(world: World, rng: np.random.Generator) -> World:
    """Advance *world* by one year in place and return it."""
    params = world.params

    # 1. inmigration
    n_new = stochastic_round(world.n_housed * params.population_growth_rate, rng)
    incomes = draw_incomes(rng, n_new, params.inmigrant_income_percentile)
    avoids = rng.random(n_new) < params.flood_avoider_fraction
    market = [world._new_agent(incomes[k], avoids[k]) for k in range(n_new)]

    # 2. random vacancy
    housed = [a for a in world.agents if a.housed]
    moving = rng.random(len(housed)) < world.mover_rate
    movers = [a for a, m in zip(housed, moving) if m]
    for agent in movers:
        world.block_groups[agent.location].occupied -= 1
        agent.location = OUTMIGRATED
    market.extend(movers)

    # 3. search and rank
    vacancies = world.vacancies()
    candidates = [(agent, search_candidates(agent, world.block_groups, vacancies, rng))
                  for agent in market]

    # 4. matching
    result = match_market(candidates, vacancies)
    for agent in market:
        bg_id = result.assignments.get(agent.id)
        if bg_id is not None:
            agent.location = bg_id
            world.block_groups[bg_id].occupied += 1

    # 5. developer update
    occupied_before = np.array([bg.occupied for bg in world.block_groups]) - np.bincount(
        list(result.assignments.values()), minlength=len(world.block_groups))
    developer_update(world, occupied_before + result.first_choice, rng)

    # 6. outmigration
    world.year += 1
    world.created_this_year = n_new
    world.movers_this_year = len(movers)
    world.outmigrated_this_year = len(result.unmatched)
    world.cumulative_created += n_new
    world.cumulative_outmigrated += len(result.unmatched)
    logger.debug(
        "year %d: created=%d movers=%d matched=%d outmigrated=%d housed=%d",
        world.year, n_new, len(movers), len(result.assignments),
        len(result.unmatched), world.n_housed,
    )
    return world


def run_simulation(params: ScenarioParams, years: int, n_block_groups: int,
                   run_id: int = 0, mover_rate: float = MOVER_RATE) -> AgentTrajectory:
    """Simulate one run and record ``years + 1`` yearly snapshots."""
    rng = np.random.default_rng(params.seed)
    world = build_world(params, n_block_groups, rng, mover_rate=mover_rate)
    trajectory = AgentTrajectory(
        run_id=run_id,
        distance_d=np.array([bg.distance_d for bg in world.block_groups]),
        quality=np.array([bg.quality for bg in world.block_groups]),
        flood_prone=np.array([bg.flood_prone for bg in world.block_groups]),
    )
    agents, blocks = world.snapshot()
    trajectory.agents.append(agents)
    trajectory.blocks.append(blocks)
    trajectory.inmigration.append(0)
    for _ in range(years):
        step_year(world, rng)
        agents, blocks = world.snapshot()
        trajectory.agents.append(agents)
        trajectory.blocks.append(blocks)
        trajectory.inmigration.append(world.created_this_year)
    return trajectory

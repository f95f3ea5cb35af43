"""Tests for coarse-graining agent runs into node-by-income counts."""

import numpy as np
import pytest

from graphebm.abm import draw_incomes, run_simulation, sample_scenario
from graphebm.coarsen import (
    aggregate_snapshot,
    build_coarse_trajectory,
    classify_income,
    classify_zone,
    compute_income_thresholds,
    rules_for_run,
    split_dataset,
)
from graphebm.exceptions import ConfigurationError, ContractError, DomainError
from graphebm.models import OUTMIGRATED, AgentSnapshot, AggregationRules, Zone

CASE_STUDY_RULES = AggregationRules((0.126, 0.355), (26_500.0, 36_700.0))


class TestClassification:

    @pytest.mark.parametrize("d, zone", [
        (0.0, Zone.URBAN),
        (0.126, Zone.URBAN),
        (0.12600001, Zone.SUBURBAN),
        (0.355, Zone.SUBURBAN),
        (0.35500001, Zone.RURAL),
        (1.0, Zone.RURAL),
    ])
    def test_zone_boundaries(self, d, zone):
        assert classify_zone(d, CASE_STUDY_RULES) == zone

    @pytest.mark.parametrize("income, subpop", [
        (10_000.0, 0),
        (26_500.0, 0),
        (26_500.01, 1),
        (36_700.0, 1),
        (36_700.01, 2),
    ])
    def test_income_boundaries(self, income, subpop):
        assert classify_income(income, CASE_STUDY_RULES) == subpop
        assert classify_income(income, (26_500.0, 36_700.0)) == subpop

    def test_thresholds_must_increase(self):
        with pytest.raises(ConfigurationError):
            AggregationRules((0.4, 0.1), (1.0, 2.0))


class TestIncomeThresholds:

    def test_tertiles(self):
        i1, i2 = compute_income_thresholds([10.0, 20.0, 30.0, 40.0])
        assert i1 == pytest.approx(20.0)
        assert i2 == pytest.approx(30.0)

    def test_too_few(self):
        with pytest.raises(ContractError):
            compute_income_thresholds([1.0, 2.0])

    def test_degenerate(self):
        with pytest.raises(DomainError):
            compute_income_thresholds([5.0] * 10)

    def test_roughly_equal_classes(self):
        incomes = np.random.default_rng(0).lognormal(10, 0.5, 3000)
        thresholds = compute_income_thresholds(incomes)
        counts = np.bincount([classify_income(i, thresholds) for i in incomes])
        assert counts.min() >= 990

    def test_tertiles_of_design_incomes_near_case_study_cutoffs(self):
        incomes = draw_incomes(np.random.default_rng(2024), 3000)
        i1, i2 = compute_income_thresholds(incomes)
        assert i1 == pytest.approx(26_500.0, rel=0.2)
        assert i2 == pytest.approx(36_700.0, rel=0.2)


class TestAggregateSnapshot:

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n_bg = int(rng.integers(1, 30))
            n_agents = int(rng.integers(0, 200))
            distance = rng.uniform(0, 1, n_bg)
            distance[: n_bg // 4] = rng.choice([0.126, 0.355], n_bg // 4)
            snapshot = AgentSnapshot(
                year=0, agent_id=np.arange(n_agents),
                income=rng.choice([20_000.0, 26_500.0, 30_000.0, 36_700.0, 50_000.0], n_agents),
                location=rng.integers(-1, n_bg, n_agents),
            )
            expected = np.zeros((4, 3))
            for loc, income in zip(snapshot.location, snapshot.income):
                node = Zone.OUTMIGRATED if loc == OUTMIGRATED else classify_zone(distance[loc], CASE_STUDY_RULES)
                expected[node, classify_income(income, CASE_STUDY_RULES)] += 100
            np.testing.assert_array_equal(aggregate_snapshot(snapshot, distance, CASE_STUDY_RULES), expected)

    def test_representative_factor(self):
        snapshot = AgentSnapshot(0, np.arange(2), np.array([10_000.0, 50_000.0]), np.array([0, -1]))
        counts = aggregate_snapshot(snapshot, np.array([0.05]), CASE_STUDY_RULES, factor=7)
        assert counts[Zone.URBAN, 0] == 7
        assert counts[Zone.OUTMIGRATED, 2] == 7
        assert counts.sum() == 14


class TestBuildCoarseTrajectory:

    @pytest.fixture(scope="class")
    def agent_run(self):
        return run_simulation(sample_scenario(2024, 0), years=8, n_block_groups=60, run_id=0)

    @pytest.fixture(scope="class")
    def coarse(self, agent_run):
        rules = rules_for_run(agent_run, (0.126, 0.355))
        return build_coarse_trajectory(agent_run, rules)

    def test_shapes(self, coarse):
        assert coarse.states.shape == (9, 4, 3)
        assert coarse.growth.shape == (9, 4, 3)
        assert coarse.capacity.shape == (9, 4)
        assert not coarse.growth[-1].any()

    def test_population_bookkeeping(self, agent_run, coarse):
        for t, snapshot in enumerate(agent_run.agents):
            assert coarse.states[t].sum() == 100 * snapshot.n_agents
        for t in range(coarse.years):
            assert coarse.growth[t].sum() == 100 * agent_run.inmigration[t + 1]
            assert coarse.states[t + 1].sum() - coarse.states[t].sum() == coarse.growth[t].sum()

    def test_outmigrated_capacity_is_initial_total(self, coarse):
        expected = coarse.capacity[0, :3].sum()
        np.testing.assert_array_equal(coarse.capacity[:, Zone.OUTMIGRATED], expected)

    def test_year_zero_tertiles(self, agent_run):
        rules = rules_for_run(agent_run, (0.126, 0.355))
        assert rules.income_thresholds == compute_income_thresholds(agent_run.agents[0].income)

    def test_fixed_thresholds_used_verbatim(self, agent_run):
        rules = rules_for_run(agent_run, (0.126, 0.355), (26_500.0, 36_700.0))
        assert rules == CASE_STUDY_RULES

    def test_empty_zone_rejected(self, agent_run):
        rules = AggregationRules((0.0001, 0.0002), (26_500.0, 36_700.0))
        with pytest.raises(DomainError, match="no housing"):
            build_coarse_trajectory(agent_run, rules)


class TestSplitDataset:

    def test_case_study_counts(self):
        train, val, test = split_dataset(list(range(50)), seed=1)
        assert (len(train), len(val), len(test)) == (25, 7, 18)

    def test_small_counts(self):
        assert [len(s) for s in split_dataset(list(range(12)), seed=1)] == [6, 2, 4]
        assert [len(s) for s in split_dataset(list(range(3)), seed=1)] == [1, 0, 2]

    def test_partition_and_determinism(self):
        runs = list(range(20))
        first = split_dataset(runs, seed=9)
        assert first == split_dataset(runs, seed=9)
        assert sorted(sum(first, [])) == runs
        assert first != split_dataset(runs, seed=10)

    def test_too_few_runs(self):
        with pytest.raises(ContractError):
            split_dataset([1, 2])

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            split_dataset(list(range(10)), fractions=(0.5, 0.5, 0.5))

"""Shared fixtures: small graphs, parameter sets and synthetic coarse runs."""

import numpy as np
import pytest

from graphebm.abm import run_simulation, sample_scenario
from graphebm.coarsen import build_coarse_trajectory, rules_for_run
from graphebm.config import RunConfig
from graphebm.ebm import euler_rollout, init_params
from graphebm.graph import case_study_graph
from graphebm.models import CoarseTrajectory, EBMConfig, ExogenousSeries


def synthetic_run(params, graph, config, rng, years=6, run_id=0, noise=0.0):
    """A coarse run whose states are the model's own rollout, plus optional noise."""
    n = graph.n_nodes
    X0 = rng.uniform(2000.0, 8000.0, size=(n, 3))
    capacity = np.repeat(rng.uniform(20000.0, 40000.0, size=(1, n)), years + 1, axis=0)
    growth = rng.uniform(0.0, 200.0, size=(years + 1, n, 3))
    growth[-1] = 0.0
    exogenous = ExogenousSeries(growth=growth, capacity=capacity)
    states = euler_rollout(X0, params, exogenous, graph, config, n_steps=years)
    if noise:
        states = states.copy()
        states[1:] += rng.normal(0.0, noise, size=states[1:].shape)
    return CoarseTrajectory(run_id=run_id, states=states, growth=growth, capacity=capacity)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def graph():
    return case_study_graph()


@pytest.fixture
def ebm_config():
    return EBMConfig(n_nodes=4, flux_scaling="capacity")


@pytest.fixture
def params(rng):
    return init_params(4, rng)


@pytest.fixture
def coarse_runs(params, graph, ebm_config):
    """Four noisy runs generated by a fixed set of reference parameters."""
    rng = np.random.default_rng(7)
    return [synthetic_run(params, graph, ebm_config, rng, run_id=k, noise=50.0) for k in range(4)]


@pytest.fixture(scope="session")
def abm_coarse_runs():
    """Three desk-scale simulated runs (60 block groups, 30 years), coarsened
    with the default pipeline settings."""
    config = RunConfig()
    runs = []
    for k in range(3):
        trajectory = run_simulation(sample_scenario(config.master_seed, k), config.years,
                                    config.n_block_groups, run_id=k)
        rules = rules_for_run(trajectory, config.zone_thresholds)
        runs.append(build_coarse_trajectory(trajectory, rules, config.agents_per_representative))
    return runs

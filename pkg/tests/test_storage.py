"""Tests for on-disk artifact formats."""

import numpy as np
import pytest

from graphebm import storage
from graphebm.abm import run_simulation, sample_scenario
from graphebm.exceptions import DataFileError
from graphebm.graph import build_region_graph, case_study_graph
from graphebm.models import EBMParams, EvalSummary, RunMetrics, TrainReport

from .conftest import synthetic_run


class TestGraphFile:

    def test_round_trip(self, tmp_path):
        graph = build_region_graph(["a", "b", "c"], [("a", "c")])
        path = storage.write_graph(graph, tmp_path / "graph.txt")
        back = storage.read_graph(path)
        assert back.node_labels == graph.node_labels
        np.testing.assert_array_equal(back.adjacency, graph.adjacency)

    def test_bad_row(self, tmp_path):
        path = tmp_path / "graph.txt"
        path.write_text("a,b\n0,1\n1,x\n")
        with pytest.raises(DataFileError) as info:
            storage.read_graph(path)
        assert info.value.line == 3

    def test_asymmetric(self, tmp_path):
        path = tmp_path / "graph.txt"
        path.write_text("a,b\n0,1\n0,0\n")
        with pytest.raises(DataFileError, match="symmetric"):
            storage.read_graph(path)


class TestParamsFile:

    def test_round_trip_is_exact(self, tmp_path):
        params = EBMParams.from_vector(np.random.default_rng(0).normal(size=82) / 3.0, 4)
        path = storage.write_params(params, tmp_path / "best_params.txt")
        assert path.read_text().splitlines()[0] == "graphebm-params version=1 n_nodes=4"
        assert storage.read_params(path).to_vector().tobytes() == params.to_vector().tobytes()

    def test_wrong_count(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("graphebm-params version=1 n_nodes=4\n" + "0.5\n" * 81)
        with pytest.raises(DataFileError, match="expected 82"):
            storage.read_params(path)

    def test_bad_value_line(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("graphebm-params version=1 n_nodes=4\n0.5\nnope\n")
        with pytest.raises(DataFileError) as info:
            storage.read_params(path)
        assert info.value.line == 3

    def test_not_a_params_file(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("hello\n")
        with pytest.raises(DataFileError):
            storage.read_params(path)

    def test_missing(self, tmp_path):
        with pytest.raises(DataFileError, match="not found"):
            storage.read_params(tmp_path / "absent.txt")


class TestAgentFiles:

    def test_round_trip(self, tmp_path):
        scenario = sample_scenario(5, 1)
        trajectory = run_simulation(scenario, years=4, n_block_groups=12, run_id=1)
        storage.write_agent_trajectory(trajectory, tmp_path)
        storage.write_scenario(scenario, tmp_path / "scenario_001.txt")
        assert (tmp_path / "agents_001.csv").exists()

        back = storage.read_agent_trajectory(tmp_path, 1)
        assert back.years == 4
        assert back.inmigration == trajectory.inmigration
        np.testing.assert_array_equal(back.distance_d, trajectory.distance_d)
        np.testing.assert_array_equal(back.flood_prone, trajectory.flood_prone)
        for a, b in zip(back.agents, trajectory.agents):
            np.testing.assert_array_equal(a.location, b.location)
            np.testing.assert_array_equal(a.income, b.income)
        for a, b in zip(back.blocks, trajectory.blocks):
            np.testing.assert_array_equal(a.supply, b.supply)
            np.testing.assert_array_equal(a.price, b.price)
        assert storage.read_scenario(tmp_path / "scenario_001.txt") == scenario

    def test_outmigrated_location(self, tmp_path):
        trajectory = run_simulation(sample_scenario(5, 2), years=3, n_block_groups=10)
        storage.write_agent_trajectory(trajectory, tmp_path)
        text = (tmp_path / "agents_000.csv").read_text().splitlines()
        assert text[0] == "year,agent_id,income,location"

    def test_missing_run(self, tmp_path):
        with pytest.raises(DataFileError, match="agents_007.csv"):
            storage.read_agent_trajectory(tmp_path, 7)

    def test_manifest(self, tmp_path):
        storage.write_manifest([{"run": 0, "seed": 3}, {"run": 1, "seed": 4}],
                               tmp_path / "manifest.csv")
        assert storage.read_manifest(tmp_path / "manifest.csv") == [0, 1]


class TestCoarseFile:

    def test_round_trip_is_exact(self, tmp_path, params, graph, ebm_config):
        run = synthetic_run(params, graph, ebm_config, np.random.default_rng(1), run_id=12,
                            noise=1.0)
        path = storage.write_coarse_trajectory(run, tmp_path)
        assert path.name == "coarse_012.csv"
        assert path.read_text().splitlines()[0] == "year,node,subpop,count,G,C"
        back = storage.read_coarse_trajectory(path)
        assert back.run_id == 12
        np.testing.assert_array_equal(back.states, run.states)
        np.testing.assert_array_equal(back.growth, run.growth)
        np.testing.assert_array_equal(back.capacity, run.capacity)

    def test_coarse_file_feeds_simulation_inputs(self, tmp_path, params, graph, ebm_config):
        run = synthetic_run(params, graph, ebm_config, np.random.default_rng(1))
        path = storage.write_coarse_trajectory(run, tmp_path)
        np.testing.assert_array_equal(storage.read_initial_state(path), run.states[0])
        exogenous = storage.read_exogenous(path)
        np.testing.assert_array_equal(exogenous.growth, run.growth)
        np.testing.assert_array_equal(exogenous.capacity, run.capacity)

    def test_listing_requires_files(self, tmp_path):
        with pytest.raises(DataFileError, match="coarsen"):
            storage.list_coarse_runs(tmp_path)


class TestSimulationInputs:

    def write_state(self, path, rows):
        path.write_text("node,subpop,count\n" + "".join(f"{r}\n" for r in rows))

    def test_initial_state(self, tmp_path):
        path = tmp_path / "x0.csv"
        self.write_state(path, [f"{i},{s},{10 * i + s}" for i in range(2) for s in range(3)])
        np.testing.assert_array_equal(storage.read_initial_state(path),
                                      [[0, 1, 2], [10, 11, 12]])

    def test_bad_number_has_line(self, tmp_path):
        path = tmp_path / "x0.csv"
        self.write_state(path, ["0,0,1", "0,1,2", "0,2,abc"])
        with pytest.raises(DataFileError) as info:
            storage.read_initial_state(path)
        assert info.value.line == 4
        assert "x0.csv:4" in str(info.value)

    def test_negative_count_has_line(self, tmp_path):
        path = tmp_path / "x0.csv"
        self.write_state(path, ["0,0,1", "0,1,-2", "0,2,3"])
        with pytest.raises(DataFileError) as info:
            storage.read_initial_state(path)
        assert info.value.line == 3

    def test_incomplete_state(self, tmp_path):
        path = tmp_path / "x0.csv"
        self.write_state(path, ["0,0,1", "0,1,2"])
        with pytest.raises(DataFileError, match="cover"):
            storage.read_initial_state(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "x0.csv"
        path.write_text("node,count\n0,1\n")
        with pytest.raises(DataFileError, match="missing columns"):
            storage.read_initial_state(path)

    def test_exogenous_nonpositive_capacity(self, tmp_path):
        path = tmp_path / "exo.csv"
        rows = [f"0,{i},{s},1.0,{0.0 if (i, s) == (1, 2) else 50.0}"
                for i in range(2) for s in range(3)]
        path.write_text("year,node,subpop,G,C\n" + "\n".join(rows) + "\n")
        with pytest.raises(DataFileError) as info:
            storage.read_exogenous(path)
        assert info.value.line == 7


class TestReports:

    def test_history(self, tmp_path):
        report = TrainReport(train_loss=[5.0, 4.0, 3.0], val_loss=[9.0, 7.0, 8.0], best_epoch=1)
        path = storage.write_history(report, tmp_path / "history.csv")
        history = storage.read_history(path)
        assert list(history.columns) == ["epoch", "train_loss", "val_loss", "best_val_loss"]
        assert history["best_val_loss"].tolist() == [9.0, 7.0, 7.0]

    def test_splits_round_trip(self, tmp_path):
        splits = {"train": [3, 1], "val": [0], "test": [2, 4]}
        path = storage.write_splits(splits, tmp_path / "splits.csv")
        assert storage.read_splits(path) == splits

    def test_summary_layout(self, tmp_path):
        summaries = [EvalSummary("train", [RunMetrics(0, 10.0, 2000.0)]),
                     EvalSummary("val", [RunMetrics(1, 12.0, 3000.0)]),
                     EvalSummary("test")]
        path = storage.write_summary(summaries, tmp_path / "summary.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "split,mape_mean,mape_best,mape_worst,mae_mean,mae_best,mae_worst"
        assert len(lines) == 4
        assert lines[1].startswith("train,10.0,10.0,10.0,2.0,")

    def test_run_metrics(self, tmp_path):
        summaries = [EvalSummary("test", [RunMetrics(4, 1.5, 20.0, onset_observed=9),
                                          RunMetrics(5, np.nan, np.nan, diverged=True)])]
        lines = storage.write_run_metrics(summaries, tmp_path / "runs.csv").read_text().splitlines()
        assert lines[1] == "test,4,1.5,20.0,0,9,-1,0"
        assert lines[2].startswith("test,5,,,1,")

    def test_trajectory(self, tmp_path):
        states = np.arange(24.0).reshape(2, 4, 3)
        lines = storage.write_trajectory(states, tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "year,node,subpop,count"
        assert lines[-1] == "1,3,2,23.0"


def test_case_study_graph_file(tmp_path):
    path = storage.write_graph(case_study_graph(), tmp_path / "graph.txt")
    assert path.read_text().splitlines() == [
        "urban,suburban,rural,outmigrated", "0,1,1,1", "1,0,1,1", "1,1,0,1", "1,1,1,0"]

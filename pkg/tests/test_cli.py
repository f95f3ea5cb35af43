"""End-to-end tests of the ``graphebm`` command line."""

import numpy as np
import pandas as pd
import pytest

from graphebm import storage
from graphebm.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, build_parser, main

SMALL = ["--seed", "11", "--n-runs", "3", "--years", "3",
         "--max-epochs", "5", "--mape-floor", "0", "--checkpoint-every", "2", "-q"]


def run_pipeline(out, jobs=1, stages=("generate", "coarsen", "train", "evaluate")):
    for stage in stages:
        code = main([stage, *SMALL, "--jobs", str(jobs), "--out", str(out)])
        assert code == EXIT_OK, stage
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipeline"))


class TestPipeline:

    def test_artifacts(self, pipeline):
        assert (pipeline / "config.txt").exists()
        assert len(list((pipeline / "abm").glob("agents_*.csv"))) == 3
        assert storage.read_manifest(pipeline / "abm" / "manifest.csv") == [0, 1, 2]
        assert len(storage.list_coarse_runs(pipeline / "coarse")) == 3
        assert (pipeline / "coarse" / "thresholds.csv").exists()
        assert storage.read_graph(pipeline / "coarse" / "graph.txt").n_nodes == 4
        assert (pipeline / "train" / "checkpoints" / "epoch_0.txt").exists()

    def test_splits_cover_every_run(self, pipeline):
        splits = storage.read_splits(pipeline / "train" / "splits.csv")
        assert [len(splits[k]) for k in ("train", "val", "test")] == [1, 0, 2]
        assert sorted(sum(splits.values(), [])) == [0, 1, 2]

    def test_history(self, pipeline):
        history = storage.read_history(pipeline / "train" / "history.csv")
        assert 1 <= len(history) <= 5
        assert np.isfinite(history["train_loss"]).all()

    def test_best_params_are_loadable(self, pipeline):
        params = storage.read_params(pipeline / "train" / "best_params.txt")
        assert params.size == 82
        assert params.is_finite()

    def test_summary_has_a_row_per_split(self, pipeline):
        summary = pd.read_csv(pipeline / "eval" / "summary.csv")
        assert summary["split"].tolist() == ["train", "val", "test"]
        assert summary["mape_mean"].isna().tolist() == [False, True, False]
        baseline = pd.read_csv(pipeline / "eval" / "baseline.csv")
        assert len(baseline) == 3

    def test_exemplar_overlays(self, pipeline):
        exemplars = pd.read_csv(pipeline / "eval" / "exemplars.csv")
        assert set(exemplars["role"]) == {"worst_mape", "best_mape", "best_mae", "worst_mae"}
        splits = storage.read_splits(pipeline / "train" / "splits.csv")
        for run_id in exemplars["run"]:
            assert run_id in splits["test"]
            tag = storage.run_tag(int(run_id))
            predicted, observed = storage.read_overlay(pipeline / "eval" / f"overlay_{tag}.csv")
            assert predicted.shape == observed.shape == (4, 4, 3)
            cum_obs, cum_pred = storage.read_outmigration(
                pipeline / "eval" / f"outmigration_{tag}.csv")
            assert cum_obs[0] == cum_pred[0] == 0.0


class TestDeterminism:

    def test_same_seed_same_bytes(self, pipeline, tmp_path):
        other = run_pipeline(tmp_path / "again", stages=("generate", "coarsen", "train"))
        for rel in ("coarse/coarse_000.csv", "coarse/coarse_002.csv",
                    "train/history.csv", "train/best_params.txt", "train/splits.csv"):
            assert (pipeline / rel).read_bytes() == (other / rel).read_bytes(), rel

    def test_worker_count_does_not_change_results(self, pipeline, tmp_path):
        other = run_pipeline(tmp_path / "parallel", jobs=2, stages=("generate", "coarsen"))
        for path in sorted((pipeline / "coarse").glob("coarse_*.csv")):
            assert path.read_bytes() == (other / "coarse" / path.name).read_bytes()


class TestGenerate:

    def test_refuses_to_overwrite(self, tmp_path):
        args = ["generate", *SMALL, "--jobs", "1", "--out", str(tmp_path)]
        assert main(args) == EXIT_OK
        before = (tmp_path / "abm" / "agents_000.csv").read_bytes()
        assert main(args) == EXIT_CONFIG
        assert main([*args, "--force"]) == EXIT_OK
        assert (tmp_path / "abm" / "agents_000.csv").read_bytes() == before

    def test_invalid_split(self, tmp_path):
        assert main(["generate", "--splits", "0.5,0.5,0.5", "--out", str(tmp_path), "-q"]) \
            == EXIT_CONFIG

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_runs = 3\nyears = 2\nn_block_groups = 10\njobs = 1\n"
                       f"output_dir = {tmp_path / 'out'}\n")
        assert main(["generate", "--config", str(cfg), "-q"]) == EXIT_OK
        assert storage.read_manifest(tmp_path / "out" / "abm" / "manifest.csv") == [0, 1, 2]


class TestErrors:

    def test_unknown_flag(self):
        assert main(["train", "--no-such-flag"]) == EXIT_CONFIG

    def test_unknown_command(self):
        assert main(["fly"]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.cfg"), "-q"]) == EXIT_IO

    def test_coarsen_without_runs(self, tmp_path):
        assert main(["coarsen", "--out", str(tmp_path), "-q"]) == EXIT_IO

    def test_evaluate_without_params(self, tmp_path):
        assert main(["evaluate", "--out", str(tmp_path), "-q"]) == EXIT_IO


class TestSimulate:

    def simulate(self, pipeline, tmp_path, x0=None, steps="3"):
        coarse = pipeline / "coarse" / "coarse_000.csv"
        output = tmp_path / "trajectory.csv"
        code = main(["simulate", "--params", str(pipeline / "train" / "best_params.txt"),
                     "--x0", str(x0 or coarse), "--exogenous", str(coarse),
                     "--steps", steps, "--repeats", "3", "--output", str(output), "-q"])
        return code, output

    def test_rollout(self, pipeline, tmp_path, capsys):
        code, output = self.simulate(pipeline, tmp_path)
        assert code == EXIT_OK
        assert "median rollout time" in capsys.readouterr().out
        frame = pd.read_csv(output)
        assert len(frame) == 4 * 4 * 3

    def test_zero_steps_echoes_initial_state(self, pipeline, tmp_path):
        code, output = self.simulate(pipeline, tmp_path, steps="0")
        assert code == EXIT_OK
        expected = storage.read_coarse_trajectory(pipeline / "coarse" / "coarse_000.csv")
        frame = pd.read_csv(output, float_precision="round_trip")
        assert frame["year"].unique().tolist() == [0]
        np.testing.assert_array_equal(frame["count"].to_numpy().reshape(4, 3),
                                      expected.states[0])

    def test_bad_initial_state(self, pipeline, tmp_path):
        x0 = tmp_path / "x0.csv"
        x0.write_text("node,subpop,count\n0,0,12\n0,1,oops\n")
        code, _ = self.simulate(pipeline, tmp_path, x0=x0)
        assert code == EXIT_IO

    def test_negative_steps(self, pipeline, tmp_path):
        code, _ = self.simulate(pipeline, tmp_path, steps="-1")
        assert code == EXIT_CONFIG


def test_check_grad(capsys):
    assert main(["check-grad", "--grad-instances", "2", "-q"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("[ok]") == 2
    assert "max relative error" in out


def test_every_config_field_has_a_flag():
    parser = build_parser()
    args = parser.parse_args(["train", "--seed", "5", "--flux-scaling", "unit"])
    assert args.master_seed == "5"
    assert args.flux_scaling == "unit"


@pytest.mark.slow
def test_training_beats_untrained_baseline(tmp_path):
    out = tmp_path / "acceptance"
    for stage in ("generate", "coarsen", "train", "evaluate"):
        assert main([stage, "--seed", "2024", "--n-runs", "12", "--years", "30",
                     "--out", str(out), "-q"]) == EXIT_OK
    trained = pd.read_csv(out / "eval" / "summary.csv").set_index("split")
    baseline = pd.read_csv(out / "eval" / "baseline.csv").set_index("split")
    held_out = trained.loc["test", "mape_mean"]
    assert held_out <= 20.0
    assert held_out <= 0.5 * baseline.loc["test", "mape_mean"]
    history = pd.read_csv(out / "train" / "history.csv")
    assert history["train_loss"].iloc[:500].min() <= 0.5 * history["train_loss"].iloc[0]

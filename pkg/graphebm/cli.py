"""Command-line entry point: ``graphebm <command> [options]``.

Commands
--------
generate     simulate the agent-based model for every run
coarsen      project agent runs onto the node-by-income representation
train        fit the closure network with early stopping
evaluate     MAPE / MAE summaries and overlay exports
simulate     roll out trained parameters from given initial state and inputs
check-grad   compare reverse-mode gradients with central differences

Exit codes: 0 success, 1 usage or configuration error, 2 divergence or
failed check, 3 missing or unreadable file.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

from . import storage
from .abm import run_simulation, sample_scenario
from .coarsen import build_coarse_trajectory, rules_for_run, split_dataset
from .config import RunConfig, derive_seed, format_config, load_run_config
from .ebm import euler_rollout, init_params
from .exceptions import (
    ConfigurationError,
    ContractError,
    DataFileError,
    DivergenceError,
    DomainError,
    GraphEBMError,
    UndefinedMetricError,
)
from .metrics import evaluate_split, export_series, rollout_run, select_exemplars
from .models import CoarseTrajectory, EvalSummary, ExogenousSeries, TrainReport
from .training import GradCheckResult, check_gradients, train

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3

SPLIT_NAMES = ("train", "val", "test")
_ABM_PATTERNS = ("agents_*.csv", "blocks_*.csv", "scenario_*.txt", "manifest.csv")


# ------------------------------------------------------------------
# Helpers
# ------------------------------------------------------------------

def _worker_count(config: RunConfig) -> int:
    return config.jobs or os.cpu_count() or 1


def _map_runs(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    """Map *fn* over *items*, in worker processes when ``jobs > 1``.

    Results always come back in item order.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _existing_artifacts(directory: Path, patterns: Iterable[str]) -> list[Path]:
    return sorted(p for pattern in patterns for p in directory.glob(pattern))


def _graph_for(config: RunConfig):
    path = config.coarse_dir / "graph.txt"
    return storage.read_graph(path) if path.exists() else config.region_graph()


def _load_coarse(config: RunConfig) -> dict[int, CoarseTrajectory]:
    runs = [storage.read_coarse_trajectory(p) for p in storage.list_coarse_runs(config.coarse_dir)]
    return {run.run_id: run for run in runs}


# ------------------------------------------------------------------
# generate
# ------------------------------------------------------------------

def _generate_run(job: tuple[RunConfig, int]) -> tuple[int, dict, float]:
    config, run_index = job
    started = time.perf_counter()
    scenario = sample_scenario(config.master_seed, run_index)
    trajectory = run_simulation(scenario, config.years, config.n_block_groups,
                                run_id=run_index, mover_rate=config.mover_rate)
    storage.write_agent_trajectory(trajectory, config.abm_dir)
    storage.write_scenario(scenario, config.abm_dir / f"scenario_{storage.run_tag(run_index)}.txt")
    row = {"run": run_index, **dataclasses.asdict(scenario)}
    return run_index, row, time.perf_counter() - started


def cmd_generate(config: RunConfig, force: bool = False) -> list[int]:
    """Simulate ``n_runs`` agent-based runs and write one file trio per run."""
    abm_dir = config.abm_dir
    existing = _existing_artifacts(abm_dir, _ABM_PATTERNS) if abm_dir.exists() else []
    if existing:
        if not force:
            raise ConfigurationError(
                f"{abm_dir} already holds {len(existing)} generated file(s); use --force to replace"
            )
        logger.info("removing %d previously generated file(s) from %s", len(existing), abm_dir)
        for path in existing:
            path.unlink()
    abm_dir.mkdir(parents=True, exist_ok=True)
    (config.output_dir / "config.txt").write_text(format_config(config))

    results = _map_runs(_generate_run, [(config, r) for r in range(config.n_runs)],
                        _worker_count(config))
    storage.write_manifest([row for _, row, _ in results], abm_dir / "manifest.csv")
    elapsed = [seconds for _, _, seconds in results]
    logger.info("generated %d runs of %d years; mean ABM time %.3f s per run",
                len(results), config.years, float(np.mean(elapsed)))
    return [run for run, _, _ in results]


# ------------------------------------------------------------------
# coarsen
# ------------------------------------------------------------------

def _coarsen_run(job: tuple[RunConfig, int]) -> dict:
    config, run_id = job
    trajectory = storage.read_agent_trajectory(config.abm_dir, run_id)
    rules = rules_for_run(trajectory, config.zone_thresholds, config.income_thresholds)
    coarse = build_coarse_trajectory(trajectory, rules, config.agents_per_representative)
    storage.write_coarse_trajectory(coarse, config.coarse_dir)
    d1, d2 = rules.zone_thresholds
    i1, i2 = rules.income_thresholds
    return {"run": run_id, "mode": "fixed" if config.income_thresholds else "auto",
            "d1": d1, "d2": d2, "i1": i1, "i2": i2}


def cmd_coarsen(config: RunConfig) -> list[int]:
    """Write ``coarse_<run>.csv`` per generated run plus the thresholds used."""
    run_ids = storage.read_manifest(config.abm_dir / "manifest.csv")
    rows = _map_runs(_coarsen_run, [(config, r) for r in run_ids], _worker_count(config))
    storage.write_thresholds(rows, config.coarse_dir / "thresholds.csv")
    storage.write_graph(config.region_graph(), config.coarse_dir / "graph.txt")
    logger.info("coarsened %d runs into %s", len(rows), config.coarse_dir)
    return run_ids


# ------------------------------------------------------------------
# train
# ------------------------------------------------------------------

def cmd_train(config: RunConfig) -> TrainReport:
    """Split the coarse runs, train, and persist history and best parameters."""
    runs = _load_coarse(config)
    graph = _graph_for(config)
    ordered = [runs[r] for r in sorted(runs)]
    train_set, val_set, test_set = split_dataset(ordered, config.splits,
                                                 seed=derive_seed(config.master_seed, "split"))
    storage.write_splits({"train": [r.run_id for r in train_set],
                          "val": [r.run_id for r in val_set],
                          "test": [r.run_id for r in test_set]},
                         config.train_dir / "splits.csv")
    if not val_set:
        logger.warning("validation split is empty; validating on the training runs")
        val_set = train_set
    logger.info("training on %d runs, validating on %d, %d held out",
                len(train_set), len(val_set), len(test_set))

    checkpoint_dir = config.train_dir / "checkpoints"

    def checkpoint(epoch, params):
        storage.write_params(params, checkpoint_dir / f"epoch_{epoch}.txt")

    report = train(train_set, val_set, graph, config.ebm_config(graph.n_nodes),
                   seed=derive_seed(config.master_seed, "init"),
                   patience=config.patience, max_epochs=config.max_epochs,
                   learning_rate=config.learning_rate, checkpoint=checkpoint,
                   checkpoint_every=config.checkpoint_every, log_every=config.log_every)
    storage.write_history(report, config.train_dir / "history.csv")
    storage.write_params(report.best_params, config.train_dir / "best_params.txt")
    print(f"best epoch {report.best_epoch}, validation loss {report.best_val_loss:.6g}")
    return report


# ------------------------------------------------------------------
# evaluate
# ------------------------------------------------------------------

def _evaluate_all(params, runs, splits, graph, ebm_config, config) -> list[EvalSummary]:
    summaries = []
    for name in SPLIT_NAMES:
        members = [runs[r] for r in splits.get(name, []) if r in runs]
        if not members:
            summaries.append(EvalSummary(split=name))
            continue
        summaries.append(evaluate_split(params, members, graph, ebm_config, name=name,
                                        mape_floor=config.mape_floor,
                                        jobs=_worker_count(config)))
    return summaries


def cmd_evaluate(config: RunConfig) -> list[EvalSummary]:
    """Summaries per split, per-run metrics and overlays of exemplar runs."""
    params = storage.read_params(config.train_dir / "best_params.txt")
    splits = storage.read_splits(config.train_dir / "splits.csv")
    runs = _load_coarse(config)
    graph = _graph_for(config)
    ebm_config = config.ebm_config(graph.n_nodes)
    eval_dir = config.eval_dir

    summaries = _evaluate_all(params, runs, splits, graph, ebm_config, config)
    storage.write_summary(summaries, eval_dir / "summary.csv")
    storage.write_run_metrics(summaries, eval_dir / "runs.csv")

    initial = init_params(graph.n_nodes, np.random.default_rng(derive_seed(config.master_seed, "init")))
    baseline = _evaluate_all(initial, runs, splits, graph, ebm_config, config)
    storage.write_summary(baseline, eval_dir / "baseline.csv")

    held_out = next((s for s in reversed(summaries) if s.valid_runs), None)
    exemplars = select_exemplars(held_out) if held_out is not None else {}
    storage.write_exemplars(exemplars, eval_dir / "exemplars.csv")
    for run_id in sorted(set(exemplars.values())):
        run = runs[run_id]
        export_series(run, rollout_run(params, run, graph, ebm_config), run.states,
                      eval_dir / f"overlay_{storage.run_tag(run_id)}.csv")

    for s in summaries:
        if s.valid_runs:
            print(f"{s.split}: MAPE {s.mape_mean:.2f}% (best {s.mape_best:.2f}, worst "
                  f"{s.mape_worst:.2f}), MAE {s.mae_mean / 1000.0:.2f}k")
        else:
            print(f"{s.split}: no evaluable runs")
    return summaries


# ------------------------------------------------------------------
# simulate
# ------------------------------------------------------------------

def cmd_simulate(config: RunConfig, params_file: Path, x0_file: Path, exogenous_file: Path,
                 n_steps: int, output: Optional[Path] = None, graph_file: Optional[Path] = None,
                 repeats: int = 100) -> tuple[np.ndarray, float]:
    """Roll out trained parameters and time the rollout.

    Returns the trajectory and the median wall time in seconds over
    *repeats* identical rollouts.
    """
    if n_steps < 0:
        raise ConfigurationError(f"--steps must be nonnegative, got {n_steps}")
    params = storage.read_params(params_file)
    graph = storage.read_graph(graph_file) if graph_file else config.region_graph()
    if graph.n_nodes != params.n_nodes:
        raise ConfigurationError(
            f"parameters are for {params.n_nodes} nodes, graph has {graph.n_nodes}"
        )
    X0 = storage.read_initial_state(x0_file, n_nodes=graph.n_nodes)
    exogenous: ExogenousSeries = storage.read_exogenous(exogenous_file)
    ebm_config = config.ebm_config(graph.n_nodes)

    trajectory = euler_rollout(X0, params, exogenous, graph, ebm_config, n_steps=n_steps)
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        euler_rollout(X0, params, exogenous, graph, ebm_config, n_steps=n_steps)
        timings.append(time.perf_counter() - started)
    median = statistics.median(timings) if timings else 0.0

    output = output or config.output_dir / "simulate" / "trajectory.csv"
    storage.write_trajectory(trajectory, output)
    logger.info("wrote %d-step trajectory to %s", n_steps, output)
    print(f"median rollout time over {repeats} runs: {median * 1000.0:.3f} ms")
    return trajectory, median


# ------------------------------------------------------------------
# check-grad
# ------------------------------------------------------------------

def cmd_check_grad(config: RunConfig) -> list[GradCheckResult]:
    """Print a per-instance report of reverse-mode vs. finite-difference gradients."""
    results = check_gradients(config.grad_instances, derive_seed(config.master_seed, "check-grad"),
                              config.ebm_config(), eps=config.grad_eps,
                              rel_tol=config.grad_tolerance)
    for r in results:
        status = "ok" if r.passed(config.grad_tolerance) else "FAIL"
        print(f"instance {r.instance:3d}: {r.n_nodes} nodes, {r.n_steps:2d} steps, "
              f"max relative error {r.max_error:.3e} at {r.worst_coordinate} [{status}]")
    if results:
        worst = max(results, key=lambda r: r.max_error)
        print(f"max relative error {worst.max_error:.3e} "
              f"(instance {worst.instance}, {worst.worst_coordinate}); "
              f"tolerance {config.grad_tolerance:.1e}")
    return results


# ------------------------------------------------------------------
# Argument parsing
# ------------------------------------------------------------------

class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


_FLAG_ALIASES = {"master_seed": "--seed", "output_dir": "--out", "jobs": "--jobs"}


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--force", action="store_true",
                        help="replace previously generated runs")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    overrides = common.add_argument_group("configuration overrides")
    for field in dataclasses.fields(RunConfig):
        flag = _FLAG_ALIASES.get(field.name, "--" + field.name.replace("_", "-"))
        overrides.add_argument(flag, dest=field.name, default=None, metavar="VALUE")

    parser = _ArgumentParser(prog="graphebm", description=__doc__.split("\n")[0])
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True
    for name, help_text in (("generate", "simulate agent-based runs"),
                            ("coarsen", "build coarse trajectories"),
                            ("train", "fit the closure network"),
                            ("evaluate", "compute metrics and exports"),
                            ("check-grad", "verify gradients by finite differences")):
        commands.add_parser(name, parents=[common], help=help_text)

    simulate = commands.add_parser("simulate", parents=[common],
                                   help="roll out trained parameters")
    simulate.add_argument("--params", type=Path, required=True)
    simulate.add_argument("--x0", type=Path, required=True)
    simulate.add_argument("--exogenous", type=Path, required=True)
    simulate.add_argument("--steps", type=int, required=True)
    simulate.add_argument("--graph", type=Path)
    simulate.add_argument("--output", type=Path)
    simulate.add_argument("--repeats", type=int, default=100)
    return parser


def _configure_logging(verbose: int, quiet: bool) -> None:
    level = logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger("graphebm")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


def _dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    if args.command == "generate":
        cmd_generate(config, force=args.force)
    elif args.command == "coarsen":
        cmd_coarsen(config)
    elif args.command == "train":
        cmd_train(config)
    elif args.command == "evaluate":
        cmd_evaluate(config)
    elif args.command == "simulate":
        cmd_simulate(config, args.params, args.x0, args.exogenous, args.steps,
                     output=args.output, graph_file=args.graph, repeats=args.repeats)
    elif args.command == "check-grad":
        results = cmd_check_grad(config)
        if not all(r.passed(config.grad_tolerance) for r in results):
            return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_logging(args.verbose, args.quiet)
        overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
        config = load_run_config(args.config, overrides)
        return _dispatch(args, config)
    except (ConfigurationError, ContractError, DomainError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (DivergenceError, UndefinedMetricError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    except (DataFileError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except GraphEBMError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

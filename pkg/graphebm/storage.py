"""Reading and writing every on-disk artifact of the pipeline.

Tabular artifacts are CSV with a mandatory header, written with pandas
using shortest round-trip float formatting so that re-reading reproduces
the written values exactly.  Graphs, parameters and scenarios are small
plain-text formats.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .exceptions import DataFileError
from .models import (
    MLP_PARAM_COUNT,
    N_X,
    OUTMIGRATED,
    AgentSnapshot,
    AgentTrajectory,
    BlockSnapshot,
    CoarseTrajectory,
    EBMParams,
    EvalSummary,
    ExogenousSeries,
    RegionGraph,
    ScenarioParams,
    TrainReport,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PARAMS_FORMAT_VERSION = 1
_PARAMS_MAGIC = "graphebm-params"


def run_tag(run_id: int) -> str:
    return f"{run_id:03d}"


def _write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _read_frame(path: PathLike, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataFileError("file not found", path=path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataFileError(f"cannot parse CSV: {exc}", path=path) from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataFileError(f"missing columns {missing}", path=path, line=1)
    return frame


def _numeric(frame: pd.DataFrame, columns: Sequence[str], path: PathLike) -> pd.DataFrame:
    """Coerce *columns* to numbers, reporting the first bad line."""
    for col in columns:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna() | ~np.isfinite(values.astype(float))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataFileError(
                f"column {col!r}: invalid value {frame[col].iloc[row]!r}",
                path=path, line=row + 2,
            )
        frame[col] = values
    return frame


# ------------------------------------------------------------------
# Graph
# ------------------------------------------------------------------

def write_graph(graph: RegionGraph, path: PathLike) -> Path:
    """Labels on line 1, then one comma-separated 0/1 adjacency row per node."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(graph.node_labels)]
    lines += [",".join(str(int(v)) for v in row) for row in graph.adjacency]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_graph(path: PathLike) -> RegionGraph:
    path = Path(path)
    if not path.exists():
        raise DataFileError("graph file not found", path=path)
    lines = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if not lines:
        raise DataFileError("empty graph file", path=path)
    labels = [label.strip() for label in lines[0].split(",")]
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rows.append([int(v) for v in line.split(",")])
        except ValueError as exc:
            raise DataFileError(f"bad adjacency row {line!r}", path=path, line=lineno) from exc
    if len(rows) != len(labels):
        raise DataFileError(f"{len(labels)} labels but {len(rows)} adjacency rows", path=path)
    try:
        return RegionGraph(tuple(labels), np.array(rows))
    except ValueError as exc:
        raise DataFileError(str(exc), path=path) from exc


# ------------------------------------------------------------------
# Parameters
# ------------------------------------------------------------------

def write_params(params: EBMParams, path: PathLike) -> Path:
    """Header line, then one scalar per line in the flat parameter order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{_PARAMS_MAGIC} version={PARAMS_FORMAT_VERSION} n_nodes={params.n_nodes}"
    body = "\n".join(repr(float(v)) for v in params.to_vector())
    path.write_text(f"{header}\n{body}\n")
    return path


def read_params(path: PathLike) -> EBMParams:
    path = Path(path)
    if not path.exists():
        raise DataFileError("parameter file not found", path=path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(_PARAMS_MAGIC):
        raise DataFileError("not a graphebm parameter file", path=path, line=1)
    fields = dict(item.split("=", 1) for item in lines[0].split()[1:] if "=" in item)
    try:
        version = int(fields["version"])
        n_nodes = int(fields["n_nodes"])
    except (KeyError, ValueError) as exc:
        raise DataFileError("malformed parameter header", path=path, line=1) from exc
    if version != PARAMS_FORMAT_VERSION:
        raise DataFileError(f"unsupported parameter format version {version}", path=path, line=1)
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise DataFileError(f"not a number: {line!r}", path=path, line=lineno) from exc
    if len(values) != MLP_PARAM_COUNT + n_nodes:
        raise DataFileError(
            f"expected {MLP_PARAM_COUNT + n_nodes} values, found {len(values)}", path=path,
        )
    return EBMParams.from_vector(np.array(values), n_nodes)


# ------------------------------------------------------------------
# Agent-based model output
# ------------------------------------------------------------------

_SCENARIO_FIELDS = ("initial_vacancy_rate", "population_growth_rate",
                    "inmigrant_income_percentile", "building_growth_rate",
                    "flood_avoider_fraction", "seed")


def write_scenario(params: ScenarioParams, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{name}={getattr(params, name)!r}\n" for name in _SCENARIO_FIELDS))
    return path


def read_scenario(path: PathLike) -> ScenarioParams:
    path = Path(path)
    if not path.exists():
        raise DataFileError("scenario file not found", path=path)
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _SCENARIO_FIELDS:
            raise DataFileError(f"unknown scenario key {key!r}", path=path, line=lineno)
        try:
            values[key] = int(value) if key == "seed" else float(value)
        except ValueError as exc:
            raise DataFileError(f"bad value {value!r}", path=path, line=lineno) from exc
    return ScenarioParams(**values)


def write_agent_trajectory(trajectory: AgentTrajectory, directory: PathLike) -> tuple[Path, Path]:
    """Write ``agents_<run>.csv`` and ``blocks_<run>.csv``.

    Outmigrated agents have location -1.
    """
    directory = Path(directory)
    tag = run_tag(trajectory.run_id)
    agents = pd.concat([
        pd.DataFrame({"year": s.year, "agent_id": s.agent_id,
                      "income": s.income, "location": s.location})
        for s in trajectory.agents
    ], ignore_index=True)
    blocks = pd.concat([
        pd.DataFrame({"year": b.year, "bg_id": np.arange(trajectory.n_block_groups),
                      "distance_d": trajectory.distance_d, "supply": b.supply,
                      "price": b.price, "occupied": b.occupied,
                      "flood_prone": trajectory.flood_prone.astype(int),
                      "quality": trajectory.quality})
        for b in trajectory.blocks
    ], ignore_index=True)
    return (_write_frame(agents, directory / f"agents_{tag}.csv"),
            _write_frame(blocks, directory / f"blocks_{tag}.csv"))


def read_agent_trajectory(directory: PathLike, run_id: int) -> AgentTrajectory:
    directory = Path(directory)
    tag = run_tag(run_id)
    agents_path = directory / f"agents_{tag}.csv"
    blocks_path = directory / f"blocks_{tag}.csv"
    agents = _read_frame(agents_path, ("year", "agent_id", "income", "location"))
    blocks = _read_frame(blocks_path, ("year", "bg_id", "distance_d", "supply",
                                       "price", "occupied", "flood_prone"))
    first = blocks[blocks["year"] == blocks["year"].min()].sort_values("bg_id")
    trajectory = AgentTrajectory(
        run_id=run_id,
        distance_d=first["distance_d"].to_numpy(dtype=float),
        quality=(first["quality"].to_numpy(dtype=float) if "quality" in first
                 else np.zeros(len(first))),
        flood_prone=first["flood_prone"].to_numpy(dtype=bool),
    )
    years = sorted(agents["year"].unique())
    by_year_agents = dict(tuple(agents.groupby("year", sort=True)))
    by_year_blocks = dict(tuple(blocks.groupby("year", sort=True)))
    previous = 0
    for year in years:
        a = by_year_agents[year].sort_values("agent_id")
        b = by_year_blocks.get(year)
        if b is None:
            raise DataFileError(f"no block rows for year {year}", path=blocks_path)
        b = b.sort_values("bg_id")
        trajectory.agents.append(AgentSnapshot(
            year=int(year), agent_id=a["agent_id"].to_numpy(dtype=int),
            income=a["income"].to_numpy(dtype=float),
            location=a["location"].to_numpy(dtype=int),
        ))
        trajectory.blocks.append(BlockSnapshot(
            year=int(year), supply=b["supply"].to_numpy(dtype=int),
            price=b["price"].to_numpy(dtype=float),
            occupied=b["occupied"].to_numpy(dtype=int),
        ))
        trajectory.inmigration.append(len(a) - previous if trajectory.inmigration else 0)
        previous = len(a)
    return trajectory


def write_manifest(rows: Iterable[Mapping[str, object]], path: PathLike) -> Path:
    return _write_frame(pd.DataFrame(list(rows)), path)


def read_manifest(path: PathLike) -> list[int]:
    frame = _read_frame(path, ("run",))
    return [int(r) for r in frame["run"]]


# ------------------------------------------------------------------
# Coarse trajectories
# ------------------------------------------------------------------

def coarse_frame(trajectory: CoarseTrajectory) -> pd.DataFrame:
    n_times, n_nodes, _ = trajectory.states.shape
    year, node, subpop = np.meshgrid(np.arange(n_times), np.arange(n_nodes),
                                     np.arange(N_X), indexing="ij")
    return pd.DataFrame({
        "year": year.ravel(), "node": node.ravel(), "subpop": subpop.ravel(),
        "count": trajectory.states.ravel(), "G": trajectory.growth.ravel(),
        "C": np.repeat(trajectory.capacity.ravel(), N_X),
    })


def write_coarse_trajectory(trajectory: CoarseTrajectory, directory: PathLike) -> Path:
    """Write ``coarse_<run>.csv`` with columns year, node, subpop, count, G, C."""
    return _write_frame(coarse_frame(trajectory),
                        Path(directory) / f"coarse_{run_tag(trajectory.run_id)}.csv")


def _grid(frame: pd.DataFrame, column: str, path: PathLike) -> np.ndarray:
    n_times = int(frame["year"].max()) + 1
    n_nodes = int(frame["node"].max()) + 1
    if len(frame) != n_times * n_nodes * N_X:
        raise DataFileError(
            f"expected {n_times * n_nodes * N_X} rows for {n_times} years and "
            f"{n_nodes} nodes, found {len(frame)}", path=path,
        )
    ordered = frame.sort_values(["year", "node", "subpop"])
    return ordered[column].to_numpy(dtype=float).reshape(n_times, n_nodes, N_X)


def read_coarse_trajectory(path: PathLike) -> CoarseTrajectory:
    path = Path(path)
    frame = _numeric(_read_frame(path, ("year", "node", "subpop", "count", "G", "C")),
                     ("year", "node", "subpop", "count", "G", "C"), path)
    run_id = int(path.stem.rsplit("_", 1)[-1])
    return CoarseTrajectory(
        run_id=run_id,
        states=_grid(frame, "count", path),
        growth=_grid(frame, "G", path),
        capacity=_grid(frame, "C", path)[:, :, 0],
    )


def list_coarse_runs(directory: PathLike) -> list[Path]:
    directory = Path(directory)
    paths = sorted(directory.glob("coarse_*.csv"))
    if not paths:
        raise DataFileError("no coarse_<run>.csv files; run 'coarsen' first", path=directory)
    return paths


def write_thresholds(rows: Iterable[Mapping[str, object]], path: PathLike) -> Path:
    return _write_frame(pd.DataFrame(list(rows)), path)


# ------------------------------------------------------------------
# Simulation inputs and outputs
# ------------------------------------------------------------------

def read_initial_state(path: PathLike, n_nodes: Optional[int] = None) -> np.ndarray:
    """Initial state from a CSV with columns node, subpop, count.

    A ``year`` column is allowed; only year-0 rows are used, so a coarse
    trajectory file works as input.
    """
    path = Path(path)
    frame = _read_frame(path, ("node", "subpop", "count"))
    if "year" in frame.columns:
        frame = _numeric(frame, ("year",), path)
        frame = frame[frame["year"] == 0]
    frame = _numeric(frame, ("node", "subpop", "count"), path)
    n_nodes = n_nodes or int(frame["node"].max()) + 1
    state = np.full((n_nodes, N_X), np.nan)
    for idx, row in frame.iterrows():
        node, subpop = int(row["node"]), int(row["subpop"])
        if not (0 <= node < n_nodes and 0 <= subpop < N_X) or row["count"] < 0:
            raise DataFileError(f"invalid entry node={node} subpop={subpop} count={row['count']}",
                                path=path, line=int(idx) + 2)
        state[node, subpop] = row["count"]
    if np.isnan(state).any():
        raise DataFileError("initial state does not cover every node and subpopulation", path=path)
    return state


def read_exogenous(path: PathLike) -> ExogenousSeries:
    """Exogenous series from a CSV with columns year, node, subpop, G, C."""
    path = Path(path)
    frame = _numeric(_read_frame(path, ("year", "node", "subpop", "G", "C")),
                     ("year", "node", "subpop", "G", "C"), path)
    for col, test in (("G", frame["G"] < 0), ("C", frame["C"] <= 0)):
        if test.any():
            row = int(np.flatnonzero(test.to_numpy())[0])
            raise DataFileError(f"column {col!r} out of range: {frame[col].iloc[row]!r}",
                                path=path, line=row + 2)
    return ExogenousSeries(growth=_grid(frame, "G", path), capacity=_grid(frame, "C", path)[:, :, 0])


def write_trajectory(states: np.ndarray, path: PathLike) -> Path:
    n_times, n_nodes, _ = states.shape
    year, node, subpop = np.meshgrid(np.arange(n_times), np.arange(n_nodes),
                                     np.arange(N_X), indexing="ij")
    return _write_frame(pd.DataFrame({"year": year.ravel(), "node": node.ravel(),
                                      "subpop": subpop.ravel(), "count": states.ravel()}), path)


# ------------------------------------------------------------------
# Training and evaluation outputs
# ------------------------------------------------------------------

def write_history(report: TrainReport, path: PathLike) -> Path:
    """``epoch, train_loss, val_loss, best_val_loss`` per epoch."""
    val = np.array(report.val_loss, dtype=float)
    return _write_frame(pd.DataFrame({
        "epoch": np.arange(report.n_epochs),
        "train_loss": np.array(report.train_loss, dtype=float),
        "val_loss": val,
        "best_val_loss": np.minimum.accumulate(val) if len(val) else val,
    }), path)


def read_history(path: PathLike) -> pd.DataFrame:
    return _read_frame(path, ("epoch", "train_loss", "val_loss"))


def write_splits(splits: Mapping[str, Sequence[int]], path: PathLike) -> Path:
    rows = [(run_id, name) for name, ids in splits.items() for run_id in ids]
    return _write_frame(pd.DataFrame(rows, columns=["run", "split"]), path)


def read_splits(path: PathLike) -> dict[str, list[int]]:
    frame = _read_frame(path, ("run", "split"))
    splits: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for run_id, name in zip(frame["run"], frame["split"]):
        splits.setdefault(str(name), []).append(int(run_id))
    return splits


def write_summary(summaries: Sequence[EvalSummary], path: PathLike) -> Path:
    """Split-level table; MAE columns are in thousands of people."""
    rows = []
    for s in summaries:
        if not s.valid_runs:
            rows.append({"split": s.split, "mape_mean": np.nan, "mape_best": np.nan,
                         "mape_worst": np.nan, "mae_mean": np.nan, "mae_best": np.nan,
                         "mae_worst": np.nan})
            continue
        rows.append({"split": s.split,
                     "mape_mean": s.mape_mean, "mape_best": s.mape_best,
                     "mape_worst": s.mape_worst,
                     "mae_mean": s.mae_mean / 1000.0, "mae_best": s.mae_best / 1000.0,
                     "mae_worst": s.mae_worst / 1000.0})
    return _write_frame(pd.DataFrame(rows), path)


def write_run_metrics(summaries: Sequence[EvalSummary], path: PathLike) -> Path:
    rows = [{"split": s.split, "run": r.run_id, "mape": r.mape, "mae": r.mae,
             "diverged": int(r.diverged),
             "onset_observed": -1 if r.onset_observed is None else r.onset_observed,
             "onset_predicted": -1 if r.onset_predicted is None else r.onset_predicted,
             "mape_undefined": int(r.mape_undefined)}
            for s in summaries for r in s.runs]
    return _write_frame(pd.DataFrame(rows, columns=["split", "run", "mape", "mae", "diverged",
                                                    "onset_observed", "onset_predicted",
                                                    "mape_undefined"]), path)


def write_overlay(predicted: np.ndarray, observed: np.ndarray, path: PathLike) -> Path:
    n_times, n_nodes, _ = observed.shape
    year, node, subpop = np.meshgrid(np.arange(n_times), np.arange(n_nodes),
                                     np.arange(N_X), indexing="ij")
    return _write_frame(pd.DataFrame({
        "year": year.ravel(), "node": node.ravel(), "subpop": subpop.ravel(),
        "observed": observed.ravel(), "predicted": predicted.ravel(),
    }), path)


def read_overlay(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(predicted, observed)`` arrays of shape ``(T, n, 3)``."""
    frame = _read_frame(path, ("year", "node", "subpop", "observed", "predicted"))
    return _grid(frame, "predicted", path), _grid(frame, "observed", path)


def write_outmigration(observed: np.ndarray, predicted: np.ndarray, path: PathLike) -> Path:
    return _write_frame(pd.DataFrame({
        "year": np.arange(len(observed)),
        "cumulative_observed": observed, "cumulative_predicted": predicted,
    }), path)


def read_outmigration(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(observed, predicted)`` cumulative outflow series."""
    frame = _read_frame(path, ("year", "cumulative_observed", "cumulative_predicted"))
    frame = frame.sort_values("year")
    return (frame["cumulative_observed"].to_numpy(dtype=float),
            frame["cumulative_predicted"].to_numpy(dtype=float))


def write_exemplars(exemplars: Mapping[str, int], path: PathLike) -> Path:
    return _write_frame(pd.DataFrame(list(exemplars.items()), columns=["role", "run"]), path)


__all__ = [
    "OUTMIGRATED", "run_tag",
    "write_graph", "read_graph", "write_params", "read_params",
    "write_scenario", "read_scenario", "write_agent_trajectory", "read_agent_trajectory",
    "write_manifest", "read_manifest", "write_coarse_trajectory", "read_coarse_trajectory",
    "list_coarse_runs", "write_thresholds", "read_initial_state", "read_exogenous",
    "write_trajectory", "write_history", "read_history", "write_splits", "read_splits",
    "write_summary", "write_run_metrics", "write_overlay", "read_overlay",
    "write_outmigration", "read_outmigration", "write_exemplars",
]

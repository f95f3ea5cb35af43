"""Data models for the graphebm package.

Node ordering is fixed throughout: urban=0, suburban=1, rural=2,
outmigrated=3.  Subpopulation ordering is low=0, middle=1, high=2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError, ContractError, DomainError

CASE_STUDY_LABELS = ("urban", "suburban", "rural", "outmigrated")
SUBPOP_LABELS = ("low", "middle", "high")

N_X = 3
N_Y = 5
HIDDEN = 5

OUTMIGRATED = -1


class Zone(enum.IntEnum):
    """Coarse nodes of the case study, in matrix order."""
    URBAN = 0
    SUBURBAN = 1
    RURAL = 2
    OUTMIGRATED = 3


class IncomeClass(enum.IntEnum):
    """Income subpopulations, in matrix column order."""
    LOW = 0
    MIDDLE = 1
    HIGH = 2


class BetaForm(enum.Enum):
    """How the flux scaling function beta normalises its inputs."""
    NORMALIZED = "normalized"
    LITERAL = "literal"


class FluxScaling(enum.Enum):
    """Multiplier applied to each node's summed flux."""
    UNIT = "unit"
    CAPACITY = "capacity"


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ------------------------------------------------------------------
# Graph
# ------------------------------------------------------------------

@dataclass(frozen=True)
class RegionGraph:
    """Nodes and undirected, unweighted migration pathways between them."""
    node_labels: tuple[str, ...]
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        adj = _frozen_array(self.adjacency, dtype=np.int8)
        object.__setattr__(self, "node_labels", tuple(self.node_labels))
        object.__setattr__(self, "adjacency", adj)
        n = len(self.node_labels)
        if adj.shape != (n, n):
            raise ContractError(
                f"adjacency shape {adj.shape} does not match {n} labels"
            )
        if not np.isin(adj, (0, 1)).all():
            raise ContractError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj) != 0):
            raise ContractError("adjacency must have a zero diagonal")
        if not np.array_equal(adj, adj.T):
            raise ContractError("adjacency must be symmetric")

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2


@dataclass(frozen=True)
class ExogenousSeries:
    """Externally imposed growth, decay and capacity per node over time.

    ``growth`` and ``decay`` have shape ``(T, n_nodes, 3)`` in people per
    year, ``capacity`` has shape ``(T, n_nodes)`` in people.
    """
    growth: np.ndarray = field(repr=False)
    capacity: np.ndarray = field(repr=False)
    decay: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        growth = _frozen_array(self.growth)
        capacity = _frozen_array(self.capacity)
        decay = (np.zeros_like(growth) if self.decay is None
                 else np.array(self.decay, dtype=float))
        decay.setflags(write=False)
        if growth.ndim != 3 or growth.shape[2] != N_X:
            raise ContractError(f"growth must be (T, n, {N_X}), got {growth.shape}")
        if capacity.shape != growth.shape[:2]:
            raise ContractError(
                f"capacity shape {capacity.shape} does not match growth {growth.shape}"
            )
        if decay.shape != growth.shape:
            raise ContractError(f"decay shape {decay.shape} does not match growth")
        if np.any(capacity <= 0):
            raise DomainError("capacity must be strictly positive everywhere")
        if np.any(growth < 0):
            raise DomainError("growth must be nonnegative entrywise")
        object.__setattr__(self, "growth", growth)
        object.__setattr__(self, "capacity", capacity)
        object.__setattr__(self, "decay", decay)

    @property
    def n_times(self) -> int:
        return self.growth.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.growth.shape[1]

    def index_at(self, t: float) -> int:
        """Year index for time *t*; series are piecewise constant per year."""
        return min(int(np.floor(t + 1e-9)), self.n_times - 1)


# ------------------------------------------------------------------
# Agent-based model
# ------------------------------------------------------------------

@dataclass
class BlockGroup:
    """Finest spatial unit of the ABM, holding representative properties."""
    id: int
    distance_d: float
    price: float
    quality: float
    flood_prone: bool
    supply: int
    occupied: int = 0
    quiet_years: int = 0

    @property
    def vacancies(self) -> int:
        return self.supply - self.occupied


@dataclass
class HouseholdAgent:
    """A household holding one representative property, or none."""
    id: int
    income: float
    budget: float
    location: int = OUTMIGRATED
    avoids_flood: bool = False

    @property
    def housed(self) -> bool:
        return self.location != OUTMIGRATED


@dataclass(frozen=True)
class ScenarioParams:
    """Randomized exogenous factors of one ABM run."""
    initial_vacancy_rate: float
    population_growth_rate: float
    inmigrant_income_percentile: float
    building_growth_rate: float
    flood_avoider_fraction: float
    seed: int

    def __post_init__(self):
        for name in ("initial_vacancy_rate", "population_growth_rate",
                     "inmigrant_income_percentile", "building_growth_rate",
                     "flood_avoider_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name}={value} outside [0, 1]")


@dataclass
class AgentSnapshot:
    """All agents ever created, as of the end of one year."""
    year: int
    agent_id: np.ndarray = field(repr=False)
    income: np.ndarray = field(repr=False)
    location: np.ndarray = field(repr=False)

    @property
    def n_agents(self) -> int:
        return len(self.agent_id)

    @property
    def n_housed(self) -> int:
        return int(np.count_nonzero(self.location != OUTMIGRATED))


@dataclass
class BlockSnapshot:
    """Per-block-group market state at the end of one year."""
    year: int
    supply: np.ndarray = field(repr=False)
    price: np.ndarray = field(repr=False)
    occupied: np.ndarray = field(repr=False)


@dataclass
class AgentTrajectory:
    """Year-by-year history of one ABM run, initial state included."""
    run_id: int
    distance_d: np.ndarray = field(repr=False)
    quality: np.ndarray = field(repr=False)
    flood_prone: np.ndarray = field(repr=False)
    agents: list[AgentSnapshot] = field(default_factory=list, repr=False)
    blocks: list[BlockSnapshot] = field(default_factory=list, repr=False)
    inmigration: list[int] = field(default_factory=list)

    @property
    def years(self) -> int:
        return len(self.agents) - 1

    @property
    def n_block_groups(self) -> int:
        return len(self.distance_d)


# ------------------------------------------------------------------
# Coarse representation
# ------------------------------------------------------------------

@dataclass(frozen=True)
class AggregationRules:
    """Distance and income cutoffs projecting agents onto nodes and subpops."""
    zone_thresholds: tuple[float, float] = (0.126, 0.355)
    income_thresholds: tuple[float, float] = (26_500.0, 36_700.0)

    def __post_init__(self):
        d1, d2 = self.zone_thresholds
        i1, i2 = self.income_thresholds
        if not d1 < d2:
            raise ConfigurationError(f"zone thresholds not increasing: {d1}, {d2}")
        if not i1 < i2:
            raise ConfigurationError(f"income thresholds not increasing: {i1}, {i2}")


@dataclass
class CoarseTrajectory:
    """Node-by-subpopulation counts over time plus exogenous inputs.

    ``states`` and ``growth`` have shape ``(years + 1, n_nodes, 3)``;
    ``growth[t]`` is the inflow during the step from year t to t + 1, so
    its last row is zero.  ``capacity`` has shape ``(years + 1, n_nodes)``.
    """
    run_id: int
    states: np.ndarray = field(repr=False)
    growth: np.ndarray = field(repr=False)
    capacity: np.ndarray = field(repr=False)

    @property
    def years(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_nodes(self) -> int:
        return self.states.shape[1]

    @property
    def exogenous(self) -> ExogenousSeries:
        return ExogenousSeries(growth=self.growth, capacity=self.capacity)


# ------------------------------------------------------------------
# Equation-based model
# ------------------------------------------------------------------

@dataclass(frozen=True)
class EBMConfig:
    """Integration and model-form settings of the coarse model."""
    dt: float = 1.0
    n_nodes: int = 4
    n_x: int = N_X
    n_y: int = N_Y
    beta_form: BetaForm = BetaForm.NORMALIZED
    flux_scaling: FluxScaling = FluxScaling.UNIT
    # multiplier on every inter-node flux
    rate_scale: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.rate_scale > 0:
            raise ConfigurationError(f"rate_scale must be positive, got {self.rate_scale}")
        if self.n_x != N_X or self.n_y != N_Y:
            raise ConfigurationError(f"n_x={N_X} and n_y={N_Y} are fixed")
        object.__setattr__(self, "beta_form", BetaForm(self.beta_form))
        object.__setattr__(self, "flux_scaling", FluxScaling(self.flux_scaling))


_LAYER_SHAPES = (
    ("w1", (HIDDEN, N_Y)), ("b1", (HIDDEN,)),
    ("w2", (HIDDEN, HIDDEN)), ("b2", (HIDDEN,)),
    ("w3", (N_X, HIDDEN)), ("b3", (N_X,)),
)

MLP_PARAM_COUNT = sum(int(np.prod(shape)) for _, shape in _LAYER_SHAPES)


@dataclass
class EBMParams:
    """Closure MLP weights and one latent feature per node.

    The flat order is L1 weights (row-major), L1 bias, L2 weights, L2 bias,
    L3 weights, L3 bias, then ``q`` by node index.
    """
    w1: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    w3: np.ndarray = field(repr=False)
    b3: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name, shape in _LAYER_SHAPES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ContractError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)

    @property
    def n_nodes(self) -> int:
        return len(self.q)

    @property
    def size(self) -> int:
        return MLP_PARAM_COUNT + self.n_nodes

    @classmethod
    def zeros(cls, n_nodes: int) -> "EBMParams":
        return cls.from_vector(np.zeros(MLP_PARAM_COUNT + n_nodes), n_nodes)

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_nodes: int) -> "EBMParams":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (MLP_PARAM_COUNT + n_nodes,):
            raise ContractError(
                f"expected {MLP_PARAM_COUNT + n_nodes} values, got {vector.shape}"
            )
        parts = {}
        offset = 0
        for name, shape in _LAYER_SHAPES:
            size = int(np.prod(shape))
            parts[name] = vector[offset:offset + size].reshape(shape).copy()
            offset += size
        return cls(q=vector[offset:].copy(), **parts)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [getattr(self, name).ravel() for name, _ in _LAYER_SHAPES] + [self.q]
        )

    def copy(self) -> "EBMParams":
        return EBMParams.from_vector(self.to_vector(), self.n_nodes)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


# ------------------------------------------------------------------
# Training and evaluation
# ------------------------------------------------------------------

@dataclass
class AdamState:
    """Moment estimates and hyperparameters of the Adam optimizer."""
    m: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, lr: float = 0.01) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr)


@dataclass
class TrainReport:
    """Loss history and the weights of the best validation epoch."""
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_params: Optional[EBMParams] = field(default=None, repr=False)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class RunMetrics:
    """Metrics of one rolled-out run."""
    run_id: int
    mape: float
    mae: float
    diverged: bool = False
    onset_observed: Optional[int] = None
    onset_predicted: Optional[int] = None
    # no observed entry reached the MAPE floor
    mape_undefined: bool = False


@dataclass
class EvalSummary:
    """Per-run and split-level MAPE (%) and MAE (people)."""
    split: str
    runs: list[RunMetrics] = field(default_factory=list)

    @property
    def valid_runs(self) -> list[RunMetrics]:
        return [r for r in self.runs if not (r.diverged or r.mape_undefined)]

    @property
    def diverged_runs(self) -> list[int]:
        return [r.run_id for r in self.runs if r.diverged]

    @property
    def undefined_runs(self) -> list[int]:
        return [r.run_id for r in self.runs if r.mape_undefined]

    def _values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.valid_runs], dtype=float)

    @property
    def mape_mean(self) -> float:
        return float(np.mean(self._values("mape")))

    @property
    def mape_best(self) -> float:
        return float(np.min(self._values("mape")))

    @property
    def mape_worst(self) -> float:
        return float(np.max(self._values("mape")))

    @property
    def mae_mean(self) -> float:
        return float(np.mean(self._values("mae")))

    @property
    def mae_best(self) -> float:
        return float(np.min(self._values("mae")))

    @property
    def mae_worst(self) -> float:
        return float(np.max(self._values("mae")))

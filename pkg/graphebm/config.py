"""Run configuration: ``key = value`` files, flag overrides and seeding.

Resolution order is dataclass defaults, then the config file, then
command-line flags.  Every value is validated before any stage runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .exceptions import ConfigurationError, DataFileError
from .graph import build_region_graph, parse_topology
from .models import CASE_STUDY_LABELS, AggregationRules, BetaForm, EBMConfig, FluxScaling

logger = logging.getLogger(__name__)


def derive_seed(master_seed: int, stage: str, index: int = 0) -> int:
    """Stable 63-bit seed for one stage and run index.

    Hashing the stage name lets any stage be rerun on its own without
    replaying the random streams of the stages before it.
    """
    digest = hashlib.blake2b(f"{master_seed}:{stage}:{index}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little") >> 1


@dataclass(frozen=True)
class RunConfig:
    """Every setting of the generate / coarsen / train / evaluate pipeline."""
    master_seed: int = 2024
    n_runs: int = 12
    years: int = 30
    n_block_groups: int = 60
    zone_thresholds: tuple[float, float] = (0.126, 0.355)
    # None means income tertiles are computed per run
    income_thresholds: Optional[tuple[float, float]] = None
    agents_per_representative: int = 100
    mover_rate: float = 0.05
    dt: float = 1.0
    patience: int = 100
    max_epochs: int = 2000
    learning_rate: float = 0.01
    splits: tuple[float, float, float] = (0.5, 0.15, 0.35)
    output_dir: Path = field(default=Path("output"))
    topology: str = "complete"
    beta_form: str = "normalized"
    flux_scaling: str = "capacity"
    rate_scale: float = 0.1
    checkpoint_every: int = 100
    log_every: int = 50
    mape_floor: float = 1000.0
    grad_instances: int = 20
    grad_eps: float = 1e-5
    grad_tolerance: float = 1e-4
    jobs: int = 0

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> "RunConfig":
        """Raise :class:`ConfigurationError` on the first invalid value."""
        if self.n_runs < 3:
            raise ConfigurationError(f"n_runs must be at least 3, got {self.n_runs}")
        if self.years < 1:
            raise ConfigurationError(f"years must be at least 1, got {self.years}")
        if self.n_block_groups < 1:
            raise ConfigurationError("n_block_groups must be positive")
        if self.agents_per_representative < 1:
            raise ConfigurationError("agents_per_representative must be positive")
        if not 0.0 <= self.mover_rate <= 1.0:
            raise ConfigurationError(f"mover_rate={self.mover_rate} outside [0, 1]")
        if any(not 0.0 <= f <= 1.0 for f in self.splits):
            raise ConfigurationError(f"split fractions {self.splits} outside [0, 1]")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions {self.splits} do not sum to 1")
        if self.patience < 0:
            raise ConfigurationError("patience must be nonnegative")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be positive")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.mape_floor < 0:
            raise ConfigurationError("mape_floor must be nonnegative")
        if not self.grad_eps > 0 or not self.grad_tolerance > 0:
            raise ConfigurationError("grad_eps and grad_tolerance must be positive")
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ConfigurationError("checkpoint_every >= 0 and log_every >= 1 required")
        if self.jobs < 0:
            raise ConfigurationError("jobs must be nonnegative (0 = all cores)")
        # constructors below validate their own invariants
        self.aggregation_rules()
        self.ebm_config()
        self.region_graph()
        return self

    # ------------------------------------------------------------------
    # Derived objects
    # ------------------------------------------------------------------

    def aggregation_rules(self, income_thresholds: Optional[tuple[float, float]] = None
                          ) -> AggregationRules:
        income = income_thresholds or self.income_thresholds or AggregationRules().income_thresholds
        return AggregationRules(zone_thresholds=self.zone_thresholds, income_thresholds=income)

    def ebm_config(self, n_nodes: int = len(CASE_STUDY_LABELS)) -> EBMConfig:
        try:
            return EBMConfig(dt=self.dt, n_nodes=n_nodes,
                             beta_form=BetaForm(self.beta_form),
                             flux_scaling=FluxScaling(self.flux_scaling),
                             rate_scale=self.rate_scale)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    def region_graph(self):
        return build_region_graph(CASE_STUDY_LABELS, parse_topology(self.topology))

    @property
    def abm_dir(self) -> Path:
        return self.output_dir / "abm"

    @property
    def coarse_dir(self) -> Path:
        return self.output_dir / "coarse"

    @property
    def train_dir(self) -> Path:
        return self.output_dir / "train"

    @property
    def eval_dir(self) -> Path:
        return self.output_dir / "eval"


# ------------------------------------------------------------------
# Parsing
# ------------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_floats(text: str, count: int, key: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != count:
        raise ConfigurationError(f"{key} expects {count} comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _coerce(key: str, text: str) -> Any:
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    text = text.strip()
    if key == "income_thresholds":
        if text.lower() in ("auto", "auto-tertile", ""):
            return None
        return _parse_floats(text, 2, key)
    if key == "zone_thresholds":
        return _parse_floats(text, 2, key)
    if key == "splits":
        return _parse_floats(text, 3, key)
    if key == "output_dir":
        return Path(text)
    if key in ("topology", "beta_form", "flux_scaling"):
        return text
    default = _FIELDS[key].default
    return type(default)(text)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            values[key] = _coerce(key, value)
        except (ValueError, ConfigurationError) as exc:
            raise ConfigurationError(f"{source}:{lineno}: {exc}") from exc
    return values


def load_run_config(path: Union[str, Path, None] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Load, merge and validate a :class:`RunConfig`.

    Parameters
    ----------
    path : str or Path, optional
        A ``key = value`` file.  Omitted keys keep their defaults.
    overrides : mapping, optional
        Values that win over the file, typically from command-line flags.
        Strings are parsed like file values; other objects are used as is.
    """
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataFileError("config file not found", path=path)
        values.update(parse_config_text(path.read_text(), source=str(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        key = key.replace("-", "_")
        try:
            values[key] = _coerce(key, value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigurationError(f"--{key}: {exc}") from exc
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    config = RunConfig(**values).validate()
    logger.debug("resolved configuration: %s", config)
    return config


def format_config(config: RunConfig) -> str:
    """Render *config* back into the ``key = value`` file format."""
    lines = []
    for name in _FIELDS:
        value = getattr(config, name)
        if value is None:
            text = "auto"
        elif isinstance(value, tuple):
            text = ", ".join(repr(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"

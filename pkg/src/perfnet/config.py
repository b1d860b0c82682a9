"""Run-configuration schema: JSON files with a versioned, validated layout.

Top-level sections: ``topology``, ``environment``, ``step``, ``run`` and an
optional ``experiment`` block (seeds, output directory, metric knobs). The
dialect is plain JSON with a mandatory ``config_version`` field. Relative
dataset/edge-list/schedule paths are resolved against the config file's
directory at load time.

Schedule files are JSON too: ``{"n": int, "window": B, "graphs": [edges...]}``
where each ``edges`` entry is a list of ``[i, j]`` pairs (self-loops
implicit). Edge-list files are plain text, one ``i j`` pair per line.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

__all__ = [
    "CONFIG_VERSION",
    "ConfigError",
    "TopologyConfig",
    "GaussianConfig",
    "SyntheticConfig",
    "StrategicConfig",
    "EnvironmentConfig",
    "StepConfig",
    "RunSection",
    "ExperimentSection",
    "Config",
    "load_config",
    "save_config",
    "config_hash",
]

CONFIG_VERSION = 1


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        nested = _NESTED.get((cls, f.name))
        if nested is not None and val is not None:
            val = _from_dict(nested, val, f"{where}.{f.name}")
        kwargs[f.name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "ring"
    n: int = 25
    weights: str = "uniform"
    edge_file: str | None = None
    schedule_file: str | None = None

    def __post_init__(self):
        if self.kind not in ("ring", "complete", "star", "edge_list", "schedule"):
            raise ConfigError(f"topology.kind {self.kind!r} unknown")
        if self.weights not in ("uniform", "metropolis"):
            raise ConfigError(f"topology.weights {self.weights!r} unknown")
        if self.kind == "edge_list" and not self.edge_file:
            raise ConfigError("topology.kind=edge_list needs edge_file")
        if self.kind == "schedule" and not self.schedule_file:
            raise ConfigError("topology.kind=schedule needs schedule_file")


@dataclass(frozen=True)
class GaussianConfig:
    zbar: float | list = 10.0
    sigma2: float = 50.0


@dataclass(frozen=True)
class SyntheticConfig:
    """Parametric generator used instead of a dataset file.

    ``style="corpus"`` plants one linear model in ``m`` rows which are then
    partitioned like a loaded file; ``style="per_agent"`` draws each agent's
    shard from an agent-specific distribution whose offset and labeling
    direction deviate by ``heterogeneity``.
    """

    style: str = "corpus"
    m: int = 4601
    per_agent: int = 100
    dim: int = 100
    heterogeneity: float = 1.0
    signal: float = 2.0
    seed: int = 7

    def __post_init__(self):
        if self.style not in ("corpus", "per_agent"):
            raise ConfigError(f"synthetic.style {self.style!r} unknown")


@dataclass(frozen=True)
class StrategicConfig:
    dataset: str | None = None
    beta: float = 1e-4
    per_agent: int = 138
    test_split: int = 1150
    standardize: bool = True
    dim: int | None = None
    data_mode: str = "heterogeneous"
    synthetic: SyntheticConfig | None = None

    def __post_init__(self):
        if self.data_mode not in ("heterogeneous", "homogeneous"):
            raise ConfigError(f"strategic.data_mode {self.data_mode!r} unknown")
        if self.dataset is None and self.synthetic is None:
            raise ConfigError("strategic environment needs a dataset path or a synthetic block")


@dataclass(frozen=True)
class EnvironmentConfig:
    kind: str = "gaussian_mean"
    n: int = 25
    eps_avg: float = 0.9
    eps_grid: dict | None = None     # {"spread": s}
    eps_list: list | None = None
    gaussian: GaussianConfig | None = None
    strategic: StrategicConfig | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian_mean", "strategic_shift"):
            raise ConfigError(f"environment.kind {self.kind!r} unknown")
        if self.eps_grid is not None and self.eps_list is not None:
            raise ConfigError("give eps_grid or eps_list, not both")
        if self.eps_grid is not None and set(self.eps_grid) != {"spread"}:
            raise ConfigError("eps_grid must be an object with a single 'spread' key")
        if self.kind == "gaussian_mean" and self.gaussian is None:
            object.__setattr__(self, "gaussian", GaussianConfig())
        if self.kind == "strategic_shift" and self.strategic is None:
            raise ConfigError("strategic_shift environment needs a strategic block")

    @property
    def spread(self) -> float:
        return float(self.eps_grid["spread"]) if self.eps_grid else 0.0


@dataclass(frozen=True)
class StepConfig:
    kind: str = "inverse_time"
    gamma: float | None = None
    a0: float | None = 50.0
    a1: float | None = 10000.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.gamma is None or self.gamma <= 0:
                raise ConfigError("step.kind=constant needs gamma > 0")
        elif self.kind == "inverse_time":
            if self.a0 is None or self.a1 is None:
                raise ConfigError("step.kind=inverse_time needs a0 and a1")
        else:
            raise ConfigError(f"step.kind {self.kind!r} unknown")


@dataclass(frozen=True)
class RunSection:
    T: int = 200_000
    batch: int = 1
    record_every: int = 200
    seed: int = 1000
    theta0: float | list = 0.0
    divergence_threshold: float = 1e12

    def __post_init__(self):
        if self.T < 0:
            raise ConfigError(f"run.T must be nonnegative, got {self.T}")
        if self.batch < 1 or self.record_every < 1:
            raise ConfigError("run.batch and run.record_every must be >= 1")


@dataclass(frozen=True)
class ExperimentSection:
    name: str = "experiment"
    seeds: list = field(default_factory=lambda: [1000])
    out: str = "out"
    risk_mc: int | None = None
    theory_delta: float = 0.1


@dataclass(frozen=True)
class Config:
    config_version: int = CONFIG_VERSION
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    step: StepConfig = field(default_factory=StepConfig)
    run: RunSection = field(default_factory=RunSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def __post_init__(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(
                f"config_version {self.config_version} unsupported (expected {CONFIG_VERSION})"
            )
        if self.topology.n != self.environment.n:
            raise ConfigError(
                f"topology.n = {self.topology.n} disagrees with environment.n = {self.environment.n}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        return _from_dict(cls, data, "config")

    def replace(self, **section_updates) -> "Config":
        """New config with whole sections or dotted leaf fields replaced.

        Accepts section objects (``step=StepConfig(...)``) or dotted paths
        (``**{"environment.eps_avg": 1.01}``).
        """
        d = self.to_dict()
        for key, val in section_updates.items():
            parts = key.split(".")
            node = d
            for p in parts[:-1]:
                node = node[p]
            if hasattr(val, "__dataclass_fields__"):
                val = asdict(val)
            node[parts[-1]] = val
        return Config.from_dict(d)


_NESTED = {
    (Config, "topology"): TopologyConfig,
    (Config, "environment"): EnvironmentConfig,
    (Config, "step"): StepConfig,
    (Config, "run"): RunSection,
    (Config, "experiment"): ExperimentSection,
    (EnvironmentConfig, "gaussian"): GaussianConfig,
    (EnvironmentConfig, "strategic"): StrategicConfig,
    (StrategicConfig, "synthetic"): SyntheticConfig,
}

_PATH_FIELDS = (
    ("topology", "edge_file"),
    ("topology", "schedule_file"),
    ("environment", "strategic", "dataset"),
)


def load_config(path) -> Config:
    """Parse a JSON config file, resolving relative paths against its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base = path.resolve().parent
    for chain in _PATH_FIELDS:
        node = data
        for key in chain[:-1]:
            node = node.get(key) if isinstance(node, dict) else None
            if node is None:
                break
        if isinstance(node, dict) and node.get(chain[-1]):
            p = Path(node[chain[-1]])
            if not p.is_absolute():
                node[chain[-1]] = str(base / p)
    return Config.from_dict(data)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def config_hash(cfg: Config) -> str:
    """Stable content hash of the fully resolved configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()

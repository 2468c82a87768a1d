"""Experiment configuration: a strict, hashable dataclass tree loadable from
YAML, with per-purpose seed derivation from one master seed."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .agents import BaselineConfig, RVLConfig
from .mdp import DEFAULT_REWARDS, N_STATES, RewardTable
from .reactor import KineticsParams, ReactorState
from .surrogate import TrainingConfig


class ConfigError(Exception):
    pass


def derive_seed(master_seed: int, label: str) -> int:
    """Stable sub-seed for one pipeline stage (platform-independent)."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


@dataclass(frozen=True)
class InitialStateConfig:
    a: float = 0.2
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    v: float = 0.5

    def to_state(self) -> ReactorState:
        return ReactorState(self.a, self.b, self.c, self.d, self.v)


@dataclass(frozen=True)
class ReactorConfig:
    k1: float = 0.5
    k2: float = 0.5
    b_feed: float = 0.2
    t_f: float = 120.0
    dt_control: float = 1.0
    n_substeps: int = 10
    initial: InitialStateConfig = field(default_factory=InitialStateConfig)

    def to_params(self) -> KineticsParams:
        return KineticsParams(self.k1, self.k2, self.b_feed, self.t_f,
                              self.dt_control, self.n_substeps)


@dataclass(frozen=True)
class DatasetConfig:
    n_episodes: int = 20000
    train_n: int = 15000
    seg_min: int = 1
    seg_max: int = 10

    def __post_init__(self) -> None:
        if self.n_episodes < 1 or not 0 <= self.train_n < self.n_episodes:
            raise ConfigError("need 0 <= train_n < n_episodes")
        if not 1 <= self.seg_min <= self.seg_max:
            raise ConfigError("need 1 <= seg_min <= seg_max")


@dataclass(frozen=True)
class SurrogateSection:
    hidden_size: int = 100
    mini_batch: int = 20
    epochs: int = 3000
    learning_rate: float = 0.2
    momentum: float = 0.9
    clip_norm: float = 1.0

    def to_training_config(self, seed: int, epochs: int | None = None) -> TrainingConfig:
        return TrainingConfig(
            hidden_size=self.hidden_size,
            mini_batch=self.mini_batch,
            epochs=epochs if epochs is not None else self.epochs,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            clip_norm=self.clip_norm,
            seed=seed,
        )


@dataclass(frozen=True)
class AgentSection:
    alpha: float = 0.1
    gamma_v: float = 0.7
    gamma_r: float = 0.98
    epsilon: float = 0.7
    top_k: int = 3
    schedule_period: int = 10
    episodes: int = 5000
    m_max: int = 10
    period_length: int = 30

    def to_rvl_config(self, n_sight: int, seed: int) -> RVLConfig:
        return RVLConfig(
            alpha=self.alpha, gamma_v=self.gamma_v, gamma_r=self.gamma_r,
            epsilon=self.epsilon, top_k=self.top_k, n_sight=n_sight,
            schedule_period=self.schedule_period, episodes=self.episodes,
            m_max=self.m_max, period_length=self.period_length, seed=seed,
        )


@dataclass(frozen=True)
class BaselineSection:
    alpha: float = 0.1
    gamma: float = 0.98
    epsilon: float = 0.7
    episodes: int = 5000
    m_max: int = 10

    def to_baseline_config(self, seed: int) -> BaselineConfig:
        return BaselineConfig(alpha=self.alpha, gamma=self.gamma,
                              epsilon=self.epsilon, episodes=self.episodes,
                              m_max=self.m_max, seed=seed)


@dataclass(frozen=True)
class SightsSection:
    short: int = 1
    long: int = 120
    immediates: tuple[int, ...] = (30, 50, 80)


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    reactor: ReactorConfig = field(default_factory=ReactorConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    surrogate_c: SurrogateSection = field(default_factory=SurrogateSection)
    surrogate_d: SurrogateSection = field(
        default_factory=lambda: SurrogateSection(hidden_size=200, epochs=6000)
    )
    agent: AgentSection = field(default_factory=AgentSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    sights: SightsSection = field(default_factory=SightsSection)
    rewards: tuple[float, ...] = DEFAULT_REWARDS

    def __post_init__(self) -> None:
        if len(self.rewards) != N_STATES:
            raise ConfigError(f"rewards must list {N_STATES} values")
        self.reward_table()  # validates monotonicity
        self.reactor.to_params()

    def reward_table(self) -> RewardTable:
        try:
            return RewardTable(tuple(float(r) for r in self.rewards))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def seed_for(self, label: str) -> int:
        return derive_seed(self.master_seed, label)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _coerce(dc_type, data, path: str):
    """Build a (possibly nested) dataclass from a mapping, rejecting unknown
    keys and recursing into dataclass-typed fields."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(dc_type)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        target = _FIELD_TYPES.get((dc_type, name))
        if target is not None:
            kwargs[name] = _coerce(target, value, f"{path}.{name}")
        elif name in _TUPLE_FIELDS.get(dc_type, ()):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}.{name}: expected a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_FIELD_TYPES = {
    (ReactorConfig, "initial"): InitialStateConfig,
    (ExperimentConfig, "reactor"): ReactorConfig,
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "surrogate_c"): SurrogateSection,
    (ExperimentConfig, "surrogate_d"): SurrogateSection,
    (ExperimentConfig, "agent"): AgentSection,
    (ExperimentConfig, "baseline"): BaselineSection,
    (ExperimentConfig, "sights"): SightsSection,
}

_TUPLE_FIELDS = {
    ExperimentConfig: ("rewards",),
    SightsSection: ("immediates",),
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _coerce(ExperimentConfig, data, "config")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad YAML in {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def apply_overrides(cfg: ExperimentConfig, *, master_seed: int | None = None,
                    n_episodes: int | None = None,
                    epochs: int | None = None) -> ExperimentConfig:
    """CLI flag overrides on top of a loaded config."""
    data = cfg.to_dict()
    if master_seed is not None:
        data["master_seed"] = master_seed
    if n_episodes is not None:
        data["dataset"]["n_episodes"] = n_episodes
        if data["dataset"]["train_n"] >= n_episodes:
            data["dataset"]["train_n"] = max(0, (n_episodes * 3) // 4)
    if epochs is not None:
        data["surrogate_c"]["epochs"] = epochs
        data["surrogate_d"]["epochs"] = epochs
    return config_from_dict(data)

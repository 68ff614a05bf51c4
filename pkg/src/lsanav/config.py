"""Run configuration: JSON documents with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from . import io
from .agent import ModelConfig
from .env import (
    FixtureFeatures, InstructionFixture, NavEnv, NavGraph, SyntheticFeatures, SyntheticInstructions,
    generate_episodes, generate_synthetic_env, load_episodes,
)
from .errors import ConfigError
from .trainer import TrainConfig


@dataclass
class EnvConfig:
    seed: int = 7
    n_nodes: int = 15
    connect_radius: float = 3.0
    box_size: float = 10.0
    height: float = 1.0
    n_episodes: int = 100
    step_limit: int = 20
    success_distance: float = 3.0
    feature_signal: float = 1.0
    feature_lookahead: float = 1.0
    feature_noise: float = 0.5
    n_tokens: int = 4
    instruction_noise: float = 0.3
    graph_file: str | None = None
    episodes_file: str | None = None
    features_file: str | None = None
    instructions_file: str | None = None


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"

    def to_doc(self) -> dict:
        return {
            "env": dataclasses.asdict(self.env),
            "model": self.model.to_doc(),
            "train": dataclasses.asdict(self.train),
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        _reject_unknown("config", doc, {"env", "model", "train", "out_dir"})
        try:
            return cls(
                env=_section(EnvConfig, "env", doc.get("env", {})),
                model=_section(ModelConfig, "model", doc.get("model", {})),
                train=_section(TrainConfig, "train", doc.get("train", {})),
                out_dir=str(doc.get("out_dir", "runs")),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_doc(io.read_json(path))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: {exc}") from None

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            env=dataclasses.replace(self.env, seed=seed),
            model=dataclasses.replace(self.model, init_seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def _reject_unknown(where: str, doc: dict, allowed) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _section(kind, name: str, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    _reject_unknown(name, doc, {f.name for f in dataclasses.fields(kind)})
    return kind(**doc)


def _resolve(base: Path | None, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() or base is None else base / path


def build_env(cfg: RunConfig, base: Path | None = None):
    """Graph, :class:`NavEnv` and episodes described by ``cfg.env``.

    Relative file paths resolve against ``base`` (the config's directory).
    """
    e, m = cfg.env, cfg.model
    if e.graph_file:
        graph = NavGraph.load(_resolve(base, e.graph_file))
    else:
        graph = generate_synthetic_env(e.seed, e.n_nodes, e.connect_radius, e.box_size, e.height)
    if e.features_file:
        features = FixtureFeatures.load(_resolve(base, e.features_file))
        if features.d_image != m.d_image:
            raise ConfigError(f"feature fixture width {features.d_image} != model d_image {m.d_image}")
    else:
        features = SyntheticFeatures(graph, m.d_image, e.seed, e.feature_signal, e.feature_lookahead, e.feature_noise)
    if e.instructions_file:
        instructions = InstructionFixture.load(_resolve(base, e.instructions_file))
    else:
        instructions = SyntheticInstructions(m.d_hidden, e.n_tokens, e.seed, e.instruction_noise)
    if e.episodes_file:
        episodes = load_episodes(_resolve(base, e.episodes_file), graph)
    else:
        episodes = generate_episodes(graph, e.n_episodes, e.seed)
    env = NavEnv(graph, features, instructions, m.d_angle, e.step_limit, e.success_distance)
    return env, episodes

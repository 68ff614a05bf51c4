"""The navigation agent: optional slot-attention enhancement + decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io
from .decoder import Decoder, DecoderConfig, select_action
from .env import Episode, NavEnv, Observation, Trajectory
from .errors import ConfigError
from .layers import Module
from .masks import MaskShape
from .slot_attention import AttentionTrace, SlotAttention, SlotAttnConfig
from .tensor import RngStream, Tensor

CHECKPOINT_FORMAT = "lsanav-checkpoint/1"


@dataclass
class ModelConfig:
    d_image: int = 16
    d_angle: int = 8
    d_hidden: int = 16
    d_att: int | None = None
    mlp_hidden: int | None = None
    n_layers: int = 1
    dropout: float = 0.7
    iterations: int = 3
    mask: str = "3x3"
    include_stop: bool = True
    literal_alg1: bool = False
    use_slot_attention: bool = True
    init_seed: int = 0
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.mask_shape = MaskShape.parse(self.mask)
        self.mask = self.mask_shape.label
        if self.d_angle % 4:
            raise ConfigError(f"d_angle must be a multiple of 4, got {self.d_angle}")
        # surface block-level errors at parse time
        self.slot_config()
        self.decoder_config()

    def to_doc(self) -> dict:
        return asdict(self)

    def slot_config(self) -> SlotAttnConfig:
        return SlotAttnConfig(self.d_image, self.d_angle, self.d_att, self.mlp_hidden,
                              self.dropout, self.iterations, self.literal_alg1, self.ln_eps)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.d_image + self.d_angle, self.d_hidden, self.n_layers, self.ln_eps)


class Agent(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        root = RngStream(cfg.init_seed).fork("init")
        # both blocks are always built so a baseline and a T=0 model start identical
        self.children["slot"] = SlotAttention(cfg.slot_config(), root.fork("slot"))
        self.children["decoder"] = Decoder(cfg.decoder_config(), root.fork("decoder"))

    @property
    def uses_slots(self) -> bool:
        return self.cfg.use_slot_attention and self.cfg.iterations > 0

    def enhance(self, obs: Observation, rng: RngStream | None, training: bool):
        """Candidate features after slot attention; ``(feats, trace, cache)``."""
        feats = obs.features
        if not self.uses_slots:
            return feats, AttentionTrace(), None
        mask = obs.mask(self.cfg.mask_shape, self.cfg.include_stop)
        slots = list(mask.slots)
        refined, trace, cache = self.slot.forward(feats[slots], obs.grid_matrix, mask.allowed, rng, training)
        out = feats.copy()
        out[slots] = refined
        trace.slots = tuple(slots)
        return out, trace, (slots, cache)

    def step(self, obs: Observation, state: Tensor, tokens: Tensor,
             rng: RngStream | None = None, training: bool = False):
        """Returns ``(scores, new_state, trace, cache)``."""
        feats, trace, c_slot = self.enhance(obs, rng, training)
        scores, new_state, c_dec = self.decoder.forward(state, feats, tokens)
        return scores, new_state, trace, (c_slot, c_dec)

    def step_backward(self, d_scores: Tensor, d_new_state: Tensor | None, cache) -> Tensor:
        """Accumulate grads for one step; returns the gradient of the input state."""
        c_slot, c_dec = cache
        d_state, d_feats = self.decoder.backward(d_scores, d_new_state, c_dec)
        if c_slot is not None:
            slots, c = c_slot
            self.slot.backward(d_feats[slots], c)
        return d_state

    # -- checkpoints ----------------------------------------------------------

    def save(self, path: str | Path, step: int = 0) -> None:
        header = {"format": CHECKPOINT_FORMAT, "config": self.cfg.to_doc(), "step": int(step)}
        io.write_bundle(path, header, [(n, p.value) for n, p in self.named_params()])

    @classmethod
    def load(cls, path: str | Path, expect: ModelConfig | None = None) -> tuple["Agent", int]:
        header, arrays = io.read_bundle(path, CHECKPOINT_FORMAT)
        cfg = ModelConfig(**header["config"])
        if expect is not None:
            # the init seed is irrelevant once weights are loaded
            diff = sorted(k for k, v in expect.to_doc().items()
                          if k != "init_seed" and header["config"].get(k) != v)
            if diff:
                raise ConfigError(f"checkpoint config differs from the requested config in {diff}")
        agent = cls(cfg)
        params = agent.param_dict()
        if set(params) != set(arrays):
            raise ConfigError("checkpoint parameters do not match the model layout")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ConfigError(f"checkpoint parameter {name} has shape {arrays[name].shape}")
            p.value[...] = arrays[name]
        return agent, int(header.get("step", 0))


def greedy_rollout(agent: Agent, env: NavEnv, episode: Episode, keep_traces: bool = True) -> Trajectory:
    """Argmax rollout in evaluation mode (no dropout, no parameter change)."""
    instr = env.instruction(episode)
    traj = env.reset(episode)
    state = instr.cls
    while not traj.done:
        obs = env.observe(traj.node, traj.heading)
        scores, state, trace, _ = agent.step(obs, state, instr.tokens, None, training=False)
        traj.scores.append([float(s) for s in scores])
        if keep_traces:
            traj.traces.append(trace)
        env.step(traj, select_action(scores))
    return traj


def teacher_forced_accuracy(agent: Agent, env: NavEnv, episodes) -> float:
    """Fraction of teacher-path steps where the argmax matches the teacher."""
    hits = total = 0
    for ep in episodes:
        instr = env.instruction(ep)
        traj = env.reset(ep)
        state = instr.cls
        while not traj.done:
            obs = env.observe(traj.node, traj.heading)
            target = env.teacher_action(ep, traj.node)
            scores, state, _, _ = agent.step(obs, state, instr.tokens, None, training=False)
            hits += int(select_action(scores) == target)
            total += 1
            env.step(traj, target)
    return hits / total if total else 0.0


def parameter_snapshot(agent: Agent) -> dict[str, np.ndarray]:
    return {n: p.value.copy() for n, p in agent.named_params()}

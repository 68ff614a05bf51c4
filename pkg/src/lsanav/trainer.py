"""Imitation training with teacher forcing and plain gradient descent."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .agent import Agent, greedy_rollout
from .env import Episode, NavEnv, Trajectory
from .errors import ConfigError, DivergenceError
from .metrics import MetricsReport, evaluate_trajectories
from .tensor import RngStream, Tensor, softmax


@dataclass
class TrainConfig:
    lr: float = 0.1
    iterations: int = 2000
    batch_size: int = 8
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.lr <= 0 or self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("lr and batch_size must be positive, iterations non-negative")


def cross_entropy(scores: Tensor, target: int) -> tuple[float, Tensor]:
    """``-log softmax(scores)[target]`` and its gradient w.r.t. ``scores``."""
    p = softmax(np.asarray(scores, dtype=np.float64))
    loss = -math.log(max(p[target], 1e-300))
    grad = p.copy()
    grad[target] -= 1.0
    return loss, grad


def episode_loss(agent: Agent, env: NavEnv, episode: Episode, rng: RngStream | None,
                 training: bool, weight: float = 1.0, backward: bool = True) -> tuple[float, int, int]:
    """Teacher-forced loss (mean over steps, times ``weight``).

    With ``backward`` the gradient is accumulated through time into the
    agent's params. Returns ``(loss, correct, steps)``.
    """
    instr = env.instruction(episode)
    traj = env.reset(episode)
    state = instr.cls
    records = []
    while not traj.done:
        obs = env.observe(traj.node, traj.heading)
        target = env.teacher_action(episode, traj.node)
        scores, state, _, cache = agent.step(obs, state, instr.tokens, rng, training)
        records.append((scores, target, cache))
        env.step(traj, target)
    n = len(records)
    total, correct = 0.0, 0
    grads = []
    for scores, target, _ in records:
        loss, g = cross_entropy(scores, target)
        total += loss
        correct += int(np.argmax(scores) == target)
        grads.append(g * (weight / n))
    if backward:
        d_state = None
        for (_, _, cache), g in zip(reversed(records), reversed(grads)):
            d_state = agent.step_backward(g, d_state, cache)
    return weight * total / n, correct, n


def train_step(agent: Agent, env: NavEnv, batch: Sequence[Episode], lr: float,
               rng: RngStream | None, training: bool = True) -> float:
    """One gradient-descent step on the mean teacher-forced loss of ``batch``."""
    agent.zero_grad()
    w = 1.0 / len(batch)
    loss = 0.0
    for ep in batch:
        loss += episode_loss(agent, env, ep, rng, training, weight=w)[0]
    if not math.isfinite(loss):
        worst = max((float(np.max(np.abs(p.value))), n) for n, p in agent.named_params())
        raise DivergenceError(f"non-finite loss {loss}; largest parameter magnitude {worst[0]:.3g} in {worst[1]}")
    for _, p in agent.named_params():
        p.value -= lr * p.grad
    return loss


def batches(episodes: Sequence[Episode], batch_size: int, seed: int):
    """Endless stream of batches from seeded per-epoch permutations."""
    rng = RngStream(seed).fork("batches")
    n = len(episodes)
    while True:
        order = np.argsort(rng.uniform(n), kind="stable")
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield [episodes[j] for j in order[i:i + batch_size]]


def train(agent: Agent, env: NavEnv, episodes: Sequence[Episode], cfg: TrainConfig,
          callback: Callable[[int, float], None] | None = None) -> list[tuple[int, float]]:
    """Run ``cfg.iterations`` steps; returns the ``(step, loss)`` history."""
    dropout_rng = RngStream(cfg.seed).fork("dropout")
    history = []
    stream = batches(episodes, cfg.batch_size, cfg.seed)
    for it in range(1, cfg.iterations + 1):
        loss = train_step(agent, env, next(stream), cfg.lr, dropout_rng)
        history.append((it, loss))
        if callback is not None and (it % cfg.log_every == 0 or it == cfg.iterations):
            callback(it, loss)
    return history


def evaluate(agent: Agent, env: NavEnv, episodes: Sequence[Episode]) -> tuple[MetricsReport, list[Trajectory]]:
    trajs = [greedy_rollout(agent, env, ep) for ep in episodes]
    return evaluate_trajectories(env.graph, trajs, env.success_distance), trajs

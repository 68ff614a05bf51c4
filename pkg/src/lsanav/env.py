"""Deterministic synthetic navigation environment on a connectivity graph.

Headings are measured clockwise from the +y axis (``atan2(dx, dy)``) and
elevations from the horizontal plane. Candidate order at every viewpoint is
fixed: index 0 is stop, then neighbours in ascending id order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import io
from .decoder import InstructionEmbedding
from .errors import ConfigError, EpisodeError, GenerationError
from .geometry import (
    N_COLS, N_VIEWS, STEP, CandidateView, PanoramaGrid, ViewFeature, candidate_matrix,
    encode_angle, stop_view_feature, view_index_for_direction, wrap_angle,
)
from .masks import MaskMatrix, MaskShape, build_mask
from .tensor import RngStream, Tensor

GRAPH_FORMAT = "lsanav-graph/1"
EPISODE_FORMAT = "lsanav-episodes/1"
FEATURE_FORMAT = "lsanav-features/1"
INSTRUCTION_FORMAT = "lsanav-instructions/1"


@dataclass(frozen=True, eq=False)
class NavGraph:
    positions: dict[int, np.ndarray]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        pos = {int(k): np.asarray(v, dtype=np.float64).reshape(3) for k, v in self.positions.items()}
        object.__setattr__(self, "positions", pos)
        norm = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ConfigError(f"self-loop at node {a}")
            if a not in pos or b not in pos:
                raise ConfigError(f"edge ({a}, {b}) references an unknown node")
            if np.linalg.norm(pos[a] - pos[b]) <= 0:
                raise ConfigError(f"edge ({a}, {b}) has zero length")
            norm.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(norm))

    @property
    def nodes(self) -> list[int]:
        return sorted(self.positions)

    @cached_property
    def _adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n: [] for n in self.positions}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {n: sorted(v) for n, v in adj.items()}

    def neighbors(self, node: int) -> list[int]:
        if node not in self.positions:
            raise KeyError(f"unknown node {node}")
        return self._adjacency[node]

    def edge_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.positions[a] - self.positions[b]))

    def bearing(self, a: int, b: int) -> float:
        d = self.positions[b] - self.positions[a]
        return wrap_angle(math.atan2(d[0], d[1]))

    def elevation(self, a: int, b: int) -> float:
        d = self.positions[b] - self.positions[a]
        return math.atan2(d[2], math.hypot(d[0], d[1]))

    def is_connected(self) -> bool:
        if not self.positions:
            return True
        start = self.nodes[0]
        seen = {start}
        stack = [start]
        while stack:
            for m in self._adjacency[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == len(self.positions)

    @cached_property
    def _distance_table(self) -> dict[int, dict[int, float]]:
        return {n: _dijkstra(self, n)[0] for n in self.positions}

    def distance(self, a: int, b: int) -> float:
        """Geodesic (shortest-path) distance in metres."""
        d = self._distance_table[a].get(b)
        if d is None:
            raise ConfigError(f"nodes {a} and {b} are disconnected")
        return d

    def to_doc(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "nodes": [
                {"id": n, "x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
                for n, p in sorted(self.positions.items())
            ],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "NavGraph":
        if doc.get("format") != GRAPH_FORMAT:
            raise ConfigError(f"expected graph format {GRAPH_FORMAT!r}, found {doc.get('format')!r}")
        pos = {int(n["id"]): np.array([n["x"], n["y"], n["z"]], dtype=np.float64) for n in doc["nodes"]}
        return cls(pos, frozenset((int(a), int(b)) for a, b in doc["edges"]))

    def save(self, path: str | Path) -> None:
        io.write_json(path, self.to_doc())

    @classmethod
    def load(cls, path: str | Path) -> "NavGraph":
        return cls.from_doc(io.read_json(path))


def _dijkstra(graph: NavGraph, source: int):
    dist = {source: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, n = heapq.heappop(heap)
        if n in done:
            continue
        done.add(n)
        for m in graph.neighbors(n):
            nd = d + graph.edge_length(n, m)
            if nd < dist.get(m, math.inf):
                dist[m] = nd
                prev[m] = n
                heapq.heappush(heap, (nd, m))
    return dist, prev


def shortest_path(graph: NavGraph, a: int, b: int) -> tuple[float, list[int]]:
    if a not in graph.positions or b not in graph.positions:
        raise KeyError(f"unknown node in ({a}, {b})")
    if a == b:
        return 0.0, [a]
    dist, prev = _dijkstra(graph, a)
    if b not in dist:
        raise ConfigError(f"nodes {a} and {b} are disconnected")
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return dist[b], path[::-1]


def generate_synthetic_env(seed: int, n_nodes: int = 15, connect_radius: float = 3.0,
                           box_size: float = 10.0, height: float = 1.0,
                           max_retries: int = 50) -> NavGraph:
    """Random geometric graph, widening the radius until it is connected."""
    if n_nodes < 2:
        raise ConfigError(f"need at least 2 nodes, got {n_nodes}")
    if connect_radius <= 0 or box_size <= 0:
        raise ConfigError("connect_radius and box_size must be positive")
    rng = RngStream(seed)
    xy = rng.uniform((n_nodes, 2)) * box_size
    z = rng.uniform((n_nodes, 1)) * height
    pts = np.concatenate([xy, z], axis=1)
    positions = {i: pts[i] for i in range(n_nodes)}
    dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    radius = connect_radius
    for _ in range(max_retries):
        edges = frozenset(
            (i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if dists[i, j] <= radius
        )
        graph = NavGraph(positions, edges)
        if graph.is_connected():
            return graph
        radius *= 1.25
    raise GenerationError(f"graph with {n_nodes} nodes still disconnected at radius {radius:.3f}")


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class Episode:
    start: int
    goal: int
    path: tuple[int, ...]
    seed: int
    instruction: str = "synthetic"

    def to_doc(self) -> dict:
        return {"start": self.start, "goal": self.goal, "path": list(self.path),
                "seed": self.seed, "instruction": self.instruction}


def make_episode(graph: NavGraph, start: int, goal: int, seed: int, instruction: str = "synthetic") -> Episode:
    _, path = shortest_path(graph, start, goal)
    return Episode(start, goal, tuple(path), seed, instruction)


def generate_episodes(graph: NavGraph, n: int, seed: int) -> list[Episode]:
    rng = RngStream(seed).fork("episodes")
    nodes = graph.nodes
    out = []
    for i in range(n):
        a, b = rng.integers(0, len(nodes), size=2)
        while b == a:
            b = rng.integers(0, len(nodes))
        out.append(make_episode(graph, nodes[int(a)], nodes[int(b)], seed=int(seed) * 100003 + i))
    return out


def save_episodes(path: str | Path, episodes: Sequence[Episode]) -> None:
    io.write_json(path, {"format": EPISODE_FORMAT, "episodes": [e.to_doc() for e in episodes]})


def load_episodes(path: str | Path, graph: NavGraph) -> list[Episode]:
    doc = io.read_json(path)
    if doc.get("format") != EPISODE_FORMAT:
        raise ConfigError(f"expected episode format {EPISODE_FORMAT!r}, found {doc.get('format')!r}")
    out = []
    for e in doc["episodes"]:
        ep = make_episode(graph, int(e["start"]), int(e["goal"]), int(e["seed"]), e.get("instruction", "synthetic"))
        if "path" in e and tuple(e["path"]) != ep.path:
            # ties can resolve differently only if the graph changed
            length = sum(graph.edge_length(a, b) for a, b in zip(e["path"], e["path"][1:]))
            if not math.isclose(length, shortest_path(graph, ep.start, ep.goal)[0], rel_tol=1e-12):
                raise ConfigError(f"stored reference path {e['path']} is not a shortest path")
        out.append(ep)
    return out


# ---------------------------------------------------------------------------
# features


class FeatureSource(Protocol):
    d_image: int

    def panorama(self, node: int, heading: float) -> Tensor:
        """(36, D_I) image features in agent-relative grid order."""


def _heading_shift(heading: float) -> int:
    return math.floor(wrap_angle(heading) / STEP + 0.5) % N_COLS


def _rotate(absolute: Tensor, shift: int) -> Tensor:
    """Relative column c shows absolute column (c + shift) mod 12."""
    grid = absolute.reshape(3, N_COLS, -1)
    return np.roll(grid, -shift, axis=1).reshape(N_VIEWS, -1)


class SyntheticFeatures:
    """Seeded view features with a learnable structure.

    Every view at node ``n`` carries ``signal * code(n)`` plus per-view noise
    keyed by ``(n, row, absolute col)``. A view that faces a neighbour ``m``
    additionally carries ``lookahead * code(m)``, so what a candidate view
    shows depends on where it leads.
    """

    def __init__(self, graph: NavGraph, d_image: int, seed: int, signal: float = 1.0,
                 lookahead: float = 1.0, noise: float = 0.5):
        self.graph = graph
        self.d_image = d_image
        self.seed = seed
        self.signal, self.lookahead, self.noise = signal, lookahead, noise
        root = RngStream(seed).fork("features")
        self.codes = {n: root.fork(("code", n)).normal(d_image) for n in graph.nodes}
        self._noise = {n: root.fork(("views", n)).normal((N_VIEWS, d_image)) for n in graph.nodes}
        self._cache: dict[tuple[int, float], Tensor] = {}

    def panorama(self, node: int, heading: float) -> Tensor:
        key = (node, heading)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        rel = self.noise * _rotate(self._noise[node], _heading_shift(heading))
        rel = rel + self.signal * self.codes[node]
        for m in self.graph.neighbors(node):
            idx = view_index_for_direction(self.graph.bearing(node, m) - heading, self.graph.elevation(node, m))
            rel[idx.flat] += self.lookahead * self.codes[m]
        rel.setflags(write=False)
        self._cache[key] = rel
        return rel

    def export_fixture(self, path: str | Path) -> None:
        """Write the heading-0 panoramas of every node as a fixture file."""
        write_feature_fixture(path, {n: self.panorama(n, 0.0) for n in self.graph.nodes})


class FixtureFeatures:
    """Absolute (heading 0) panoramas loaded from a feature fixture file.

    Other headings rotate the stored grid by whole 30-degree columns, so a
    fixture exported from :class:`SyntheticFeatures` reproduces it exactly
    only at headings that are multiples of 30 degrees.
    """

    def __init__(self, panoramas: dict[int, Tensor]):
        shapes = {p.shape for p in panoramas.values()}
        if len(shapes) != 1 or next(iter(shapes))[0] != N_VIEWS:
            raise ConfigError(f"fixture panoramas must share a ({N_VIEWS}, D_I) shape, got {shapes}")
        self.panoramas = panoramas
        self.d_image = next(iter(shapes))[1]

    def panorama(self, node: int, heading: float) -> Tensor:
        if node not in self.panoramas:
            raise KeyError(f"fixture has no features for node {node}")
        return _rotate(self.panoramas[node], _heading_shift(heading))

    @classmethod
    def load(cls, path: str | Path) -> "FixtureFeatures":
        header, arrays = io.read_bundle(path, FEATURE_FORMAT)
        if header.get("n_views") != N_VIEWS:
            raise ConfigError(f"{path}: expected n_views={N_VIEWS}")
        pans = {int(n): arrays[f"node_{n}"] for n in header["nodes"]}
        for n, p in pans.items():
            if p.shape != (N_VIEWS, header["d_image"]):
                raise ConfigError(f"{path}: node {n} has shape {p.shape}")
        return cls(pans)


def write_feature_fixture(path: str | Path, panoramas: dict[int, Tensor]) -> None:
    nodes = sorted(panoramas)
    d_image = int(panoramas[nodes[0]].shape[1])
    header = {"format": FEATURE_FORMAT, "d_image": d_image, "n_views": N_VIEWS,
              "n_records": N_VIEWS * len(nodes), "nodes": nodes}
    io.write_bundle(path, header, [(f"node_{n}", panoramas[n]) for n in nodes])


# ---------------------------------------------------------------------------
# instructions


class SyntheticInstructions:
    """Seeded instruction embeddings that identify the episode's goal.

    Tokens are ``goal_code + noise * N(0, I)`` with the noise drawn from the
    episode seed; the CLS vector is shared by all episodes.
    """

    def __init__(self, d_hidden: int, n_tokens: int = 4, seed: int = 0, noise: float = 0.3):
        if n_tokens < 1:
            raise ConfigError("instructions need at least one token")
        self.d_hidden, self.n_tokens, self.noise = d_hidden, n_tokens, noise
        self.root = RngStream(seed).fork("instructions")
        self.cls = self.root.fork("cls").normal(d_hidden)
        self._cache: dict[tuple[int, int], InstructionEmbedding] = {}

    def goal_code(self, goal: int) -> Tensor:
        return self.root.fork(("goal", goal)).normal(self.d_hidden)

    def embed(self, episode: Episode) -> InstructionEmbedding:
        key = (episode.goal, episode.seed)
        if key not in self._cache:
            tokens = self.goal_code(episode.goal) + self.noise * self.root.fork(("tokens", episode.seed)).normal(
                (self.n_tokens, self.d_hidden))
            self._cache[key] = InstructionEmbedding(self.cls.copy(), tokens)
        return self._cache[key]


class InstructionFixture:
    """Instruction embeddings loaded from a bundle, looked up by episode id."""

    def __init__(self, entries: dict):
        self.entries = entries

    def embed(self, episode: Episode):
        if episode.instruction not in self.entries:
            raise KeyError(f"no instruction embedding named {episode.instruction!r}")
        return self.entries[episode.instruction]

    @classmethod
    def load(cls, path: str | Path) -> "InstructionFixture":
        header, arrays = io.read_bundle(path, INSTRUCTION_FORMAT)
        return cls({name: InstructionEmbedding(arrays[f"{name}.cls"], arrays[f"{name}.tokens"])
                    for name in header["names"]})

    @staticmethod
    def write(path: str | Path, entries: dict) -> None:
        names = sorted(entries)
        arrays = []
        for name in names:
            arrays += [(f"{name}.cls", entries[name].cls), (f"{name}.tokens", entries[name].tokens)]
        io.write_bundle(path, {"format": INSTRUCTION_FORMAT, "names": names}, arrays)


# ---------------------------------------------------------------------------
# observation and stepping


def observe(graph: NavGraph, node: int, heading: float, features: FeatureSource,
            d_angle: int) -> tuple[PanoramaGrid, list[CandidateView]]:
    """Panorama at ``node`` plus its candidates (stop first)."""
    if node not in graph.positions:
        raise KeyError(f"unknown node {node}")
    grid = PanoramaGrid.from_images(features.panorama(node, heading), d_angle)
    cands = [CandidateView(None, None, 0.0, 0.0, stop_view_feature(grid))]
    for m in graph.neighbors(node):
        psi = wrap_angle(graph.bearing(node, m) - heading)
        omega = graph.elevation(node, m)
        idx = view_index_for_direction(psi, omega)
        feat = ViewFeature(grid[idx].image, encode_angle(psi, omega, d_angle))
        cands.append(CandidateView(idx, m, psi, omega, feat))
    return grid, cands


@dataclass
class Trajectory:
    episode: Episode
    nodes: list[int]
    headings: list[float]
    step_limit: int = 20
    success_distance: float = 3.0
    actions: list[int] = field(default_factory=list)
    scores: list[list[float]] = field(default_factory=list)
    traces: list = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    length: float = 0.0
    done: bool = False
    reason: str = ""

    @property
    def node(self) -> int:
        return self.nodes[-1]

    @property
    def heading(self) -> float:
        return self.headings[-1]

    def to_doc(self) -> dict:
        return {
            "episode": self.episode.to_doc(),
            "nodes": list(self.nodes),
            "headings": [float(h) for h in self.headings],
            "actions": list(self.actions),
            "scores": [[float(s) for s in row] for row in self.scores],
            "rewards": [float(r) for r in self.rewards],
            "length": float(self.length),
            "done": self.done,
            "reason": self.reason,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Trajectory":
        e = doc["episode"]
        ep = Episode(int(e["start"]), int(e["goal"]), tuple(e["path"]), int(e["seed"]), e.get("instruction", "synthetic"))
        return cls(ep, list(doc["nodes"]), list(doc["headings"]), actions=list(doc["actions"]),
                   scores=[list(s) for s in doc["scores"]], rewards=list(doc["rewards"]),
                   length=float(doc["length"]), done=bool(doc["done"]), reason=doc["reason"])


def initial_heading(episode: Episode) -> float:
    return float(RngStream(episode.seed).fork("heading").uniform(()) * 2 * math.pi)


def start_trajectory(episode: Episode, step_limit: int = 20, success_distance: float = 3.0) -> Trajectory:
    return Trajectory(episode, [episode.start], [initial_heading(episode)], step_limit, success_distance)


def step(graph: NavGraph, traj: Trajectory, action: int) -> Trajectory:
    """Apply ``action`` in place and return the trajectory.

    Reward is -1 per move, +10 for stopping within the success distance and
    0 for stopping elsewhere. Nothing in the package learns from it.
    """
    if traj.done:
        raise EpisodeError("step after the episode terminated")
    nbrs = graph.neighbors(traj.node)
    if not 0 <= action <= len(nbrs):
        raise EpisodeError(f"action {action} out of range for {len(nbrs) + 1} candidates")
    traj.actions.append(int(action))
    if action == 0:
        ok = graph.distance(traj.node, traj.episode.goal) <= traj.success_distance
        traj.rewards.append(10.0 if ok else 0.0)
        traj.done, traj.reason = True, "stop"
        return traj
    nxt = nbrs[action - 1]
    traj.length += graph.edge_length(traj.node, nxt)
    traj.headings.append(graph.bearing(traj.node, nxt))
    traj.nodes.append(nxt)
    traj.rewards.append(-1.0)
    if len(traj.nodes) - 1 >= traj.step_limit:
        traj.done, traj.reason = True, "step_limit"
    return traj


def teacher_action(graph: NavGraph, episode: Episode, node: int) -> int:
    """Candidate index of the next hop on a shortest path to the goal (0 = stop)."""
    if node == episode.goal:
        return 0
    _, path = shortest_path(graph, node, episode.goal)
    return graph.neighbors(node).index(path[1]) + 1


class Observation:
    """One viewpoint's panorama and candidates with cached matrix forms."""

    def __init__(self, grid: PanoramaGrid, candidates: list[CandidateView]):
        self.grid = grid
        self.candidates = candidates
        self._masks: dict = {}

    def __iter__(self):
        return iter((self.grid, self.candidates))

    @cached_property
    def grid_matrix(self) -> Tensor:
        return self.grid.matrix()

    @cached_property
    def features(self) -> Tensor:
        return candidate_matrix(self.candidates)

    def mask(self, shape: MaskShape, include_stop: bool = True) -> MaskMatrix:
        key = (shape, include_stop)
        if key not in self._masks:
            self._masks[key] = build_mask(self.candidates, shape, include_stop)
        return self._masks[key]


class NavEnv:
    """Bundles a graph with its feature and instruction sources."""

    def __init__(self, graph: NavGraph, features: FeatureSource, instructions, d_angle: int,
                 step_limit: int = 20, success_distance: float = 3.0):
        self.graph = graph
        self.features = features
        self.instructions = instructions
        self.d_angle = d_angle
        self.step_limit = step_limit
        self.success_distance = success_distance
        self._obs: dict[tuple[int, float], Observation] = {}
        self._teacher: dict[tuple[int, int], int] = {}

    def reset(self, episode: Episode) -> Trajectory:
        return start_trajectory(episode, self.step_limit, self.success_distance)

    def observe(self, node: int, heading: float):
        key = (node, heading)
        if key not in self._obs:
            self._obs[key] = Observation(*observe(self.graph, node, heading, self.features, self.d_angle))
        return self._obs[key]

    def step(self, traj: Trajectory, action: int) -> Trajectory:
        return step(self.graph, traj, action)

    def teacher_action(self, episode: Episode, node: int) -> int:
        key = (episode.goal, node)
        if key not in self._teacher:
            self._teacher[key] = teacher_action(self.graph, episode, node)
        return self._teacher[key]

    def instruction(self, episode: Episode):
        return self.instructions.embed(episode)

    def teacher_rollout(self, episode: Episode) -> Trajectory:
        traj = self.reset(episode)
        while not traj.done:
            self.step(traj, self.teacher_action(episode, traj.node))
        return traj


def teacher_trajectories(env: NavEnv, episodes: Iterable[Episode]) -> list[Trajectory]:
    return [env.teacher_rollout(e) for e in episodes]

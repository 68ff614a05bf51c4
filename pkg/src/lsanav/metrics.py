"""Navigation metrics: NE, SR, OSR, SPL and mean trajectory length."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .env import NavGraph, Trajectory

SUCCESS_DISTANCE = 3.0


def _mean(values) -> float:
    # correctly rounded, so the result does not depend on summation order
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class MetricsReport:
    ne: float
    sr: float
    osr: float
    spl: float
    tl: float
    n_episodes: int

    FIELDS = ("ne", "sr", "osr", "spl", "tl", "n_episodes")

    def to_doc(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        return [repr(float(v)) if isinstance(v, float) else v for v in (getattr(self, f) for f in self.FIELDS)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        w.writerow(self.csv_row())
        return buf.getvalue()


def navigation_error(graph: NavGraph, final_node: int, goal: int) -> float:
    return graph.distance(final_node, goal)


def success(ne: float, threshold: float = SUCCESS_DISTANCE) -> bool:
    return ne <= threshold


def oracle_success(graph: NavGraph, trajectory: Trajectory, goal: int,
                   threshold: float = SUCCESS_DISTANCE) -> bool:
    if not trajectory.nodes:
        raise ValueError("empty trajectory")
    return any(graph.distance(n, goal) <= threshold for n in trajectory.nodes)


def spl(successes: Sequence[bool], traj_lengths: Sequence[float], shortest_lengths: Sequence[float]) -> float:
    """Mean of ``S * l / max(p, l)``; an episode with ``l == 0`` scores ``S``."""
    if not (len(successes) == len(traj_lengths) == len(shortest_lengths)):
        raise ValueError("spl: sequences differ in length")
    if not successes:
        return 0.0
    terms = []
    for s, p, l in zip(successes, traj_lengths, shortest_lengths):
        if not s:
            terms.append(0.0)
        elif l <= 0:
            terms.append(1.0)
        else:
            terms.append(l / max(p, l))
    return _mean(terms)


def evaluate_trajectories(graph: NavGraph, trajectories: Sequence[Trajectory],
                          threshold: float = SUCCESS_DISTANCE) -> MetricsReport:
    if not trajectories:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, 0)
    nes, succ, osucc, lengths, shortest = [], [], [], [], []
    for t in trajectories:
        goal = t.episode.goal
        ne = navigation_error(graph, t.node, goal)
        nes.append(ne)
        succ.append(success(ne, threshold))
        osucc.append(oracle_success(graph, t, goal, threshold))
        lengths.append(t.length)
        shortest.append(graph.distance(t.episode.start, goal))
    return MetricsReport(
        ne=_mean(nes),
        sr=_mean(succ),
        osr=_mean(osucc),
        spl=spl(succ, lengths, shortest),
        tl=_mean(lengths),
        n_episodes=len(trajectories),
    )

import math

import pytest
from hypothesis import given, settings, strategies as st

from lsanav.env import (
    Episode, NavGraph, generate_episodes, generate_synthetic_env, make_episode, start_trajectory, step,
)
from lsanav.metrics import (
    MetricsReport, evaluate_trajectories, navigation_error, oracle_success, spl, success,
)
from lsanav.tensor import RngStream

from oracles import brute_metrics, floyd_warshall


def lattice_graph(seed, cols=6, rows=5, spacing=2.0):
    """Grid of nodes ``spacing`` apart: a random spanning tree plus extra edges.

    Every edge is axis aligned, so all path lengths are exact in floating point.
    """
    rng = RngStream(seed).fork("lattice")
    pos = {r * cols + c: (spacing * c, spacing * r, 0.0) for r in range(rows) for c in range(cols)}
    cand = [(a, a + 1) for a in pos if a % cols < cols - 1] + [(a, a + cols) for a in pos if a + cols in pos]
    order = [cand[i] for i in sorted(range(len(cand)), key=lambda i: rng.uniform(()))]
    parent = {n: n for n in pos}

    def find(n):
        while parent[n] != n:
            n = parent[n]
        return n

    edges = set()
    for a, b in order:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            edges.add((a, b))
        elif rng.uniform(()) < 0.3:
            edges.add((a, b))
    return NavGraph(pos, frozenset(edges))


def random_trajectories(graph, n, seed, include_trivial=True):
    rng = RngStream(seed).fork("walks")
    eps = generate_episodes(graph, n, seed)
    if include_trivial:
        eps[:5] = [Episode(e.start, e.start, (e.start,), e.seed) for e in eps[:5]]
    trajs = []
    for ep in eps:
        t = start_trajectory(ep, step_limit=int(rng.integers(1, 12)))
        while not t.done:
            k = len(graph.neighbors(t.node))
            a = 0 if rng.uniform(()) < 0.15 else int(rng.integers(1, k + 1))
            step(graph, t, a)
        trajs.append(t)
    return trajs


def as_tuple(r: MetricsReport):
    return (r.ne, r.sr, r.osr, r.spl, r.tl)


def test_navigation_error_examples():
    g = lattice_graph(0)
    dist = floyd_warshall(g)
    assert navigation_error(g, 7, 7) == 0.0
    a, b = sorted(g.edges)[0]
    assert navigation_error(g, a, b) == g.edge_length(a, b)
    for n in g.nodes:
        assert navigation_error(g, n, 0) == dist[(n, 0)]


def test_success_boundary():
    assert success(0.0)
    assert success(3.0)
    assert not success(3.01)


def test_oracle_success_overshoot():
    pos = {0: (0, 0, 0), 1: (0, 4, 0), 2: (0, 8, 0), 3: (0, 12, 0)}
    g = NavGraph(pos, frozenset({(0, 1), (1, 2), (2, 3)}))
    t = start_trajectory(make_episode(g, 0, 2, 0))
    for a in (1, 2, 2, 0):
        step(g, t, a)
    assert t.nodes == [0, 1, 2, 3]
    assert oracle_success(g, t, 2) and not success(navigation_error(g, t.node, 2))
    t = start_trajectory(make_episode(g, 3, 0, 0))
    step(g, t, 0)
    assert not oracle_success(g, t, 0)


def test_spl_examples():
    assert spl([True], [5.0], [5.0]) == 1.0
    assert spl([False], [5.0], [5.0]) == 0.0
    assert spl([True], [10.0], [5.0]) == 0.5
    assert spl([True], [0.0], [0.0]) == 1.0
    assert spl([True, False], [4.0, 1.0], [2.0, 1.0]) == 0.25
    with pytest.raises(ValueError):
        spl([True], [1.0, 2.0], [1.0])


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30),
       st.floats(0.01, 100))
def test_spl_scale_invariance(rows, c):
    s, p, l = zip(*rows)
    a = spl(s, p, l)
    b = spl(s, [c * v for v in p], [c * v for v in l])
    assert math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_against_brute_force_on_lattice(seed):
    g = lattice_graph(seed)
    assert len(g.nodes) == 30 and g.is_connected()
    trajs = random_trajectories(g, 200, seed)
    rep = evaluate_trajectories(g, trajs)
    assert as_tuple(rep) == brute_metrics(g, floyd_warshall(g), trajs)
    assert rep.n_episodes == 200


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_random_geometric_against_brute_force(seed):
    g = generate_synthetic_env(seed, n_nodes=30)
    trajs = random_trajectories(g, 200, seed)
    got = as_tuple(evaluate_trajectories(g, trajs))
    ref = brute_metrics(g, floyd_warshall(g), trajs)
    for a, b in zip(got, ref):
        assert math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_metric_ordering(seed, n):
    g = lattice_graph(seed % 50)
    rep = evaluate_trajectories(g, random_trajectories(g, n, seed, include_trivial=n > 5))
    assert 0 <= rep.spl <= rep.sr <= rep.osr <= 1


@pytest.mark.parametrize("seed", [0, 3])
def test_teacher_rollouts_are_perfect(seed):
    g = lattice_graph(seed)
    trajs = []
    for ep in generate_episodes(g, 50, seed):
        t = start_trajectory(ep)
        for a, b in zip(ep.path, ep.path[1:]):
            step(g, t, g.neighbors(a).index(b) + 1)
        step(g, t, 0)
        trajs.append(t)
    rep = evaluate_trajectories(g, trajs)
    assert (rep.ne, rep.sr, rep.osr, rep.spl) == (0.0, 1.0, 1.0, 1.0)


def test_report_serialisation():
    rep = MetricsReport(1.5, 0.5, 0.75, 0.25, 6.0, 4)
    assert rep.to_csv() == "ne,sr,osr,spl,tl,n_episodes\n1.5,0.5,0.75,0.25,6.0,4\n"
    assert rep.to_doc()["n_episodes"] == 4
    assert evaluate_trajectories(lattice_graph(0), []).n_episodes == 0

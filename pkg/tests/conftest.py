"""Shared fixtures and slow-but-obvious reference implementations used as oracles."""
from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from cascade_defense.cascade import SHORTEST_PATH, CascadeModel
from cascade_defense.graph import THRESHOLD, Graph, capacities_from_loads, generate_graph, random_thresholds


def reference_loads(graph: Graph, removed=()):
    """Single-path loads by explicit enumeration of every shortest path with networkx."""
    g = graph.to_networkx()
    g.remove_nodes_from(removed)
    load = {v: 0 for v in g.nodes}
    for s, t in combinations(sorted(g.nodes), 2):
        if not nx.has_path(g, s, t):
            continue
        path = min(nx.all_shortest_paths(g, s, t))
        for v in path[1:-1]:
            load[v] += 1
    out = np.full(graph.n, np.nan)
    for v, x in load.items():
        out[v] = x
    return out


def reference_cascade(graph: Graph, kind: str, values, theta, load_fn=reference_loads):
    """Synchronous cascade written with plain sets."""
    failed = set(theta)
    nbrs = {v: set(graph.neighbors(v).tolist()) for v in range(graph.n)}
    while True:
        if kind == THRESHOLD:
            new = {v for v in range(graph.n)
                   if v not in failed and nbrs[v] and len(nbrs[v] & failed) / len(nbrs[v]) >= values[v]}
        else:
            loads = load_fn(graph, sorted(failed))
            new = {v for v in range(graph.n) if v not in failed and loads[v] > values[v]}
        if not new:
            return failed
        failed |= new


def make_model(kind: str, n: int, seed: int, graph_model: str = "erdos-renyi", **params) -> CascadeModel:
    g = generate_graph(graph_model, n, seed, **params)
    if kind == THRESHOLD:
        return CascadeModel(THRESHOLD, g, random_thresholds(n, seed + 1000))
    return CascadeModel(SHORTEST_PATH, g, capacities_from_loads(g))


@pytest.fixture
def triangle():
    return Graph(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return Graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def star4():
    return Graph(4, [(0, 1), (0, 2), (0, 3)])


def support_enumeration_value(P, tol=1e-9):
    """Game value of a small zero-sum matrix game by trying every equal-size support pair."""
    P = np.asarray(P, dtype=float)
    m, n = P.shape
    for size in range(1, min(m, n) + 1):
        for rows in combinations(range(m), size):
            for cols in combinations(range(n), size):
                sub = P[np.ix_(rows, cols)]
                # attacker x on rows makes every support column pay v; defender y likewise
                a = np.zeros((size + 1, size + 1))
                a[:size, :size] = sub.T
                a[:size, size] = -1
                a[size, :size] = 1
                b = np.zeros(size + 1)
                b[size] = 1
                c = np.zeros((size + 1, size + 1))
                c[:size, :size] = sub
                c[:size, size] = -1
                c[size, :size] = 1
                try:
                    xs = np.linalg.solve(a, b)
                    ys = np.linalg.solve(c, b)
                except np.linalg.LinAlgError:
                    continue
                x, v = xs[:size], xs[size]
                y = ys[:size]
                if x.min() < -tol or y.min() < -tol:
                    continue
                full_x = np.zeros(m)
                full_x[list(rows)] = x
                full_y = np.zeros(n)
                full_y[list(cols)] = y
                if (full_x @ P).min() >= v - 1e-7 and (P @ full_y).max() <= v + 1e-7:
                    return float(v)
    raise AssertionError("no equilibrium found by support enumeration")

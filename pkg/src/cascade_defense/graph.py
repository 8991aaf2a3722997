"""Undirected graphs, node features and the graph algorithms used by the cascades.

Nodes are always the integers ``0..n-1``. Node sets are passed around either as
iterables of ints or as boolean masks of length ``n``; :func:`as_mask` converts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import (
    InvalidParams,
    ParseError,
    PowerIterationDiverged,
    SelfLoopError,
    UnconnectableParams,
)

THRESHOLD = "threshold"
CAPACITY = "capacity"
SINGLE_PATH = "single-path"
ALL_PATHS = "all-paths-fractional"
LOAD_MODES = (SINGLE_PATH, ALL_PATHS)

GRAPH_MODELS = ("erdos-renyi", "barabasi-albert", "watts-strogatz")
MAX_CONNECT_RETRIES = 200


def as_mask(nodes, n: int) -> np.ndarray:
    """Boolean mask of length ``n`` for a node iterable or an existing mask."""
    if isinstance(nodes, np.ndarray) and nodes.dtype == bool:
        if nodes.shape != (n,):
            raise InvalidParams(f"mask has shape {nodes.shape}, expected ({n},)")
        return nodes
    mask = np.zeros(n, dtype=bool)
    idx = np.fromiter((int(v) for v in nodes), dtype=np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= n:
            raise InvalidParams(f"node index out of range for n={n}")
        mask[idx] = True
    return mask


def mask_to_set(mask: np.ndarray) -> frozenset:
    return frozenset(int(i) for i in np.flatnonzero(mask))


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph on nodes ``0..n-1``.

    ``edges`` is stored canonically: each row ``(u, v)`` has ``u < v`` and rows
    are sorted, so two graphs with the same edge set compare equal.
    """

    n: int
    edges: np.ndarray
    adj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParams("graph needs at least one node")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= self.n:
                raise InvalidParams("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise SelfLoopError("self-loop in edge list")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else e
        e.setflags(write=False)
        adj = np.zeros((self.n, self.n), dtype=bool)
        adj[e[:, 0], e[:, 1]] = True
        adj[e[:, 1], e[:, 0]] = True
        adj.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "adj", adj)

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> "Graph":
        nodes = sorted(g.nodes())
        index = {v: i for i, v in enumerate(nodes)}
        edges = [(index[u], index[v]) for u, v in g.edges()]
        return cls(len(nodes), np.array(edges, dtype=np.int64).reshape(-1, 2))

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degree(self) -> np.ndarray:
        return self.adj.sum(axis=1).astype(np.int64)

    @cached_property
    def neighbor_lists(self) -> tuple:
        return tuple(np.flatnonzero(row) for row in self.adj)

    def neighbors(self, v: int) -> np.ndarray:
        return self.neighbor_lists[v]

    @cached_property
    def adj_float(self) -> np.ndarray:
        return self.adj.astype(np.float64)

    def is_connected(self) -> bool:
        return len(connected_components(self, range(self.n))) == 1

    def __eq__(self, other):
        return (isinstance(other, Graph) and self.n == other.n
                and np.array_equal(self.edges, other.edges))

    def __hash__(self):
        return hash((self.n, self.edges.tobytes()))


def generate_graph(model: str, n: int, seed: int, **params) -> Graph:
    """Sample a connected random graph.

    ``model`` is one of ``erdos-renyi`` (param ``p``, default ``2 ln(n)/n``),
    ``barabasi-albert`` (``m``, default 2) or ``watts-strogatz`` (``k`` default 4,
    ``beta`` default 0.1). Disconnected samples are redrawn from the same
    generator stream, so the result depends only on ``(model, n, seed, params)``.
    """
    if n < 2:
        raise InvalidParams("n must be at least 2")
    rng = np.random.default_rng(seed)
    if model in ("erdos-renyi", "er"):
        p = params.pop("p", min(1.0, 2.0 * np.log(n) / n))
        if not 0.0 < p <= 1.0:
            raise InvalidParams(f"ER edge probability must be in (0, 1], got {p}")
        make = lambda: nx.gnp_random_graph(n, p, seed=rng)
    elif model in ("barabasi-albert", "ba"):
        m = int(params.pop("m", 2))
        if not 1 <= m < n:
            raise InvalidParams(f"BA requires 1 <= m < n, got m={m}")
        make = lambda: nx.barabasi_albert_graph(n, m, seed=rng)
    elif model in ("watts-strogatz", "ws"):
        k = int(params.pop("k", 4))
        beta = float(params.pop("beta", 0.1))
        if not 2 <= k < n or not 0.0 <= beta <= 1.0:
            raise InvalidParams(f"WS requires 2 <= k < n and beta in [0, 1], got k={k}, beta={beta}")
        make = lambda: nx.watts_strogatz_graph(n, k, beta, seed=rng)
    else:
        raise InvalidParams(f"unknown graph model {model!r}")
    if params:
        raise InvalidParams(f"unexpected parameters for {model}: {sorted(params)}")
    for _ in range(MAX_CONNECT_RETRIES):
        g = Graph.from_networkx(make())
        if g.is_connected():
            return g
    raise UnconnectableParams(f"no connected {model} sample with n={n} after {MAX_CONNECT_RETRIES} draws")


def load_edge_list(path) -> Graph:
    """Read the edge-list format: node count on the first line, then ``u v`` rows."""
    lines = Path(path).read_text().splitlines()
    body = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ParseError("empty edge list", line=1)
    lineno, head = body[0]
    try:
        if len(head) != 1:
            raise ValueError
        n = int(head[0])
    except ValueError:
        raise ParseError(f"expected node count, got {' '.join(head)!r}", line=lineno) from None
    if n < 1:
        raise ParseError("node count must be positive", line=lineno)
    edges = []
    for lineno, tok in body[1:]:
        if len(tok) != 2:
            raise ParseError(f"expected 'u v', got {' '.join(tok)!r}", line=lineno)
        try:
            u, v = int(tok[0]), int(tok[1])
        except ValueError:
            raise ParseError(f"non-integer node id in {' '.join(tok)!r}", line=lineno) from None
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"node id out of range [0, {n})", line=lineno)
        if u == v:
            raise SelfLoopError(f"self-loop on node {u}", line=lineno)
        edges.append((u, v))
    return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))


def save_edge_list(graph: Graph, path) -> None:
    rows = [str(graph.n)] + [f"{u} {v}" for u, v in graph.edges.tolist()]
    Path(path).write_text("\n".join(rows) + "\n")


def connected_components(graph: Graph, subset) -> list:
    """Maximal connected pieces of the subgraph induced by ``subset``.

    Components are returned as frozensets, ordered by their smallest node.
    """
    inside = as_mask(subset, graph.n)
    seen = np.zeros(graph.n, dtype=bool)
    out = []
    for start in np.flatnonzero(inside):
        if seen[start]:
            continue
        comp = [int(start)]
        seen[start] = True
        stack = [int(start)]
        while stack:
            u = stack.pop()
            for w in graph.neighbor_lists[u]:
                if inside[w] and not seen[w]:
                    seen[w] = True
                    comp.append(int(w))
                    stack.append(int(w))
        out.append(frozenset(comp))
    return out


def distance_matrix(adj: np.ndarray) -> np.ndarray:
    """All-pairs hop distances by layered BFS; ``-1`` marks unreachable pairs."""
    n = adj.shape[0]
    a = adj.astype(np.float32)
    reached = np.eye(n, dtype=bool)
    dist = np.where(reached, 0, -1).astype(np.int64)
    frontier = reached.copy()
    d = 0
    while frontier.any():
        d += 1
        nxt = ((frontier.astype(np.float32) @ a) > 0) & ~reached
        dist[nxt] = d
        reached |= nxt
        frontier = nxt
    return dist


def _next_hops(adj: np.ndarray, dist: np.ndarray) -> np.ndarray:
    # nh[u, t]: smallest neighbour of u one hop closer to t; this gives the
    # lexicographically smallest shortest path when followed from u.
    n = adj.shape[0]
    nh = np.full((n, n), -1, dtype=np.int64)
    for u in range(n):
        nb = np.flatnonzero(adj[u])
        if nb.size == 0:
            continue
        cand = dist[nb] == (dist[u] - 1)[None, :]
        ok = cand.any(axis=0) & (dist[u] >= 1)
        first = cand.argmax(axis=0)
        nh[u, ok] = nb[first[ok]]
    return nh


def _single_path_loads(adj: np.ndarray, dist: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    load = np.zeros(n, dtype=np.float64)
    s, t = np.triu_indices(n, 1)
    far = dist[s, t] >= 2
    cur, t = s[far], t[far]
    if cur.size == 0:
        return load
    nh = _next_hops(adj, dist)
    while cur.size:
        cur = nh[cur, t]
        interior = cur != t
        cur, t = cur[interior], t[interior]
        load += np.bincount(cur, minlength=n)
    return load


def path_counts(adj: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Number of distinct shortest paths between every pair (0 when unreachable)."""
    n = adj.shape[0]
    a = adj.astype(np.float64)
    sigma = np.eye(n)
    for d in range(1, int(dist.max(initial=0)) + 1):
        prev = np.where(dist == d - 1, sigma, 0.0)
        sigma = np.where(dist == d, prev @ a, sigma)
    return sigma


def _fractional_loads(adj: np.ndarray, dist: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    sigma = path_counts(adj, dist)
    safe = np.where(sigma > 0, sigma, 1.0)
    load = np.zeros(n)
    for v in range(n):
        dv = dist[v]
        reach = dv >= 1
        on = reach[:, None] & reach[None, :] & (dv[:, None] + dv[None, :] == dist)
        frac = np.outer(sigma[v], sigma[v]) / safe
        load[v] = 0.5 * frac[on].sum()
    return load


def shortest_path_loads(graph: Graph, removed=(), mode: str = SINGLE_PATH) -> np.ndarray:
    """Transit load on every node of ``graph`` minus ``removed``.

    The load of ``v`` is the number of unordered surviving pairs ``(s, t)`` whose
    shortest path runs through ``v`` as an interior node. In ``single-path`` mode
    each pair uses one path, the lexicographically smallest node sequence read
    from the smaller endpoint. In ``all-paths-fractional`` mode every tied path
    gets an equal share (unnormalised betweenness). Disconnected pairs carry no
    load. Removed nodes get ``nan``.
    """
    if mode not in LOAD_MODES:
        raise InvalidParams(f"unknown load mode {mode!r}")
    gone = as_mask(removed, graph.n)
    alive = np.flatnonzero(~gone)
    out = np.full(graph.n, np.nan)
    if alive.size == 0:
        return out
    sub = graph.adj[np.ix_(alive, alive)]
    dist = distance_matrix(sub)
    loads = _single_path_loads(sub, dist) if mode == SINGLE_PATH else _fractional_loads(sub, dist)
    out[alive] = loads
    return out


@dataclass(frozen=True, eq=False)
class NodeFeatures:
    """Per-node cascade parameters: thresholds in (0, 1] or capacities above baseline load."""

    kind: str
    values: np.ndarray
    baseline_loads: np.ndarray | None = None
    load_mode: str = SINGLE_PATH

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.kind == THRESHOLD:
            if not np.all((vals > 0) & (vals <= 1)):
                raise InvalidParams("thresholds must lie in (0, 1]")
        elif self.kind == CAPACITY:
            if self.baseline_loads is None:
                raise InvalidParams("capacity features need baseline loads")
            base = np.asarray(self.baseline_loads, dtype=np.float64)
            base.setflags(write=False)
            object.__setattr__(self, "baseline_loads", base)
            if base.shape != vals.shape:
                raise InvalidParams("baseline loads and capacities differ in length")
            if not np.all(vals > base):
                bad = np.flatnonzero(~(vals > base))
                raise InvalidParams(f"capacity must exceed baseline load; violated at nodes {bad.tolist()[:10]}")
            if self.load_mode not in LOAD_MODES:
                raise InvalidParams(f"unknown load mode {self.load_mode!r}")
        else:
            raise InvalidParams(f"unknown feature kind {self.kind!r}")

    @property
    def n(self) -> int:
        return len(self.values)

    feature_dim = 1

    @classmethod
    def thresholds(cls, values) -> "NodeFeatures":
        return cls(THRESHOLD, values)

    @classmethod
    def capacities(cls, graph: Graph, values, load_mode: str = SINGLE_PATH) -> "NodeFeatures":
        base = shortest_path_loads(graph, (), mode=load_mode)
        return cls(CAPACITY, values, base, load_mode)


def random_thresholds(n: int, seed) -> NodeFeatures:
    """Thresholds drawn uniformly from (0, 1]."""
    rng = np.random.default_rng(seed)
    return NodeFeatures.thresholds(1.0 - rng.random(n))


def capacities_from_loads(graph: Graph, alpha: float = 0.25, c0: float = 1.0,
                          load_mode: str = SINGLE_PATH) -> NodeFeatures:
    """Capacities ``(1 + alpha) * baseline + c0``."""
    if alpha < 0 or c0 <= 0:
        raise InvalidParams("need alpha >= 0 and c0 > 0")
    base = shortest_path_loads(graph, (), mode=load_mode)
    return NodeFeatures(CAPACITY, (1.0 + alpha) * base + c0, base, load_mode)


def save_features(features: NodeFeatures, path) -> None:
    rows = [features.kind] + [repr(float(x)) for x in features.values]
    Path(path).write_text("\n".join(rows) + "\n")


def load_features(path, graph: Graph | None = None, load_mode: str = SINGLE_PATH) -> NodeFeatures:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] not in (THRESHOLD, CAPACITY):
        raise ParseError("feature file must start with 'threshold' or 'capacity'", line=1)
    try:
        vals = np.array([float(x) for x in lines[1:]])
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if graph is not None and len(vals) != graph.n:
        raise ParseError(f"expected {graph.n} values, found {len(vals)}")
    if lines[0] == THRESHOLD:
        return NodeFeatures.thresholds(vals)
    if graph is None:
        raise InvalidParams("capacity features need the graph to recompute baseline loads")
    return NodeFeatures.capacities(graph, vals, load_mode)


@dataclass(frozen=True)
class CentralityTable:
    degree: np.ndarray
    closeness: np.ndarray
    betweenness: np.ndarray
    eigenvector: np.ndarray

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([self.degree, self.closeness, self.betweenness, self.eigenvector])

    names = ("degree", "closeness", "betweenness", "eigenvector")


def eigenvector_centrality(adj: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    # Iterating on A + I avoids the +/- lambda oscillation on bipartite graphs.
    n = adj.shape[0]
    m = adj.astype(np.float64) + np.eye(n)
    x = np.ones(n) / n
    for _ in range(max_iter):
        y = m @ x
        y /= y.max()
        if np.abs(y - x).max() < tol:
            return y
        x = y
    raise PowerIterationDiverged(f"no convergence to {tol} in {max_iter} iterations")


def centralities(graph: Graph) -> CentralityTable:
    n = graph.n
    if not graph.is_connected():
        raise InvalidParams("centralities need a connected graph")
    if n == 1:
        one = np.zeros(1)
        return CentralityTable(one, one, one, np.ones(1))
    dist = distance_matrix(graph.adj)
    degree = graph.degree / (n - 1)
    closeness = (n - 1) / dist.sum(axis=1)
    between = _fractional_loads(graph.adj, dist)
    if n > 2:
        between = between * 2.0 / ((n - 1) * (n - 2))
    eig = eigenvector_centrality(graph.adj)
    return CentralityTable(degree.astype(float), closeness, between, eig)
